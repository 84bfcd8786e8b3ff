"""Hands-free QR-challenge authentication for wearable devices.

Modules:

* :mod:`gauth.otp` - HOTP/TOTP generation and verification.
* :mod:`gauth.challenge` - the QR challenge payload and nonce sources.
* :mod:`gauth.protocol` - device, terminal and service state machines.
* :mod:`gauth.continuous` - periodic re-authentication sessions.
* :mod:`gauth.optics` - stochastic QR readability model.
* :mod:`gauth.simnet` - discrete-event simulator and timing models.
* :mod:`gauth.harness` - scenario files, reports and the ``gauth`` CLI.
"""

__version__ = "0.1.0"
