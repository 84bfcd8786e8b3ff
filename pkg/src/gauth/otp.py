"""HMAC-based (HOTP) and time-based (TOTP) one-time passwords.

Used for user authentication codes generated from the user key and for
terminal-generated nonces derived from the terminal key. Codes follow the
usual authenticator defaults: HMAC-SHA1, dynamic truncation, six digits,
thirty second steps.
"""

from __future__ import annotations

import base64
import binascii
import hmac
import math
from dataclasses import dataclass, field
from typing import NamedTuple

MIN_KEY_BYTES = 10
MAX_COUNTER = 2**64 - 1


class OtpError(ValueError):
    """Invalid key, counter, time or parameters."""


class MalformedOtpError(OtpError):
    """A candidate code that is not a well-formed digit string."""


@dataclass(frozen=True)
class OtpKey:
    key_bytes: bytes = field(repr=False)
    label: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.key_bytes, (bytes, bytearray)):
            raise OtpError("key_bytes must be bytes")
        if len(self.key_bytes) < MIN_KEY_BYTES:
            raise OtpError(f"key must be at least {MIN_KEY_BYTES} bytes, got {len(self.key_bytes)}")
        object.__setattr__(self, "key_bytes", bytes(self.key_bytes))

    @classmethod
    def from_base32(cls, text: str, label: str = "") -> OtpKey:
        """Import a key in the base-32 provisioning format.

        Whitespace and missing ``=`` padding are tolerated, case is ignored.
        """
        cleaned = "".join(text.split()).upper()
        cleaned += "=" * (-len(cleaned) % 8)
        try:
            raw = base64.b32decode(cleaned, casefold=True)
        except (binascii.Error, ValueError) as exc:
            raise OtpError(f"bad base-32 key: {exc}") from None
        return cls(raw, label)

    def to_base32(self) -> str:
        return base64.b32encode(self.key_bytes).decode("ascii").rstrip("=")


@dataclass(frozen=True)
class OtpCode:
    digits: str

    def __post_init__(self) -> None:
        if not isinstance(self.digits, str) or not self.digits:
            raise MalformedOtpError("code must be a non-empty string")
        if not (self.digits.isascii() and self.digits.isdigit()):
            raise MalformedOtpError(f"code must be decimal digits, got {self.digits!r}")
        if not 6 <= len(self.digits) <= 8:
            raise MalformedOtpError(f"code width must be 6..8, got {len(self.digits)}")

    @property
    def width(self) -> int:
        return len(self.digits)

    def __str__(self) -> str:
        return self.digits


@dataclass(frozen=True)
class TotpParams:
    time_step: int = 30
    t0: int = 0
    skew_window: int = 1

    def __post_init__(self) -> None:
        if self.time_step <= 0:
            raise OtpError("time_step must be positive")
        if self.skew_window < 0:
            raise OtpError("skew_window must be >= 0")


@dataclass
class HotpCounter:
    """Verifier-side HOTP counter. Only ever moves forward."""

    value: int = 0
    lookahead: int = 3

    def __post_init__(self) -> None:
        _check_counter(self.value)
        if self.lookahead < 0:
            raise OtpError("lookahead must be >= 0")

    def advance_to(self, new_value: int) -> None:
        if new_value < self.value:
            raise OtpError(f"counter may not move backwards ({self.value} -> {new_value})")
        _check_counter(new_value)
        self.value = new_value


class TotpResult(NamedTuple):
    accepted: bool
    offset: int | None


class HotpResult(NamedTuple):
    accepted: bool
    counter: int


def _check_counter(counter: int) -> None:
    if not 0 <= counter <= MAX_COUNTER:
        raise OtpError(f"counter out of range: {counter}")


def _as_code(candidate: OtpCode | str) -> OtpCode:
    return candidate if isinstance(candidate, OtpCode) else OtpCode(candidate)


def hotp_generate(key: OtpKey, counter: int, width: int = 6) -> OtpCode:
    if not 6 <= width <= 8:
        raise OtpError(f"width must be 6..8, got {width}")
    _check_counter(counter)
    mac = hmac.digest(key.key_bytes, counter.to_bytes(8, "big"), "sha1")
    offset = mac[-1] & 0x0F
    binary = int.from_bytes(mac[offset : offset + 4], "big") & 0x7FFFFFFF
    return OtpCode(str(binary % 10**width).zfill(width))


def totp_counter(unix_time: float, params: TotpParams) -> int:
    if unix_time < params.t0:
        raise OtpError(f"time {unix_time} precedes t0={params.t0}")
    return math.floor((unix_time - params.t0) / params.time_step)


def totp_generate(
    key: OtpKey, unix_time: float, params: TotpParams | None = None, width: int = 6
) -> OtpCode:
    params = params or TotpParams()
    return hotp_generate(key, totp_counter(unix_time, params), width)


def totp_verify(
    key: OtpKey, candidate: OtpCode | str, unix_time: float, params: TotpParams | None = None
) -> TotpResult:
    """Check ``candidate`` against every step in the skew window.

    Offsets are tried nearest first (0, -1, +1, -2, ...) and every code in
    the window is compared so the running time does not depend on where
    the match is. Raises :class:`MalformedOtpError` for a malformed code.
    """
    params = params or TotpParams()
    code = _as_code(candidate)
    step = totp_counter(unix_time, params)
    offsets = [0]
    for k in range(1, params.skew_window + 1):
        offsets += [-k, k]
    matched = None
    for off in offsets:
        if step + off < 0:
            continue
        expected = hotp_generate(key, step + off, code.width)
        if hmac.compare_digest(expected.digits, code.digits) and matched is None:
            matched = off
    return TotpResult(matched is not None, matched)


def hotp_verify_window(key: OtpKey, candidate: OtpCode | str, counter: HotpCounter) -> HotpResult:
    """Accept ``candidate`` if it matches a counter in the lookahead window.

    On success the counter moves past the matched value so the same code
    can never be accepted twice. On failure the counter is left alone.
    """
    code = _as_code(candidate)
    matched = None
    top = min(counter.value + counter.lookahead, MAX_COUNTER)
    for c in range(counter.value, top + 1):
        expected = hotp_generate(key, c, code.width)
        if hmac.compare_digest(expected.digits, code.digits) and matched is None:
            matched = c
    if matched is None:
        return HotpResult(False, counter.value)
    counter.advance_to(matched + 1)
    return HotpResult(True, counter.value)
