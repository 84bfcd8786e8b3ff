"""Challenge payloads shown as visual codes, and the nonces they carry.

Wire layout (ASCII, fields in this order)::

    GAUTH|v1|sid=1234|tid=T01|nonce=654321|ts=00001700000|opt=C

``opt`` is a string of single-character flags. ``C`` asks the device to
expect continuous authentication; unknown flags are kept but ignored.
"""

from __future__ import annotations

import random
import re
import secrets
from dataclasses import dataclass, field

from .otp import HotpCounter, OtpKey, hotp_generate

PREFIX = "GAUTH"
VERSION = "v1"
FLAG_CONTINUOUS = "C"
KNOWN_FLAGS = frozenset({FLAG_CONTINUOUS})

NONCE_WIDTH = 6
TIMESTAMP_WIDTH = 11
MAX_TID_LEN = 16

_SID_RE = re.compile(r"[0-9]{4}")
_TID_RE = re.compile(r"[A-Za-z0-9]{1,%d}" % MAX_TID_LEN)
_NONCE_RE = re.compile(r"[0-9]{%d}" % NONCE_WIDTH)
_TS_RE = re.compile(r"[0-9]{%d}" % TIMESTAMP_WIDTH)
_OPT_RE = re.compile(r"[A-Za-z0-9]*")


class PayloadError(ValueError):
    """A payload field is invalid. ``field`` names the first offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _check_fields(sid: str, tid: str, nonce: str, timestamp: int, options: frozenset[str]) -> None:
    if not isinstance(sid, str) or not _SID_RE.fullmatch(sid):
        raise PayloadError("sid", f"expected 4 digits, got {sid!r}")
    if not isinstance(tid, str) or not _TID_RE.fullmatch(tid):
        raise PayloadError("tid", f"expected 1-{MAX_TID_LEN} alphanumerics, got {tid!r}")
    if not isinstance(nonce, str) or not _NONCE_RE.fullmatch(nonce):
        raise PayloadError("nonce", f"expected {NONCE_WIDTH} digits, got {nonce!r}")
    if isinstance(timestamp, bool) or not isinstance(timestamp, int) or not 0 <= timestamp < 10**TIMESTAMP_WIDTH:
        raise PayloadError("ts", f"expected integer below 10^{TIMESTAMP_WIDTH}, got {timestamp!r}")
    for flag in options:
        if not (isinstance(flag, str) and len(flag) == 1 and flag.isascii() and flag.isalnum()):
            raise PayloadError("opt", f"flags are single alphanumeric characters, got {flag!r}")


@dataclass(frozen=True)
class ChallengePayload:
    sid: str
    tid: str
    nonce: str
    timestamp: int
    options: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", frozenset(self.options))
        _check_fields(self.sid, self.tid, self.nonce, self.timestamp, self.options)

    @property
    def continuous(self) -> bool:
        return FLAG_CONTINUOUS in self.options


def encode_payload(p: ChallengePayload) -> str:
    _check_fields(p.sid, p.tid, p.nonce, p.timestamp, p.options)
    opt = "".join(sorted(p.options))
    ts = str(p.timestamp).zfill(TIMESTAMP_WIDTH)
    return f"{PREFIX}|{VERSION}|sid={p.sid}|tid={p.tid}|nonce={p.nonce}|ts={ts}|opt={opt}"


_FIELD_ORDER = ("sid", "tid", "nonce", "ts", "opt")
_FIELD_RE = {"sid": _SID_RE, "tid": _TID_RE, "nonce": _NONCE_RE, "ts": _TS_RE, "opt": _OPT_RE}


def decode_payload(s: str) -> ChallengePayload:
    """Strictly parse the canonical payload string.

    Raises :class:`PayloadError` naming the first bad field; nothing is
    returned for a partially valid string.
    """
    if not isinstance(s, str):
        raise PayloadError("prefix", "payload must be text")
    if not s.isascii():
        raise PayloadError("prefix", "payload must be ASCII")
    parts = s.split("|")
    if parts[0] != PREFIX:
        raise PayloadError("prefix", f"expected {PREFIX!r}")
    if len(parts) < 2 or parts[1] != VERSION:
        raise PayloadError("version", f"expected {VERSION!r}")
    values: dict[str, str] = {}
    for i, name in enumerate(_FIELD_ORDER):
        idx = i + 2
        if idx >= len(parts):
            raise PayloadError(name, "missing")
        key, sep, value = parts[idx].partition("=")
        if key != name or not sep:
            raise PayloadError(name, f"expected '{name}=', got {parts[idx]!r}")
        if not _FIELD_RE[name].fullmatch(value):
            raise PayloadError(name, f"bad value {value!r}")
        values[name] = value
    if len(parts) != len(_FIELD_ORDER) + 2:
        raise PayloadError("trailer", f"unexpected trailing data {'|'.join(parts[len(_FIELD_ORDER) + 2:])!r}")
    opts = values["opt"]
    if len(set(opts)) != len(opts):
        raise PayloadError("opt", f"duplicate flag in {opts!r}")
    return ChallengePayload(
        sid=values["sid"],
        tid=values["tid"],
        nonce=values["nonce"],
        timestamp=int(values["ts"]),
        options=frozenset(opts),
    )


def payload_bits(encoded: str) -> int:
    """Bits occupied by an encoded payload in byte mode (8 per character)."""
    return 8 * len(encoded.encode("ascii"))


@dataclass
class NonceSource:
    """Where challenge nonces come from.

    Build one with :meth:`service_random` (service-driven UI) or
    :meth:`terminal_hotp` (terminal-driven UI, checkable by the service
    with the shared terminal key and no round trip).
    """

    mode: str
    rng: random.Random | None = None
    space: int = 10**NONCE_WIDTH
    key: OtpKey | None = None
    counter: HotpCounter | None = None

    def __post_init__(self) -> None:
        if self.mode == "service-random":
            if self.key is not None or self.counter is not None:
                raise ValueError("service-random source carries no HOTP state")
            if not 1 <= self.space <= 10**NONCE_WIDTH:
                raise ValueError(f"nonce space must be in 1..10^{NONCE_WIDTH}")
        elif self.mode == "terminal-hotp":
            if self.key is None or self.counter is None or self.rng is not None:
                raise ValueError("terminal-hotp source needs exactly a key and a counter")
        else:
            raise ValueError(f"unknown nonce mode {self.mode!r}")

    @classmethod
    def service_random(cls, rng_seed: int | None = None, space: int = 10**NONCE_WIDTH) -> NonceSource:
        """Uniform nonces; seeded for reproducible runs, OS entropy otherwise."""
        rng = random.Random(rng_seed) if rng_seed is not None else secrets.SystemRandom()
        return cls("service-random", rng=rng, space=space)

    @classmethod
    def terminal_hotp(cls, key: OtpKey, counter: int | HotpCounter = 0) -> NonceSource:
        if not isinstance(counter, HotpCounter):
            counter = HotpCounter(counter)
        return cls("terminal-hotp", key=key, counter=counter)


def next_nonce(src: NonceSource) -> str:
    if src.mode == "service-random":
        return str(src.rng.randrange(src.space)).zfill(NONCE_WIDTH)
    code = hotp_generate(src.key, src.counter.value, NONCE_WIDTH)
    src.counter.advance_to(src.counter.value + 1)
    return code.digits
