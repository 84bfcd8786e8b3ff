"""Device, terminal and service state machines plus their wire messages.

Message flow for one authentication:

1. (service-driven UI) the service puts a challenge on the terminal.
2. The device reads the challenge off the terminal's screen.
3. The device sends one :class:`AuthRequest` over a pinned secure channel.
4. The service checks the OTP and nonce and answers with an :class:`AuthAck`.
5. (terminal-driven UI) the service tells the terminal who logged in.

Wire lines are pipe-delimited ASCII and newline-terminated::

    AUTHREQ|v1|uid=alice|otp=123456|sid=1234|tid=T01|nonce=654321|ts=01700000000|reauth=0|lts=01700000001
    AUTHACK|v1|status=OK|cont=1|treauth=5|lts=01700000002

The ack says OK or FAIL and nothing else; reasons stay in the service log.
"""

from __future__ import annotations

import enum
import hmac
import logging
import re
from collections import deque
from dataclasses import dataclass, field, replace

from .challenge import (
    FLAG_CONTINUOUS,
    TIMESTAMP_WIDTH,
    ChallengePayload,
    NonceSource,
    PayloadError,
    next_nonce,
)
from .otp import (
    HotpCounter,
    OtpCode,
    OtpError,
    OtpKey,
    TotpParams,
    hotp_verify_window,
    totp_generate,
    totp_verify,
)

log = logging.getLogger(__name__)

SERVICE_DRIVEN = "service-driven"
TERMINAL_DRIVEN = "terminal-driven"
UI_MODES = (SERVICE_DRIVEN, TERMINAL_DRIVEN)

_UID_RE = re.compile(r"[A-Za-z0-9._@-]{1,64}")
_MAX_TS = 10**TIMESTAMP_WIDTH


class ProtocolError(Exception):
    """A party was asked to do something its state does not allow."""


class ChannelError(ProtocolError):
    """The secure channel refused to connect (certificate pin mismatch)."""


class WireError(ValueError):
    """A wire line could not be parsed."""


class AssociationError(ProtocolError):
    pass


# -- logical clocks ---------------------------------------------------------


@dataclass
class LamportClock:
    """Lamport clock whose counter is seeded from wall-clock seconds.

    Seeding from wall time keeps the counter a usable 11-digit timestamp;
    the receive rule is the classic ``max(local, received) + 1``.
    ``peer_offset`` is a separate wall-clock offset estimate used to line
    up re-authentication timers.
    """

    local_time: float = 0.0
    logical: int = 0
    peer_offset: float = 0.0

    def stamp(self, now: float) -> int:
        """Timestamp a local send event."""
        self.local_time = now
        self.logical = min(max(self.logical + 1, int(now)), _MAX_TS - 1)
        return self.logical

    def update(self, received_ts: int, now: float | None = None) -> int:
        if not 0 <= received_ts < _MAX_TS:
            raise ValueError(f"timestamp must fit in {TIMESTAMP_WIDTH} digits: {received_ts}")
        if now is not None:
            self.local_time = now
        self.logical = max(self.logical, received_ts) + 1
        self.peer_offset = received_ts - self.local_time
        return self.logical


def lamport_update(clock: LamportClock, received_ts: int, now: float | None = None) -> LamportClock:
    clock.update(received_ts, now)
    return clock


# -- identities and registrations --------------------------------------------


@dataclass(frozen=True)
class ServiceIdentity:
    fingerprint: str
    sid: str
    uri: str


@dataclass(frozen=True)
class Credential:
    service_fingerprint: str
    sid: str
    service_uri: str
    uid: str
    k_u: OtpKey


@dataclass
class TerminalRegistration:
    tid: str
    sid: str
    ui_mode: str = SERVICE_DRIVEN
    k_n: OtpKey | None = None
    nonce_counter: HotpCounter = field(default_factory=HotpCounter)
    continuous: bool = False
    t_reauth: float = 5.0

    def __post_init__(self) -> None:
        if self.ui_mode not in UI_MODES:
            raise ValueError(f"unknown ui_mode {self.ui_mode!r}")
        if (self.k_n is not None) != (self.ui_mode == TERMINAL_DRIVEN):
            raise ValueError("k_n is required for terminal-driven UIs and forbidden otherwise")
        if self.continuous and self.t_reauth <= 0:
            raise ValueError("t_reauth must be positive")

    def copy(self) -> TerminalRegistration:
        """Same registration with an independent nonce counter."""
        return replace(self, nonce_counter=HotpCounter(self.nonce_counter.value, self.nonce_counter.lookahead))


class DeviceStore:
    """Credentials held by the wearable, keyed by (service fingerprint, uid)."""

    def __init__(self) -> None:
        self._creds: dict[tuple[str, str], Credential] = {}

    def __len__(self) -> int:
        return len(self._creds)

    def __iter__(self):
        return iter(self._creds.values())

    def add(self, cred: Credential) -> Credential:
        key = (cred.service_fingerprint, cred.uid)
        if key in self._creds:
            raise AssociationError(f"device already associated with {cred.sid} as {cred.uid!r}")
        self._creds[key] = cred
        return cred

    def lookup(self, sid: str) -> Credential | None:
        for cred in self._creds.values():
            if cred.sid == sid:
                return cred
        return None


def associate_device(store: DeviceStore, service: ServiceIdentity, uid: str, k_u: OtpKey) -> Credential:
    if not _UID_RE.fullmatch(uid):
        raise ValueError(f"bad uid {uid!r}")
    cred = Credential(service.fingerprint, service.sid, service.uri, uid, k_u)
    return store.add(cred)


# -- wire messages -----------------------------------------------------------


def _ts(value: int) -> str:
    return str(value).zfill(TIMESTAMP_WIDTH)


def _fmt_seconds(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _parse_fields(line: str, tag: str, names: tuple[str, ...]) -> dict[str, str]:
    if not line.endswith("\n"):
        raise WireError("line must be newline-terminated")
    parts = line[:-1].split("|")
    if parts[:2] != [tag, "v1"]:
        raise WireError(f"expected {tag}|v1 header")
    if len(parts) != len(names) + 2:
        raise WireError(f"expected {len(names)} fields, got {len(parts) - 2}")
    out = {}
    for name, part in zip(names, parts[2:]):
        key, sep, value = part.partition("=")
        if key != name or not sep:
            raise WireError(f"expected field {name!r}, got {part!r}")
        out[name] = value
    return out


def _parse_int(name: str, value: str, width: int | None = None) -> int:
    if not (value.isascii() and value.isdigit()) or (width and len(value) != width):
        raise WireError(f"{name}: bad number {value!r}")
    return int(value)


@dataclass(frozen=True)
class AuthRequest:
    uid: str
    otp: OtpCode
    sid: str
    tid: str
    nonce: str
    ts: int
    lamport_ts: int
    reauth: bool = False

    _FIELDS = ("uid", "otp", "sid", "tid", "nonce", "ts", "reauth", "lts")

    def __post_init__(self) -> None:
        if not _UID_RE.fullmatch(self.uid):
            raise WireError(f"uid: bad value {self.uid!r}")
        if self.otp.width != 6:
            raise WireError("otp: user codes are 6 digits")
        try:
            ChallengePayload(self.sid, self.tid, self.nonce, self.ts)
        except PayloadError as exc:
            raise WireError(str(exc)) from None
        if not 0 <= self.lamport_ts < _MAX_TS:
            raise WireError("lts: out of range")

    def encode(self) -> str:
        return (
            f"AUTHREQ|v1|uid={self.uid}|otp={self.otp.digits}|sid={self.sid}|tid={self.tid}"
            f"|nonce={self.nonce}|ts={_ts(self.ts)}|reauth={int(self.reauth)}|lts={_ts(self.lamport_ts)}\n"
        )

    @classmethod
    def decode(cls, line: str) -> AuthRequest:
        f = _parse_fields(line, "AUTHREQ", cls._FIELDS)
        if f["reauth"] not in ("0", "1"):
            raise WireError(f"reauth: expected 0 or 1, got {f['reauth']!r}")
        try:
            otp = OtpCode(f["otp"])
        except OtpError as exc:
            raise WireError(f"otp: {exc}") from None
        return cls(
            uid=f["uid"],
            otp=otp,
            sid=f["sid"],
            tid=f["tid"],
            nonce=f["nonce"],
            ts=_parse_int("ts", f["ts"], TIMESTAMP_WIDTH),
            lamport_ts=_parse_int("lts", f["lts"], TIMESTAMP_WIDTH),
            reauth=f["reauth"] == "1",
        )


@dataclass(frozen=True)
class AuthAck:
    ok: bool
    lamport_ts: int
    continuous_required: bool = False
    t_reauth: float | None = None

    def __post_init__(self) -> None:
        if self.continuous_required != (self.t_reauth is not None):
            raise WireError("t_reauth is present iff continuous authentication is required")
        if self.continuous_required and not self.ok:
            raise WireError("a failed ack cannot start continuous authentication")

    def encode(self) -> str:
        status = "OK" if self.ok else "FAIL"
        if self.continuous_required:
            return f"AUTHACK|v1|status={status}|cont=1|treauth={_fmt_seconds(self.t_reauth)}|lts={_ts(self.lamport_ts)}\n"
        return f"AUTHACK|v1|status={status}|cont=0|lts={_ts(self.lamport_ts)}\n"

    @classmethod
    def decode(cls, line: str) -> AuthAck:
        if "|cont=1|" in line:
            f = _parse_fields(line, "AUTHACK", ("status", "cont", "treauth", "lts"))
            try:
                t_reauth = float(f["treauth"])
            except ValueError:
                raise WireError(f"treauth: bad number {f['treauth']!r}") from None
            if not t_reauth > 0:
                raise WireError("treauth: must be positive")
        else:
            f = _parse_fields(line, "AUTHACK", ("status", "cont", "lts"))
            t_reauth = None
        if f["status"] not in ("OK", "FAIL"):
            raise WireError(f"status: bad value {f['status']!r}")
        if f["cont"] not in ("0", "1"):
            raise WireError(f"cont: bad value {f['cont']!r}")
        return cls(
            ok=f["status"] == "OK",
            lamport_ts=_parse_int("lts", f["lts"], TIMESTAMP_WIDTH),
            continuous_required=f["cont"] == "1",
            t_reauth=t_reauth,
        )


# -- service -----------------------------------------------------------------


@dataclass(frozen=True)
class ServicePolicy:
    totp: TotpParams = TotpParams()
    pending_ttl: float = 120.0
    throttle_failures: int = 5
    throttle_window: float = 60.0
    throttle_refusal: float = 30.0
    consumed_history: int = 64


@dataclass
class _Pending:
    nonce: str
    issued_at: float


@dataclass
class _TerminalState:
    reg: TerminalRegistration
    pending: _Pending | None = None
    consumed: deque = field(default_factory=lambda: deque(maxlen=64))
    endpoint: Terminal | None = None


@dataclass
class _UserState:
    k_u: OtpKey
    failures: deque = field(default_factory=deque)
    refused_until: float = float("-inf")


@dataclass(frozen=True)
class Verdict:
    ack: AuthAck
    reason: str  # "ok" or the failure cause; never sent on the wire


class Service:
    """Authentication back end: user keys, terminal nonces and the check itself."""

    def __init__(
        self,
        identity: ServiceIdentity,
        policy: ServicePolicy | None = None,
        nonce_source: NonceSource | None = None,
    ):
        self.identity = identity
        self.policy = policy or ServicePolicy()
        self.nonces = nonce_source or NonceSource.service_random()
        self.clock = LamportClock()
        self.users: dict[str, _UserState] = {}
        self.terminals: dict[str, _TerminalState] = {}
        self.log: list[tuple[float, str, str, str]] = []

    def register_user(self, uid: str, k_u: OtpKey) -> None:
        if uid in self.users:
            raise ProtocolError(f"user {uid!r} already registered")
        self.users[uid] = _UserState(k_u)

    def register_terminal(self, reg: TerminalRegistration) -> None:
        if reg.sid != self.identity.sid:
            raise ProtocolError(f"terminal {reg.tid} belongs to service {reg.sid}")
        if reg.tid in self.terminals:
            raise ProtocolError(f"terminal {reg.tid!r} already registered")
        self.terminals[reg.tid] = _TerminalState(reg, consumed=deque(maxlen=self.policy.consumed_history))

    def attach(self, terminal: Terminal) -> None:
        self._terminal(terminal.reg.tid).endpoint = terminal

    def _terminal(self, tid: str) -> _TerminalState:
        try:
            return self.terminals[tid]
        except KeyError:
            raise ProtocolError(f"unknown terminal {tid!r}") from None

    def issue_challenge(self, tid: str, now: float, continuous: bool = False) -> ChallengePayload:
        """Generate a random challenge for a service-driven terminal.

        The new nonce replaces any pending one, so only the latest code
        shown on the terminal can be used.
        """
        st = self._terminal(tid)
        if st.reg.ui_mode != SERVICE_DRIVEN:
            raise ProtocolError(f"terminal {tid} generates its own challenges")
        nonce = next_nonce(self.nonces)
        st.pending = _Pending(nonce, now)
        opts = frozenset({FLAG_CONTINUOUS}) if continuous else frozenset()
        return ChallengePayload(self.identity.sid, tid, nonce, self.clock.stamp(now), opts)

    def withdraw_challenge(self, tid: str) -> None:
        self._terminal(tid).pending = None

    def verify(self, req: AuthRequest, now: float) -> AuthAck:
        return self.verify_detailed(req, now).ack

    def verify_detailed(self, req: AuthRequest, now: float) -> Verdict:
        self.clock.update(req.lamport_ts, now)
        reason = self._check(req, now)
        ok = reason == "ok"
        st = self.terminals.get(req.tid)
        cont = ok and st is not None and st.reg.continuous
        ack = AuthAck(
            ok=ok,
            lamport_ts=self.clock.stamp(now),
            continuous_required=cont,
            t_reauth=st.reg.t_reauth if cont else None,
        )
        self.log.append((now, req.uid, req.tid, reason))
        if not ok:
            log.info("auth failed uid=%s tid=%s reason=%s", req.uid, req.tid, reason)
        return Verdict(ack, reason)

    def _check(self, req: AuthRequest, now: float) -> str:
        user = self.users.get(req.uid)
        if user is not None and user.refused_until > now:
            return "throttled"
        if user is None:
            # unknown uids are not tracked: that would let a guesser grow the table
            return "unknown-uid"
        if req.sid != self.identity.sid:
            return "wrong-service"
        st = self.terminals.get(req.tid)
        if st is None:
            return "unknown-terminal"
        if not totp_verify(user.k_u, req.otp, now, self.policy.totp).accepted:
            self._record_failure(user, now)
            return "bad-otp"
        reason = self._check_nonce(st, req.nonce, now)
        if reason == "ok":
            st.consumed.append(req.nonce)
            user.failures.clear()
        return reason

    def _check_nonce(self, st: _TerminalState, nonce: str, now: float) -> str:
        if st.reg.ui_mode == SERVICE_DRIVEN:
            pending = st.pending
            if pending is not None and hmac.compare_digest(pending.nonce, nonce):
                if now - pending.issued_at > self.policy.pending_ttl:
                    st.pending = None
                    return "nonce-expired"
                st.pending = None
                return "ok"
            if nonce in st.consumed:
                return "nonce-consumed"
            return "stale-nonce" if pending is not None else "unknown-nonce"
        if hotp_verify_window(st.reg.k_n, nonce, st.reg.nonce_counter).accepted:
            return "ok"
        return "nonce-consumed" if nonce in st.consumed else "bad-nonce"

    def _record_failure(self, user: _UserState, now: float) -> None:
        p = self.policy
        user.failures.append(now)
        while user.failures and now - user.failures[0] > p.throttle_window:
            user.failures.popleft()
        if len(user.failures) >= p.throttle_failures:
            user.refused_until = now + p.throttle_refusal
            user.failures.clear()

    def notify_terminal(self, ok: bool, uid: str, tid: str) -> bool:
        """Step 5: tell a terminal-driven terminal how authentication went."""
        st = self._terminal(tid)
        if st.reg.ui_mode != TERMINAL_DRIVEN:
            raise ProtocolError("only terminal-driven terminals are notified")
        if st.endpoint is None:
            raise ProtocolError(f"terminal {tid} is not attached")
        return st.endpoint.on_notify(ok, uid if ok else None)


# -- terminal ----------------------------------------------------------------


def terminal_issue_challenge(
    reg: TerminalRegistration,
    now: float,
    clock: LamportClock | None = None,
    service: Service | None = None,
    continuous: bool = False,
) -> ChallengePayload:
    """Produce the challenge a terminal should display right now.

    Terminal-driven registrations derive the nonce from ``k_n`` and advance
    ``reg.nonce_counter``. Service-driven ones ask ``service`` for a random
    nonce, which the service records as pending.
    """
    if reg.ui_mode == SERVICE_DRIVEN:
        if service is None:
            raise ProtocolError("service-driven challenges come from the service")
        return service.issue_challenge(reg.tid, now, continuous)
    clock = clock or LamportClock()
    nonce = next_nonce(NonceSource.terminal_hotp(reg.k_n, reg.nonce_counter))
    opts = frozenset({FLAG_CONTINUOUS}) if continuous else frozenset()
    return ChallengePayload(reg.sid, reg.tid, nonce, clock.stamp(now), opts)


class Terminal:
    LOGIN = "login"
    SESSION = "session"

    def __init__(self, reg: TerminalRegistration, service: Service | None = None):
        self.reg = reg
        self.service = service
        self.clock = LamportClock()
        self.state = self.LOGIN
        self.owner: str | None = None
        self.locked = False
        self.displayed: ChallengePayload | None = None

    def issue_challenge(self, now: float, continuous: bool = False) -> ChallengePayload:
        self.displayed = terminal_issue_challenge(self.reg, now, self.clock, self.service, continuous)
        return self.displayed

    def clear_display(self) -> None:
        self.displayed = None

    def on_notify(self, ok: bool, uid: str | None) -> bool:
        """Handle the service's outcome notice; True if the terminal changed state."""
        if not ok or self.state == self.SESSION:
            return False
        self.enter_session(uid)
        return True

    def enter_session(self, uid: str) -> None:
        self.state = self.SESSION
        self.owner = uid
        self.locked = False
        self.displayed = None

    def back_to_login(self, now: float) -> ChallengePayload:
        self.state = self.LOGIN
        self.owner = None
        self.locked = False
        return self.issue_challenge(now)


# -- device ------------------------------------------------------------------


class NoRequest(enum.Enum):
    UNASSOCIATED = "unassociated"
    PINNED_ELSEWHERE = "pinned-elsewhere"


class SecureChannel:
    """Device-to-service channel with certificate pinning.

    Stands in for TLS: it refuses to open unless the service's fingerprint
    matches the one stored in the credential, and it pushes every message
    through the wire encoding.
    """

    def __init__(self, cred: Credential, service: Service):
        if not hmac.compare_digest(cred.service_fingerprint, service.identity.fingerprint):
            raise ChannelError(f"certificate pin mismatch for service {cred.sid}")
        self.service = service
        self.sent = 0

    def send(self, req: AuthRequest, now: float) -> Verdict:
        self.sent += 1
        verdict = self.service.verify_detailed(AuthRequest.decode(req.encode()), now)
        return Verdict(AuthAck.decode(verdict.ack.encode()), verdict.reason)


class Device:
    """The wearable: holds credentials and answers scanned challenges."""

    def __init__(self, store: DeviceStore | None = None, totp: TotpParams | None = None, clock_skew: float = 0.0):
        self.store = store or DeviceStore()
        self.totp = totp or TotpParams()
        self.clock = LamportClock()
        self.clock_skew = clock_skew
        self.pinned_tid: str | None = None
        self.t_reauth: float | None = None
        self.requests_built = 0

    @property
    def continuous(self) -> bool:
        return self.pinned_tid is not None

    def associate(self, service: ServiceIdentity, uid: str, k_u: OtpKey) -> Credential:
        return associate_device(self.store, service, uid, k_u)

    def on_scan(self, payload: ChallengePayload, now: float) -> AuthRequest | NoRequest:
        if self.pinned_tid is not None and payload.tid != self.pinned_tid:
            return NoRequest.PINNED_ELSEWHERE
        cred = self.store.lookup(payload.sid)
        if cred is None:
            return NoRequest.UNASSOCIATED
        device_time = now + self.clock_skew
        self.clock.update(payload.timestamp, now)
        self.requests_built += 1
        return AuthRequest(
            uid=cred.uid,
            otp=totp_generate(cred.k_u, device_time, self.totp),
            sid=payload.sid,
            tid=payload.tid,
            nonce=payload.nonce,
            ts=payload.timestamp,
            lamport_ts=self.clock.stamp(now),
            reauth=self.continuous,
        )

    def on_ack(self, ack: AuthAck, tid: str, now: float) -> None:
        self.clock.update(ack.lamport_ts, now)
        if ack.ok and ack.continuous_required and self.pinned_tid is None:
            self.pinned_tid = tid
            self.t_reauth = ack.t_reauth

    def end_continuous(self) -> None:
        self.pinned_tid = None
        self.t_reauth = None
