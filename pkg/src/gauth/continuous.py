"""Service-side continuous-authentication sessions.

After a successful login on a terminal that requires it, the service
expects a fresh re-authentication every ``t_reauth`` seconds. Each period
starts with a new challenge on the terminal; if no valid answer arrives
within ``lock_timeout_l`` seconds the terminal locks and keeps showing
that challenge, so a returning user is re-admitted by a single scan. A
terminal that stays locked for ``grace`` seconds logs the user out.

Deadlines sit on a fixed grid ``anchor + k * t_reauth``; re-auths do not
shift it. Times are plain floats in whatever unit the caller uses
(seconds in the simulator).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

from .challenge import ChallengePayload
from .protocol import AuthAck, AuthRequest, Verdict

ACTIVE = "active"
LOCKED = "locked"
LOGGED_OUT = "logged-out"

END_CAUSES = ("user-logout", "service-terminate", "lock-expired")

DEFAULT_T_REAUTH = 5.0
DEFAULT_LOCK_TIMEOUT = 1.0
GRACE_PERIODS = 10

EXPOSURE_COLUMNS = ("tid", "uid", "walk_away_t", "detect_t", "W")

_ALLOWED = {ACTIVE: {LOCKED, LOGGED_OUT}, LOCKED: {ACTIVE, LOGGED_OUT}, LOGGED_OUT: set()}


class SessionError(Exception):
    pass


class ReauthResult(NamedTuple):
    accepted: bool
    reason: str


class Exposure(NamedTuple):
    walk_away: float
    detected: float
    window: float


@dataclass
class SessionState:
    uid: str
    tid: str
    t_reauth: float
    lock_timeout_l: float
    anchor: float
    next_deadline: float
    grace: float
    leniency: float = 0.0
    phase: str = ACTIVE
    last_challenge: ChallengePayload | None = None
    challenge_open: bool = False
    lock_at: float | None = None
    locked_since: float | None = None
    last_input: float | None = None
    end_cause: str | None = None
    history: list[tuple[float, str]] = field(default_factory=list)
    reauth_times: list[float] = field(default_factory=list)
    exposure_log: list[Exposure] = field(default_factory=list)

    def _move(self, phase: str, now: float) -> None:
        if phase not in _ALLOWED[self.phase]:
            raise SessionError(f"illegal transition {self.phase} -> {phase}")
        self.phase = phase
        self.history.append((now, phase))

    def phase_at(self, t: float) -> str:
        """Phase in force at time ``t`` (later entries win on ties)."""
        current = self.history[0][1]
        for when, phase in self.history:
            if when > t:
                break
            current = phase
        return current

    def grid_after(self, t: float) -> float:
        """First deadline strictly after ``t``."""
        k = int((t - self.anchor) // self.t_reauth) + 1
        deadline = self.anchor + k * self.t_reauth
        while deadline <= t:
            deadline += self.t_reauth
        return deadline


def start_session(
    uid: str,
    tid: str,
    t_reauth: float,
    l: float,
    now: float,
    grace: float | None = None,
    leniency: float = 0.0,
) -> SessionState:
    if t_reauth <= 0:
        raise SessionError("t_reauth must be positive")
    if l < 0:
        raise SessionError("lock timeout must be >= 0")
    s = SessionState(
        uid=uid,
        tid=tid,
        t_reauth=t_reauth,
        lock_timeout_l=l,
        anchor=now,
        next_deadline=now + t_reauth,
        grace=GRACE_PERIODS * t_reauth if grace is None else grace,
        leniency=leniency,
    )
    s.history.append((now, ACTIVE))
    return s


def start_from_ack(ack: AuthAck, uid: str, tid: str, l: float, now: float, **kw) -> SessionState | None:
    """Open a session only if the ack asked for continuous authentication."""
    if not (ack.ok and ack.continuous_required):
        return None
    return start_session(uid, tid, ack.t_reauth, l, now, **kw)


def note_input(session: SessionState, now: float) -> None:
    session.last_input = now


def on_deadline(session: SessionState, now: float, issue: Callable[[], ChallengePayload]) -> ChallengePayload:
    """Show a fresh challenge and arm the lock timer.

    ``issue`` produces the challenge (and, for service-driven terminals,
    registers its nonce as pending).
    """
    if session.phase != ACTIVE:
        raise SessionError(f"deadline while {session.phase}")
    if now < session.next_deadline:
        raise SessionError(f"deadline {session.next_deadline} not reached at {now}")
    deadline = session.next_deadline
    challenge = issue()
    session.last_challenge = challenge
    session.challenge_open = True
    extra = 0
    if session.leniency and session.last_input is not None and deadline - session.last_input <= session.t_reauth:
        extra = session.leniency
    session.lock_at = deadline + session.lock_timeout_l + extra
    session.next_deadline = session.grid_after(now)
    return challenge


def on_lock_timer(session: SessionState, now: float) -> bool:
    """Lock if the open challenge went unanswered. Returns True on lock."""
    if session.phase != ACTIVE or not session.challenge_open or session.lock_at is None:
        return False
    if now < session.lock_at:
        return False
    session._move(LOCKED, now)
    session.locked_since = now
    return True


def on_grace_timer(session: SessionState, now: float) -> bool:
    """Log out a terminal that has stayed locked for the grace period."""
    if session.phase != LOCKED or now - session.locked_since < session.grace:
        return False
    return end_session(session, "lock-expired", now)


def on_reauth(
    session: SessionState,
    req: AuthRequest,
    now: float,
    verify: Callable[[AuthRequest, float], Verdict | AuthAck],
) -> ReauthResult:
    """Handle a re-authentication request aimed at this session.

    Only the challenge currently shown (on screen or on the lock screen)
    can be answered, and only once. Anything else is rejected without
    touching the timers.
    """
    if req.tid != session.tid:
        return ReauthResult(False, "other-terminal")
    if session.phase == LOGGED_OUT:
        return ReauthResult(False, "logged-out")
    if req.uid != session.uid:
        return ReauthResult(False, "wrong-user")
    if not session.challenge_open or session.last_challenge is None or req.nonce != session.last_challenge.nonce:
        return ReauthResult(False, "stale-nonce")
    result = verify(req, now)
    if isinstance(result, Verdict):
        ok, reason = result.ack.ok, result.reason
    else:
        ok, reason = result.ok, "ok" if result.ok else "rejected"
    if not ok:
        return ReauthResult(False, reason)
    session.challenge_open = False
    session.lock_at = None
    session.reauth_times.append(now)
    if session.phase == LOCKED:
        session._move(ACTIVE, now)
        session.locked_since = None
        session.next_deadline = session.grid_after(now)
    return ReauthResult(True, "ok")


def end_session(session: SessionState, cause: str, now: float) -> bool:
    """Log the session out. Returns False if it already was."""
    if cause not in END_CAUSES:
        raise SessionError(f"unknown end cause {cause!r}")
    if session.phase == LOGGED_OUT:
        return False
    session._move(LOGGED_OUT, now)
    session.end_cause = cause
    session.challenge_open = False
    session.lock_at = None
    return True


def window_of_exposure(walk_away: float, session: SessionState) -> float:
    """Seconds the terminal stayed usable after the user walked away.

    Zero if the session was not active at ``walk_away``. Raises
    :class:`SessionError` if it has not left the active phase yet.
    """
    if session.phase_at(walk_away) != ACTIVE:
        w = 0.0
        detected = walk_away
    else:
        detected = next((t for t, phase in session.history if t >= walk_away and phase != ACTIVE), None)
        if detected is None:
            raise SessionError("session still active; exposure not yet known")
        w = detected - walk_away
    session.exposure_log.append(Exposure(walk_away, detected, w))
    return w


def exposure_csv_rows(sessions: Iterable[SessionState]) -> list[tuple[str, str, str, str, str]]:
    rows = []
    for s in sessions:
        for e in s.exposure_log:
            rows.append((s.tid, s.uid, f"{e.walk_away:.3f}", f"{e.detected:.3f}", f"{e.window:.3f}"))
    return rows


def exposure_csv(sessions: Iterable[SessionState]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EXPOSURE_COLUMNS)
    w.writerows(exposure_csv_rows(sessions))
    return buf.getvalue()


class SessionRegistry:
    """Sessions keyed by (uid, tid); each keeps its own schedule."""

    def __init__(self) -> None:
        self._sessions: dict[tuple[str, str], SessionState] = {}
        self.closed: list[SessionState] = []

    def __len__(self) -> int:
        return len(self._sessions)

    def __iter__(self):
        return iter(self._sessions.values())

    def add(self, session: SessionState) -> SessionState:
        key = (session.uid, session.tid)
        old = self._sessions.get(key)
        if old is not None and old.phase != LOGGED_OUT:
            raise SessionError(f"session for {key} already open")
        if old is not None:
            self.closed.append(old)
        self._sessions[key] = session
        return session

    def get(self, uid: str, tid: str) -> SessionState | None:
        s = self._sessions.get((uid, tid))
        return s if s is not None and s.phase != LOGGED_OUT else None

    def all_sessions(self) -> list[SessionState]:
        return self.closed + list(self._sessions.values())
