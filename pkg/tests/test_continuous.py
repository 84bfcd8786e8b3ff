from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gauth.challenge import ChallengePayload
from gauth.continuous import (
    ACTIVE,
    EXPOSURE_COLUMNS,
    LOCKED,
    LOGGED_OUT,
    SessionError,
    SessionRegistry,
    end_session,
    exposure_csv,
    note_input,
    on_deadline,
    on_grace_timer,
    on_lock_timer,
    on_reauth,
    start_from_ack,
    start_session,
    window_of_exposure,
)
from gauth.otp import OtpCode
from gauth.protocol import AuthAck, AuthRequest

import oracles

T, L = 5000, 1000  # ms


class Issuer:
    def __init__(self, tid="T01"):
        self.n = 0
        self.tid = tid

    def __call__(self):
        self.n += 1
        return ChallengePayload("1234", self.tid, f"{self.n:06d}", 1_700_000_000, frozenset("C"))


def reauth_for(session, nonce=None, uid=None, tid=None):
    nonce = nonce or session.last_challenge.nonce
    return AuthRequest(uid or session.uid, OtpCode("123456"), "1234", tid or session.tid, nonce, 1, 1, True)


def accept(req, now):
    return AuthAck(True, 1, True, 5.0)


def reject(req, now):
    return AuthAck(False, 1)


def drive(session, walk_away, until, response_delay=300):
    """Run deadlines/lock timers; the device answers each challenge while present."""
    issue = Issuer(session.tid)
    while session.phase == ACTIVE and session.next_deadline <= until:
        d = session.next_deadline
        on_deadline(session, d, issue)
        answer_at = d + response_delay
        if d < walk_away and answer_at <= session.lock_at:
            assert on_reauth(session, reauth_for(session), answer_at, accept).accepted
        else:
            on_lock_timer(session, session.lock_at)
    return session


def test_start_schedule():
    s = start_session("alice", "T01", 5, 1, now=100)
    assert (s.phase, s.next_deadline, s.grace) == (ACTIVE, 105, 50)


def test_start_from_ack_gating():
    assert start_from_ack(AuthAck(True, 1), "alice", "T01", 1, 0) is None
    s = start_from_ack(AuthAck(True, 1, True, 5.0), "alice", "T01", 1, 0)
    assert s.next_deadline == 5.0


def test_independent_sessions_per_terminal():
    reg = SessionRegistry()
    a = reg.add(start_session("alice", "T01", 5, 1, now=0))
    b = reg.add(start_session("alice", "T02", 5, 1, now=2))
    on_deadline(a, 5, Issuer())
    assert (a.next_deadline, b.next_deadline) == (10, 7)
    with pytest.raises(SessionError):
        reg.add(start_session("alice", "T01", 5, 1, now=3))


def test_timely_reauth_keeps_active():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    assert on_reauth(s, reauth_for(s), 5.3, accept).accepted
    assert not on_lock_timer(s, 6)
    assert s.phase == ACTIVE and s.next_deadline == 10


def test_lock_at_deadline_plus_l():
    s = start_session("alice", "T01", 5, 1, now=0)
    shown = on_deadline(s, 5, Issuer())
    assert not on_lock_timer(s, 5.5)
    assert on_lock_timer(s, 6)
    assert s.phase == LOCKED and s.last_challenge == shown


def test_unlock_from_lock_screen():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    on_lock_timer(s, 6)
    assert not on_reauth(s, reauth_for(s), 7, reject).accepted
    assert s.phase == LOCKED
    assert on_reauth(s, reauth_for(s), 8, accept).accepted
    assert s.phase == ACTIVE and s.next_deadline == 10
    # the same challenge cannot unlock twice
    assert on_reauth(s, reauth_for(s), 8.5, accept).reason == "stale-nonce"


def test_old_nonce_rejected():
    s = start_session("alice", "T01", 5, 1, now=0)
    issue = Issuer()
    first = on_deadline(s, 5, issue)
    on_reauth(s, reauth_for(s), 5.2, accept)
    on_deadline(s, 10, issue)
    on_reauth(s, reauth_for(s), 10.2, accept)
    on_deadline(s, 15, issue)
    assert on_reauth(s, reauth_for(s, nonce=first.nonce), 15.2, accept).reason == "stale-nonce"


def test_other_terminal_ignored():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    assert on_reauth(s, reauth_for(s, tid="T02"), 5.1, accept).reason == "other-terminal"
    assert s.challenge_open


def test_rejected_reauth_leaves_timers():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    before = (s.lock_at, s.next_deadline, s.challenge_open)
    on_reauth(s, reauth_for(s), 5.1, reject)
    assert (s.lock_at, s.next_deadline, s.challenge_open) == before


def test_window_six_when_leaving_right_after_reauth():
    s2 = start_session("alice", "T01", T, L, now=0)
    issue = Issuer()
    on_deadline(s2, T, issue)
    on_reauth(s2, reauth_for(s2), T, accept)
    on_deadline(s2, 2 * T, issue)
    on_lock_timer(s2, s2.lock_at)
    assert window_of_exposure(T, s2) == 6000


def test_window_two_when_leaving_four_seconds_in():
    s = start_session("alice", "T01", T, L, now=0)
    drive(s, walk_away=4000, until=20_000)
    assert window_of_exposure(4000, s) == 2000


@given(st.integers(min_value=0, max_value=300_000), st.integers(min_value=0, max_value=999))
def test_window_matches_oracle_and_bound(walk_away, delay):
    s = start_session("alice", "T01", T, L, now=0)
    drive(s, walk_away, until=walk_away + 2 * T, response_delay=delay)
    w = window_of_exposure(walk_away, s)
    assert w == oracles.expected_window(walk_away, 0, T, L)
    assert 0 < w <= T + L


def test_window_zero_if_not_active():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    on_lock_timer(s, 6)
    assert window_of_exposure(7, s) == 0


def test_window_requires_detection():
    s = start_session("alice", "T01", 5, 1, now=0)
    with pytest.raises(SessionError):
        window_of_exposure(1, s)


@given(st.integers(min_value=1, max_value=200))
def test_liveness_always_present(periods):
    s = start_session("alice", "T01", T, L, now=0)
    drive(s, walk_away=10**9, until=periods * T)
    assert s.phase == ACTIVE
    assert len(s.reauth_times) == periods


def test_twelve_reauths_per_minute():
    s = start_session("alice", "T01", T, L, now=0)
    drive(s, walk_away=10**9, until=600_000)
    # answers land 300 ms after their deadline; bucket by deadline
    deadlines = [t - 300 for t in s.reauth_times]
    per_minute = [sum(1 for d in deadlines if 60_000 * m < d <= 60_000 * (m + 1)) for m in range(10)]
    assert per_minute == [12] * 10


def test_grace_logout():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    on_lock_timer(s, 6)
    assert not on_grace_timer(s, 55)
    assert on_grace_timer(s, 56)
    assert (s.phase, s.end_cause) == (LOGGED_OUT, "lock-expired")


def test_end_session_idempotent():
    s = start_session("alice", "T01", 5, 1, now=0)
    assert end_session(s, "user-logout", 2)
    assert not end_session(s, "service-terminate", 3)
    assert s.end_cause == "user-logout"
    with pytest.raises(SessionError):
        on_deadline(s, 5, Issuer())
    assert on_reauth(s, reauth_for(s, nonce="000001"), 6, accept).reason == "logged-out"


def test_end_cause_validated():
    with pytest.raises(SessionError):
        end_session(start_session("a", "T01", 5, 1, 0), "power-cut", 1)


def test_leniency_extends_lock_after_input():
    s = start_session("alice", "T01", 5, 1, now=0, leniency=2)
    note_input(s, 3)
    on_deadline(s, 5, Issuer())
    assert s.lock_at == 8
    s2 = start_session("alice", "T01", 5, 1, now=0, leniency=2)
    on_deadline(s2, 5, Issuer())
    assert s2.lock_at == 6


def test_transitions_only_along_allowed_edges():
    s = start_session("alice", "T01", 5, 1, now=0)
    end_session(s, "user-logout", 1)
    with pytest.raises(SessionError):
        s._move(ACTIVE, 2)


def test_exposure_csv_columns():
    s = start_session("alice", "T01", 5, 1, now=0)
    on_deadline(s, 5, Issuer())
    on_lock_timer(s, 6)
    window_of_exposure(4, s)
    text = exposure_csv([s])
    assert text.splitlines()[0] == ",".join(EXPOSURE_COLUMNS)
    assert text.splitlines()[1] == "T01,alice,4.000,6.000,2.000"
