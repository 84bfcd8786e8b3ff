from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gauth.challenge import FLAG_CONTINUOUS, ChallengePayload, NonceSource
from gauth.otp import HotpCounter, OtpCode, OtpKey, TotpParams, totp_generate
from gauth.protocol import (
    TERMINAL_DRIVEN,
    AssociationError,
    AuthAck,
    AuthRequest,
    ChannelError,
    Device,
    DeviceStore,
    LamportClock,
    NoRequest,
    ProtocolError,
    SecureChannel,
    Service,
    ServiceIdentity,
    ServicePolicy,
    Terminal,
    TerminalRegistration,
    WireError,
    associate_device,
    lamport_update,
    terminal_issue_challenge,
)

import oracles

NOW = 1_700_000_000.0
K_U = OtpKey(oracles.RFC_KEY, "alice")
K_N = OtpKey(b"terminal-key-0123456", "T02")
IDENT = ServiceIdentity("sha256:aa", "1234", "https://auth.example.test")


def make_service(continuous=True, policy=None, nonce_seed=3, space=10**6):
    svc = Service(IDENT, policy, NonceSource.service_random(nonce_seed, space))
    svc.register_user("alice", K_U)
    svc.register_terminal(TerminalRegistration("T01", "1234", continuous=continuous, t_reauth=5))
    svc.register_terminal(TerminalRegistration("T02", "1234", TERMINAL_DRIVEN, K_N))
    return svc


def make_device():
    dev = Device()
    dev.associate(IDENT, "alice", K_U)
    return dev


def request(nonce, otp=None, tid="T01", uid="alice", ts=int(NOW), reauth=False):
    otp = otp or totp_generate(K_U, NOW)
    return AuthRequest(uid, otp, "1234", tid, nonce, ts, int(NOW), reauth)


# -- association ----------------------------------------------------------------


def test_associate_and_lookup():
    store = DeviceStore()
    cred = associate_device(store, IDENT, "alice", K_U)
    assert len(store) == 1
    assert store.lookup("1234") == cred


def test_duplicate_association_refused():
    store = DeviceStore()
    associate_device(store, IDENT, "alice", K_U)
    with pytest.raises(AssociationError):
        associate_device(store, IDENT, "alice", K_U)


def test_two_services_independent():
    store = DeviceStore()
    other = ServiceIdentity("sha256:bb", "5678", "https://other.example.test")
    a = associate_device(store, IDENT, "alice", K_U)
    b = associate_device(store, other, "alice", K_N)
    assert store.lookup("1234") is a and store.lookup("5678") is b


def test_registration_kn_iff_terminal_driven():
    with pytest.raises(ValueError):
        TerminalRegistration("T01", "1234", TERMINAL_DRIVEN)
    with pytest.raises(ValueError):
        TerminalRegistration("T01", "1234", k_n=K_N)


# -- challenges -----------------------------------------------------------------


def test_terminal_driven_first_nonce():
    reg = TerminalRegistration("T9", "1234", TERMINAL_DRIVEN, OtpKey(oracles.RFC_KEY))
    p1 = terminal_issue_challenge(reg, NOW)
    p2 = terminal_issue_challenge(reg, NOW)
    assert (p1.nonce, p2.nonce) == ("755224", "287082")
    assert (p1.sid, p1.tid) == ("1234", "T9")


def test_service_driven_records_pending():
    svc = make_service()
    p = terminal_issue_challenge(svc.terminals["T01"].reg, NOW, service=svc)
    assert svc.terminals["T01"].pending.nonce == p.nonce
    with pytest.raises(ProtocolError):
        terminal_issue_challenge(svc.terminals["T01"].reg, NOW)


# -- device ---------------------------------------------------------------------


def test_device_builds_request():
    dev = make_device()
    p = ChallengePayload("1234", "T01", "111222", int(NOW))
    req = dev.on_scan(p, NOW)
    assert (req.uid, req.sid, req.tid, req.nonce) == ("alice", "1234", "T01", "111222")
    assert req.otp == totp_generate(K_U, NOW)
    assert req.reauth is False


def test_device_unknown_service_no_request():
    dev = make_device()
    assert dev.on_scan(ChallengePayload("9999", "T01", "111222", int(NOW)), NOW) is NoRequest.UNASSOCIATED
    assert dev.requests_built == 0


def test_device_pinned_in_continuous_mode():
    dev = make_device()
    dev.on_ack(AuthAck(True, int(NOW), True, 5.0), "T01", NOW)
    assert dev.continuous
    assert dev.on_scan(ChallengePayload("1234", "T02", "111222", int(NOW)), NOW) is NoRequest.PINNED_ELSEWHERE
    req = dev.on_scan(ChallengePayload("1234", "T01", "111222", int(NOW), frozenset("C")), NOW)
    assert req.reauth is True
    dev.end_continuous()
    assert not dev.continuous


@given(st.lists(st.sampled_from(["T01", "T02", "T03"]), max_size=30))
def test_pinned_device_never_requests_other_tids(tids):
    dev = make_device()
    dev.on_ack(AuthAck(True, int(NOW), True, 5.0), "T01", NOW)
    for tid in tids:
        out = dev.on_scan(ChallengePayload("1234", tid, "000001", int(NOW)), NOW)
        assert isinstance(out, NoRequest) == (tid != "T01")


def test_channel_pin_mismatch():
    svc = make_service()
    dev = Device()
    dev.associate(ServiceIdentity("sha256:evil", "1234", "x"), "alice", K_U)
    with pytest.raises(ChannelError):
        SecureChannel(dev.store.lookup("1234"), svc)


# -- service --------------------------------------------------------------------


def test_happy_path_continuous_ack():
    svc = make_service()
    ch = svc.issue_challenge("T01", NOW)
    ack = svc.verify(request(ch.nonce), NOW)
    assert ack.ok and ack.continuous_required and ack.t_reauth == 5


def test_replay_is_consumed():
    svc = make_service()
    ch = svc.issue_challenge("T01", NOW)
    req = request(ch.nonce)
    assert svc.verify_detailed(req, NOW).reason == "ok"
    v = svc.verify_detailed(req, NOW + 1)
    assert not v.ack.ok and v.reason == "nonce-consumed"


def test_otp_two_steps_old_rejected():
    svc = make_service()
    ch = svc.issue_challenge("T01", NOW)
    v = svc.verify_detailed(request(ch.nonce, totp_generate(K_U, NOW - 60)), NOW)
    assert v.reason == "bad-otp"
    # the nonce is still usable after a bad OTP
    assert svc.verify_detailed(request(ch.nonce), NOW).reason == "ok"


@pytest.mark.parametrize(
    "kw,reason",
    [
        (dict(uid="mallory"), "unknown-uid"),
        (dict(tid="T77"), "unknown-terminal"),
        (dict(nonce="000000"), "stale-nonce"),
    ],
)
def test_failure_reasons(kw, reason):
    svc = make_service()
    ch = svc.issue_challenge("T01", NOW)
    args = dict(nonce=ch.nonce)
    args.update(kw)
    v = svc.verify_detailed(request(**args), NOW)
    assert (v.ack.ok, v.reason) == (False, reason)
    assert v.ack.encode() == f"AUTHACK|v1|status=FAIL|cont=0|lts={v.ack.lamport_ts:011d}\n"


def test_unknown_nonce_without_pending():
    svc = make_service()
    assert svc.verify_detailed(request("123456"), NOW).reason == "unknown-nonce"


def test_newer_challenge_supersedes_older():
    svc = make_service()
    old = svc.issue_challenge("T01", NOW)
    new = svc.issue_challenge("T01", NOW + 1)
    if old.nonce != new.nonce:
        assert svc.verify_detailed(request(old.nonce), NOW + 1).reason == "stale-nonce"
    assert svc.verify_detailed(request(new.nonce), NOW + 1).reason == "ok"


def test_pending_nonce_expires():
    svc = make_service()
    ch = svc.issue_challenge("T01", NOW)
    later = NOW + 121
    otp = totp_generate(K_U, later)
    assert svc.verify_detailed(request(ch.nonce, otp), later).reason == "nonce-expired"


def test_terminal_driven_nonce_window_and_replay():
    svc = make_service()
    term_reg = TerminalRegistration("T02", "1234", TERMINAL_DRIVEN, K_N)
    nonces = [terminal_issue_challenge(term_reg, NOW).nonce for _ in range(5)]
    # nonces 0..3 are within the lookahead; skipping straight to 3 is fine
    assert svc.verify_detailed(request(nonces[3], tid="T02"), NOW).reason == "ok"
    assert svc.verify_detailed(request(nonces[3], tid="T02"), NOW).reason == "nonce-consumed"
    assert svc.verify_detailed(request(nonces[1], tid="T02"), NOW).reason == "bad-nonce"
    assert svc.verify_detailed(request(nonces[4], tid="T02"), NOW).reason == "ok"


def test_throttle_after_five_bad_otps():
    svc = make_service()
    ch = svc.issue_challenge("T01", NOW)
    bad = OtpCode("000000") if totp_generate(K_U, NOW).digits != "000000" else OtpCode("000001")
    for i in range(5):
        assert svc.verify_detailed(request(ch.nonce, bad), NOW + i).reason == "bad-otp"
    assert svc.verify_detailed(request(ch.nonce), NOW + 5).reason == "throttled"
    assert svc.verify_detailed(request(ch.nonce), NOW + 36).reason == "ok"


def test_notify_terminal_driven():
    svc = make_service()
    reg = TerminalRegistration("T02", "1234", TERMINAL_DRIVEN, K_N)
    term = Terminal(reg, svc)
    svc.attach(term)
    shown = term.issue_challenge(NOW)
    assert svc.notify_terminal(False, "alice", "T02") is False
    assert term.state == Terminal.LOGIN and term.displayed == shown
    assert svc.notify_terminal(True, "alice", "T02") is True
    assert term.state == Terminal.SESSION and term.owner == "alice"


def test_notify_refused_for_service_driven():
    svc = make_service()
    svc.attach(Terminal(svc.terminals["T01"].reg, svc))
    with pytest.raises(ProtocolError):
        svc.notify_terminal(True, "alice", "T01")


def test_end_to_end_over_channel():
    svc = make_service()
    dev = make_device()
    term = Terminal(svc.terminals["T01"].reg, svc)
    shown = term.issue_challenge(NOW, continuous=False)
    req = dev.on_scan(shown, NOW)
    verdict = SecureChannel(dev.store.lookup("1234"), svc).send(req, NOW + 0.3)
    assert verdict.reason == "ok"
    dev.on_ack(verdict.ack, "T01", NOW + 0.6)
    assert dev.pinned_tid == "T01"


def test_exhaustive_nonce_space_single_acceptance():
    """Every nonce in a 10^3 space, correct OTP: only the pending one passes, once."""
    svc = make_service(space=1000, policy=ServicePolicy(throttle_failures=10**9))
    ch = svc.issue_challenge("T01", NOW)
    accepted = [n for n in range(1000) if svc.verify(request(f"{n:06d}"), NOW).ok]
    assert accepted == [int(ch.nonce)]
    assert not any(svc.verify(request(f"{n:06d}"), NOW).ok for n in range(1000))


# -- wire format ------------------------------------------------------------------


def test_request_wire_format():
    req = AuthRequest("alice", OtpCode("123456"), "1234", "T01", "654321", 1_700_000_000, 1_700_000_001)
    line = req.encode()
    assert line == (
        "AUTHREQ|v1|uid=alice|otp=123456|sid=1234|tid=T01|nonce=654321|ts=01700000000|reauth=0|lts=01700000001\n"
    )
    assert AuthRequest.decode(line) == req


def test_ack_wire_format():
    ack = AuthAck(True, 1_700_000_002, True, 5.0)
    assert ack.encode() == "AUTHACK|v1|status=OK|cont=1|treauth=5|lts=01700000002\n"
    assert AuthAck.decode(ack.encode()) == ack


@pytest.mark.parametrize(
    "line",
    [
        "AUTHREQ|v1|uid=alice|otp=123456|sid=1234|tid=T01|nonce=654321|ts=01700000000|reauth=0|lts=01700000001",
        "AUTHREQ|v1|uid=alice|otp=12345|sid=1234|tid=T01|nonce=654321|ts=01700000000|reauth=0|lts=01700000001\n",
        "AUTHREQ|v1|uid=alice|otp=123456|sid=1234|tid=T01|nonce=654321|ts=01700000000|reauth=2|lts=01700000001\n",
        "AUTHREQ|v1|otp=123456|uid=alice|sid=1234|tid=T01|nonce=654321|ts=01700000000|reauth=0|lts=01700000001\n",
        "AUTHACK|v1|status=OK|cont=0|treauth=5|lts=01700000002\n",
        "AUTHACK|v1|status=MAYBE|cont=0|lts=01700000002\n",
    ],
)
def test_wire_rejects_malformed(line):
    with pytest.raises(WireError):
        (AuthAck if line.startswith("AUTHACK") else AuthRequest).decode(line)


def test_ack_invariants():
    with pytest.raises(WireError):
        AuthAck(True, 1, True, None)
    with pytest.raises(WireError):
        AuthAck(False, 1, True, 5.0)


# -- clocks -----------------------------------------------------------------------


@pytest.mark.parametrize("logical,received,expected", [(5, 9, 10), (9, 5, 10)])
def test_lamport_max_plus_one(logical, received, expected):
    assert lamport_update(LamportClock(logical=logical), received).logical == expected


def test_lamport_peer_offset():
    c = LamportClock()
    c.update(1_700_000_010, now=1_700_000_000.5)
    assert c.peer_offset == pytest.approx(9.5)


@given(st.lists(st.tuples(st.booleans(), st.integers(min_value=0, max_value=10**11 - 2)), max_size=50))
def test_lamport_monotone(events):
    a, b = LamportClock(), LamportClock()
    seen = [a.logical]
    for a_sends, ts in events:
        sender, receiver = (a, b) if a_sends else (b, a)
        stamp = sender.stamp(ts / 10)
        before = receiver.logical
        receiver.update(stamp)
        assert receiver.logical > before
        seen.append(a.logical)
    assert seen == sorted(seen)
