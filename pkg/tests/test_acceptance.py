"""One test per acceptance criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run.
"""

from __future__ import annotations

import math
import random
import statistics
import time

from gauth.challenge import NonceSource
from gauth.harness.attack import attack_replay
from gauth.harness.calibrate import calibrate_battery, calibrate_latency, calibrate_optics
from gauth.harness.report import build_report
from gauth.harness.scenario import fixture_names, load_scenario, resolve_scenario
from gauth.optics import AccuracyTable, average_accuracy
from gauth.otp import OtpCode, OtpKey, TotpParams, hotp_generate, totp_generate
from gauth.protocol import AuthRequest, Service, ServiceIdentity, ServicePolicy, TerminalRegistration
from gauth.simnet.models import BatteryModel
from gauth.simnet.runner import run

import oracles
from test_otp import HOTP_VECTORS, TOTP_VECTORS


def fixture(name):
    return load_scenario(resolve_scenario(name))


def test_1_otp_oracle_equivalence(criterion):
    start = time.perf_counter()
    key = OtpKey(oracles.RFC_KEY)
    checked = mismatches = 0
    for counter, expected in enumerate(HOTP_VECTORS):
        mismatches += hotp_generate(key, counter).digits != expected or oracles.hotp(oracles.RFC_KEY, counter) != expected
        checked += 1
    for t, expected in TOTP_VECTORS:
        mismatches += totp_generate(key, t, width=8).digits != expected or oracles.totp(oracles.RFC_KEY, t, 8) != expected
        checked += 1
    rng = random.Random(2024)
    for _ in range(40):
        raw = rng.randbytes(rng.randint(10, 64))
        counter, t, width = rng.randrange(2**64), rng.randrange(10**11), rng.choice((6, 7, 8))
        k = OtpKey(raw)
        mismatches += hotp_generate(k, counter, width).digits != oracles.hotp(raw, counter, width)
        mismatches += totp_generate(k, t, width=width).digits != oracles.totp(raw, t, width)
        checked += 2
    elapsed = time.perf_counter() - start
    ok = criterion(1, mismatches == 0 and checked >= 20 and elapsed < 1.0, f"{checked} vectors, {mismatches} mismatches, {elapsed:.3f} s")
    assert ok


def test_2_exposure_bound(criterion):
    cfg = fixture("walkaway_t5_l1")
    t, l = cfg.policy.t_reauth, cfg.policy.lock_timeout
    start = time.perf_counter()
    windows = []
    for seed in range(1000):
        windows += run(cfg, seed).windows
    elapsed = time.perf_counter() - start
    w_max, w_mean = max(windows), statistics.fmean(windows)
    target = t / 2 + l
    ok = (
        len(windows) == 1000
        and w_max <= t + l + 0.001
        and 0.9 * target <= w_mean <= 1.1 * target
        and elapsed < 10.0
    )
    assert criterion(2, ok, f"{len(windows)} trials, max W {w_max:.3f} s, mean W {w_mean:.3f} s, {elapsed:.2f} s")


def test_3_reauth_cadence(criterion):
    r = run(fixture("always_present"))
    (session,) = r.sessions
    per_minute = session.per_minute(r.duration_ms)
    ok = per_minute == [12] * 10 and r.locks == 0
    assert criterion(3, ok, f"re-auths per minute {per_minute}")


def test_4_replay_resistance(criterion):
    v = attack_replay(fixture("replay_attack"))
    replay_presented, replay_accepted = v.attacked.adversary["replay"]
    ok = v.passed and replay_presented >= 100_000 and replay_accepted == 0
    detail = ", ".join(f"{k}: {p} presented / {a} accepted" for k, (p, a) in sorted(v.attacked.adversary.items()))
    assert criterion(4, ok, f"{detail}; legit session unaffected: {v.legit_unaffected}")


def test_5_optics_calibration(criterion):
    start = time.perf_counter()
    cal = calibrate_optics(trials=10_000, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(abs(float(row[5])) for row in cal.rows)
    mean0 = average_accuracy(AccuracyTable.default(), 0)
    ok = cal.ok and len(cal.rows) == 18 and worst <= 1.5 and abs(mean0 - 87.8) <= 0.1 and elapsed < 30
    assert criterion(5, ok, f"18 cells, worst delta {worst:.2f} pp, 0 deg mean {mean0:.3f}%, {elapsed:.2f} s")


def test_6_latency_calibration(criterion):
    cal = calibrate_latency(samples=10_000, seed=0)
    deltas = {row[0]: float(row[3]) for row in cal.rows}
    outside = sum(int(row[6]) for row in cal.rows)
    ok = cal.ok and all(abs(d) <= 3.0 for d in deltas.values()) and outside == 0
    assert criterion(6, ok, f"mean deltas % {deltas}, {outside} samples out of range")


def test_7_battery_model(criterion):
    b = BatteryModel()
    d5, d15 = b.drain_rate(5), b.drain_rate(15)
    ok = math.isclose(d5, 2.00, abs_tol=1e-9) and 0.80 <= d15 <= 0.90 and calibrate_battery().ok
    assert criterion(7, ok, f"T=5: {d5:.4f} %/min, T=15: {d15:.4f} %/min")


def test_8_protocol_exhaustion(criterion):
    key = OtpKey(oracles.RFC_KEY)
    now = 1_700_000_000.0
    policy = ServicePolicy(totp=TotpParams(skew_window=0), throttle_failures=10**9)
    svc = Service(ServiceIdentity("sha256:aa", "1234", "u"), policy, NonceSource.service_random(8, space=1000))
    svc.register_user("alice", key)
    svc.register_terminal(TerminalRegistration("T01", "1234"))
    pending = svc.issue_challenge("T01", now)
    good = totp_generate(key, now)

    def attempt(nonce: str, otp: str) -> bool:
        return svc.verify(AuthRequest("alice", OtpCode(otp), "1234", "T01", nonce, pending.timestamp, int(now)), now).ok

    wrong_otp = f"{(int(good.digits) + 1) % 10**6:06d}"
    accepted = []
    # every nonce in the space with a wrong OTP, then with the right one
    accepted += [(n, wrong_otp) for n in range(1000) if attempt(f"{n:06d}", wrong_otp)]
    accepted += [(n, good.digits) for n in range(1000) if attempt(f"{n:06d}", good.digits)]
    # the whole OTP space against the (now consumed) pending nonce
    accepted += [(int(pending.nonce), f"{c:06d}") for c in range(10**6) if attempt(pending.nonce, f"{c:06d}")]
    ok = accepted == [(int(pending.nonce), good.digits)]
    assert criterion(8, ok, f"{2000 + 10**6} candidates, accepted {accepted}")


def test_9_determinism(criterion):
    diffs = []
    names = fixture_names()
    for name in names:
        cfg = fixture(name)
        a, b = build_report(run(cfg)).files(), build_report(run(cfg)).files()
        if a != b:
            diffs.append(name)
    assert criterion(9, not diffs, f"{len(names)} fixtures re-run, differing: {diffs or 'none'}")
