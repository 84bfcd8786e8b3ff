"""Run a scenario: wire up the parties and drive them through simulated time.

Timing model for the wearable:

* one-time login: voice trigger, capture, decode, OTP, then the network
  round trip;
* continuous mode: the device's clock is synced to the service's
  re-authentication grid, so it generates the OTP and focuses ahead of
  each deadline and takes its snapshot one tick after the challenge
  appears. Only decode and the network are on the critical path, which is
  what makes a one-second lock timeout workable.

A failed snapshot is retried after another capture, up to the policy's
retry budget. Each network round trip is split evenly between the
request and the ack.

Session bookkeeping runs on integer milliseconds so deadlines, lock
times and exposure windows are exact.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..challenge import FLAG_CONTINUOUS, ChallengePayload, NonceSource, encode_payload, payload_bits
from ..continuous import (
    ACTIVE,
    LOCKED,
    SessionError,
    SessionRegistry,
    SessionState,
    end_session,
    note_input,
    on_deadline,
    on_grace_timer,
    on_lock_timer,
    on_reauth,
    start_session,
    window_of_exposure,
)
from ..optics import CodeDensity, ScanGeometry, scan_attempt
from ..otp import HotpCounter, TotpParams
from ..protocol import (
    SERVICE_DRIVEN,
    AuthAck,
    AuthRequest,
    ChannelError,
    Device,
    NoRequest,
    SecureChannel,
    Service,
    ServiceIdentity,
    ServicePolicy,
    Terminal,
    TerminalRegistration,
    Verdict,
)
from .engine import Simulator, fmt_ms, to_ms
from .models import LatencySampler

TICK = 1  # ms between a challenge appearing and the synced device snapshot


@dataclass
class AuthRecord:
    started_ms: int
    finished_ms: int
    kind: str  # "login" or "reauth"
    tid: str
    uid: str
    outcome: str  # "ok", "fail" or "no-match"
    reason: str

    @property
    def latency(self) -> float:
        return (self.finished_ms - self.started_ms) / 1000.0


@dataclass
class ExposureRecord:
    tid: str
    uid: str
    walk_away_ms: int
    detect_ms: int

    @property
    def window(self) -> float:
        return (self.detect_ms - self.walk_away_ms) / 1000.0


@dataclass
class SessionWindow:
    """Where a continuous session's re-authentication grid sits."""

    tid: str
    uid: str
    anchor_ms: int
    period_ms: int
    lock_timeout_ms: int
    end_ms: int | None = None
    slots: list[int] = field(default_factory=list)  # grid index k of each accepted re-auth

    def per_minute(self, run_end_ms: int) -> list[int]:
        """Re-auths answered for the deadlines of each complete session minute.

        Minute ``m`` covers deadlines ``anchor + k*T`` with ``60m < k*T <= 60(m+1)``
        seconds, so a perfectly kept 5 s schedule gives 12 in every minute.
        """
        end = run_end_ms if self.end_ms is None else self.end_ms
        full = 0
        while self.anchor_ms + 60_000 * (full + 1) + self.lock_timeout_ms <= end:
            full += 1
        counts = [0] * full
        for k in self.slots:
            m = (k * self.period_ms - 1) // 60_000
            if m < full:
                counts[m] += 1
        return counts


@dataclass
class RunResult:
    scenario: str
    seed: int
    duration_ms: int
    trace: list[str]
    attempts: list[AuthRecord] = field(default_factory=list)
    scan_failures: int = 0
    gave_up: int = 0
    locks: int = 0
    unlocks: int = 0
    logouts: Counter = field(default_factory=Counter)
    reauth_times_ms: list[int] = field(default_factory=list)
    sessions: list[SessionWindow] = field(default_factory=list)
    exposures: list[ExposureRecord] = field(default_factory=list)
    unresolved_walkaways: int = 0
    battery: list[tuple[int, float]] = field(default_factory=list)  # (ms, percent)
    adversary: dict[str, list[int]] = field(default_factory=dict)
    messages_sent: int = 0
    step1: int = 0
    step5: int = 0

    @property
    def successes(self) -> int:
        return sum(1 for a in self.attempts if a.outcome == "ok")

    @property
    def failures(self) -> int:
        return sum(1 for a in self.attempts if a.outcome == "fail")

    @property
    def no_matches(self) -> int:
        return sum(1 for a in self.attempts if a.outcome == "no-match")

    @property
    def windows(self) -> list[float]:
        return [e.window for e in self.exposures]

    @property
    def battery_final(self) -> float:
        return self.battery[-1][1] if self.battery else float("nan")

    def legit_outcome(self) -> tuple:
        """Everything the legitimate user experienced, for attack comparisons."""
        return (
            [(a.started_ms, a.finished_ms, a.kind, a.tid, a.outcome, a.reason) for a in self.attempts],
            self.locks,
            self.unlocks,
            sorted(self.logouts.items()),
            list(self.reauth_times_ms),
        )


class World:
    def __init__(self, cfg, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.sim = Simulator()
        streams = np.random.SeedSequence(seed).spawn(5)
        self.rng_optics = np.random.default_rng(streams[0])
        self.latency = LatencySampler(cfg.latency, np.random.default_rng(streams[1]))
        self.rng_timeline = np.random.default_rng(streams[2])
        nonce_seed = int(np.random.default_rng(streams[3]).integers(2**62))
        self.rng_adversary = np.random.default_rng(streams[4])

        pol = cfg.policy
        self.times = cfg.device_times
        self.t_ms = to_ms(pol.t_reauth)
        self.l_ms = to_ms(pol.lock_timeout)
        self.service = Service(
            ServiceIdentity(cfg.fingerprint, cfg.sid, cfg.uri),
            ServicePolicy(totp=TotpParams(skew_window=pol.skew_window), pending_ttl=pol.pending_ttl),
            NonceSource.service_random(nonce_seed, pol.nonce_space),
        )
        for uid, key in cfg.users.items():
            self.service.register_user(uid, key)
        self.terminals: dict[str, Terminal] = {}
        for tid, spec in cfg.terminals.items():
            reg = TerminalRegistration(
                tid, cfg.sid, spec.ui_mode, spec.k_n, HotpCounter(0, pol.lookahead), spec.continuous, pol.t_reauth
            )
            self.service.register_terminal(reg.copy())
            term = Terminal(reg.copy(), self.service)
            self.service.attach(term)
            self.terminals[tid] = term

        dev = cfg.device
        self.uid = dev.uid
        self.device = Device(clock_skew=dev.clock_skew)
        if dev.associated:
            pinned = ServiceIdentity(dev.fingerprint or cfg.fingerprint, cfg.sid, cfg.uri)
            self.device.associate(pinned, dev.uid, cfg.users[dev.uid])
        self.geometry = ScanGeometry(dev.distance, dev.angle, dev.size)
        self.battery = dataclasses.replace(cfg.battery)

        self.sessions = SessionRegistry()
        self.present = True
        self.looking = cfg.default_tid
        self.busy = False
        self.last_nonce_sent: str | None = None
        self.dev_epoch = 0
        self.walkaways: list[tuple[SessionState, int]] = []
        self.captured: list[ChallengePayload] = []
        self.capture_wanted: set[str] = set()
        self._adv_channel: SecureChannel | None = None
        self._windows: dict[tuple[str, str], SessionWindow] = {}
        self.result = RunResult(cfg.name, seed, to_ms(cfg.duration), self.sim.trace)

    # -- helpers --------------------------------------------------------------

    def unix(self, ms: int | None = None) -> float:
        return self.cfg.start_time + (self.sim.now_ms if ms is None else ms) / 1000.0

    def record(self, party: str, kind: str, detail: str = "") -> None:
        self.sim.record(party, kind, detail)

    def _shown(self, term: Terminal, payload: ChallengePayload) -> None:
        if term.reg.ui_mode == SERVICE_DRIVEN:
            self.result.step1 += 1
            self.record("service", "step1-display", encode_payload(payload))
        else:
            self.record(term.reg.tid, "display", encode_payload(payload))
        if term.reg.tid in self.capture_wanted:
            self.capture_wanted.discard(term.reg.tid)
            self.captured.append(payload)
            self.record("adversary", "capture", f"tid={term.reg.tid} nonce={payload.nonce}")

    def _show_login(self, term: Terminal) -> None:
        self._shown(term, term.back_to_login(self.unix()))

    # -- setup ----------------------------------------------------------------

    def setup(self) -> None:
        for term in self.terminals.values():
            self._show_login(term)
        self.result.battery.append((0, self.battery.level))
        for minute in range(1, int(self.cfg.duration // 60) + 1):
            self.sim.schedule(minute * 60_000, "battery", "scenario-action", self._minute)
        for act in self.cfg.timeline:
            at = act.at + (float(self.rng_timeline.uniform(0, act.jitter)) if act.jitter else 0.0)
            self.sim.schedule(to_ms(at), "user", "scenario-action", lambda a=act: self._action(a))

    def _minute(self) -> None:
        self.battery.idle(1)
        self.result.battery.append((self.sim.now_ms, self.battery.level))

    # -- scripted actions -----------------------------------------------------

    def _action(self, act) -> None:
        getattr(self, "_act_" + act.name)(act)

    def _act_authenticate(self, act) -> None:
        tid = act.args[0] if act.args else self.looking
        self.looking = tid
        if self.busy or self.device.continuous:
            self.record("user", "voice-trigger", f"tid={tid} ignored (device busy)")
            return
        self.record("user", "voice-trigger", f"tid={tid}")
        self.busy = True
        started = self.sim.now_ms
        delay = self.times.voice_activation + self.times.capture_autofocus
        self.sim.after(delay, "device", "scan", lambda: self._snapshot("login", 0, started))

    def _act_walk_away(self, act) -> None:
        self.present = False
        self.record("user", "walk-away")
        if self.device.continuous:
            s = self.sessions.get(self.uid, self.device.pinned_tid)
            if s is not None:
                self.walkaways.append((s, self.sim.now_ms))

    def _act_return(self, act) -> None:
        self.present = True
        self.record("user", "return")
        still = []
        for s, w in self.walkaways:
            if s.phase == ACTIVE and s.phase_at(w) == ACTIVE:
                # back before anyone noticed; there was no abandoned terminal
                self.record("user", "exposure-void", f"walk_away={fmt_ms(w)}")
            else:
                still.append((s, w))
        self.walkaways = still

    def _act_look(self, act) -> None:
        self.looking = act.args[0]
        self.record("user", "look", f"tid={self.looking}")

    def _act_logout(self, act) -> None:
        tid = act.args[0] if act.args else self.looking
        term = self.terminals[tid]
        if term.state != Terminal.SESSION:
            self.record("user", "logout", f"tid={tid} ignored (no session)")
            return
        self.record("user", "logout", f"tid={tid}")
        s = self.sessions.get(term.owner, tid)
        if s is not None:
            end_session(s, "user-logout", self.sim.now_ms)
            self._session_ended(s)
        else:
            self.result.logouts["user-logout"] += 1
            self._show_login(term)

    def _act_input(self, act) -> None:
        tid = act.args[0] if act.args else self.looking
        term = self.terminals[tid]
        s = self.sessions.get(term.owner, tid) if term.owner else None
        if s is not None:
            note_input(s, self.sim.now_ms)
        self.record("user", "input", f"tid={tid}")

    def _act_end(self, act) -> None:
        self.record("scenario", "end")
        self.sim.stop()

    # -- adversary ------------------------------------------------------------

    def _act_capture(self, act) -> None:
        tid = act.args[0] if act.args else self.looking
        shown = self.terminals[tid].displayed
        if shown is not None:
            self.captured.append(shown)
            self.record("adversary", "capture", f"tid={tid} nonce={shown.nonce}")
        else:
            self.capture_wanted.add(tid)
            self.record("adversary", "capture", f"tid={tid} waiting for next code")

    def _act_replay(self, act) -> None:
        count = int(act.opt("count", "1"))
        if not self.captured:
            self.record("adversary", "replay", "nothing captured")
            return
        accepted = 0
        for i in range(count):
            accepted += self._present(self.captured[i % len(self.captured)])
        self._tally("replay", count, accepted)

    def _act_guess(self, act) -> None:
        count = int(act.opt("count", "1"))
        tid = act.args[0] if act.args else self.looking
        opts = frozenset({FLAG_CONTINUOUS}) if self.cfg.terminals[tid].continuous else frozenset()
        nonces = self.rng_adversary.integers(0, 10**6, size=count)
        ts = int(self.unix())
        accepted = 0
        for n in nonces:
            accepted += self._present(ChallengePayload(self.cfg.sid, tid, f"{int(n):06d}", ts, opts))
        self._tally("guess", count, accepted)

    def _tally(self, name: str, count: int, accepted: int) -> None:
        tally = self.result.adversary.setdefault(name, [0, 0])
        tally[0] += count
        tally[1] += accepted
        self.record("adversary", name, f"presented={count} accepted={accepted}")

    def _present(self, payload: ChallengePayload) -> bool:
        """Hold a code up to the victim's device; True if the service accepted."""
        req = self.device.on_scan(payload, self.unix())
        if isinstance(req, NoRequest):
            return False
        if self._adv_channel is None:
            try:
                self._adv_channel = SecureChannel(self.device.store.lookup(req.sid), self.service)
            except ChannelError:
                return False
        ack, _ = self._route(self._adv_channel, req)
        return ack.ok

    # -- device pipeline ------------------------------------------------------

    def _visible(self) -> ChallengePayload | None:
        if not self.present:
            return None
        return self.terminals[self.looking].displayed

    def _snapshot(self, mode: str, attempt: int, started: int) -> None:
        payload = self._visible()
        if mode == "reauth" and payload is not None and payload.nonce == self.last_nonce_sent:
            self.record("device", "snapshot", "no new challenge")
            self.busy = False
            return
        ok = False
        if payload is not None:
            density = CodeDensity.for_bits(payload_bits(encode_payload(payload)))
            ok = scan_attempt(self.geometry, density, self.cfg.optics_table, self.rng_optics, self.cfg.strict_optics)
        detail = f"{mode} attempt={attempt} " + ("decoded" if ok else "no code" if payload is None else "unreadable")
        self.record("device", "snapshot", detail)
        if ok:
            self.sim.after(self.times.qr_decode, "device", "scan", lambda: self._decoded(payload, mode, started))
            return
        self.result.scan_failures += 1
        if attempt < self.cfg.policy.retries:
            delay = self.times.qr_decode + self.times.capture_autofocus
            self.sim.after(delay, "device", "scan", lambda: self._snapshot(mode, attempt + 1, started))
        else:
            self.result.gave_up += 1
            self.record("device", "gave-up", mode)
            self.busy = False

    def _decoded(self, payload: ChallengePayload, mode: str, started: int) -> None:
        req = self.device.on_scan(payload, self.unix())
        if isinstance(req, NoRequest):
            self._finish(AuthRecord(started, self.sim.now_ms, mode, payload.tid, self.uid, "no-match", req.value))
            return
        delay = self.times.otp_generation if mode == "login" else 0.0
        self.sim.after(delay, "device", "scan", lambda: self._send(req, mode, started))

    def _send(self, req: AuthRequest, mode: str, started: int) -> None:
        self.last_nonce_sent = req.nonce
        try:
            channel = SecureChannel(self.device.store.lookup(req.sid), self.service)
        except ChannelError:
            self.record("device", "channel-refused", f"sid={req.sid}")
            self._finish(AuthRecord(started, self.sim.now_ms, mode, req.tid, req.uid, "fail", "channel-refused"))
            return
        rtt = self.latency() / 1000.0
        self.result.messages_sent += 1
        self.battery.authenticated()
        self.record("device", "send", req.encode().rstrip("\n"))
        self.sim.after(rtt / 2, "service", "message-delivery", lambda: self._service_receive(channel, req, mode, started, rtt))

    def _service_receive(self, channel, req, mode, started, rtt) -> None:
        ack, reason = self._route(channel, req)
        self.record("service", "verify", f"uid={req.uid} tid={req.tid} result={reason}")
        self.record("service", "ack", ack.encode().rstrip("\n"))
        self.sim.after(rtt / 2, "device", "message-delivery", lambda: self._device_ack(ack, req, mode, started, reason))

    def _device_ack(self, ack: AuthAck, req: AuthRequest, mode: str, started: int, reason: str) -> None:
        was_continuous = self.device.continuous
        self.device.on_ack(ack, req.tid, self.unix())
        self._finish(AuthRecord(started, self.sim.now_ms, mode, req.tid, req.uid, "ok" if ack.ok else "fail", reason))
        if self.device.continuous and not was_continuous:
            s = self.sessions.get(req.uid, req.tid)
            if s is None:
                # session already gone before the ack landed
                self.device.end_continuous()
                return
            self.dev_epoch += 1
            self.record("device", "continuous-on", f"tid={req.tid} t_reauth={ack.t_reauth:g}")
            self._schedule_wake(s.anchor, s.t_reauth, 1, self.dev_epoch)

    def _finish(self, rec: AuthRecord) -> None:
        self.result.attempts.append(rec)
        self.record("device", "result", f"{rec.kind} tid={rec.tid} outcome={rec.outcome} reason={rec.reason}")
        self.busy = False

    def _schedule_wake(self, anchor: int, period: int, k: int, epoch: int) -> None:
        at = anchor + k * period + TICK
        self.sim.schedule(at, "device", "scan", lambda: self._wake(anchor, period, k, epoch))

    def _wake(self, anchor: int, period: int, k: int, epoch: int) -> None:
        if not self.device.continuous or epoch != self.dev_epoch:
            return
        self._schedule_wake(anchor, period, k + 1, epoch)
        if self.busy:
            return
        self.busy = True
        # OTP and focus were prepared ahead of the deadline
        ahead = to_ms(self.times.capture_autofocus + self.times.otp_generation)
        self._snapshot("reauth", 0, self.sim.now_ms - ahead)

    # -- service side -----------------------------------------------------------

    def _fail_ack(self) -> AuthAck:
        return AuthAck(False, self.service.clock.stamp(self.unix()))

    def _route(self, channel: SecureChannel, req: AuthRequest) -> tuple[AuthAck, str]:
        now = self.sim.now_ms
        if req.reauth:
            s = self.sessions.get(req.uid, req.tid)
            if s is None:
                return self._fail_ack(), "no-session"
            was_locked = s.phase == LOCKED
            verdicts: list[Verdict] = []

            def verify(r, t):
                v = channel.send(r, self.unix(t))
                verdicts.append(v)
                return v

            res = on_reauth(s, req, now, verify)
            if not res.accepted:
                ack = verdicts[-1].ack if verdicts else self._fail_ack()
                return ack, res.reason
            self._after_reauth(s, was_locked)
            return verdicts[-1].ack, "ok"
        verdict = channel.send(req, self.unix())
        term = self.terminals.get(req.tid)
        if term is not None and term.reg.ui_mode != SERVICE_DRIVEN and req.sid == self.cfg.sid:
            self.service.notify_terminal(verdict.ack.ok, req.uid, req.tid)
            self.result.step5 += 1
            self.record("service", "step5-notify", f"tid={req.tid} ok={int(verdict.ack.ok)}")
        if verdict.ack.ok:
            self._after_login(req, verdict.ack)
        return verdict.ack, verdict.reason

    def _after_login(self, req: AuthRequest, ack: AuthAck) -> None:
        term = self.terminals[req.tid]
        if term.reg.ui_mode == SERVICE_DRIVEN:
            term.enter_session(req.uid)
            self.record(req.tid, "session", f"owner={req.uid}")
        else:
            self.record(req.tid, "session", f"owner={term.owner}")
        if ack.continuous_required and self.sessions.get(req.uid, req.tid) is None:
            pol = self.cfg.policy
            s = start_session(
                req.uid,
                req.tid,
                to_ms(ack.t_reauth),
                self.l_ms,
                self.sim.now_ms,
                grace=to_ms(pol.grace_seconds),
                leniency=to_ms(pol.leniency),
            )
            self.sessions.add(s)
            self._windows[(s.uid, s.tid)] = w = SessionWindow(s.tid, s.uid, s.anchor, s.t_reauth, s.lock_timeout_l)
            self.result.sessions.append(w)
            self.record("service", "session-start", f"uid={req.uid} tid={req.tid} next={fmt_ms(s.next_deadline)}")
            self._schedule_deadline(s)

    def _after_reauth(self, s: SessionState, was_locked: bool) -> None:
        term = self.terminals[s.tid]
        term.clear_display()
        self.result.reauth_times_ms.append(self.sim.now_ms)
        self._windows[(s.uid, s.tid)].slots.append((self.sim.now_ms - s.anchor) // s.t_reauth)
        if was_locked:
            term.locked = False
            self.result.unlocks += 1
            self.record(s.tid, "unlock", f"uid={s.uid}")
            self._schedule_deadline(s)

    def _schedule_deadline(self, s: SessionState) -> None:
        expected = s.next_deadline
        self.sim.schedule(expected, "service", "deadline", lambda: self._deadline(s, expected))

    def _deadline(self, s: SessionState, expected: int) -> None:
        if s.phase != ACTIVE or s.next_deadline != expected:
            return
        term = self.terminals[s.tid]
        challenge = on_deadline(s, self.sim.now_ms, lambda: term.issue_challenge(self.unix(), continuous=True))
        self._shown(term, challenge)
        nonce = challenge.nonce
        self.sim.schedule(s.lock_at, "service", "deadline", lambda: self._lock_timer(s, nonce))
        self._schedule_deadline(s)

    def _lock_timer(self, s: SessionState, nonce: str) -> None:
        if s.last_challenge is None or s.last_challenge.nonce != nonce:
            return
        if on_lock_timer(s, self.sim.now_ms):
            self.terminals[s.tid].locked = True
            self.result.locks += 1
            self.record(s.tid, "lock", f"uid={s.uid} showing nonce={nonce}")
            since = s.locked_since
            self.sim.schedule(since + s.grace, "service", "deadline", lambda: self._grace_timer(s, since))

    def _grace_timer(self, s: SessionState, since: int) -> None:
        if s.phase == LOCKED and s.locked_since == since and on_grace_timer(s, self.sim.now_ms):
            self._session_ended(s)

    def _session_ended(self, s: SessionState) -> None:
        self._windows[(s.uid, s.tid)].end_ms = self.sim.now_ms
        self.result.logouts[s.end_cause] += 1
        self.record("service", "session-end", f"uid={s.uid} tid={s.tid} cause={s.end_cause}")
        self._show_login(self.terminals[s.tid])
        delay = self.latency() / 2000.0
        self.sim.after(delay, "device", "message-delivery", lambda: self._device_released(s.tid))

    def _device_released(self, tid: str) -> None:
        if self.device.pinned_tid == tid:
            self.device.end_continuous()
            self.dev_epoch += 1
            self.record("device", "continuous-off", f"tid={tid}")

    # -- wrap-up --------------------------------------------------------------

    def finalize(self) -> RunResult:
        if self.result.battery[-1] != (self.sim.now_ms, self.battery.level):
            self.result.battery.append((self.sim.now_ms, self.battery.level))
        for s, w in self.walkaways:
            try:
                window_of_exposure(w, s)
            except SessionError:
                self.result.unresolved_walkaways += 1
                continue
            e = s.exposure_log[-1]
            self.result.exposures.append(ExposureRecord(s.tid, s.uid, int(e.walk_away), int(e.detected)))
        return self.result


def run(cfg, seed: int | None = None) -> RunResult:
    """Simulate ``cfg`` deterministically. ``seed`` defaults to the scenario's own."""
    seed = cfg.seed if seed is None else seed
    if cfg.empty:
        return RunResult(cfg.name, seed, to_ms(cfg.duration), [])
    world = World(cfg, seed)
    world.setup()
    world.sim.run(until_ms=to_ms(cfg.duration))
    return world.finalize()
