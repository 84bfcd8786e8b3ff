"""Scenario files.

A scenario is plain text: ``[section]`` headers with ``key = value``
lines, and a ``[timeline]`` section of ``at <seconds> <action> ...``
directives. ``#`` starts a comment. Example::

    [scenario]
    name = login_local
    duration = 20

    [service]
    sid = 1234
    location = local

    [user alice]
    key = GEZDGNBVGY3TQOJQGEZDGNBVGY3TQOJQ

    [terminal T01]
    ui_mode = service-driven

    [device]
    uid = alice

    [timeline]
    at 1 authenticate T01

See ``docs/scenario-format.md`` for every key and action.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..continuous import DEFAULT_LOCK_TIMEOUT, DEFAULT_T_REAUTH, GRACE_PERIODS
from ..optics import AccuracyTable, OpticsError
from ..otp import OtpError, OtpKey
from ..protocol import SERVICE_DRIVEN, TERMINAL_DRIVEN, UI_MODES
from ..simnet.models import LATENCY_MODELS, BatteryModel, DeviceTimeModel, LatencyModel

ACTIONS = {
    # name: (min positional args, max positional args, allowed options)
    "authenticate": (0, 1, set()),
    "walk_away": (0, 0, set()),
    "return": (0, 0, set()),
    "look": (1, 1, set()),
    "logout": (0, 1, set()),
    "input": (0, 1, set()),
    "capture": (0, 1, set()),
    "replay": (0, 0, {"count"}),
    "guess": (0, 1, {"count"}),
    "end": (0, 0, set()),
}
ADVERSARY_ACTIONS = {"capture", "replay", "guess"}

_SECTION_RE = re.compile(r"\[\s*([a-z_]+)(?:\s+([A-Za-z0-9._@-]+))?\s*\]")
_AT_RE = re.compile(r"at\s+(\S+)\s+(\S+)(.*)")


class ScenarioError(ValueError):
    def __init__(self, source: str, line: int | None, message: str):
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


@dataclass(frozen=True)
class Action:
    at: float
    name: str
    args: tuple[str, ...] = ()
    opts: tuple[tuple[str, str], ...] = ()
    jitter: float = 0.0
    line: int = 0

    def opt(self, key: str, default: str | None = None) -> str | None:
        return dict(self.opts).get(key, default)


@dataclass(frozen=True)
class TerminalSpec:
    tid: str
    ui_mode: str = SERVICE_DRIVEN
    continuous: bool = False
    k_n: OtpKey | None = None


@dataclass(frozen=True)
class DeviceSpec:
    uid: str
    associated: bool = True
    fingerprint: str | None = None
    distance: float = 50.0
    angle: float = 0.0
    size: float = 10.0
    clock_skew: float = 0.0


@dataclass(frozen=True)
class Policy:
    t_reauth: float = DEFAULT_T_REAUTH
    lock_timeout: float = DEFAULT_LOCK_TIMEOUT
    retries: int = 2
    grace: float | None = None
    leniency: float = 0.0
    pending_ttl: float = 120.0
    nonce_space: int = 10**6
    skew_window: int = 1
    lookahead: int = 3

    @property
    def grace_seconds(self) -> float:
        return GRACE_PERIODS * self.t_reauth if self.grace is None else self.grace


@dataclass
class ScenarioConfig:
    name: str
    source: str = "<memory>"
    duration: float = 60.0
    start_time: int = 1_700_000_000
    seed: int = 0
    sid: str = "1234"
    fingerprint: str = "sha256:service-1234"
    uri: str = "https://auth.example.test/gauth"
    users: dict[str, OtpKey] = field(default_factory=dict)
    terminals: dict[str, TerminalSpec] = field(default_factory=dict)
    device: DeviceSpec | None = None
    latency: LatencyModel = LATENCY_MODELS["local"]
    device_times: DeviceTimeModel = field(default_factory=DeviceTimeModel)
    optics_table: AccuracyTable = field(default_factory=AccuracyTable.default)
    strict_optics: bool = False
    battery: BatteryModel = field(default_factory=BatteryModel)
    policy: Policy = field(default_factory=Policy)
    timeline: list[Action] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        """No parties and nothing scheduled: runs to an empty trace."""
        return not (self.terminals or self.users or self.timeline) and self.device is None

    def validate(self) -> None:
        if self.empty:
            return
        if not self.terminals:
            raise ScenarioError(self.source, None, "scenario declares no terminal")
        if self.device is None:
            raise ScenarioError(self.source, None, "scenario has no [device] section")
        if self.device.uid not in self.users:
            raise ScenarioError(self.source, None, f"device uid {self.device.uid!r} is not a declared user")
        if self.policy.t_reauth <= 0:
            raise ScenarioError(self.source, None, "t_reauth must be positive")
        if self.policy.lock_timeout < 0:
            raise ScenarioError(self.source, None, "lock_timeout must be >= 0")
        if self.duration <= 0:
            raise ScenarioError(self.source, None, "duration must be positive")
        for act in self.timeline:
            for tid in act.args:
                if act.name in ("authenticate", "look", "logout", "input", "capture", "guess") and tid not in self.terminals:
                    raise ScenarioError(self.source, act.line, f"unknown terminal {tid!r}")

    def without_adversary(self) -> ScenarioConfig:
        return dataclasses.replace(self, timeline=[a for a in self.timeline if a.name not in ADVERSARY_ACTIONS])

    @property
    def default_tid(self) -> str:
        return next(iter(self.terminals))


# -- parsing -----------------------------------------------------------------

_BOOL = {"yes": True, "true": True, "on": True, "1": True, "no": False, "false": False, "off": False, "0": False}


class _Section:
    def __init__(self, kind: str, name: str | None, line: int):
        self.kind, self.name, self.line = kind, name, line
        self.values: dict[str, tuple[str, int]] = {}
        self.used: set[str] = set()


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def err(self, line, msg):
        return ScenarioError(self.source, line, msg)

    def take(self, sec: _Section, key: str, conv, default=None):
        if key not in sec.values:
            return default
        sec.used.add(key)
        raw, line = sec.values[key]
        try:
            return conv(raw)
        except (ValueError, OtpError, OpticsError) as exc:
            raise self.err(line, f"{key}: {exc}") from None

    def finish(self, sec: _Section) -> None:
        extra = sorted(set(sec.values) - sec.used)
        if extra:
            raise self.err(sec.values[extra[0]][1], f"unknown key {extra[0]!r} in [{sec.kind}]")


def _bool(raw: str) -> bool:
    try:
        return _BOOL[raw.lower()]
    except KeyError:
        raise ValueError(f"expected yes/no, got {raw!r}") from None


def _nonneg(conv):
    def inner(raw):
        v = conv(raw)
        if v < 0:
            raise ValueError(f"must be >= 0, got {raw!r}")
        return v

    return inner


def parse_scenario(text: str, source: str = "<memory>", base_dir: Path | None = None) -> ScenarioConfig:
    sections: list[_Section] = []
    timeline_lines: list[tuple[int, str]] = []
    current: _Section | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = _SECTION_RE.fullmatch(line)
            if not m:
                raise ScenarioError(source, lineno, f"bad section header {line!r}")
            current = _Section(m.group(1), m.group(2), lineno)
            sections.append(current)
            continue
        if current is None:
            raise ScenarioError(source, lineno, "content before the first section")
        if current.kind == "timeline":
            timeline_lines.append((lineno, line))
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ScenarioError(source, lineno, f"expected 'key = value', got {line!r}")
        key = key.strip()
        if key in current.values:
            raise ScenarioError(source, lineno, f"duplicate key {key!r}")
        current.values[key] = (value.strip(), lineno)

    rd = _Reader(source)
    cfg = ScenarioConfig(name=Path(source).stem if source != "<memory>" else "scenario", source=source)
    singles: dict[str, _Section] = {}
    for sec in sections:
        if sec.kind in ("user", "terminal"):
            if sec.name is None:
                raise rd.err(sec.line, f"[{sec.kind}] needs a name, e.g. [{sec.kind} X]")
            continue
        if sec.name is not None:
            raise rd.err(sec.line, f"[{sec.kind}] takes no name")
        if sec.kind in singles:
            raise rd.err(sec.line, f"duplicate section [{sec.kind}]")
        if sec.kind not in ("scenario", "service", "device", "policy", "optics", "battery", "timeline"):
            raise rd.err(sec.line, f"unknown section [{sec.kind}]")
        singles[sec.kind] = sec

    if (sec := singles.get("scenario")) is not None:
        cfg.name = rd.take(sec, "name", str, cfg.name)
        cfg.duration = rd.take(sec, "duration", float, cfg.duration)
        cfg.start_time = rd.take(sec, "start_time", _nonneg(int), cfg.start_time)
        cfg.seed = rd.take(sec, "seed", _nonneg(int), cfg.seed)
        rd.finish(sec)

    if (sec := singles.get("service")) is not None:
        cfg.sid = rd.take(sec, "sid", str, cfg.sid)
        if not re.fullmatch(r"[0-9]{4}", cfg.sid):
            raise rd.err(sec.values["sid"][1], f"sid must be 4 digits, got {cfg.sid!r}")
        cfg.fingerprint = rd.take(sec, "fingerprint", str, cfg.fingerprint)
        cfg.uri = rd.take(sec, "uri", str, cfg.uri)
        loc = rd.take(sec, "location", str.lower, "local")
        if loc not in LATENCY_MODELS:
            raise rd.err(sec.values["location"][1], f"unknown location {loc!r} (known: {', '.join(LATENCY_MODELS)})")
        base = LATENCY_MODELS[loc]
        try:
            cfg.latency = LatencyModel(
                loc,
                rd.take(sec, "latency_mean", float, base.mean),
                rd.take(sec, "latency_min", float, base.min),
                rd.take(sec, "latency_max", float, base.max),
                rd.take(sec, "latency_stddev", float, base.stddev),
            )
        except ValueError as exc:
            raise rd.err(sec.line, str(exc)) from None
        rd.finish(sec)

    for sec in sections:
        if sec.kind == "user":
            if sec.name in cfg.users:
                raise rd.err(sec.line, f"duplicate user {sec.name!r}")
            key = rd.take(sec, "key", lambda raw: OtpKey.from_base32(raw, sec.name))
            if key is None:
                raise rd.err(sec.line, f"user {sec.name!r} needs a base-32 key")
            cfg.users[sec.name] = key
            rd.finish(sec)
        elif sec.kind == "terminal":
            if sec.name in cfg.terminals:
                raise rd.err(sec.line, f"duplicate terminal {sec.name!r}")
            if not re.fullmatch(r"[A-Za-z0-9]{1,16}", sec.name):
                raise rd.err(sec.line, f"terminal id must be 1-16 alphanumerics, got {sec.name!r}")
            mode = rd.take(sec, "ui_mode", str, SERVICE_DRIVEN)
            if mode not in UI_MODES:
                raise rd.err(sec.values["ui_mode"][1], f"ui_mode must be one of {UI_MODES}")
            k_n = rd.take(sec, "k_n", lambda raw: OtpKey.from_base32(raw, f"K_N/{sec.name}"))
            if (k_n is not None) != (mode == TERMINAL_DRIVEN):
                raise rd.err(sec.line, "k_n is required for terminal-driven terminals and only for them")
            cont = rd.take(sec, "continuous", _bool, False)
            cfg.terminals[sec.name] = TerminalSpec(sec.name, mode, cont, k_n)
            rd.finish(sec)

    if (sec := singles.get("device")) is not None:
        d = DeviceSpec(
            uid=rd.take(sec, "uid", str, ""),
            associated=rd.take(sec, "associated", _bool, True),
            fingerprint=rd.take(sec, "fingerprint", str, None),
            distance=rd.take(sec, "distance", float, 50.0),
            angle=rd.take(sec, "angle", float, 0.0),
            size=rd.take(sec, "size", float, 10.0),
            clock_skew=rd.take(sec, "clock_skew", float, 0.0),
        )
        if not d.uid:
            raise rd.err(sec.line, "[device] needs uid")
        if not (d.distance > 0 and d.size > 0 and 0 <= d.angle < 90):
            raise rd.err(sec.line, "need distance > 0, size > 0 and angle in [0, 90)")
        cfg.device = d
        dt = cfg.device_times
        try:
            cfg.device_times = DeviceTimeModel(
                voice_activation=rd.take(sec, "voice", float, dt.voice_activation),
                capture_autofocus=rd.take(sec, "capture", float, dt.capture_autofocus),
                qr_decode=rd.take(sec, "decode", float, dt.qr_decode),
                otp_generation=rd.take(sec, "otp", float, dt.otp_generation),
                network=cfg.latency,
            )
        except ValueError as exc:
            raise rd.err(sec.line, str(exc)) from None
        rd.finish(sec)
    else:
        cfg.device_times = dataclasses.replace(cfg.device_times, network=cfg.latency)

    if (sec := singles.get("policy")) is not None:
        cfg.policy = Policy(
            t_reauth=rd.take(sec, "t_reauth", float, DEFAULT_T_REAUTH),
            lock_timeout=rd.take(sec, "lock_timeout", float, DEFAULT_LOCK_TIMEOUT),
            retries=rd.take(sec, "retries", _nonneg(int), 2),
            grace=rd.take(sec, "grace", _nonneg(float), None),
            leniency=rd.take(sec, "leniency", _nonneg(float), 0.0),
            pending_ttl=rd.take(sec, "pending_ttl", _nonneg(float), 120.0),
            nonce_space=rd.take(sec, "nonce_space", int, 10**6),
            skew_window=rd.take(sec, "skew_window", _nonneg(int), 1),
            lookahead=rd.take(sec, "lookahead", _nonneg(int), 3),
        )
        if not 1 <= cfg.policy.nonce_space <= 10**6:
            raise rd.err(sec.values["nonce_space"][1], "nonce_space must be in 1..1000000")
        rd.finish(sec)

    if (sec := singles.get("optics")) is not None:
        table = rd.take(sec, "table", str, "default")
        if table != "default":
            path = Path(table)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            try:
                cfg.optics_table = AccuracyTable.load(path)
            except (OSError, OpticsError) as exc:
                raise rd.err(sec.values["table"][1], f"cannot load optics table: {exc}") from None
        cfg.strict_optics = rd.take(sec, "strict", _bool, False)
        rd.finish(sec)

    if (sec := singles.get("battery")) is not None:
        try:
            cfg.battery = BatteryModel(
                level=rd.take(sec, "level", float, 100.0),
                standby_drain=rd.take(sec, "standby_drain", float, BatteryModel().standby_drain),
                per_auth_cost=rd.take(sec, "per_auth_cost", float, BatteryModel().per_auth_cost),
            )
        except ValueError as exc:
            raise rd.err(sec.line, str(exc)) from None
        rd.finish(sec)

    cfg.timeline = [_parse_action(rd, lineno, line) for lineno, line in timeline_lines]
    cfg.validate()
    return cfg


def _parse_action(rd: _Reader, lineno: int, line: str) -> Action:
    m = _AT_RE.fullmatch(line)
    if not m:
        raise rd.err(lineno, f"expected 'at <seconds> <action> ...', got {line!r}")
    try:
        at = float(m.group(1))
    except ValueError:
        raise rd.err(lineno, f"bad time {m.group(1)!r}") from None
    if at < 0:
        raise rd.err(lineno, "time must be >= 0")
    name = m.group(2)
    if name not in ACTIONS:
        raise rd.err(lineno, f"unknown action {name!r}")
    args, opts, jitter = [], [], 0.0
    for tok in m.group(3).split():
        if "=" in tok:
            k, _, v = tok.partition("=")
            if k == "jitter":
                try:
                    jitter = float(v)
                except ValueError:
                    raise rd.err(lineno, f"bad jitter {v!r}") from None
                if jitter < 0:
                    raise rd.err(lineno, "jitter must be >= 0")
                continue
            if k not in ACTIONS[name][2]:
                raise rd.err(lineno, f"option {k!r} not valid for {name}")
            if k == "count" and not (v.isdigit() and int(v) > 0):
                raise rd.err(lineno, f"count must be a positive integer, got {v!r}")
            opts.append((k, v))
        else:
            args.append(tok)
    lo, hi, _ = ACTIONS[name]
    if not lo <= len(args) <= hi:
        raise rd.err(lineno, f"{name} takes {lo}..{hi} arguments, got {len(args)}")
    return Action(at, name, tuple(args), tuple(opts), jitter, lineno)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(str(path), None, f"cannot read scenario: {exc.strerror or exc}") from None
    return parse_scenario(text, str(path), path.parent)


def fixture_names() -> list[str]:
    root = resources.files("gauth").joinpath("scenarios")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def resolve_scenario(name_or_path: str | Path) -> Path:
    """A scenario file path, or the name of a bundled fixture."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    ref = resources.files("gauth").joinpath("scenarios", f"{name_or_path}.scn")
    if ref.is_file():
        return Path(str(ref))
    raise ScenarioError(str(name_or_path), None, "no such scenario file or fixture")
