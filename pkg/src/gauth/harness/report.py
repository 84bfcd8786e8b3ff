"""Turn a :class:`~gauth.simnet.runner.RunResult` into CSV files and a summary.

Each run gets its own directory ``<scenario>_seed<N>`` under the output
root. Existing directories are never touched: a repeat run lands in
``<scenario>_seed<N>.1``, ``.2`` and so on. Files are written into a
hidden staging directory and renamed into place only once all of them
are complete, so a failed run leaves nothing behind.

Column orders are fixed (see the ``*_COLUMNS`` constants).
"""

from __future__ import annotations

import csv
import io
import os
import shutil
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..continuous import EXPOSURE_COLUMNS
from ..simnet.engine import fmt_ms
from ..simnet.runner import RunResult

AUTH_COLUMNS = ("started_s", "finished_s", "kind", "tid", "uid", "outcome", "reason", "latency_s")
BATTERY_COLUMNS = ("t_s", "level_pct")
METRIC_COLUMNS = ("metric", "value")
REPORT_FILES = ("trace.txt", "auths.csv", "exposure.csv", "battery.csv", "metrics.csv", "summary.txt")


class ReportError(Exception):
    pass


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return f"{x:.3f}"


@dataclass
class RunReport:
    result: RunResult
    metrics: dict[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.result.scenario}_seed{self.result.seed}"

    def auths_csv(self) -> str:
        rows = [
            (fmt_ms(a.started_ms), fmt_ms(a.finished_ms), a.kind, a.tid, a.uid, a.outcome, a.reason, _num(a.latency))
            for a in self.result.attempts
        ]
        return _csv(AUTH_COLUMNS, rows)

    def exposure_csv(self) -> str:
        rows = [(e.tid, e.uid, fmt_ms(e.walk_away_ms), fmt_ms(e.detect_ms), _num(e.window)) for e in self.result.exposures]
        return _csv(EXPOSURE_COLUMNS, rows)

    def battery_csv(self) -> str:
        return _csv(BATTERY_COLUMNS, [(fmt_ms(t), f"{lvl:.4f}") for t, lvl in self.result.battery])

    def metrics_csv(self) -> str:
        return _csv(METRIC_COLUMNS, self.metrics.items())

    def trace_txt(self) -> str:
        return "".join(line + "\n" for line in self.result.trace)

    def summary_txt(self) -> str:
        m = self.metrics
        r = self.result
        lines = [
            f"scenario {r.scenario}  seed {r.seed}  duration {fmt_ms(r.duration_ms)} s",
            f"attempts {m['attempts']}: {m['successes']} ok, {m['failures']} failed, {m['no_matches']} no-match",
            f"logins ok {m['logins_ok']}  re-auths ok {m['reauths_ok']}",
            f"mean login latency {m['login_latency_mean_s']} s  mean re-auth latency {m['reauth_latency_mean_s']} s",
            f"scan failures {m['scan_failures']}  gave up {m['gave_up']}",
            f"locks {m['locks']}  unlocks {m['unlocks']}  logouts {m['logouts']}",
        ]
        for reason, n in sorted(self._failure_reasons().items()):
            lines.append(f"  failed ({reason}): {n}")
        if r.sessions:
            lines.append(f"re-auths per session minute: {m['reauths_per_minute']}")
        lines.append(f"exposure windows {m['w_count']}  max {m['w_max_s']} s  mean {m['w_mean_s']} s")
        if r.unresolved_walkaways:
            lines.append(f"walk-aways still active at end of run: {r.unresolved_walkaways}")
        for name, (presented, accepted) in sorted(r.adversary.items()):
            lines.append(f"adversary {name}: {presented} presented, {accepted} accepted")
        lines.append(f"battery final {m['battery_final_pct']} %")
        return "\n".join(lines) + "\n"

    def _failure_reasons(self) -> Counter:
        return Counter(a.reason for a in self.result.attempts if a.outcome != "ok")

    def files(self) -> dict[str, str]:
        return {
            "trace.txt": self.trace_txt(),
            "auths.csv": self.auths_csv(),
            "exposure.csv": self.exposure_csv(),
            "battery.csv": self.battery_csv(),
            "metrics.csv": self.metrics_csv(),
            "summary.txt": self.summary_txt(),
        }


def _mean(xs) -> str:
    return _num(statistics.fmean(xs)) if xs else ""


def build_report(result: RunResult) -> RunReport:
    """Compute the metric table and check that the counts reconcile."""
    a = result.attempts
    logged = sum(1 for line in result.trace if " device   result " in line)
    if result.successes + result.failures + result.no_matches != len(a) or len(a) != logged:
        raise ReportError(f"attempt counts do not reconcile with the trace ({len(a)} recorded, {logged} traced)")
    w = result.windows
    per_minute = [n for s in result.sessions for n in s.per_minute(result.duration_ms)]
    m = {
        "attempts": len(a),
        "successes": result.successes,
        "failures": result.failures,
        "no_matches": result.no_matches,
        "logins_ok": sum(1 for x in a if x.kind == "login" and x.outcome == "ok"),
        "reauths_ok": sum(1 for x in a if x.kind == "reauth" and x.outcome == "ok"),
        "login_latency_mean_s": _mean([x.latency for x in a if x.kind == "login" and x.outcome == "ok"]),
        "reauth_latency_mean_s": _mean([x.latency for x in a if x.kind == "reauth" and x.outcome == "ok"]),
        "scan_failures": result.scan_failures,
        "gave_up": result.gave_up,
        "locks": result.locks,
        "unlocks": result.unlocks,
        "logouts": sum(result.logouts.values()),
        "reauths_per_minute": " ".join(map(str, per_minute)),
        "w_count": len(w),
        "w_max_s": _num(max(w)) if w else "",
        "w_mean_s": _mean(w),
        "unresolved_walkaways": result.unresolved_walkaways,
        "messages_sent": result.messages_sent,
        "battery_final_pct": f"{result.battery_final:.4f}" if result.battery else "",
    }
    for name, (presented, accepted) in sorted(result.adversary.items()):
        m[f"{name}_presented"] = presented
        m[f"{name}_accepted"] = accepted
    return RunReport(result, {k: str(v) for k, v in m.items()})


def _free_dir(root: Path, name: str) -> Path:
    target = root / name
    n = 0
    while target.exists():
        n += 1
        target = root / f"{name}.{n}"
    return target


def write_report(report: RunReport, out_root: str | Path) -> Path:
    """Write all report files into a fresh run directory and return it."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    files = report.files()
    staging = root / f".staging-{report.name}-{os.getpid()}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    try:
        for fname, text in files.items():
            (staging / fname).write_text(text)
        target = _free_dir(root, report.name)
        staging.rename(target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return target
