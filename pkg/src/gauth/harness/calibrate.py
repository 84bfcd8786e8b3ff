"""Monte-Carlo and analytic checks that the models reproduce their inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..optics import (
    DISTANCE_CLASSES,
    QR_LADDER,
    AccuracyTable,
    CodeDensity,
    ScanGeometry,
    average_accuracy,
    scan_attempt,
)
from ..simnet.models import LATENCY_MODELS, BatteryModel, sample_latency

OPTICS_TOLERANCE_PP = 1.5
LATENCY_TOLERANCE = 0.03
BATTERY_T5_TARGET = 2.00
BATTERY_T15_RANGE = (0.80, 0.90)
OPTICS_MEAN_0DEG = 87.8
OPTICS_MEAN_TOLERANCE_PP = 0.1


@dataclass
class Calibration:
    component: str
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    ok: bool = True

    def format(self) -> str:
        table = [self.header] + [tuple(str(c) for c in r) for r in self.rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(self.header))]
        out = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in table]
        out += self.notes
        out.append(f"{self.component}: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(out) + "\n"


def calibrate_optics(trials: int = 10_000, seed: int = 0, table: AccuracyTable | None = None) -> Calibration:
    """Run ``trials`` scans for each of the 18 calibrated cells."""
    table = table or AccuracyTable.default()
    rng = np.random.default_rng(seed)
    cal = Calibration("optics", ("bits", "class", "angle", "configured_%", "empirical_%", "delta_pp", "ok"))
    for angle in (0.0, 45.0):
        for bits, version in QR_LADDER.items():
            density = CodeDensity(bits, version)
            for dclass, distance in DISTANCE_CLASSES.items():
                # large enough that the minimum-size gate never fires
                geometry = ScanGeometry(distance, angle, displayed_size=1000.0)
                hits = sum(scan_attempt(geometry, density, table, rng, strict=True) for _ in range(trials))
                p = table.lookup(bits, dclass, angle, strict=True)
                delta = 100.0 * (hits / trials - p)
                good = abs(delta) <= OPTICS_TOLERANCE_PP
                cal.ok &= good
                cal.rows.append((bits, dclass, f"{angle:g}", f"{100 * p:.1f}", f"{100 * hits / trials:.2f}", f"{delta:+.2f}", "yes" if good else "NO"))
    mean0 = average_accuracy(table, 0.0)
    mean_ok = abs(mean0 - OPTICS_MEAN_0DEG) <= OPTICS_MEAN_TOLERANCE_PP
    cal.ok &= mean_ok
    cal.notes.append(f"mean accuracy at 0 deg: {mean0:.3f}% (target {OPTICS_MEAN_0DEG} +/- {OPTICS_MEAN_TOLERANCE_PP} pp)")
    cal.notes.append(f"mean accuracy at 45 deg: {average_accuracy(table, 45.0):.3f}%")
    return cal


def calibrate_latency(samples: int = 10_000, seed: int = 0) -> Calibration:
    rng = np.random.default_rng(seed)
    cal = Calibration(
        "latency",
        ("location", "configured_ms", "empirical_ms", "delta_%", "min_ms", "max_ms", "out_of_range", "ok"),
    )
    for name, model in LATENCY_MODELS.items():
        xs = sample_latency(model, rng, samples)
        mean = float(xs.mean())
        outside = int(np.count_nonzero((xs < model.min) | (xs > model.max)))
        delta = (mean - model.mean) / model.mean
        good = abs(delta) <= LATENCY_TOLERANCE and outside == 0
        cal.ok &= good
        cal.rows.append(
            (name, f"{model.mean:g}", f"{mean:.1f}", f"{100 * delta:+.2f}", f"{xs.min():.1f}", f"{xs.max():.1f}", outside, "yes" if good else "NO")
        )
    return cal


def calibrate_battery(model: BatteryModel | None = None) -> Calibration:
    model = model or BatteryModel()
    cal = Calibration("battery", ("t_reauth_s", "drain_%_per_min", "target", "ok"))
    d5 = model.drain_rate(5.0)
    ok5 = math.isclose(d5, BATTERY_T5_TARGET, abs_tol=1e-9)
    d15 = model.drain_rate(15.0)
    lo, hi = BATTERY_T15_RANGE
    ok15 = lo <= d15 <= hi
    standby = model.drain_rate(math.inf)
    cal.rows += [
        ("5", f"{d5:.4f}", f"{BATTERY_T5_TARGET:.2f}", "yes" if ok5 else "NO"),
        ("15", f"{d15:.4f}", f"[{lo:.2f}, {hi:.2f}]", "yes" if ok15 else "NO"),
        ("inf", f"{standby:.4f}", "standby", "-"),
    ]
    cal.ok = ok5 and ok15
    cal.notes.append(f"minutes from 100% to empty at T=5: {100 / d5:.1f}")
    return cal


CALIBRATORS = {"optics": calibrate_optics, "latency": calibrate_latency, "battery": calibrate_battery}
