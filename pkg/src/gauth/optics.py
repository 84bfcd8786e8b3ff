"""Stochastic model of reading a QR code off a terminal screen.

A scan is one Bernoulli trial. Codes displayed smaller than the
recommended minimum size never decode; otherwise the success probability
comes from a calibration table indexed by encoded bits, viewing distance
class and angle. Lookups snap to the nearest calibrated bucket, there is
no interpolation between cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

DISTANCE_CLASSES = {"intimate": 20.0, "personal": 50.0, "social": 120.0}
# class boundaries sit halfway between the calibrated distances
INTIMATE_MAX_CM = 35.0
PERSONAL_MAX_CM = 85.0

# encoded bits -> QR version used for that capacity
QR_LADDER = {208: 2, 816: 6, 1920: 10}
CALIBRATED_ANGLES = (0.0, 45.0)

DEFAULT_DISTANCE_FACTOR = 10


class OpticsError(ValueError):
    pass


@dataclass(frozen=True)
class ScanGeometry:
    distance: float  # cm
    angle: float  # degrees
    displayed_size: float  # cm, edge of the code on screen

    def __post_init__(self) -> None:
        if not self.distance > 0:
            raise OpticsError("distance must be positive")
        if not 0 <= self.angle < 90:
            raise OpticsError("angle must be in [0, 90)")
        if not self.displayed_size > 0:
            raise OpticsError("displayed_size must be positive")


@dataclass(frozen=True)
class CodeDensity:
    encoded_bits: int
    qr_version: int

    def __post_init__(self) -> None:
        if QR_LADDER.get(self.encoded_bits) != self.qr_version:
            raise OpticsError(f"{self.encoded_bits} bits / version {self.qr_version} is not on the capacity ladder")

    @property
    def modules(self) -> int:
        return 17 + 4 * self.qr_version

    @classmethod
    def for_bits(cls, bits: int) -> CodeDensity:
        """Smallest ladder rung that can hold ``bits``."""
        for rung in sorted(QR_LADDER):
            if bits <= rung:
                return cls(rung, QR_LADDER[rung])
        raise OpticsError(f"{bits} bits exceed the largest calibrated capacity ({max(QR_LADDER)})")


def distance_class(distance: float) -> str:
    if distance <= INTIMATE_MAX_CM:
        return "intimate"
    if distance <= PERSONAL_MAX_CM:
        return "personal"
    return "social"


def _nearest(value: float, choices) -> float:
    return min(choices, key=lambda c: (abs(c - value), c))


class AccuracyTable:
    def __init__(self, cells: dict[tuple[int, str, float], float]):
        for key, p in cells.items():
            if not 0.0 <= p <= 1.0:
                raise OpticsError(f"probability out of range for {key}: {p}")
            if key[1] not in DISTANCE_CLASSES:
                raise OpticsError(f"unknown distance class {key[1]!r}")
        self.cells = dict(cells)

    @classmethod
    def load(cls, path: str | Path) -> AccuracyTable:
        with open(path, newline="") as fh:
            return cls._parse(fh, str(path))

    @classmethod
    def default(cls) -> AccuracyTable:
        ref = resources.files("gauth").joinpath("data/stressing_qr.csv")
        with ref.open("r", newline="") as fh:
            return cls._parse(fh, "stressing_qr.csv")

    @classmethod
    def _parse(cls, lines, name: str) -> AccuracyTable:
        cells = {}
        for lineno, row in enumerate(csv.reader(lines), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 4:
                raise OpticsError(f"{name}:{lineno}: expected bits,distance_class,angle,probability")
            try:
                key = (int(row[0]), row[1].strip().lower(), float(row[2]))
                p = float(row[3])
            except ValueError as exc:
                raise OpticsError(f"{name}:{lineno}: {exc}") from None
            if key in cells:
                raise OpticsError(f"{name}:{lineno}: duplicate cell {key}")
            cells[key] = p
        return cls(cells)

    def dump(self) -> str:
        lines = ["# bits,distance_class,angle,probability"]
        for (bits, dc, angle), p in sorted(self.cells.items(), key=lambda kv: (kv[0][2], kv[0][0], DISTANCE_CLASSES[kv[0][1]])):
            lines.append(f"{bits},{dc},{angle:g},{p:.6g}")
        return "\n".join(lines) + "\n"

    def bits(self) -> list[int]:
        return sorted({k[0] for k in self.cells})

    def angles(self) -> list[float]:
        return sorted({k[2] for k in self.cells})

    def lookup(self, bits: int, dclass: str, angle: float, strict: bool = False) -> float:
        key = (bits, dclass, float(angle))
        if key in self.cells:
            return self.cells[key]
        if strict:
            raise OpticsError(f"no calibration for {bits} bits / {dclass} / {angle:g} deg")
        nb = _nearest(bits, self.bits())
        na = _nearest(angle, self.angles())
        try:
            return self.cells[(nb, dclass, na)]
        except KeyError:
            raise OpticsError(f"table has no cell near {key}") from None


def minimum_code_size(distance: float, distance_factor: int, density: CodeDensity) -> float:
    """Recommended minimum edge length (cm) for reading at ``distance`` cm."""
    if not distance > 0:
        raise OpticsError("distance must be positive")
    if not (isinstance(distance_factor, int) and 1 <= distance_factor <= 10):
        raise OpticsError("distance factor must be an integer in 1..10")
    return (distance / distance_factor) * (density.modules / 25)


def scan_attempt(
    geometry: ScanGeometry,
    density: CodeDensity,
    table: AccuracyTable,
    rng: np.random.Generator,
    strict: bool = False,
    distance_factor: int = DEFAULT_DISTANCE_FACTOR,
) -> bool:
    """One snapshot. Returns True if the code decoded."""
    if strict:
        if geometry.distance not in DISTANCE_CLASSES.values():
            raise OpticsError(f"distance {geometry.distance} cm is not a calibrated distance")
        if geometry.angle not in CALIBRATED_ANGLES:
            raise OpticsError(f"angle {geometry.angle} is not a calibrated angle")
    p = table.lookup(density.encoded_bits, distance_class(geometry.distance), geometry.angle, strict)
    # draw even when the gate fails so one scan always consumes one variate
    u = rng.random()
    if geometry.displayed_size < minimum_code_size(geometry.distance, distance_factor, density):
        return False
    return bool(u < p)


def average_accuracy(table: AccuracyTable, angle: float) -> float:
    """Mean success rate (percent) over the nine cells at ``angle``."""
    cells = [table.cells.get((bits, dc, float(angle))) for bits in QR_LADDER for dc in DISTANCE_CLASSES]
    if any(p is None for p in cells):
        raise OpticsError(f"table is incomplete at {angle:g} deg")
    return 100.0 * sum(cells) / len(cells)
