"""Latency, device timing and battery models.

Network latencies are truncated normals on ``[min, max]``. The location
of the underlying normal is solved so the truncated distribution's mean
equals the measured mean; with the raw mean as location the Europe row
(mean 703 ms, sd 476 ms, floor 584 ms) would average about 1007 ms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq
from scipy.stats import truncnorm


@dataclass(frozen=True)
class LatencyModel:
    """Round-trip network time for one authentication, in milliseconds."""

    location: str
    mean: float
    min: float
    max: float
    stddev: float

    def __post_init__(self) -> None:
        if not self.min <= self.mean <= self.max:
            raise ValueError(f"{self.location}: need min <= mean <= max")
        if self.stddev < 0:
            raise ValueError(f"{self.location}: stddev must be >= 0")
        if self.stddev > 0 and not self.min < self.mean < self.max:
            raise ValueError(f"{self.location}: mean must lie strictly inside [min, max]")

    @property
    def degenerate(self) -> bool:
        return self.stddev == 0

    def truncated_mean(self, loc: float) -> float:
        a, b = (self.min - loc) / self.stddev, (self.max - loc) / self.stddev
        return float(truncnorm.mean(a, b, loc=loc, scale=self.stddev))

    @cached_property
    def loc(self) -> float:
        """Location of the underlying normal that reproduces ``mean``."""
        if self.degenerate:
            return self.mean
        span = 60 * self.stddev
        return brentq(lambda x: self.truncated_mean(x) - self.mean, self.min - span, self.max + span, xtol=1e-9)

    @cached_property
    def dist(self):
        a, b = (self.min - self.loc) / self.stddev, (self.max - self.loc) / self.stddev
        return truncnorm(a, b, loc=self.loc, scale=self.stddev)


LATENCY_MODELS = {
    "local": LatencyModel("local", 329, 265, 421, 70),
    "aws": LatencyModel("aws", 523, 451, 609, 134),
    "europe": LatencyModel("europe", 703, 584, 2115, 476),
}


def sample_latency(model: LatencyModel, rng: np.random.Generator, size: int | None = None):
    """Draw latencies (ms). Scalar when ``size`` is None."""
    if model.degenerate:
        return model.mean if size is None else np.full(size, float(model.mean))
    draws = model.dist.rvs(size=size, random_state=rng)
    # clamp guards against ulp-level spill from the inverse CDF
    draws = np.clip(draws, model.min, model.max)
    return float(draws) if size is None else draws


class LatencySampler:
    """Buffered draws from one model so per-message sampling stays cheap."""

    def __init__(self, model: LatencyModel, rng: np.random.Generator, batch: int = 256):
        self.model = model
        self.rng = rng
        self.batch = batch
        self._buf: list[float] = []

    def __call__(self) -> float:
        if not self._buf:
            self._buf = sample_latency(self.model, self.rng, self.batch).tolist()[::-1]
        return self._buf.pop()


@dataclass(frozen=True)
class DeviceTimeModel:
    """Seconds spent in each stage of an authentication on the device."""

    voice_activation: float = 1.7
    capture_autofocus: float = 1.8
    qr_decode: float = 0.2
    otp_generation: float = 0.4
    network: LatencyModel = field(default_factory=lambda: LATENCY_MODELS["local"])

    def __post_init__(self) -> None:
        for name in ("voice_activation", "capture_autofocus", "qr_decode", "otp_generation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def fixed_part(self, one_time: bool) -> float:
        base = self.capture_autofocus + self.qr_decode + self.otp_generation
        return base + self.voice_activation if one_time else base


def end_to_end_auth_time(dt: DeviceTimeModel, one_time: bool, rng: np.random.Generator) -> float:
    """Seconds from trigger to ack: voice (one-time only), capture, decode, OTP, network."""
    return dt.fixed_part(one_time) + sample_latency(dt.network, rng) / 1000.0


def mean_auth_time(dt: DeviceTimeModel, one_time: bool) -> float:
    return dt.fixed_part(one_time) + dt.network.mean / 1000.0


STANDBY_DRAIN = 0.25  # %/min, 2.5% per 10 minutes idle
DRAIN_AT_T5 = 2.0  # %/min measured while re-authenticating every 5 s
PER_AUTH_COST = (DRAIN_AT_T5 - STANDBY_DRAIN) / 12


@dataclass
class BatteryModel:
    level: float = 100.0
    standby_drain: float = STANDBY_DRAIN
    per_auth_cost: float = PER_AUTH_COST

    def __post_init__(self) -> None:
        if not 0 <= self.level <= 100:
            raise ValueError("battery level must be in [0, 100]")
        if self.standby_drain < 0 or self.per_auth_cost < 0:
            raise ValueError("drain rates must be >= 0")

    def drain_rate(self, t_reauth: float) -> float:
        """Percent per minute while re-authenticating every ``t_reauth`` s."""
        if not t_reauth > 0:
            raise ValueError("t_reauth must be positive")
        auths_per_min = 0.0 if math.isinf(t_reauth) else 60.0 / t_reauth
        return self.standby_drain + self.per_auth_cost * auths_per_min

    def consume(self, percent: float) -> float:
        if percent < 0:
            raise ValueError("battery cannot charge")
        self.level = max(0.0, self.level - percent)
        return self.level

    def idle(self, minutes: float) -> float:
        return self.consume(self.standby_drain * minutes)

    def authenticated(self, count: int = 1) -> float:
        return self.consume(self.per_auth_cost * count)


def battery_step(model: BatteryModel, t_reauth: float, minutes: float) -> float:
    """Advance ``model`` by ``minutes`` of continuous authentication."""
    if minutes < 0:
        raise ValueError("minutes must be >= 0")
    return model.consume(model.drain_rate(t_reauth) * minutes)
