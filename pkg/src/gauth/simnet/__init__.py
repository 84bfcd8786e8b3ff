"""Discrete-event simulation of the authentication parties."""

from .engine import Simulator, SimEvent
from .models import (
    LATENCY_MODELS,
    BatteryModel,
    DeviceTimeModel,
    LatencyModel,
    battery_step,
    end_to_end_auth_time,
    sample_latency,
)
from .runner import RunResult, run

__all__ = [
    "LATENCY_MODELS",
    "BatteryModel",
    "DeviceTimeModel",
    "LatencyModel",
    "RunResult",
    "SimEvent",
    "Simulator",
    "battery_step",
    "end_to_end_auth_time",
    "run",
    "sample_latency",
]
