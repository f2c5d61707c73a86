"""Sensor-side detection loop.

A :class:`SensorNode` only ever sees its own readings, its own copy of the
model and stats, and the updates the cloud pushes to it. It holds no
reference to other sensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae
from .detector import ResidualStats, check_threshold, detect, residual
from .errors import ContractError

BATCH = "batch"
PER_READING = "per-reading"


@dataclass(frozen=True, eq=False)
class UploadMessage:
    sensor_id: int
    day_index: int
    x: np.ndarray
    x_hat: np.ndarray
    r: np.ndarray
    alpha: np.ndarray

    def to_dict(self):
        return {
            "sensor": self.sensor_id,
            "day": self.day_index,
            "x": [float(v) for v in self.x],
            "x_hat": [float(v) for v in self.x_hat],
            "r": [float(v) for v in self.r],
            "alpha": [int(v) for v in self.alpha],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["sensor"]), int(d["day"]), np.asarray(d["x"], float),
                   np.asarray(d["x_hat"], float), np.asarray(d["r"], float),
                   np.asarray(d["alpha"], np.int8))

    def nbytes(self) -> int:
        # two int32 ids, three float64 vectors, one bit-packed flag vector
        m = self.x.shape[0]
        return 8 + 3 * 8 * m + (m + 7) // 8


@dataclass(frozen=True)
class Alert:
    sensor_id: int
    day_index: int
    slot: int
    residual: float

    def to_dict(self):
        return {"sensor": self.sensor_id, "day": self.day_index, "slot": self.slot, "r": self.residual}

    NBYTES = 4 + 4 + 4 + 8


class SensorNode:
    def __init__(self, sensor_id: int, params: ae.ModelParams, stats: ResidualStats,
                 p: float = 2.0, mode: str = BATCH):
        if mode not in (BATCH, PER_READING):
            raise ContractError(f"unknown sensor mode {mode!r}")
        if len(stats) != params.shape.input_dim:
            raise ContractError("stats length does not match the model input size")
        self.sensor_id = sensor_id
        self.params = params
        self.stats = stats
        self.p = check_threshold(p)
        self.mode = mode
        self.m = params.shape.input_dim
        self.day_buffer: list[float] = []
        self.day_index = 1
        # future-slot filler for per-reading inference: the last reconstruction
        self._pad = None
        self.mac_count = 0

    # -- DADA-S loop -----------------------------------------------------------

    def ingest_reading(self, value: float, slot: int):
        """Append one reading; in per-reading mode return an :class:`Alert` or None."""
        if len(self.day_buffer) >= self.m:
            raise ContractError(f"sensor {self.sensor_id}: day buffer already holds {self.m} readings")
        if slot != len(self.day_buffer) + 1:
            raise ContractError(
                f"sensor {self.sensor_id}: expected slot {len(self.day_buffer) + 1}, got {slot}"
            )
        self.day_buffer.append(float(value))
        if self.mode == BATCH:
            return None
        x = self._padded_day()
        _, out = ae.forward(self.params, x)
        self.mac_count += self._macs()
        j = slot - 1
        r = x[j] - out[j]
        if abs(r - self.stats.mu[j]) > self.p * self.stats.sigma[j]:
            return Alert(self.sensor_id, self.day_index, slot, float(r))
        return None

    def _macs(self) -> int:
        # one multiply-accumulate per weight entry touched by the two mat-vec products
        return self.params.w_hidden.size + self.params.w_output.size

    def _padded_day(self) -> np.ndarray:
        n = len(self.day_buffer)
        if self._pad is None:
            self._pad = ae.forward(self.params, np.full(self.m, 0.5))[1]
        x = self._pad.copy()
        x[:n] = self.day_buffer
        return x

    def end_of_day(self, day_index: int | None = None) -> UploadMessage:
        if len(self.day_buffer) != self.m:
            raise ContractError(
                f"sensor {self.sensor_id}: end of day with {len(self.day_buffer)} of {self.m} readings"
            )
        day = self.day_index if day_index is None else day_index
        x = np.asarray(self.day_buffer, dtype=np.float64)
        _, x_hat = ae.forward(self.params, x)
        self.mac_count += self._macs()
        r = residual(x, x_hat)
        alpha = detect(r, self.stats, self.p)
        self.day_buffer = []
        self._pad = x_hat
        self.day_index = day + 1
        return UploadMessage(self.sensor_id, day, x, x_hat, r, alpha)

    def process_day(self, readings, day_index: int):
        """Feed a whole day of readings; returns (alerts, upload)."""
        alerts = []
        for j, v in enumerate(readings, start=1):
            a = self.ingest_reading(v, j)
            if a is not None:
                alerts.append(a)
        return alerts, self.end_of_day(day_index)

    def apply_update(self, update) -> None:
        """Install new params and stats from a ModelUpdate; the buffer is untouched."""
        if update.params.shape != self.params.shape or len(update.stats) != self.m:
            raise ContractError(f"sensor {self.sensor_id}: update shape does not match local model")
        self.params = update.params
        self.stats = update.stats
