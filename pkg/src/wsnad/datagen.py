"""Synthetic multi-sensor daily series with spike/burst fault injection.

Arrays are indexed ``[sensor, day, slot]`` from zero; the CSV/JSON files and
the injection log use 1-based sensor, day and slot numbers.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

LOW, HIGH = 0.1, 0.9
DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SignalConfig:
    sensors: int = 8
    days: int = 60
    readings_per_day: int = 144
    diurnal_amplitude: float = 1.0
    noise_std: float = 0.16
    sensor_offset_std: float = 0.05
    drift_per_day: float = 0.0
    # AR(1) coefficient of the measurement noise
    noise_ar: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.sensors, self.days, self.readings_per_day) < 1:
            raise ContractError("sensors, days and readings_per_day must be positive")
        if self.noise_std < 0 or self.sensor_offset_std < 0:
            raise ContractError("noise_std and sensor_offset_std must be >= 0")
        if not -1 < self.noise_ar < 1:
            raise ContractError("noise_ar must lie in (-1, 1)")


@dataclass(frozen=True)
class AnomalySpec:
    kind: str = "burst"  # spike | burst | mixed
    rate_per_day: int = 0
    magnitude_mean: float = 0.1
    magnitude_var: float = 0.01
    burst_duration: tuple = (5, 30)
    # "all": every injected slot is positive; "above_mean": only v > magnitude_mean
    label_rule: str = "all"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("spike", "burst", "mixed"):
            raise ContractError(f"unknown anomaly kind {self.kind!r}")
        if self.label_rule not in ("all", "above_mean"):
            raise ContractError(f"unknown label_rule {self.label_rule!r}")
        if self.rate_per_day < 0:
            raise ContractError("rate_per_day must be >= 0")
        if self.magnitude_var < 0:
            raise ContractError("magnitude_var must be >= 0")
        lo, hi = self.burst_duration
        if not 1 <= lo <= hi:
            raise ContractError(f"burst_duration range {self.burst_duration} is invalid")
        object.__setattr__(self, "burst_duration", (int(lo), int(hi)))


@dataclass
class Injection:
    sensor: int
    day: int
    start: int
    end: int
    v: float
    kind: str
    labeled: bool

    def to_dict(self):
        return {"sensor": self.sensor, "day": self.day, "start": self.start, "end": self.end,
                "v": self.v, "kind": self.kind, "labeled": self.labeled}


@dataclass
class LabeledDataset:
    readings: np.ndarray
    labels: np.ndarray
    injection_log: list = field(default_factory=list)
    # (sensor, day, slot), 1-based, where an injected offset left the value unchanged
    collisions: list = field(default_factory=list)

    def __post_init__(self):
        if self.readings.ndim != 3 or self.readings.shape != self.labels.shape:
            raise ContractError("readings and labels must both be S x days x M")

    @property
    def shape(self):
        return self.readings.shape

    def copy(self) -> "LabeledDataset":
        return LabeledDataset(self.readings.copy(), self.labels.copy(),
                              list(self.injection_log), list(self.collisions))


def diurnal_pattern(m: int, amplitude: float = 1.0) -> np.ndarray:
    """Shared daily shape: a minimum before dawn, a peak in the afternoon."""
    phase = 2 * np.pi * np.arange(m) / m
    return amplitude * (-np.cos(phase - np.pi / 6) + 0.25 * np.sin(2 * phase))


def generate_clean(config: SignalConfig) -> LabeledDataset:
    s, d, m = config.sensors, config.days, config.readings_per_day
    rng = np.random.default_rng(config.seed)
    base = np.tile(diurnal_pattern(m, config.diurnal_amplitude), d)
    offsets = rng.normal(0.0, config.sensor_offset_std, size=s)
    innov = rng.normal(0.0, 1.0, size=(s, d * m))
    phi = config.noise_ar
    scale = config.noise_std * np.sqrt(1 - phi**2)
    noise = np.empty_like(innov)
    noise[:, 0] = config.noise_std * innov[:, 0]
    for t in range(1, d * m):
        noise[:, t] = phi * noise[:, t - 1] + scale * innov[:, t]
    drift = config.drift_per_day * (np.arange(d * m) // m + 1)
    raw = base[None, :] + offsets[:, None] + noise + drift[None, :]
    lo, hi = raw.min(), raw.max()
    if hi > lo:
        values = LOW + (HIGH - LOW) * (raw - lo) / (hi - lo)
    else:
        values = np.full_like(raw, 0.5 * (LOW + HIGH))
    values = np.clip(values, LOW, HIGH).reshape(s, d, m)
    return LabeledDataset(values, np.zeros((s, d, m), dtype=np.int8))


def inject_spike(series, slot: int, v: float) -> np.ndarray:
    """Add ``v`` at the 1-based ``slot`` and clamp to [0, 1]."""
    return inject_burst(series, slot, slot, v)


def inject_burst(series, start: int, end: int, v: float) -> np.ndarray:
    """Add ``v`` to 1-based slots ``start..end`` inclusive and clamp to [0, 1]."""
    out = np.array(series, dtype=np.float64)
    if start > end:
        raise ContractError(f"burst start {start} is after end {end}")
    if start < 1 or end > out.shape[-1]:
        raise ContractError(f"burst [{start}, {end}] outside 1..{out.shape[-1]}")
    out[start - 1 : end] = np.clip(out[start - 1 : end] + v, 0.0, 1.0)
    return out


def inject(dataset: LabeledDataset, spec: AnomalySpec, first_day: int = 1) -> LabeledDataset:
    """Inject ``spec.rate_per_day`` anomalies into every day from ``first_day`` on.

    Start sites are drawn without replacement over (sensor, slot) for each
    day. Overlapping bursts add up; the result is clamped once at the end.
    """
    s, d, m = dataset.shape
    k = spec.rate_per_day
    if k > s * m:
        raise ContractError(f"rate_per_day {k} exceeds the {s * m} available sites per day")
    out = dataset.copy()
    if k == 0:
        return out
    rng = np.random.default_rng(spec.seed)
    sd_v = float(np.sqrt(spec.magnitude_var))
    lo, hi = spec.burst_duration
    offset = np.zeros(dataset.shape)
    touched = np.zeros(dataset.shape, dtype=bool)
    for day in range(first_day - 1, d):
        sites = rng.choice(s * m, size=k, replace=False)
        vs = rng.normal(spec.magnitude_mean, sd_v, size=k)
        if spec.kind == "spike":
            kinds = np.zeros(k, dtype=bool)
        elif spec.kind == "burst":
            kinds = np.ones(k, dtype=bool)
        else:
            kinds = rng.random(k) < 0.5
        durations = rng.integers(lo, hi + 1, size=k)
        for site, v, is_burst, dur in zip(sites, vs, kinds, durations):
            sensor, slot = divmod(int(site), m)
            end = min(slot + int(dur), m) if is_burst else slot + 1
            labeled = spec.label_rule == "all" or v > spec.magnitude_mean
            offset[sensor, day, slot:end] += v
            touched[sensor, day, slot:end] = True
            if labeled:
                out.labels[sensor, day, slot:end] = 1
            out.injection_log.append(Injection(sensor + 1, day + 1, slot + 1, end, float(v),
                                               "burst" if is_burst else "spike", bool(labeled)))
    out.readings = np.where(touched, np.clip(dataset.readings + offset, 0.0, 1.0), dataset.readings)
    same = touched & (out.readings == dataset.readings)
    out.collisions.extend((int(a) + 1, int(b) + 1, int(c) + 1) for a, b, c in zip(*np.nonzero(same)))
    return out


def perturb(dataset: LabeledDataset, spec: AnomalySpec | None, first_day: int) -> LabeledDataset:
    if spec is None or spec.rate_per_day == 0:
        return dataset.copy()
    return inject(dataset, spec, first_day=first_day)


# ------------------------------------------------------------------------- I/O


def _fmt(v) -> str:
    return repr(float(v))


def write_dataset(dataset: LabeledDataset, out_dir, stem: str = "dataset") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (one row per sensor-day) and ``<stem>.labels.json``."""
    out_dir = Path(out_dir)
    s, d, m = dataset.shape
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor", "day"] + [f"x{j}" for j in range(1, m + 1)])
        for i in range(s):
            for k in range(d):
                w.writerow([i + 1, k + 1] + [_fmt(v) for v in dataset.readings[i, k]])
    positives = [[int(a) + 1, int(b) + 1, int(c) + 1] for a, b, c in zip(*np.nonzero(dataset.labels))]
    sidecar = {
        "format_version": DATASET_FORMAT_VERSION,
        "shape": [s, d, m],
        "positives": positives,
        "injections": [inj.to_dict() for inj in dataset.injection_log],
        "collisions": [list(c) for c in dataset.collisions],
    }
    labels_path = out_dir / f"{stem}.labels.json"
    labels_path.write_text(json.dumps(sidecar, separators=(",", ":")) + "\n")
    return csv_path, labels_path


def read_dataset(csv_path, labels_path=None) -> LabeledDataset:
    csv_path = Path(csv_path)
    if labels_path is None:
        labels_path = csv_path.with_name(csv_path.stem + ".labels.json")
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    m = len(header) - 2
    sidecar = json.loads(Path(labels_path).read_text())
    s, d, m2 = sidecar["shape"]
    if m2 != m or len(body) != s * d:
        raise ContractError(f"CSV shape does not match labels sidecar shape {sidecar['shape']}")
    readings = np.empty((s, d, m))
    for row in body:
        readings[int(row[0]) - 1, int(row[1]) - 1] = [float(v) for v in row[2:]]
    if readings.min() < 0 or readings.max() > 1:
        raise ContractError("readings must be pre-normalized to [0, 1]")
    labels = np.zeros((s, d, m), dtype=np.int8)
    for a, b, c in sidecar["positives"]:
        labels[a - 1, b - 1, c - 1] = 1
    log = [Injection(**e) for e in sidecar.get("injections", [])]
    coll = [tuple(c) for c in sidecar.get("collisions", [])]
    return LabeledDataset(readings, labels, log, coll)
