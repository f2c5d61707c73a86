"""Day-clock simulation of S sensors, a relaying gateway and the cloud.

Day numbering: the first ``bootstrap_days`` of the generated series are the
anomaly-free history the initial model is trained on. Operational days are
numbered 1..(days - bootstrap_days); uploads, retraining (``d mod d_u``)
and all metrics use this numbering.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .cloud import Cloud, RetrainPolicy, TrainingStore, broadcast_update
from .datagen import AnomalySpec, SignalConfig, generate_clean, perturb
from .detector import compute_stats, residual, scores
from .errors import ContractError, SimulationError, TrainingDiverged
from .sensor_node import BATCH, PER_READING, Alert, SensorNode

log = logging.getLogger(__name__)

RESULT_FORMAT_VERSION = 1
RESULT_FILES = ("readings.csv", "reconstructions.csv", "labels.csv", "flags.csv", "scores.csv",
                "events.jsonl", "messages.jsonl", "updates.jsonl", "comms.json")
LINKS = ("sensor->gateway", "gateway->cloud", "cloud->gateway", "gateway->sensor", "sensor->sensor")


@dataclass(frozen=True)
class SimConfig:
    signal: SignalConfig = field(default_factory=SignalConfig)
    anomalies: AnomalySpec = field(default_factory=AnomalySpec)
    shape: ae.NetworkShape = field(default_factory=lambda: ae.NetworkShape(144, 100))
    training: ae.TrainingConfig = field(default_factory=ae.TrainingConfig)
    policy: RetrainPolicy = field(default_factory=RetrainPolicy)
    threshold: float = 2.0
    bootstrap_days: int = 14
    # epochs for the initial fit; None reuses training.epochs
    bootstrap_epochs: int | None = None
    mode: str = BATCH
    upload_drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.bootstrap_days < self.signal.days:
            raise ContractError(
                f"bootstrap_days ({self.bootstrap_days}) must be in [1, signal.days={self.signal.days})"
            )
        if self.shape.input_dim != self.signal.readings_per_day:
            raise ContractError("shape.input_dim must equal signal.readings_per_day")
        if not self.threshold > 0:
            raise ContractError("threshold p must be > 0")
        if self.mode not in (BATCH, PER_READING):
            raise ContractError(f"unknown sensor mode {self.mode!r}")
        if not 0.0 <= self.upload_drop_prob < 1.0:
            raise ContractError("upload_drop_prob must be in [0, 1)")

    @property
    def operational_days(self) -> int:
        return self.signal.days - self.bootstrap_days


@dataclass
class SimResult:
    """Per-(sensor, operational day, slot) arrays plus accounting.

    Arrays are ``S x D x M`` over operational days only.
    """
    readings: np.ndarray
    reconstructions: np.ndarray
    flags: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    comms: dict
    events: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)

    @property
    def residuals(self) -> np.ndarray:
        return self.readings - self.reconstructions

    @property
    def retrain_days(self) -> list[int]:
        return [e["day"] for e in self.events if e["type"] == "retrain"]


class Gateway:
    """Relays messages between sensors and the cloud and counts traffic."""

    def __init__(self, sensors: int, days: int, drop_prob: float = 0.0, seed: int = 0):
        self.drop_prob = drop_prob
        self._rng = np.random.default_rng(seed)
        self.messages = {link: [0] * (days + 1) for link in LINKS}
        self.bytes = {link: [0] * (days + 1) for link in LINKS}
        self.uplink_per_sensor = [0] * sensors
        self.downlink_per_sensor = [0] * sensors
        self.alerts_per_sensor = [0] * sensors
        self.dropped = 0

    def _count(self, day, link, nbytes):
        self.messages[link][day] += 1
        self.bytes[link][day] += nbytes

    def uplink(self, day, sensor_id, nbytes) -> bool:
        """Count one sensor->cloud message; False if the message is lost."""
        self._count(day, "sensor->gateway", nbytes)
        self.uplink_per_sensor[sensor_id - 1] += 1
        if self.drop_prob and self._rng.random() < self.drop_prob:
            self.dropped += 1
            return False
        self._count(day, "gateway->cloud", nbytes)
        return True

    def alert(self, day, sensor_id):
        self.alerts_per_sensor[sensor_id - 1] += 1
        self.uplink(day, sensor_id, Alert.NBYTES)

    def downlink(self, day, sensor_ids, nbytes):
        self._count(day, "cloud->gateway", nbytes)
        for sid in sensor_ids:
            self._count(day, "gateway->sensor", nbytes)
            self.downlink_per_sensor[sid - 1] += 1

    def summary(self) -> dict:
        total = {link: sum(v) for link, v in self.messages.items()}
        total_bytes = {link: sum(v) for link, v in self.bytes.items()}
        return {
            "messages": total,
            "bytes": total_bytes,
            "messages_per_day": {link: v[1:] for link, v in self.messages.items()},
            "bytes_per_day": {link: v[1:] for link, v in self.bytes.items()},
            "uplink_per_sensor": list(self.uplink_per_sensor),
            "downlink_per_sensor": list(self.downlink_per_sensor),
            "alerts_per_sensor": list(self.alerts_per_sensor),
            "dropped_uploads": self.dropped,
        }


def update_nbytes(update) -> int:
    return len(ae.params_to_bytes(update.params)) + 16 * len(update.stats) + 4


def bootstrap(config: SimConfig, clean):
    """Train the initial model on the clean history and derive its stats."""
    b = config.bootstrap_days
    hist = clean.readings[:, :b, :]
    samples = hist.reshape(-1, hist.shape[-1])
    tc = config.training
    if config.bootstrap_epochs is not None:
        tc = replace(tc, epochs=config.bootstrap_epochs)
    params0 = ae.init_params(config.shape, tc.init_scale, tc.seed)
    fit = ae.train(params0, samples, tc)
    x_hat = ae.reconstruct(fit.params, samples).reshape(hist.shape)
    r = residual(hist, x_hat)
    stats = compute_stats(r)
    return fit, x_hat, r, stats


def run_simulation(config: SimConfig) -> SimResult:
    sig = config.signal
    s_count, m = sig.sensors, sig.readings_per_day
    b = config.bootstrap_days
    n_days = config.operational_days

    clean = generate_clean(sig)
    data = perturb(clean, config.anomalies, first_day=b + 1)

    try:
        fit, hist_hat, hist_r, stats = bootstrap(config, clean)
    except TrainingDiverged as exc:
        raise SimulationError(0, None, exc) from exc
    params = fit.params
    hist = clean.readings[:, :b, :]
    rmse = float(np.sqrt(np.mean((hist - hist_hat) ** 2)))

    store = TrainingStore(s_count)
    store.seed_history(hist, hist_hat, hist_r)
    cloud = Cloud(store, params, stats, config.policy, config.training, seed=config.seed)
    sensors = [SensorNode(i + 1, params, stats, config.threshold, config.mode) for i in range(s_count)]
    gateway = Gateway(s_count, n_days, config.upload_drop_prob, seed=config.seed)

    shape3 = (s_count, n_days, m)
    readings = data.readings[:, b:, :].copy()
    labels = data.labels[:, b:, :].copy()
    recon = np.zeros(shape3)
    flags = np.zeros(shape3, dtype=np.int8)
    score = np.zeros(shape3)
    events = [{"type": "bootstrap", "day": 0, "n_samples": int(s_count * b),
               "cost_before": fit.cost_trace[0], "cost_after": fit.cost_trace[-1],
               "rmse": rmse}]
    messages = []
    updates = []
    models = {0: ae.params_to_bytes(params)}

    for d in range(1, n_days + 1):
        n_events = len(store.events)
        for node in sensors:
            try:
                alerts, msg = node.process_day(readings[node.sensor_id - 1, d - 1], d)
            except Exception as exc:
                raise SimulationError(d, node.sensor_id, exc) from exc
            for a in alerts:
                gateway.alert(d, node.sensor_id)
                events.append({"type": "alert", **a.to_dict()})
            i = node.sensor_id - 1
            recon[i, d - 1] = msg.x_hat
            flags[i, d - 1] = msg.alpha
            score[i, d - 1] = scores(msg.r, node.stats)
            messages.append(msg.to_dict())
            if gateway.uplink(d, node.sensor_id, msg.nbytes()):
                cloud.receive_upload(msg)
        store.close_day(d)
        events.extend(store.events[n_events:])
        try:
            update = cloud.maybe_retrain(d)
        except TrainingDiverged as exc:
            raise SimulationError(d, None, exc) from exc
        if update is not None:
            ev = cloud.retrains[-1]
            events.append({"type": "retrain", "day": d, "scheme": ev.scheme, "n_samples": ev.n_samples,
                           "window_days": ev.window_days, "cost_before": ev.cost_before,
                           "cost_after": ev.cost_after})
            receipts = broadcast_update(update, sensors)
            gateway.downlink(d, [rc.sensor_id for rc in receipts], update_nbytes(update))
            events.append({"type": "broadcast", "day": d, "effective_day": update.effective_day,
                           "receipts": [rc.sensor_id for rc in receipts]})
            models[d] = ae.params_to_bytes(update.params)
            updates.append({"day": d, "effective_day": update.effective_day,
                            "model_file": f"models/day{d:04d}.bin",
                            "stats": update.stats.to_dict(), "cost_trace": ev.cost_trace})

    comms = gateway.summary()
    comms["days"] = n_days
    comms["sensors"] = s_count
    comms["retrains"] = len(cloud.retrains)
    return SimResult(readings, recon, flags, labels, score, comms, events, messages, updates, models,
                     {"rmse": rmse, "cost_trace": fit.cost_trace, "stats": stats.to_dict()})


def communication_report(result: SimResult) -> dict:
    c = result.comms
    days = c["days"]
    uplink = c["uplink_per_sensor"]
    return {
        "days": days,
        "sensors": c["sensors"],
        "uplink_messages_per_sensor": uplink,
        "alerts_per_sensor": c["alerts_per_sensor"],
        "downlink_updates_per_sensor": c["downlink_per_sensor"],
        "downlink_updates": c["retrains"],
        "sensor_to_sensor_messages": c["messages"]["sensor->sensor"],
        "sensor_to_sensor_bytes": c["bytes"]["sensor->sensor"],
        "uplink_bytes": c["bytes"]["sensor->gateway"],
        "downlink_bytes": c["bytes"]["gateway->sensor"],
        # readings taken per uplink message, averaged over sensors
        "readings_per_uplink": days * result.readings.shape[2] / max(1.0, float(np.mean(uplink))),
    }


# ------------------------------------------------------------------ persistence


def _fmt(v) -> str:
    return repr(float(v))


def _write_matrix(path: Path, arr, as_int=False):
    s, d, m = arr.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor", "day"] + [f"m{j}" for j in range(1, m + 1)])
        for i in range(s):
            for k in range(d):
                vals = [str(int(v)) for v in arr[i, k]] if as_int else [_fmt(v) for v in arr[i, k]]
                w.writerow([i + 1, k + 1] + vals)


def _read_matrix(path: Path, dtype=np.float64):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    m = len(rows[0]) - 2
    s = max(int(r[0]) for r in body)
    d = max(int(r[1]) for r in body)
    out = np.zeros((s, d, m), dtype=dtype)
    for r in body:
        out[int(r[0]) - 1, int(r[1]) - 1] = [float(v) for v in r[2:]]
    return out


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def save_result(result: SimResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "readings.csv", result.readings)
    _write_matrix(out / "reconstructions.csv", result.reconstructions)
    _write_matrix(out / "labels.csv", result.labels, as_int=True)
    _write_matrix(out / "flags.csv", result.flags, as_int=True)
    _write_matrix(out / "scores.csv", result.scores)
    with open(out / "events.jsonl", "w") as fh:
        for e in result.events:
            fh.write(_dumps(e) + "\n")
    with open(out / "messages.jsonl", "w") as fh:
        for msg in result.messages:
            fh.write(_dumps(msg) + "\n")
    with open(out / "updates.jsonl", "w") as fh:
        for u in result.updates:
            fh.write(_dumps(u) + "\n")
    models = out / "models"
    models.mkdir(exist_ok=True)
    for day, blob in result.models.items():
        (models / f"day{day:04d}.bin").write_bytes(blob)
    comms = dict(result.comms)
    comms["format_version"] = RESULT_FORMAT_VERSION
    comms["bootstrap"] = result.bootstrap
    (out / "comms.json").write_text(json.dumps(comms, sort_keys=True, indent=1) + "\n")
    return out


def _read_jsonl(path: Path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_result(out_dir) -> SimResult:
    out = Path(out_dir)
    missing = [f for f in RESULT_FILES if not (out / f).exists()]
    if missing:
        raise FileNotFoundError(f"incomplete result directory {out}: missing {', '.join(missing)}")
    comms = json.loads((out / "comms.json").read_text())
    boot = comms.pop("bootstrap", {})
    comms.pop("format_version", None)
    models = {}
    for p in sorted((out / "models").glob("day*.bin")):
        models[int(p.stem[3:])] = p.read_bytes()
    return SimResult(
        _read_matrix(out / "readings.csv"),
        _read_matrix(out / "reconstructions.csv"),
        _read_matrix(out / "flags.csv", np.int8),
        _read_matrix(out / "labels.csv", np.int8),
        _read_matrix(out / "scores.csv"),
        comms,
        _read_jsonl(out / "events.jsonl"),
        _read_jsonl(out / "messages.jsonl"),
        _read_jsonl(out / "updates.jsonl"),
        models,
        boot,
    )
