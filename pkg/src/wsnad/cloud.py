"""Cloud-side loop: store uploads, retrain every ``d_u`` days, push updates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from .detector import ResidualStats, compute_stats, residual
from .errors import ContractError

log = logging.getLogger(__name__)

RANDOM = "random"
PRIORITIZED = "prioritized"


@dataclass(frozen=True)
class RetrainPolicy:
    d_u: int = 14
    scheme: str = RANDOM
    # None -> all history for Random, 2 * d_u for Prioritized
    stats_window_days: int | None = None
    # "uploaded": stored residuals as sent by the sensors
    # "refit": residuals of the retrained model on the stored readings
    stats_source: str = "refit"
    # leave slots the sensors flagged out of the recomputed stats
    exclude_flagged: bool = True

    def __post_init__(self):
        if self.d_u < 1:
            raise ContractError("d_u must be >= 1")
        if self.scheme not in (RANDOM, PRIORITIZED):
            raise ContractError(f"unknown retrain scheme {self.scheme!r}")
        if self.stats_window_days is not None and self.stats_window_days < 1:
            raise ContractError("stats_window_days must be >= 1")
        if self.stats_source not in ("uploaded", "refit"):
            raise ContractError(f"unknown stats_source {self.stats_source!r}")

    def window(self, n_days: int) -> int:
        if self.stats_window_days is not None:
            return min(self.stats_window_days, n_days)
        if self.scheme == PRIORITIZED:
            return min(2 * self.d_u, n_days)
        return n_days


@dataclass(frozen=True, eq=False)
class ModelUpdate:
    params: ae.ModelParams
    stats: ResidualStats
    effective_day: int


@dataclass(frozen=True)
class Receipt:
    sensor_id: int
    effective_day: int


@dataclass
class Record:
    x: np.ndarray
    x_hat: np.ndarray
    r: np.ndarray
    alpha: np.ndarray


@dataclass
class RetrainEvent:
    day: int
    scheme: str
    n_samples: int
    cost_before: float
    cost_after: float
    cost_trace: list
    window_days: int


class TrainingStore:
    """Per-(sensor, day) upload records.

    Operational days are numbered from 1 and close in order. Anomaly-free
    history used for the initial model sits at days ``1 - B .. 0``.
    """

    def __init__(self, sensors: int):
        if sensors < 1:
            raise ContractError("sensors must be >= 1")
        self.sensors = sensors
        self.records: dict[tuple[int, int], Record] = {}
        self.completed_day = 0
        self.first_day = 1
        self.events: list[dict] = []

    def __len__(self):
        return len(self.records)

    def seed_history(self, x, x_hat, r) -> None:
        """Store ``S x B x M`` clean history as days ``1 - B .. 0`` with no flags."""
        if self.records:
            raise ContractError("history must be seeded into an empty store")
        x, x_hat, r = (np.asarray(a, dtype=np.float64) for a in (x, x_hat, r))
        if x.ndim != 3 or x.shape[0] != self.sensors or x.shape != x_hat.shape or x.shape != r.shape:
            raise ContractError(f"history arrays must be {self.sensors} x B x M")
        b = x.shape[1]
        zeros = np.zeros(x.shape[2], dtype=np.int8)
        for s in range(self.sensors):
            for k in range(b):
                self.records[(s + 1, k + 1 - b)] = Record(x[s, k], x_hat[s, k], r[s, k], zeros)
        self.first_day = 1 - b

    def receive_upload(self, msg) -> None:
        key = (msg.sensor_id, msg.day_index)
        if key in self.records:
            raise ContractError(f"duplicate upload for sensor {msg.sensor_id}, day {msg.day_index}")
        if not 1 <= msg.sensor_id <= self.sensors:
            raise ContractError(f"sensor id {msg.sensor_id} outside 1..{self.sensors}")
        if msg.day_index != self.completed_day + 1:
            raise ContractError(
                f"upload for day {msg.day_index} while day {self.completed_day + 1} is open"
            )
        self.records[key] = Record(msg.x, msg.x_hat, msg.r, msg.alpha)
        if np.any(msg.alpha):
            slots = [int(j) + 1 for j in np.flatnonzero(msg.alpha)]
            self.events.append({"type": "anomaly", "sensor": msg.sensor_id, "day": msg.day_index,
                                "slots": slots})
            log.debug("sensor %d day %d: %d flagged slots", msg.sensor_id, msg.day_index, len(slots))
        if all((s, msg.day_index) in self.records for s in range(1, self.sensors + 1)):
            self.completed_day = msg.day_index

    def close_day(self, day: int) -> None:
        """Mark ``day`` complete even if some uploads never arrived."""
        if day != self.completed_day + 1 and day != self.completed_day:
            raise ContractError(f"cannot close day {day}; day {self.completed_day + 1} is open")
        self.completed_day = day

    def days(self) -> list[int]:
        return list(range(self.first_day, self.completed_day + 1))

    def _keys(self, days):
        return [(s, d) for d in days for s in range(1, self.sensors + 1) if (s, d) in self.records]

    def stack(self, days, attr: str = "x") -> np.ndarray:
        return np.array([getattr(self.records[k], attr) for k in self._keys(days)])

    def day_samples(self, days) -> np.ndarray:
        return self.stack(days, "x")


def assemble_training_set(store: TrainingStore, policy: RetrainPolicy, seed: int) -> np.ndarray:
    """Rows are stored readings ``x``, shuffled with a generator seeded by ``seed``."""
    days = store.days()
    if not store.records or not days:
        raise ContractError("training store is empty")
    rng = np.random.default_rng(seed)
    if policy.scheme == RANDOM:
        chosen = days
    else:
        recent = days[-policy.d_u :]
        older = days[: -policy.d_u] if len(days) > policy.d_u else []
        if len(older) > policy.d_u:
            picked = rng.choice(len(older), size=policy.d_u, replace=False)
            older = [older[i] for i in sorted(picked)]
        chosen = older + recent
    samples = store.day_samples(chosen)
    return samples[rng.permutation(len(samples))]


def window_days(store: TrainingStore, policy: RetrainPolicy) -> list[int]:
    days = store.days()
    return days[len(days) - policy.window(len(days)) :]


def recompute_stats(store: TrainingStore, policy: RetrainPolicy, params: ae.ModelParams,
                    previous: ResidualStats) -> ResidualStats:
    days = window_days(store, policy)
    alpha = store.stack(days, "alpha")
    if policy.stats_source == "uploaded":
        r = store.stack(days, "r")
    else:
        x = store.stack(days, "x")
        r = residual(x, ae.reconstruct(params, x))
    return compute_stats(r, exclude=alpha if policy.exclude_flagged else None, previous=previous)


class Cloud:
    """Cloud actor owning the training store and the current model."""

    def __init__(self, store: TrainingStore, params: ae.ModelParams, stats: ResidualStats,
                 policy: RetrainPolicy, training: ae.TrainingConfig, seed: int = 0):
        self.store = store
        self.params = params
        self.stats = stats
        self.policy = policy
        self.training = training
        self.seed = seed
        self.retrains: list[RetrainEvent] = []

    def receive_upload(self, msg) -> None:
        self.store.receive_upload(msg)

    def maybe_retrain(self, day: int) -> ModelUpdate | None:
        if day != self.store.completed_day:
            raise ContractError(f"retrain check for day {day} but day {self.store.completed_day} is the last complete day")
        if day % self.policy.d_u != 0:
            return None
        update, event = retrain(self.store, self.policy, self.params, self.stats, self.training,
                                day, seed=self.seed + day)
        self.params, self.stats = update.params, update.stats
        self.retrains.append(event)
        return update


def maybe_retrain(store: TrainingStore, policy: RetrainPolicy, current_params: ae.ModelParams,
                  tc: ae.TrainingConfig, day: int, current_stats: ResidualStats | None = None,
                  seed: int = 0) -> ModelUpdate | None:
    if day != store.completed_day:
        raise ContractError(f"retrain check for day {day} but day {store.completed_day} is the last complete day")
    if day % policy.d_u != 0:
        return None
    return retrain(store, policy, current_params, current_stats, tc, day, seed)[0]


def retrain(store, policy, current_params, current_stats, tc, day, seed):
    samples = assemble_training_set(store, policy, seed)
    start = current_params if tc.warm_start else ae.init_params(current_params.shape, tc.init_scale, tc.seed + day)
    result = ae.train(start, samples, tc)
    stats = recompute_stats(store, policy, result.params, current_stats)
    event = RetrainEvent(day, policy.scheme, len(samples),
                         ae.cost(current_params, samples, tc.lam), result.cost_trace[-1],
                         result.cost_trace, len(window_days(store, policy)))
    return ModelUpdate(result.params, stats, day + 1), event


def broadcast_update(update: ModelUpdate, sensors) -> list[Receipt]:
    """Install ``update`` on every sensor; all receive the same immutable object."""
    receipts = []
    for node in sensors:
        node.apply_update(update)
        receipts.append(Receipt(node.sensor_id, update.effective_day))
    return receipts
