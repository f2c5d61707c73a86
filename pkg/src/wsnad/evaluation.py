"""ROC/AUC scoring and the three experiment sweeps (magnitude grid, frequency, adaptivity)."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cloud import PRIORITIZED, RANDOM
from .errors import ContractError
from .seeding import derive_seed
from .sim import SimConfig, SimResult, run_simulation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _check_classes(labels):
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0:
        raise ContractError("ROC needs at least one positive label; none present")
    if n_neg == 0:
        raise ContractError("ROC needs at least one negative label; none present")
    return n_pos, n_neg


def roc(scores, labels) -> RocCurve:
    """Threshold sweep from the highest score down; tied scores enter together.

    ``+inf`` scores (zero-sigma slots) form the top tie class.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int8)
    if s.shape != y.shape:
        raise ContractError("scores and labels differ in length")
    if np.any(np.isnan(s)):
        raise ContractError("scores contain NaN")
    n_pos, n_neg = _check_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thr = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, thr)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve."""
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def auc_from_scores(scores, labels) -> float:
    return auc(roc(scores, labels))


def pairwise_auc(scores, labels) -> float:
    """O(n_pos * n_neg) reference: P(pos > neg) + 0.5 P(pos == neg)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    _check_classes(y)
    pos, neg = s[y == 1], s[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def tpr_fpr_at(scores, labels, p: float) -> tuple[float, float]:
    """Rates for the decision ``score > p``; a score equal to p is negative."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    n_pos, n_neg = _check_classes(y)
    hit = s > p
    return float(np.sum(hit & (y == 1)) / n_pos), float(np.sum(hit & (y == 0)) / n_neg)


def result_auc(result: SimResult) -> float:
    return auc_from_scores(result.scores, result.labels)


def result_rates(result: SimResult) -> tuple[float, float]:
    """TPR/FPR of the flags the sensors actually raised."""
    f, y = result.flags.ravel(), result.labels.ravel()
    n_pos, n_neg = _check_classes(y)
    return float(np.sum((f == 1) & (y == 1)) / n_pos), float(np.sum((f == 1) & (y == 0)) / n_neg)


def summarize(result: SimResult) -> dict:
    out = {"flagged_fraction": float(result.flags.mean()),
           "positives": int(result.labels.sum()),
           "slots": int(result.labels.size),
           "sensor_to_sensor_messages": int(result.comms["messages"]["sensor->sensor"])}
    if 0 < out["positives"] < out["slots"]:
        out["auc"] = result_auc(result)
        out["tpr"], out["fpr"] = result_rates(result)
    return out


# ----------------------------------------------------------------------- sweeps


def _run_cell(cfg: SimConfig) -> dict:
    return summarize(run_simulation(cfg))


def with_anomalies(base: SimConfig, seed_tag: str, **changes) -> SimConfig:
    """Copy ``base`` with anomaly fields changed and cell-specific derived seeds."""
    anomalies = replace(base.anomalies, seed=derive_seed(base.anomalies.seed, seed_tag), **changes)
    return replace(base, anomalies=anomalies)


class CellRunner:
    """Runs sweep cells, optionally in parallel, with on-disk resume.

    Each finished cell is written to ``cells_dir/<key>.json``; a cell whose
    file already exists is read back instead of re-simulated.
    """

    def __init__(self, cells_dir=None, jobs: int = 1):
        self.cells_dir = Path(cells_dir) if cells_dir is not None else None
        self.jobs = max(1, int(jobs))
        self.computed = 0
        if self.cells_dir is not None:
            self.cells_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key):
        return None if self.cells_dir is None else self.cells_dir / f"{key}.json"

    def run(self, cells: dict) -> dict:
        done, todo = {}, {}
        for key, cfg in cells.items():
            path = self._path(key)
            if path is not None and path.exists():
                done[key] = json.loads(path.read_text())
            else:
                todo[key] = cfg
        if self.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                results = dict(zip(todo, pool.map(_run_cell, todo.values())))
        else:
            results = {k: _run_cell(cfg) for k, cfg in todo.items()}
        for key, summary in results.items():
            path = self._path(key)
            if path is not None:
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps(summary, sort_keys=True) + "\n")
                tmp.replace(path)
            self.computed += 1
            log.info("cell %s: %s", key, summary)
        done.update(results)
        return {k: done[k] for k in cells}


def sweep_heatmap(base: SimConfig, mu_v_grid, var_v_grid, runner: CellRunner | None = None) -> np.ndarray:
    """AUC for every (mu_v, var_v) cell; rows follow ``mu_v_grid``."""
    runner = runner or CellRunner()
    cells = {}
    for i, mu in enumerate(mu_v_grid):
        for j, var in enumerate(var_v_grid):
            cells[f"heat_{i}_{j}"] = with_anomalies(base, f"heatmap/{i}/{j}",
                                                    magnitude_mean=float(mu), magnitude_var=float(var))
    out = runner.run(cells)
    grid = np.empty((len(mu_v_grid), len(var_v_grid)))
    for i in range(len(mu_v_grid)):
        for j in range(len(var_v_grid)):
            grid[i, j] = out[f"heat_{i}_{j}"].get("auc", np.nan)
    return grid


def sweep_frequency(base: SimConfig, k_grid, runner: CellRunner | None = None) -> list[float]:
    """AUC per anomaly rate; K=0 has no positives and is skipped (NaN)."""
    runner = runner or CellRunner()
    cells = {f"freq_{k}": with_anomalies(base, f"frequency/{k}", rate_per_day=int(k))
             for k in k_grid if int(k) > 0}
    out = runner.run(cells)
    return [out[f"freq_{k}"]["auc"] if int(k) > 0 else float("nan") for k in k_grid]


def sweep_adaptivity(base: SimConfig, k_grid, seeds, runner: CellRunner | None = None) -> dict:
    """Per-scheme TPR/FPR rows on identical data; labels follow ``v > mu_v``.

    Returns ``{"rows": [...], "medians": {scheme: {k: {"tpr", "fpr"}}}}``.
    """
    runner = runner or CellRunner()
    cells = {}
    for k in k_grid:
        for seed in seeds:
            signal = replace(base.signal, seed=derive_seed(base.signal.seed, f"adaptivity/{seed}"))
            anomalies = replace(base.anomalies, rate_per_day=int(k), label_rule="above_mean",
                                seed=derive_seed(base.anomalies.seed, f"adaptivity/{k}/{seed}"))
            training = replace(base.training, seed=derive_seed(base.training.seed, f"adaptivity/{seed}"))
            for scheme in (RANDOM, PRIORITIZED):
                policy = replace(base.policy, scheme=scheme)
                cells[f"adapt_{scheme}_{k}_{seed}"] = replace(
                    base, signal=signal, anomalies=anomalies, training=training, policy=policy,
                    seed=derive_seed(base.seed, f"adaptivity/{seed}"))
    out = runner.run(cells)
    rows = []
    medians = {}
    for scheme in (RANDOM, PRIORITIZED):
        medians[scheme] = {}
        for k in k_grid:
            tprs, fprs = [], []
            for seed in seeds:
                s = out[f"adapt_{scheme}_{k}_{seed}"]
                rows.append({"scheme": scheme, "k": int(k), "seed": int(seed),
                             "tpr": s["tpr"], "fpr": s["fpr"], "auc": s["auc"]})
                tprs.append(s["tpr"])
                fprs.append(s["fpr"])
            medians[scheme][int(k)] = {"tpr": float(np.median(tprs)), "fpr": float(np.median(fprs))}
    return {"rows": rows, "medians": medians}


# ------------------------------------------------------------------ CSV output


def write_heatmap_csv(path, mu_v_grid, var_v_grid, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu_v"] + [repr(float(v)) for v in var_v_grid])
        for mu, row in zip(mu_v_grid, grid):
            w.writerow([repr(float(mu))] + [repr(float(a)) for a in row])


def read_heatmap_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    var = [float(v) for v in rows[0][1:]]
    mu = [float(r[0]) for r in rows[1:]]
    grid = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return mu, var, grid


def write_frequency_csv(path, k_grid, aucs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "auc"])
        for k, a in zip(k_grid, aucs):
            w.writerow([int(k), repr(float(a))])


def write_adaptivity_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "k", "seed", "tpr", "fpr", "auc"])
        for r in rows:
            w.writerow([r["scheme"], r["k"], r["seed"], repr(r["tpr"]), repr(r["fpr"]), repr(r["auc"])])
