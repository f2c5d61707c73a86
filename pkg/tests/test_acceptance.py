"""End-to-end acceptance criteria, driven through the ``wsnad`` CLI.

Each test prints (and the session summary repeats) one PASS/FAIL line with
the measured numbers. Run alone with ``pytest tests/test_acceptance.py -v``;
the whole file takes roughly six minutes on one core.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from wsnad import autoencoder as ae
from wsnad import config as cfgmod
from wsnad.cli import main
from wsnad.datagen import generate_clean
from wsnad.detector import ResidualStats
from wsnad.evaluation import auc_from_scores, pairwise_auc
from wsnad.sensor_node import SensorNode

pytestmark = pytest.mark.slow

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "acceptance.json"


def cli(*args):
    t0 = time.perf_counter()
    code = main([str(a) for a in args])
    assert code == 0, f"wsnad {' '.join(map(str, args))} exited with {code}"
    return time.perf_counter() - t0


def summary(path):
    return json.loads((Path(path) / "summary.json").read_text())


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def baseline(work):
    """K=0 simulate run from the acceptance config, reported."""
    out = work / "baseline"
    elapsed = cli("simulate", CONFIG, out)
    cli("report", out)
    return out, elapsed


@pytest.fixture(scope="module")
def sweeps(work):
    runs = {}
    for kind in ("heatmap", "frequency", "adaptivity"):
        out = work / kind
        runs[kind] = (out, cli("sweep", CONFIG, kind, out))
    return runs


# ----------------------------------------------------------------- 1. gradient


def test_c01_gradient_oracle(verdict):
    rng = np.random.default_rng(20170101)
    t0 = time.perf_counter()
    worst = 0.0
    eps = 1e-4
    for _ in range(25):
        m = int(rng.integers(2, 9))
        h = int(rng.integers(1, min(5, m - 1) + 1))
        shape = ae.NetworkShape(m, h)
        params = ae.ModelParams(rng.normal(0, 0.5, (h, m)), rng.normal(0, 0.5, h),
                                rng.normal(0, 0.5, (m, h)), rng.normal(0, 0.5, m))
        x = rng.random((int(rng.integers(1, 8)), m))
        lam = float(rng.choice([0.0, 1e-4, 1e-2]))
        g = ae.gradient(params, x, lam).flat()
        vec = params.flat()

        def c(i, d):
            w = vec.copy()
            w[i] += d
            return ae.cost(ae.ModelParams.from_flat(shape, w), x, lam)

        # fourth-order central differences
        num = np.array([(-c(i, 2 * eps) + 8 * c(i, eps) - 8 * c(i, -eps) + c(i, -2 * eps)) / (12 * eps)
                        for i in range(vec.size)])
        rel = np.abs(g - num) / np.maximum(1e-8, np.abs(g) + np.abs(num))
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 10
    assert verdict(1, "gradient oracle", ok, f"max rel err {worst:.2e} (< 1e-6), {elapsed:.2f}s (< 10s)")


# ---------------------------------------------------------------------- 2. AUC


def test_c02_auc_oracle(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    done = 0
    while done < 100:
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        # coarse rounding on half the sets so ties are common
        scores = rng.normal(labels * rng.uniform(0, 2), 1.0, n)
        if done % 2:
            scores = np.round(scores, 1)
        worst = max(worst, abs(auc_from_scores(scores, labels) - pairwise_auc(scores, labels)))
        done += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5
    assert verdict(2, "AUC oracle", ok, f"max |trapezoid - pairs| {worst:.1e} (<= 1e-12), {elapsed:.2f}s (< 5s)")


# ----------------------------------------------------------- 3. false alarms


def test_c03_false_alarm_baseline(baseline, verdict):
    out, elapsed = baseline
    s = summary(out)
    frac = s["metrics"]["flagged_fraction"]
    assert s["metrics"]["positives"] == 0
    ok = 0.02 <= frac <= 0.07 and elapsed < 120
    assert verdict(3, "false-alarm baseline", ok,
                   f"K=0 flagged fraction {frac:.4f} in [0.02, 0.07], {elapsed:.1f}s (< 120s)")


# ------------------------------------------------------------ 4. reconstruction


def test_c04_reconstruction_rmse(baseline, verdict):
    out, elapsed = baseline
    cfg = cfgmod.load(out / "manifest.json").sim
    hist = generate_clean(cfg.signal).readings[:, : cfg.bootstrap_days, :]
    params = ae.params_from_bytes((out / "models" / "day0000.bin").read_bytes())
    x = hist.reshape(-1, hist.shape[-1])
    per_slot = np.sqrt(np.mean((ae.reconstruct(params, x) - x) ** 2, axis=0))
    rmse = float(per_slot.mean())
    ok = rmse < 0.05 and elapsed < 120
    assert verdict(4, "reconstruction pre-validation", ok,
                   f"mean per-slot RMSE {rmse:.4f} (< 0.05), worst slot {per_slot.max():.4f}")


# ------------------------------------------------------------------- 5. heatmap


def test_c05_heatmap(sweeps, verdict):
    out, elapsed = sweeps["heatmap"]
    s = summary(out)
    mu, var, grid = s["mu_v"], s["var_v"], np.array(s["auc"])
    strong = [grid[i, j] for i, m in enumerate(mu) for j, v in enumerate(var) if abs(m) >= 0.2 and v <= 0.05]
    weak = [grid[i, j] for i, m in enumerate(mu) for j in range(len(var)) if abs(m) <= 0.05]
    gaps = [abs(grid[i, j] - grid[mu.index(-m), j]) for i, m in enumerate(mu) if m > 0 and -m in mu
            for j in range(len(var))]
    ok = (len(strong) > 0 and min(strong) >= 0.8 and len(weak) > 0 and max(weak) <= 0.8
          and len(gaps) > 0 and max(gaps) <= 0.05 and elapsed < 1200)
    assert verdict(5, "heat-map", ok,
                   f"min AUC |mu|>=0.2 {min(strong):.3f} (>= 0.8), max AUC |mu|<=0.05 {max(weak):.3f} (<= 0.8), "
                   f"max +/- gap {max(gaps):.3f} (<= 0.05), {elapsed:.0f}s")


# ----------------------------------------------------------------- 6. frequency


def test_c06_frequency(sweeps, verdict):
    out, elapsed = sweeps["frequency"]
    s = summary(out)
    aucs = s["auc"]
    spread = max(aucs) - min(aucs)
    ok = s["k"] == [10, 40, 80, 144] and spread <= 0.1 and elapsed < 900
    assert verdict(6, "frequency robustness", ok,
                   f"AUC {[round(a, 3) for a in aucs]} at K={s['k']}, range {spread:.3f} (<= 0.1), {elapsed:.0f}s")


# ---------------------------------------------------------------- 7. adaptivity


def test_c07_adaptivity(sweeps, verdict):
    out, elapsed = sweeps["adaptivity"]
    med = summary(out)["medians"]
    parts, ok = [], elapsed < 1800
    for k in med["random"]:
        r, p = med["random"][k], med["prioritized"][k]
        ok &= r["seeds"] >= 10 and p["seeds"] >= 10
        ok &= p["fpr"] < r["fpr"] and r["tpr"] >= p["tpr"] - 0.02
        parts.append(f"K={k}: FPR P {p['fpr']:.3f} < R {r['fpr']:.3f}, TPR R {r['tpr']:.3f} >= P {p['tpr']:.3f}-0.02")
    assert verdict(7, "adaptivity direction", bool(ok), "; ".join(parts) + f" ({r['seeds']} seeds, {elapsed:.0f}s)")


# ---------------------------------------------------------------- 8. complexity


def test_c08_complexity(verdict):
    t0 = time.perf_counter()
    sizes = [144, 288, 576]
    counts = []
    for m in sizes:
        h = round(m * 100 / 144)
        params = ae.init_params(ae.NetworkShape(m, h), 0.05, 0)
        node = SensorNode(1, params, ResidualStats(np.zeros(m), np.ones(m)))
        node.process_day(np.full(m, 0.5), 1)
        counts.append(node.mac_count)
    m2 = np.array(sizes, float) ** 2
    c = float(np.dot(counts, m2) / np.dot(m2, m2))
    dev = max(abs(n - c * q) / (c * q) for n, q in zip(counts, m2))
    elapsed = time.perf_counter() - t0
    ok = dev <= 0.10 and elapsed < 60
    assert verdict(8, "complexity O(M^2)", ok,
                   f"MACs {counts} at M={sizes}, c={c:.4f}, max deviation {dev:.2%} (<= 10%)")


# --------------------------------------------------------------- 9. determinism


def test_c09_determinism(baseline, work, verdict):
    src, _ = baseline
    a, b = work / "rerun_a", work / "rerun_b"
    t0 = time.perf_counter()
    cli("simulate", src / "manifest.json", a)
    cli("simulate", src / "manifest.json", b)
    elapsed = time.perf_counter() - t0

    def files(root):
        return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")

    names = files(a)
    same = names == files(b) and all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    # the original run (reported, so it also holds summary.json) must agree on every result file
    same &= all((src / n).read_bytes() == (a / n).read_bytes() for n in names)
    ok = same and elapsed < 300
    assert verdict(9, "determinism", ok,
                   f"{len(names)} result files byte-identical across manifest reruns (manifest.json holds wall time), "
                   f"{elapsed:.1f}s (< 300s)")


# ------------------------------------------------------------- 10. architecture


def test_c10_no_sensor_to_sensor_traffic(baseline, sweeps, work, verdict):
    counts = []
    for run in [baseline[0], work / "rerun_a", work / "rerun_b"]:
        if (run / "comms.json").exists():
            comms = json.loads((run / "comms.json").read_text())
            counts.append(comms["messages"]["sensor->sensor"] + comms["bytes"]["sensor->sensor"])
    for out, _ in sweeps.values():
        for cell in sorted((out / "cells").glob("*.json")):
            counts.append(json.loads(cell.read_text())["sensor_to_sensor_messages"])
    ok = len(counts) > 0 and all(c == 0 for c in counts)
    assert verdict(10, "architecture invariant", ok,
                   f"sensor-to-sensor messages 0 in {sum(c == 0 for c in counts)}/{len(counts)} runs")
