"""Command line entry point: ``wsnad {generate,simulate,sweep,report}``.

Exit codes: 0 ok, 2 config error, 3 IO error, 4 incomplete input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .datagen import generate_clean, perturb, write_dataset
from .evaluation import (CellRunner, read_heatmap_csv, summarize, sweep_adaptivity, sweep_frequency,
                         sweep_heatmap, write_adaptivity_csv, write_frequency_csv, write_heatmap_csv)
from .sim import RESULT_FILES, communication_report, load_result, run_simulation, save_result

log = logging.getLogger("wsnad")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INCOMPLETE = 0, 2, 3, 4
MANIFEST = "manifest.json"
SWEEP_FILES = {"heatmap": "heatmap.csv", "frequency": "freq_sweep.csv", "adaptivity": "adaptivity.csv"}
REQUIRED_ARTIFACTS = {
    "generate": ["dataset.csv", "dataset.labels.json"],
    "simulate": list(RESULT_FILES),
    **{f"sweep-{k}": [v] for k, v in SWEEP_FILES.items()},
}


class IncompleteRun(Exception):
    def __init__(self, path, missing):
        super().__init__(f"{path}: incomplete run, missing {', '.join(missing)}")
        self.missing = missing


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _config_hash(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, kind: str, resolved: dict, artifacts, wall_time, status="complete"):
    manifest = {
        "tool": "wsnad",
        "version": __version__,
        "kind": kind,
        "status": status,
        "config": resolved,
        "config_sha256": _config_hash(resolved),
        "seeds": {
            "seed": resolved["seed"],
            "signal": resolved["signal"]["seed"],
            "anomalies": resolved["anomalies"]["seed"],
            "training": resolved["training"]["seed"],
        },
        "artifacts": sorted(artifacts),
        "wall_time_s": wall_time,
    }
    _atomic_write(out / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def _load_config(args):
    return cfgmod.load(args.config, overrides=args.set or (), seed=args.seed)


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args.out_dir)
    t0 = time.perf_counter()
    s = cfg.sim
    data = perturb(generate_clean(s.signal), s.anomalies, first_day=s.bootstrap_days + 1)
    csv_path, labels_path = write_dataset(data, out)
    write_manifest(out, "generate", cfgmod.resolved(cfg), [csv_path.name, labels_path.name],
                   time.perf_counter() - t0)
    print(f"wrote {csv_path} and {labels_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args.out_dir)
    t0 = time.perf_counter()
    result = run_simulation(cfg.sim)
    save_result(result, out)
    artifacts = list(RESULT_FILES) + [f"models/day{d:04d}.bin" for d in sorted(result.models)]
    write_manifest(out, "simulate", cfgmod.resolved(cfg), artifacts, time.perf_counter() - t0)
    summary = summarize(result)
    print(f"simulated {result.flags.shape[1]} days x {result.flags.shape[0]} sensors: "
          f"flagged {summary['flagged_fraction']:.4f}" +
          (f", AUC {summary['auc']:.4f}" if "auc" in summary else ""))
    return EXIT_OK


def sweep_base(cfg, kind):
    s = cfg.sim
    sw = cfg.sweeps[kind]
    if kind == "heatmap":
        return replace(s, anomalies=replace(s.anomalies, kind=sw["kind"], rate_per_day=int(sw["rate_per_day"])))
    if kind == "frequency":
        return replace(s, anomalies=replace(s.anomalies, kind=sw["kind"], magnitude_mean=float(sw["mu_v"]),
                                            magnitude_var=float(sw["var_v"])))
    return replace(
        s,
        signal=replace(s.signal, drift_per_day=float(sw["drift_per_day"])),
        anomalies=replace(s.anomalies, kind=sw["kind"], magnitude_mean=float(sw["mu_v"]),
                          magnitude_var=float(sw["var_v"]), label_rule="above_mean"),
        policy=replace(s.policy, d_u=int(sw["d_u"])),
    )


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    kind = args.kind
    out = _prepare_out(args.out_dir)
    resolved = cfgmod.resolved(cfg)
    cells_dir = out / "cells"
    prev = out / MANIFEST
    if prev.exists():
        try:
            old = json.loads(prev.read_text())
        except json.JSONDecodeError:
            old = {}
        if old.get("config_sha256") != _config_hash(resolved) or old.get("kind") != f"sweep-{kind}":
            shutil.rmtree(cells_dir, ignore_errors=True)
        else:
            log.info("resuming sweep in %s", out)
    write_manifest(out, f"sweep-{kind}", resolved, [], None, status="running")
    t0 = time.perf_counter()
    runner = CellRunner(cells_dir, jobs=args.jobs)
    base = sweep_base(cfg, kind)
    sw = cfg.sweeps[kind]
    target = out / SWEEP_FILES[kind]
    if kind == "heatmap":
        grid = sweep_heatmap(base, sw["mu_v"], sw["var_v"], runner)
        write_heatmap_csv(target, sw["mu_v"], sw["var_v"], grid)
    elif kind == "frequency":
        aucs = sweep_frequency(base, sw["k"], runner)
        write_frequency_csv(target, sw["k"], aucs)
    else:
        res = sweep_adaptivity(base, sw["k"], sw["seeds"], runner)
        write_adaptivity_csv(target, res["rows"])
    manifest = write_manifest(out, f"sweep-{kind}", resolved, [target.name], time.perf_counter() - t0)
    summary = build_summary(out, manifest)
    _atomic_write(out / "summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{kind} sweep: {runner.computed} cells computed -> {target}")
    return EXIT_OK


# ----------------------------------------------------------------------- report


def _read_manifest(path: Path) -> dict:
    mf = path / MANIFEST
    if not mf.exists():
        raise IncompleteRun(path, [MANIFEST])
    manifest = json.loads(mf.read_text())
    if manifest.get("status") != "complete":
        raise IncompleteRun(path, [f"{MANIFEST} (status {manifest.get('status')!r})"])
    missing = [a for a in REQUIRED_ARTIFACTS.get(manifest["kind"], []) if not (path / a).exists()]
    if missing:
        raise IncompleteRun(path, missing)
    return manifest


def _median(values):
    return float(np.median(values)) if len(values) else float("nan")


def build_summary(path: Path, manifest: dict) -> dict:
    kind = manifest["kind"]
    summary = {"kind": kind, "config": manifest["config"], "seeds": manifest["seeds"]}
    if kind == "simulate":
        result = load_result(path)
        summary["metrics"] = summarize(result)
        summary["comms"] = communication_report(result)
        summary["retrain_days"] = result.retrain_days
        summary["bootstrap_rmse"] = result.bootstrap.get("rmse")
    elif kind == "generate":
        labels = json.loads((path / "dataset.labels.json").read_text())
        summary["shape"] = labels["shape"]
        summary["positives"] = len(labels["positives"])
        summary["injections"] = len(labels["injections"])
    elif kind == "sweep-heatmap":
        mu, var, grid = read_heatmap_csv(path / "heatmap.csv")
        summary["mu_v"], summary["var_v"] = mu, var
        summary["auc"] = grid.tolist()
        summary["auc_min"], summary["auc_max"] = float(np.nanmin(grid)), float(np.nanmax(grid))
    elif kind == "sweep-frequency":
        rows = _read_csv(path / "freq_sweep.csv")
        ks = [int(r["k"]) for r in rows]
        aucs = [float(r["auc"]) for r in rows]
        finite = [a for a in aucs if np.isfinite(a)]
        summary["k"], summary["auc"] = ks, aucs
        summary["auc_range"] = (max(finite) - min(finite)) if finite else float("nan")
    elif kind == "sweep-adaptivity":
        rows = _read_csv(path / "adaptivity.csv")
        med = {}
        for r in rows:
            med.setdefault(r["scheme"], {}).setdefault(r["k"], []).append(r)
        summary["medians"] = {
            scheme: {k: {"tpr": _median([float(x["tpr"]) for x in rs]),
                         "fpr": _median([float(x["fpr"]) for x in rs]),
                         "seeds": len(rs)}
                     for k, rs in sorted(by_k.items(), key=lambda kv: int(kv[0]))}
            for scheme, by_k in sorted(med.items())
        }
    return summary


def _read_csv(path):
    import csv
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _table(summary: dict, name: str) -> list[str]:
    kind = summary["kind"]
    lines = [f"[{name}] {kind}"]
    if kind == "simulate":
        m = summary["metrics"]
        c = summary["comms"]
        lines.append(f"  flagged fraction   {m['flagged_fraction']:.4f}")
        if "auc" in m:
            lines.append(f"  AUC                {m['auc']:.4f}")
            lines.append(f"  TPR / FPR          {m['tpr']:.4f} / {m['fpr']:.4f}")
        lines.append(f"  bootstrap RMSE     {summary['bootstrap_rmse']:.4f}")
        lines.append(f"  retrain days       {summary['retrain_days']}")
        lines.append(f"  uplink/sensor      {c['uplink_messages_per_sensor']}")
        lines.append(f"  downlink updates   {c['downlink_updates']}")
        lines.append(f"  sensor-to-sensor   {c['sensor_to_sensor_messages']}")
    elif kind == "generate":
        lines.append(f"  shape {summary['shape']}, {summary['positives']} labeled slots, "
                     f"{summary['injections']} injections")
    elif kind == "sweep-heatmap":
        lines.append("  mu_v \\ var_v " + " ".join(f"{v:>8g}" for v in summary["var_v"]))
        for mu, row in zip(summary["mu_v"], summary["auc"]):
            lines.append(f"  {mu:>12g} " + " ".join(f"{a:8.4f}" for a in row))
    elif kind == "sweep-frequency":
        for k, a in zip(summary["k"], summary["auc"]):
            lines.append(f"  K={k:<5d} AUC {a:.4f}")
        lines.append(f"  AUC range {summary['auc_range']:.4f}")
    elif kind == "sweep-adaptivity":
        lines.append(f"  {'scheme':<12} {'K':>5} {'median TPR':>11} {'median FPR':>11} {'seeds':>6}")
        for scheme, by_k in summary["medians"].items():
            for k, v in by_k.items():
                lines.append(f"  {scheme:<12} {k:>5} {v['tpr']:11.4f} {v['fpr']:11.4f} {v['seeds']:6d}")
    return lines


def cmd_report(args) -> int:
    root = Path(args.out_dir)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return EXIT_INCOMPLETE
    if (root / MANIFEST).exists():
        runs = [root]
    else:
        runs = sorted(p for p in root.iterdir() if p.is_dir() and (p / MANIFEST).exists())
        if not runs:
            print(f"error: {root} holds no completed run (missing {MANIFEST})", file=sys.stderr)
            return EXIT_INCOMPLETE
    summaries = {}
    problems = []
    for run in runs:
        try:
            manifest = _read_manifest(run)
            summaries[run] = build_summary(run, manifest)
        except IncompleteRun as exc:
            problems.append(str(exc))
        except FileNotFoundError as exc:
            problems.append(str(exc))
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INCOMPLETE
    lines = []
    for run, summary in summaries.items():
        name = "." if run == root else run.name
        lines.extend(_table(summary, name))
        text = json.dumps(summary, indent=1, sort_keys=True) + "\n"
        _atomic_write(run / "summary.json", text)
    if len(summaries) > 1:
        combined = {run.name: s for run, s in summaries.items()}
        for s in combined.values():
            s.pop("config", None)
        _atomic_write(root / "summary.json", json.dumps(combined, indent=1, sort_keys=True) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ------------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsnad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wsnad {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="JSON config file or a run manifest")
        p.add_argument("--seed", type=int, default=None,
                       help="override every module seed (derived as seed + hash of module tag)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. --set signal.days=30")

    p = sub.add_parser("generate", help="write a labeled synthetic dataset")
    common(p)
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="run the sensor/cloud simulation")
    common(p)
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run an evaluation sweep")
    common(p)
    p.add_argument("kind", choices=sorted(SWEEP_FILES))
    p.add_argument("out_dir")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize completed run directories")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
