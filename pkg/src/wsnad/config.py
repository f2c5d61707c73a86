"""JSON run configuration: parsing, validation, overrides and seed derivation.

See ``docs/formats.md`` for the schema. Every field error names its dotted
path (``signal.days``); syntax errors carry line and column.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import autoencoder as ae
from .cloud import RetrainPolicy
from .datagen import AnomalySpec, SignalConfig
from .errors import ContractError
from .seeding import derive_seed
from .sim import SimConfig

CONFIG_FORMAT_VERSION = 1
MODULE_TAGS = {"signal": "signal", "anomalies": "anomalies", "training": "training", "sim": "sim"}

REQUIRED = ("format_version", "seed", "bootstrap_days", "signal.sensors", "signal.days",
            "signal.readings_per_day", "network.hidden_dim")

SECTION_FIELDS = {
    "signal": {"sensors", "days", "readings_per_day", "diurnal_amplitude", "noise_std",
               "sensor_offset_std", "drift_per_day", "noise_ar", "seed"},
    "anomalies": {"kind", "rate_per_day", "magnitude_mean", "magnitude_var", "burst_duration",
                  "label_rule", "seed"},
    "network": {"hidden_dim"},
    "training": {"lambda", "step_size", "epochs", "init_scale", "seed", "backtrack", "warm_start"},
    "policy": {"d_u", "scheme", "stats_window_days", "stats_source", "exclude_flagged"},
    "sweeps": {"heatmap", "frequency", "adaptivity"},
}
TOP_FIELDS = {"format_version", "seed", "threshold", "bootstrap_days", "bootstrap_epochs", "mode",
              "upload_drop_prob"} | set(SECTION_FIELDS)

SWEEP_DEFAULTS = {
    "heatmap": {"mu_v": [-0.3, -0.05, 0.05, 0.3], "var_v": [0.0, 0.0005, 0.001, 0.002],
                "rate_per_day": 20, "kind": "mixed"},
    "frequency": {"k": [10, 40, 80, 144], "mu_v": 0.1, "var_v": 0.01, "kind": "mixed"},
    "adaptivity": {"k": [10, 40], "seeds": list(range(10)), "mu_v": 0.5, "var_v": 0.02,
                   "d_u": 14, "drift_per_day": 0.01, "kind": "burst"},
}
SWEEP_FIELDS = {name: set(d) for name, d in SWEEP_DEFAULTS.items()}


class ConfigError(ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(("; ".join(where) + ": " if where else "") + message)
        self.field = field
        self.line = line


@dataclass
class RunConfig:
    sim: SimConfig
    sweeps: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _get(d, dotted):
    cur = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def _set(d, dotted, value):
    parts = dotted.split(".")
    cur = d
    for part in parts[:-1]:
        cur = cur.setdefault(part, {})
        if not isinstance(cur, dict):
            raise ConfigError("cannot override inside a non-object value", field=dotted)
    cur[parts[-1]] = value


def load_raw(path) -> dict:
    """Read a config file, or the ``config`` block of a run manifest."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", line=1)
    if "config" in data and "tool" in data:
        data = data["config"]
    return data


def parse_override(spec: str):
    """``a.b=value``; the value is parsed as JSON, falling back to a plain string."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form key=value")
    key, text = spec.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip(), value


def apply_overrides(raw: dict, overrides=(), seed: int | None = None) -> dict:
    raw = copy.deepcopy(raw)
    for spec in overrides:
        key, value = parse_override(spec)
        _set(raw, key, value)
    if seed is not None:
        raw["seed"] = int(seed)
        for section in ("signal", "anomalies", "training"):
            raw.setdefault(section, {})["seed"] = derive_seed(seed, MODULE_TAGS[section])
    return raw


def _check_fields(raw):
    for key in raw:
        if key not in TOP_FIELDS:
            raise ConfigError("unknown field", field=key)
    for section, allowed in SECTION_FIELDS.items():
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError("must be an object", field=section)
        for key in sub:
            if key not in allowed:
                raise ConfigError("unknown field", field=f"{section}.{key}")
    for name, sub in raw.get("sweeps", {}).items():
        if not isinstance(sub, dict):
            raise ConfigError("must be an object", field=f"sweeps.{name}")
        for key in sub:
            if key not in SWEEP_FIELDS[name]:
                raise ConfigError("unknown field", field=f"sweeps.{name}.{key}")
    for path in REQUIRED:
        try:
            _get(raw, path)
        except KeyError:
            raise ConfigError("missing required field", field=path) from None
    if raw["format_version"] != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {raw['format_version']!r}", field="format_version")


def _typed(raw, path, kind, default=None):
    try:
        value = _get(raw, path)
    except KeyError:
        return default
    if value is None and default is None:
        return None
    ok = {
        int: lambda v: isinstance(v, int) and not isinstance(v, bool),
        float: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        bool: lambda v: isinstance(v, bool),
        str: lambda v: isinstance(v, str),
        list: lambda v: isinstance(v, list),
    }[kind](value)
    if not ok:
        raise ConfigError(f"expected {kind.__name__}, got {value!r}", field=path)
    return kind(value) if kind is not list else value


def build(raw: dict) -> RunConfig:
    _check_fields(raw)
    seed = _typed(raw, "seed", int)

    def module_seed(section):
        return _typed(raw, f"{section}.seed", int, derive_seed(seed, MODULE_TAGS[section]))

    try:
        sig = SignalConfig(
            sensors=_typed(raw, "signal.sensors", int),
            days=_typed(raw, "signal.days", int),
            readings_per_day=_typed(raw, "signal.readings_per_day", int),
            diurnal_amplitude=_typed(raw, "signal.diurnal_amplitude", float, 1.0),
            noise_std=_typed(raw, "signal.noise_std", float, SignalConfig.noise_std),
            sensor_offset_std=_typed(raw, "signal.sensor_offset_std", float, SignalConfig.sensor_offset_std),
            drift_per_day=_typed(raw, "signal.drift_per_day", float, 0.0),
            noise_ar=_typed(raw, "signal.noise_ar", float, SignalConfig.noise_ar),
            seed=module_seed("signal"),
        )
    except ContractError as exc:
        raise ConfigError(str(exc), field="signal") from exc
    try:
        dur = _typed(raw, "anomalies.burst_duration", list, [5, 30])
        if len(dur) != 2:
            raise ConfigError("expected [min, max]", field="anomalies.burst_duration")
        anomalies = AnomalySpec(
            kind=_typed(raw, "anomalies.kind", str, "burst"),
            rate_per_day=_typed(raw, "anomalies.rate_per_day", int, 0),
            magnitude_mean=_typed(raw, "anomalies.magnitude_mean", float, 0.1),
            magnitude_var=_typed(raw, "anomalies.magnitude_var", float, 0.01),
            burst_duration=tuple(dur),
            label_rule=_typed(raw, "anomalies.label_rule", str, "all"),
            seed=module_seed("anomalies"),
        )
    except ContractError as exc:
        raise ConfigError(str(exc), field="anomalies") from exc
    try:
        shape = ae.NetworkShape(sig.readings_per_day, _typed(raw, "network.hidden_dim", int))
    except ContractError as exc:
        raise ConfigError(str(exc), field="network.hidden_dim") from exc
    d = ae.TrainingConfig()
    try:
        training = ae.TrainingConfig(
            lam=_typed(raw, "training.lambda", float, d.lam),
            step_size=_typed(raw, "training.step_size", float, d.step_size),
            epochs=_typed(raw, "training.epochs", int, d.epochs),
            init_scale=_typed(raw, "training.init_scale", float, d.init_scale),
            seed=module_seed("training"),
            backtrack=_typed(raw, "training.backtrack", bool, d.backtrack),
            warm_start=_typed(raw, "training.warm_start", bool, d.warm_start),
        )
    except ContractError as exc:
        raise ConfigError(str(exc), field="training") from exc
    p = RetrainPolicy()
    try:
        policy = RetrainPolicy(
            d_u=_typed(raw, "policy.d_u", int, p.d_u),
            scheme=_typed(raw, "policy.scheme", str, p.scheme),
            stats_window_days=_typed(raw, "policy.stats_window_days", int, None),
            stats_source=_typed(raw, "policy.stats_source", str, p.stats_source),
            exclude_flagged=_typed(raw, "policy.exclude_flagged", bool, p.exclude_flagged),
        )
    except ContractError as exc:
        raise ConfigError(str(exc), field="policy") from exc
    try:
        sim = SimConfig(
            signal=sig, anomalies=anomalies, shape=shape, training=training, policy=policy,
            threshold=_typed(raw, "threshold", float, 2.0),
            bootstrap_days=_typed(raw, "bootstrap_days", int),
            bootstrap_epochs=_typed(raw, "bootstrap_epochs", int, None),
            mode=_typed(raw, "mode", str, "batch"),
            upload_drop_prob=_typed(raw, "upload_drop_prob", float, 0.0),
            seed=derive_seed(seed, MODULE_TAGS["sim"]),
        )
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    sweeps = {}
    for name, defaults in SWEEP_DEFAULTS.items():
        merged = dict(defaults)
        merged.update(raw.get("sweeps", {}).get(name, {}))
        sweeps[name] = merged
    return RunConfig(sim, sweeps, raw)


def load(path, overrides=(), seed: int | None = None) -> RunConfig:
    return build(apply_overrides(load_raw(path), overrides, seed))


def resolved(cfg: RunConfig) -> dict:
    """Fully expanded config (all defaults and derived seeds filled in)."""
    s = cfg.sim
    out = copy.deepcopy(cfg.raw)
    out["signal"] = asdict(s.signal)
    out["anomalies"] = {**asdict(s.anomalies), "burst_duration": list(s.anomalies.burst_duration)}
    out["network"] = {"hidden_dim": s.shape.hidden_dim}
    t = asdict(s.training)
    t["lambda"] = t.pop("lam")
    out["training"] = t
    out["policy"] = asdict(s.policy)
    out.update(threshold=s.threshold, bootstrap_days=s.bootstrap_days,
               bootstrap_epochs=s.bootstrap_epochs, mode=s.mode, upload_drop_prob=s.upload_drop_prob)
    out["sweeps"] = copy.deepcopy(cfg.sweeps)
    return out
