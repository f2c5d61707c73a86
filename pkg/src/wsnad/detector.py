"""Residuals, pooled per-slot residual statistics and the p-sigma decision rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

DEFAULT_P = 2.0


@dataclass(frozen=True, eq=False)
class ResidualStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ContractError(f"mu {self.mu.shape} and sigma {self.sigma.shape} must be equal-length vectors")
        if np.any(self.sigma < 0):
            raise ContractError("sigma entries must be >= 0")

    def __len__(self):
        return self.mu.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ResidualStats):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.sigma, other.sigma)

    __hash__ = None

    def to_dict(self):
        return {"mu": [float(v) for v in self.mu], "sigma": [float(v) for v in self.sigma]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu"], dtype=np.float64), np.asarray(d["sigma"], dtype=np.float64))


def check_threshold(p: float) -> float:
    if not p > 0:
        raise ContractError(f"detection threshold p must be > 0, got {p}")
    return float(p)


def residual(x, x_hat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ContractError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    return x - x_hat


def scores(r, stats: ResidualStats) -> np.ndarray:
    """Normalized deviation |r - mu| / sigma.

    A slot with sigma == 0 scores +inf when r != mu and 0 otherwise.
    Works on a single vector or any array whose last axis is the slot axis.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != len(stats):
        raise ContractError(f"residual length {r.shape[-1]} does not match stats length {len(stats)}")
    dev = np.abs(r - stats.mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = dev / stats.sigma
    zero = np.broadcast_to(stats.sigma == 0, out.shape)
    out = np.where(zero, np.where(dev > 0, np.inf, 0.0), out)
    return out


def detect(r, stats: ResidualStats, p: float) -> np.ndarray:
    """Flag slot m (1) when |r_m - mu_m| > p * sigma_m, else 0.

    Equality is not anomalous. sigma_m == 0 reduces to flagging any r_m != mu_m.
    """
    p = check_threshold(p)
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != len(stats):
        raise ContractError(f"residual length {r.shape[-1]} does not match stats length {len(stats)}")
    return (np.abs(r - stats.mu) > p * stats.sigma).astype(np.int8)


def compute_stats(residuals, exclude=None, previous: ResidualStats | None = None) -> ResidualStats:
    """Pooled per-slot mean and population standard deviation.

    ``residuals`` is any array whose last axis is the slot axis; all leading
    axes (sensor, day) are pooled. Entries whose ``exclude`` flag is 1 are
    left out of their slot. A slot with nothing retained keeps ``previous``
    stats for that slot (zero mean / zero sigma if ``previous`` is None).
    """
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0 or r.ndim == 0:
        raise ContractError("cannot compute statistics from an empty residual collection")
    m = r.shape[-1]
    r = r.reshape(-1, m)
    if exclude is None:
        mu = r.mean(axis=0)
        var = ((r - mu) ** 2).mean(axis=0)
        return ResidualStats(mu, np.sqrt(var))

    keep = np.asarray(exclude).reshape(-1, m) == 0
    if keep.shape != r.shape:
        raise ContractError(f"exclusion mask shape {keep.shape} does not match residuals {r.shape}")
    count = keep.sum(axis=0)
    safe = np.maximum(count, 1)
    mu = np.where(keep, r, 0.0).sum(axis=0) / safe
    var = np.where(keep, (r - mu) ** 2, 0.0).sum(axis=0) / safe
    sigma = np.sqrt(var)
    empty = count == 0
    if np.any(empty):
        if previous is not None:
            if len(previous) != m:
                raise ContractError("previous stats length does not match residuals")
            mu = np.where(empty, previous.mu, mu)
            sigma = np.where(empty, previous.sigma, sigma)
        else:
            mu = np.where(empty, 0.0, mu)
            sigma = np.where(empty, 0.0, sigma)
    return ResidualStats(mu, sigma)
