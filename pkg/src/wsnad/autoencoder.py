"""Single-hidden-layer sigmoid autoencoder trained by full-batch gradient descent.

Layer convention: ``w_hidden`` maps the M inputs to the hidden layer
(shape hidden x M), ``w_output`` maps the hidden layer back to M outputs
(shape M x hidden). Both layers use the logistic sigmoid, so inputs are
expected in [0, 1].
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TrainingDiverged

MODEL_MAGIC = b"WSAE"
MODEL_VERSION = 1


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    hidden_dim: int

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ContractError(f"dimensions must be positive, got {self}")
        if self.hidden_dim >= self.input_dim:
            raise ContractError(
                f"hidden_dim ({self.hidden_dim}) must be smaller than input_dim ({self.input_dim})"
            )

    @property
    def compression_ratio(self) -> float:
        return 1.0 - self.hidden_dim / self.input_dim


@dataclass(frozen=True, eq=False)
class ModelParams:
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_output: np.ndarray
    b_output: np.ndarray

    def __post_init__(self):
        h, m = self.w_hidden.shape
        if self.b_hidden.shape != (h,) or self.w_output.shape != (m, h) or self.b_output.shape != (m,):
            raise ContractError(
                "inconsistent parameter shapes: "
                f"w_hidden {self.w_hidden.shape}, b_hidden {self.b_hidden.shape}, "
                f"w_output {self.w_output.shape}, b_output {self.b_output.shape}"
            )

    @property
    def shape(self) -> NetworkShape:
        h, m = self.w_hidden.shape
        return NetworkShape(m, h)

    def arrays(self):
        return (self.w_hidden, self.b_hidden, self.w_output, self.b_output)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def weight_square_sum(self) -> float:
        return float(np.sum(self.w_hidden**2) + np.sum(self.w_output**2))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, shape: NetworkShape, vec) -> "ModelParams":
        m, h = shape.input_dim, shape.hidden_dim
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != 2 * m * h + m + h:
            raise ContractError(f"flat vector of length {vec.size} does not match {shape}")
        i = 0
        w1 = vec[i : i + h * m].reshape(h, m); i += h * m
        b1 = vec[i : i + h]; i += h
        w2 = vec[i : i + m * h].reshape(m, h); i += m * h
        b2 = vec[i : i + m]
        return cls(w1.copy(), b1.copy(), w2.copy(), b2.copy())

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.equals(other)

    __hash__ = None


@dataclass(frozen=True)
class TrainingConfig:
    lam: float = 1e-4
    step_size: float = 0.5
    epochs: int = 500
    init_scale: float = 0.05
    seed: int = 0
    # halve the step until the cost does not increase (at most 20 times)
    backtrack: bool = True
    # retrain from the current params (True) or from a fresh seeded init
    warm_start: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError("lambda must be >= 0")
        if self.step_size < 0:
            raise ContractError("step_size must be >= 0")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.init_scale <= 0:
            raise ContractError("init_scale must be > 0")


@dataclass
class TrainResult:
    params: ModelParams
    cost_trace: list = field(default_factory=list)
    final_step: float = 0.0


def sigmoid(z):
    """Logistic function 1 / (1 + exp(-z)), overflow-free for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def _as_batch(samples, m: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("sample list must be a non-empty collection of vectors")
    if x.shape[1] != m:
        raise ContractError(f"sample length {x.shape[1]} does not match input_dim {m}")
    return x


def _forward_batch(params: ModelParams, x: np.ndarray):
    hidden = sigmoid(x @ params.w_hidden.T + params.b_hidden)
    output = sigmoid(hidden @ params.w_output.T + params.b_output)
    return hidden, output


def forward(params: ModelParams, x):
    """Return ``(hidden, output)`` activations for one sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.w_hidden.shape[1]:
        raise ContractError(
            f"input of shape {x.shape} does not match input_dim {params.w_hidden.shape[1]}"
        )
    hidden = sigmoid(params.w_hidden @ x + params.b_hidden)
    output = sigmoid(params.w_output @ hidden + params.b_output)
    return hidden, output


def reconstruct(params: ModelParams, samples) -> np.ndarray:
    """Batched reconstruction; rows of ``samples`` are days."""
    x = _as_batch(samples, params.w_hidden.shape[1])
    return _forward_batch(params, x)[1]


def forward_mac_count(shape: NetworkShape) -> int:
    """Multiply-accumulate operations in one forward pass."""
    return 2 * shape.input_dim * shape.hidden_dim


def _cost_from_output(params, x, output, lam):
    t = x.shape[0]
    recon = 0.5 * float(np.sum((output - x) ** 2)) / t
    return recon + 0.5 * lam * params.weight_square_sum()


def cost(params: ModelParams, samples, lam: float) -> float:
    x = _as_batch(samples, params.w_hidden.shape[1])
    _, output = _forward_batch(params, x)
    return _cost_from_output(params, x, output, lam)


def _gradient_from_activations(params, x, hidden, output, lam) -> ModelParams:
    t = x.shape[0]
    delta_out = (output - x) * output * (1.0 - output) / t
    g_w2 = delta_out.T @ hidden + lam * params.w_output
    g_b2 = delta_out.sum(axis=0)
    delta_hid = (delta_out @ params.w_output) * hidden * (1.0 - hidden)
    g_w1 = delta_hid.T @ x + lam * params.w_hidden
    g_b1 = delta_hid.sum(axis=0)
    return ModelParams(g_w1, g_b1, g_w2, g_b2)


def gradient(params: ModelParams, samples, lam: float) -> ModelParams:
    """Backpropagated gradient of :func:`cost`; the weight decay term skips biases."""
    x = _as_batch(samples, params.w_hidden.shape[1])
    hidden, output = _forward_batch(params, x)
    return _gradient_from_activations(params, x, hidden, output, lam)


def init_params(shape: NetworkShape, init_scale: float, seed: int) -> ModelParams:
    if init_scale <= 0:
        raise ContractError("init_scale must be > 0")
    rng = np.random.default_rng(seed)
    m, h = shape.input_dim, shape.hidden_dim
    w1 = rng.uniform(-init_scale, init_scale, size=(h, m))
    w2 = rng.uniform(-init_scale, init_scale, size=(m, h))
    return ModelParams(w1, np.zeros(h), w2, np.zeros(m))


def _step(params: ModelParams, grad: ModelParams, step: float) -> ModelParams:
    return ModelParams(*(p - step * g for p, g in zip(params.arrays(), grad.arrays())))


def train(params: ModelParams, samples, config: TrainingConfig) -> TrainResult:
    """Run ``config.epochs`` full-batch gradient steps starting from ``params``.

    With ``config.backtrack`` a step that would raise the cost is retried at
    half the size, up to 20 times; if no trial step is accepted the epoch
    leaves the parameters unchanged. The accepted step size carries over to
    later epochs. ``cost_trace[0]`` is the starting cost and ``cost_trace[k]``
    the cost after epoch k.
    """
    x = _as_batch(samples, params.w_hidden.shape[1])
    lam = config.lam
    step = config.step_size
    hidden, output = _forward_batch(params, x)
    current = _cost_from_output(params, x, output, lam)
    if not np.isfinite(current):
        raise TrainingDiverged(0, current)
    trace = [current]
    for epoch in range(1, config.epochs + 1):
        grad = _gradient_from_activations(params, x, hidden, output, lam)
        halvings = 0
        while True:
            cand = _step(params, grad, step)
            c_hidden, c_output = _forward_batch(cand, x)
            c_cost = _cost_from_output(cand, x, c_output, lam)
            if not config.backtrack or c_cost <= current:
                break
            if halvings == 20:
                cand = None
                break
            step *= 0.5
            halvings += 1
        if cand is not None:
            if not np.isfinite(c_cost) or not cand.is_finite():
                raise TrainingDiverged(epoch, c_cost)
            params, hidden, output, current = cand, c_hidden, c_output, c_cost
        trace.append(current)
    return TrainResult(params, trace, step)


# ---------------------------------------------------------------- serialization
#
# Layout (little endian):
#   bytes 0-3   magic b"WSAE"
#   bytes 4-7   uint32 format version
#   uint32 input_dim, uint32 hidden_dim
#   float64 w_hidden (row-major), b_hidden, w_output (row-major), b_output


def params_to_bytes(params: ModelParams) -> bytes:
    shape = params.shape
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", MODEL_VERSION))
    buf.write(struct.pack("<II", shape.input_dim, shape.hidden_dim))
    for a in params.arrays():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def params_from_bytes(data: bytes) -> ModelParams:
    if len(data) < 16 or data[:4] != MODEL_MAGIC:
        raise ContractError("not a serialized model (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != MODEL_VERSION:
        raise ContractError(f"unsupported model format version {version}")
    m, h = struct.unpack("<II", data[8:16])
    shape = NetworkShape(m, h)
    n = 2 * m * h + m + h
    if len(data) != 16 + 8 * n:
        raise ContractError("truncated or oversized model record")
    vec = np.frombuffer(data, dtype="<f8", offset=16, count=n).astype(np.float64)
    return ModelParams.from_flat(shape, vec)
