"""Three-layer perceptron with hand-written backpropagation and ADAM.

Topology (fixed)::

    x -> Linear(in, hidden) -> ReLU -> Dropout -> Linear(hidden, hidden)
      -> ReLU -> Linear(hidden, out) -> y

Parameters live in a single flat float64 buffer; ``W1`` .. ``b3`` are
read-only views into it. Keeping one buffer makes the ADAM update a handful of
vector operations instead of one per tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, EmptyBatch, StaleCache
from .numerics import SpdFactor

Mode = Literal["train", "eval"]

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@lru_cache(maxsize=64)
def _layout(in_dim: int, hidden_dim: int, out_dim: int):
    shapes = {
        "W1": (hidden_dim, in_dim),
        "b1": (hidden_dim,),
        "W2": (hidden_dim, hidden_dim),
        "b2": (hidden_dim,),
        "W3": (out_dim, hidden_dim),
        "b3": (out_dim,),
    }
    slices = {}
    start = 0
    for name in PARAM_NAMES:
        size = int(np.prod(shapes[name]))
        slices[name] = (slice(start, start + size), shapes[name])
        start += size
    return slices, start


def n_params(in_dim: int, hidden_dim: int, out_dim: int) -> int:
    return _layout(in_dim, hidden_dim, out_dim)[1]


@dataclass(frozen=True, eq=False)
class MlpParams:
    in_dim: int
    hidden_dim: int
    out_dim: int
    flat: NDArray[np.float64] = field(repr=False)
    dropout_rate: float = 0.1

    def __post_init__(self):
        expected = n_params(self.in_dim, self.hidden_dim, self.out_dim)
        flat = np.asarray(self.flat, dtype=np.float64)
        if flat.shape != (expected,):
            raise DimensionMismatch(f"flat buffer has shape {flat.shape}, expected ({expected},)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        flat = flat.copy() if flat.flags.writeable else flat
        flat.flags.writeable = False
        object.__setattr__(self, "flat", flat)

    def _view(self, name: str) -> NDArray[np.float64]:
        sl, shape = _layout(self.in_dim, self.hidden_dim, self.out_dim)[0][name]
        return self.flat[sl].reshape(shape)

    W1 = property(lambda self: self._view("W1"))
    b1 = property(lambda self: self._view("b1"))
    W2 = property(lambda self: self._view("W2"))
    b2 = property(lambda self: self._view("b2"))
    W3 = property(lambda self: self._view("W3"))
    b3 = property(lambda self: self._view("b3"))

    def arrays(self) -> dict[str, NDArray[np.float64]]:
        return {name: self._view(name) for name in PARAM_NAMES}

    def with_flat(self, flat: NDArray[np.float64]) -> "MlpParams":
        return MlpParams(self.in_dim, self.hidden_dim, self.out_dim, flat, self.dropout_rate)

    @classmethod
    def from_arrays(cls, arrays: dict, dropout_rate: float = 0.1) -> "MlpParams":
        W1 = np.asarray(arrays["W1"], dtype=np.float64)
        W3 = np.asarray(arrays["W3"], dtype=np.float64)
        hidden_dim, in_dim = W1.shape
        out_dim = W3.shape[0]
        slices, _ = _layout(in_dim, hidden_dim, out_dim)
        parts = []
        for name in PARAM_NAMES:
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != slices[name][1]:
                raise DimensionMismatch(f"{name} has shape {a.shape}, expected {slices[name][1]}")
            parts.append(a.ravel())
        return cls(in_dim, hidden_dim, out_dim, np.concatenate(parts), dropout_rate)

    @classmethod
    def zeros(cls, in_dim: int, hidden_dim: int, out_dim: int, dropout_rate: float = 0.1) -> "MlpParams":
        return cls(in_dim, hidden_dim, out_dim, np.zeros(n_params(in_dim, hidden_dim, out_dim)), dropout_rate)


def init_params(
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    rng: np.random.Generator,
    dropout_rate: float = 0.1,
) -> MlpParams:
    """Glorot-uniform weights (+-sqrt(6 / (fan_in + fan_out))), zero biases."""
    arrays = {}
    for name, (fan_out, fan_in) in (
        ("W1", (hidden_dim, in_dim)),
        ("W2", (hidden_dim, hidden_dim)),
        ("W3", (out_dim, hidden_dim)),
    ):
        denom = fan_in + fan_out
        limit = np.sqrt(6.0 / denom) if denom else 0.0
        arrays[name] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
    arrays["b1"] = np.zeros(hidden_dim)
    arrays["b2"] = np.zeros(hidden_dim)
    arrays["b3"] = np.zeros(out_dim)
    return MlpParams.from_arrays(arrays, dropout_rate)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    x: NDArray[np.float64]
    a1: NDArray[np.float64]
    mask: Optional[NDArray[np.float64]]  # kept/scale per unit, None in eval mode
    h1d: NDArray[np.float64]
    a2: NDArray[np.float64]
    h2: NDArray[np.float64]
    y: NDArray[np.float64]


def dropout_mask(
    shape: tuple[int, ...], rate: float, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Inverted-dropout mask: 0 for dropped units, 1/(1-rate) for kept ones."""
    kept = rng.random(shape) >= rate
    return kept * (1.0 / (1.0 - rate))


def forward(
    p: MlpParams,
    x: NDArray[np.float64],
    mode: Mode = "eval",
    rng: Optional[np.random.Generator] = None,
    mask: Optional[NDArray[np.float64]] = None,
) -> tuple[NDArray[np.float64], ForwardCache]:
    """Run the network on one input vector or a batch of shape (B, in_dim).

    In train mode a fresh dropout mask is drawn from ``rng`` unless ``mask``
    is supplied. Eval mode never touches an RNG.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != p.in_dim:
        raise DimensionMismatch(f"input shape {x.shape} incompatible with in_dim={p.in_dim}")

    a1 = X @ p.W1.T + p.b1
    h1 = np.maximum(a1, 0.0)
    if mode == "train" and (p.dropout_rate > 0.0 or mask is not None):
        if mask is None:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng")
            mask = dropout_mask(h1.shape, p.dropout_rate, rng)
        elif mask.shape != h1.shape:
            raise DimensionMismatch(f"mask shape {mask.shape} != {h1.shape}")
        h1d = h1 * mask
    elif mode in ("train", "eval"):
        mask = None
        h1d = h1
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a2 = h1d @ p.W2.T + p.b2
    h2 = np.maximum(a2, 0.0)
    Y = h2 @ p.W3.T + p.b3
    cache = ForwardCache(X, a1, mask, h1d, a2, h2, Y)
    return (Y[0] if single else Y), cache


def predict(p: MlpParams, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Eval-mode forward pass without keeping the cache."""
    return forward(p, x, "eval")[0]


def _as_factor(noise_cov) -> SpdFactor:
    return noise_cov if isinstance(noise_cov, SpdFactor) else SpdFactor(noise_cov)


def mahalanobis_loss(residuals: NDArray[np.float64], noise_cov) -> float:
    """sum_i r_i^T C^{-1} r_i. ``noise_cov`` may be a matrix or an SpdFactor."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim == 1:
        r = r[None, :]
    if r.shape[0] == 0:
        raise EmptyBatch("mahalanobis_loss needs at least one residual")
    factor = _as_factor(noise_cov)
    if r.shape[1] != factor.dim:
        raise DimensionMismatch(f"residual dim {r.shape[1]} != covariance dim {factor.dim}")
    return factor.quad_form_sum(r)


def loss_and_grad(
    p: MlpParams,
    cache: ForwardCache,
    targets: NDArray[np.float64],
    noise_cov,
) -> tuple[float, MlpParams]:
    """Mahalanobis loss of ``targets - y`` and its exact gradient w.r.t. ``p``."""
    T = np.asarray(targets, dtype=np.float64)
    if T.ndim == 1:
        T = T[None, :]
    if T.shape[0] == 0:
        raise EmptyBatch("empty batch")
    if T.shape[1] != p.out_dim:
        raise DimensionMismatch(f"target dim {T.shape[1]} != out_dim {p.out_dim}")
    if cache.y.shape != T.shape or cache.h2.shape[1] != p.hidden_dim or cache.x.shape[1] != p.in_dim:
        raise StaleCache("cache does not match this batch / parameter shapes")
    factor = _as_factor(noise_cov)

    r = T - cache.y
    qr = factor.solve_rows(r)
    loss = float(np.sum(r * qr))
    dy = -2.0 * qr

    dW3 = dy.T @ cache.h2
    db3 = dy.sum(axis=0)
    da2 = (dy @ p.W3) * (cache.a2 > 0.0)
    dW2 = da2.T @ cache.h1d
    db2 = da2.sum(axis=0)
    dh1 = da2 @ p.W2
    if cache.mask is not None:
        dh1 = dh1 * cache.mask
    da1 = dh1 * (cache.a1 > 0.0)
    dW1 = da1.T @ cache.x
    db1 = da1.sum(axis=0)

    flat = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2, dW3.ravel(), db3])
    return loss, p.with_flat(flat)


def backward(
    p: MlpParams,
    cache: ForwardCache,
    targets: NDArray[np.float64],
    noise_cov,
) -> MlpParams:
    return loss_and_grad(p, cache, targets, noise_cov)[1]


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: NDArray[np.float64]
    second_moment: NDArray[np.float64]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def zeros_like(cls, p: MlpParams, learning_rate: float = 1e-3, **kw) -> "AdamState":
        n = p.flat.size
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(p: MlpParams, g: MlpParams, s: AdamState) -> tuple[MlpParams, AdamState]:
    if g.flat.shape != p.flat.shape or s.first_moment.shape != p.flat.shape:
        raise DimensionMismatch("parameter, gradient and moment shapes disagree")
    t = s.step_count + 1
    m = s.beta1 * s.first_moment + (1.0 - s.beta1) * g.flat
    v = s.beta2 * s.second_moment + (1.0 - s.beta2) * (g.flat * g.flat)
    m_hat = m / (1.0 - s.beta1**t)
    v_hat = v / (1.0 - s.beta2**t)
    flat = p.flat - s.learning_rate * m_hat / (np.sqrt(v_hat) + s.epsilon)
    state = AdamState(m, v, t, s.learning_rate, s.beta1, s.beta2, s.epsilon)
    return p.with_flat(flat), state
