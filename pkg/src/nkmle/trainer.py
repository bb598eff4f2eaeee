"""Coordinate-ascent maximum likelihood for one additive-Gaussian model.

The negative log-likelihood of N = M*T supervised pairs under a mean
function g and noise covariance C is, up to a constant,

    J(g, C) = N ln|C| + sum_n (y_n - g(u_n))^T C^{-1} (y_n - g(u_n)).

Training alternates two half-steps for ``n_coord`` outer iterations:

(a) ``n_epochs`` epochs of shuffled mini-batch ADAM on the quadratic term with
    C frozen (the log-determinant does not depend on the network);
(b) the exact minimizer in C, the mean outer product of the residuals.

The same code learns the dynamic model (inputs x_{k-1}, targets
x_k - x_{k-1}, network = increment) and the measurement model (inputs x_k,
targets z_k).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from numpy.typing import NDArray

from . import mlp
from .errors import EmptyDataset, NonFiniteLoss
from .numerics import SpdFactor, spd, symmetrize

log = logging.getLogger(__name__)

TargetKind = Literal["dynamic", "measurement"]
COV_JITTER = 1e-9

Predictor = Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass(frozen=True, eq=False)
class TrainConfig:
    n_coord: int = 10
    n_epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 1e-3
    hidden_dim: int = 64
    dropout_rate: float = 0.1
    q_init: Optional[NDArray[np.float64]] = None  # identity when None
    seed: int = 0
    target_kind: TargetKind = "dynamic"
    update_cov: bool = True           # False pins the covariance at q_init
    normalize_inputs: bool = False
    epochs_total_mode: bool = False   # split n_epochs across the outer loop
    early_stop_tol: Optional[float] = None

    def __post_init__(self):
        for name in ("n_coord", "n_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim < 0:
            raise ValueError("hidden_dim must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.target_kind not in ("dynamic", "measurement"):
            raise ValueError(f"unknown target_kind {self.target_kind!r}")

    @property
    def epochs_per_iteration(self) -> int:
        if self.epochs_total_mode:
            return max(1, self.n_epochs // self.n_coord)
        return self.n_epochs


@dataclass(frozen=True, eq=False)
class SupervisedPairs:
    inputs: NDArray[np.float64]   # (N, n_in)
    targets: NDArray[np.float64]  # (N, n_out)
    kind: TargetKind

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have equal counts")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def build_pairs(dataset, kind: TargetKind) -> SupervisedPairs:
    """Flatten M sequences into M*T pairs ordered by (i, k).

    ``dataset`` needs ``states`` (M, T+1, n_x) and ``measurements`` (M, T, n_z).
    """
    X = np.asarray(dataset.states, dtype=np.float64)
    Z = np.asarray(dataset.measurements, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0 or X.shape[1] < 2:
        raise EmptyDataset("need at least one sequence with T >= 1")
    M, T1, nx = X.shape
    if kind == "dynamic":
        inputs = X[:, :-1].reshape(-1, nx)
        targets = (X[:, 1:] - X[:, :-1]).reshape(-1, nx)
    elif kind == "measurement":
        inputs = X[:, 1:].reshape(-1, nx)
        targets = Z.reshape(M * (T1 - 1), -1)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return SupervisedPairs(np.ascontiguousarray(inputs), np.ascontiguousarray(targets), kind)


def known_predictor(fn: Callable, kind: TargetKind) -> Predictor:
    """Predictor of the pair targets for an analytic mean function."""
    if kind == "dynamic":
        return lambda u: fn(u) - u
    return fn


def network_predictor(params: mlp.MlpParams, shift=None, scale=None) -> Predictor:
    if shift is None:
        return lambda u: mlp.predict(params, u)
    return lambda u: mlp.predict(params, (u - shift) / scale)


def residual_covariance(residuals: NDArray[np.float64]) -> NDArray[np.float64]:
    """(1/N) sum r r^T, symmetrized, without any regularization."""
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if r.shape[0] == 0:
        raise EmptyDataset("no residuals")
    return symmetrize(r.T @ r / r.shape[0])


def update_cov_closed_form(pairs: SupervisedPairs, predict: Predictor) -> NDArray[np.float64]:
    """Closed-form covariance minimizer plus 1e-9 I so the result is always SPD."""
    if len(pairs) == 0:
        raise EmptyDataset("no pairs")
    r = pairs.targets - predict(pairs.inputs)
    C = residual_covariance(r)
    return spd(C + COV_JITTER * np.eye(C.shape[0]))


def objective(pairs: SupervisedPairs, predict: Predictor, cov) -> float:
    """Full-data negative log-likelihood N ln|C| + sum r^T C^{-1} r."""
    factor = cov if isinstance(cov, SpdFactor) else SpdFactor(cov)
    r = pairs.targets - predict(pairs.inputs)
    return len(pairs) * factor.log_det() + factor.quad_form_sum(r)


def update_theta(
    pairs: SupervisedPairs,
    params: mlp.MlpParams,
    cov_fixed,
    cfg: TrainConfig,
    rng: np.random.Generator,
    inputs: Optional[NDArray[np.float64]] = None,
    n_epochs: Optional[int] = None,
) -> mlp.MlpParams:
    """Mini-batch ADAM on sum r^T C^{-1} r with C frozen.

    ``inputs`` overrides ``pairs.inputs`` (used for normalized inputs).
    ADAM moments start from zero on every call.
    """
    if params.hidden_dim == 0:
        return params  # zero-map network: nothing to learn
    factor = cov_fixed if isinstance(cov_fixed, SpdFactor) else SpdFactor(cov_fixed)
    U = pairs.inputs if inputs is None else inputs
    Y = pairs.targets
    N = len(pairs)
    if N == 0:
        raise EmptyDataset("no pairs")
    B = min(cfg.batch_size, N)
    state = mlp.AdamState.zeros_like(params, cfg.learning_rate)
    epochs = cfg.epochs_per_iteration if n_epochs is None else n_epochs
    for epoch in range(epochs):
        order = rng.permutation(N)
        epoch_loss = 0.0
        for start in range(0, N, B):
            idx = order[start:start + B]
            _, cache = mlp.forward(params, U[idx], "train", rng)
            loss, grad = mlp.loss_and_grad(params, cache, Y[idx], factor)
            params, state = mlp.adam_step(params, grad, state)
            epoch_loss += loss
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(
                f"loss became non-finite in epoch {epoch + 1}; the learning rate "
                f"{cfg.learning_rate:g} is probably too high"
            )
    return params


@dataclass(eq=False)
class TrainingReport:
    nll_trace: list[float]             # J(theta_j, C_j) after each outer iteration
    theta_trace: list[float]           # J(theta_j, C_{j-1}) after each half-step (a)
    cov_trace: list[NDArray[np.float64]]
    final_params: mlp.MlpParams
    final_cov: NDArray[np.float64]
    initial_objective: float           # J(theta_0, C_0)
    input_shift: Optional[NDArray[np.float64]] = None
    input_scale: Optional[NDArray[np.float64]] = None
    wall_time: float = field(default=0.0, compare=False)
    kind: TargetKind = "dynamic"

    def csv_lines(self) -> list[str]:
        """``iter,nll,logdetQ,frobenius(Q)`` lines, one per outer iteration."""
        lines = ["iter,nll,logdetQ,frobQ"]
        for j, (nll, C) in enumerate(zip(self.nll_trace, self.cov_trace), start=1):
            lines.append(
                f"{j},{nll!r},{SpdFactor(C).log_det()!r},{float(np.linalg.norm(C))!r}"
            )
        return lines


def input_normalization(u: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    shift = u.mean(axis=0)
    scale = u.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return shift, scale


def coordinate_ascent_train(data, cfg: TrainConfig) -> TrainingReport:
    """Run the alternating fit; ``data`` is a dataset or prebuilt pairs."""
    t0 = time.perf_counter()
    pairs = data if isinstance(data, SupervisedPairs) else build_pairs(data, cfg.target_kind)
    if len(pairs) == 0:
        raise EmptyDataset("no pairs")
    n_in, n_out = pairs.inputs.shape[1], pairs.targets.shape[1]
    if cfg.target_kind == "dynamic" and n_in != n_out:
        raise ValueError("dynamic pairs must have equal input and target dims")

    rng = np.random.default_rng(cfg.seed)
    params = mlp.init_params(n_in, cfg.hidden_dim, n_out, rng, cfg.dropout_rate)
    cov = spd(np.eye(n_out) if cfg.q_init is None else cfg.q_init)

    shift = scale = None
    U = pairs.inputs
    if cfg.normalize_inputs:
        shift, scale = input_normalization(pairs.inputs)
        U = (pairs.inputs - shift) / scale

    def predictor(p):
        return lambda _u: mlp.predict(p, U)  # always evaluated on the training inputs

    nll_trace: list[float] = []
    theta_trace: list[float] = []
    cov_trace: list[NDArray[np.float64]] = []
    factor = SpdFactor(cov)
    initial = objective(pairs, predictor(params), factor)
    for j in range(1, cfg.n_coord + 1):
        params = update_theta(pairs, params, factor, cfg, rng, inputs=U)
        theta_trace.append(objective(pairs, predictor(params), factor))
        if not np.isfinite(theta_trace[-1]):
            raise NonFiniteLoss(f"objective became non-finite at outer iteration {j}")
        if cfg.update_cov:
            cov = update_cov_closed_form(pairs, predictor(params))
            factor = SpdFactor(cov)
        nll_trace.append(objective(pairs, predictor(params), factor))
        cov_trace.append(cov)
        log.info("%s iter %d/%d: nll %.6g", cfg.target_kind, j, cfg.n_coord, nll_trace[-1])
        if cfg.early_stop_tol is not None and j > 1:
            prev = nll_trace[-2]
            if abs(prev - nll_trace[-1]) <= cfg.early_stop_tol * max(1.0, abs(prev)):
                break

    return TrainingReport(
        nll_trace=nll_trace,
        theta_trace=theta_trace,
        cov_trace=cov_trace,
        final_params=params,
        final_cov=cov,
        initial_objective=initial,
        input_shift=shift,
        input_scale=scale,
        wall_time=time.perf_counter() - t0,
        kind=cfg.target_kind,
    )
