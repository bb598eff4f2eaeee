"""Additive-noise unscented Kalman filter with scaled sigma points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, NonPositivePivot
from .numerics import SpdFactor, cholesky, symmetrize
from .ssm import DynamicModel, GaussianPrior, MeanFn, MeasurementModel

JITTER = 1e-9


@dataclass(frozen=True)
class UtParams:
    alpha: float = 0.1
    beta: float = 3.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def lam(self, n: int) -> float:
        return self.alpha**2 * (n + self.kappa) - n


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: NDArray[np.float64]
    cov: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class SigmaSet:
    points: NDArray[np.float64]  # (2n + 1, n); row 0 is the mean
    w_mean: NDArray[np.float64]
    w_cov: NDArray[np.float64]


@dataclass
class JitterLog:
    """Counts covariance repairs so callers can report them."""

    posterior: int = 0
    innovation: int = 0

    @property
    def total(self) -> int:
        return self.posterior + self.innovation


def sigma_points(g: GaussianState, p: UtParams = UtParams()) -> SigmaSet:
    mu = np.asarray(g.mean, dtype=np.float64)
    n = mu.size
    lam = p.lam(n)
    c = n + lam
    if c == 0:
        raise ValueError("n + lambda must be non-zero")
    L = cholesky(c * np.asarray(g.cov))
    points = np.empty((2 * n + 1, n))
    points[0] = mu
    points[1:n + 1] = mu + L.T
    points[n + 1:] = mu - L.T
    w_mean = np.full(2 * n + 1, 1.0 / (2.0 * c))
    w_cov = w_mean.copy()
    w_mean[0] = lam / c
    w_cov[0] = lam / c + (1.0 - p.alpha**2 + p.beta)
    return SigmaSet(points, w_mean, w_cov)


def unscented_transform(
    s: SigmaSet, fn: MeanFn, additive_cov: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Push a sigma set through ``fn``; returns (mean, cov, cross_cov).

    ``cross_cov`` is the covariance between the input (centred on the set's
    mean point) and the output.
    """
    Y = np.asarray(fn(s.points), dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != s.points.shape[0]:
        raise DimensionMismatch(f"fn returned shape {Y.shape} for {s.points.shape[0]} points")
    additive_cov = np.asarray(additive_cov, dtype=np.float64)
    if additive_cov.shape != (Y.shape[1], Y.shape[1]):
        raise DimensionMismatch("additive covariance dim != output dim")
    mean = s.w_mean @ Y
    dY = Y - mean
    dX = s.points - s.points[0]
    cov = symmetrize((dY.T * s.w_cov) @ dY + additive_cov)
    cross = (dX.T * s.w_cov) @ dY
    return mean, cov, cross


def _spd_or_jitter(P: NDArray[np.float64], log: JitterLog) -> NDArray[np.float64]:
    P = symmetrize(P)
    try:
        cholesky(P)
        return P
    except NonPositivePivot:
        pass
    P = P + JITTER * np.eye(P.shape[0])
    cholesky(P)  # a second failure propagates
    log.posterior += 1
    return P


def _factor_innovation(S: NDArray[np.float64], log: JitterLog) -> SpdFactor:
    try:
        return SpdFactor(S)
    except NonPositivePivot:
        pass
    n = S.shape[0]
    S = S + (JITTER * np.trace(S) / n) * np.eye(n)
    factor = SpdFactor(S)
    log.innovation += 1
    return factor


def predict(prior: GaussianState, dyn: DynamicModel, p: UtParams = UtParams()) -> GaussianState:
    m, P, _ = unscented_transform(sigma_points(prior, p), dyn.mean_fn, dyn.noise_cov)
    return GaussianState(m, P)


def update(
    pred: GaussianState,
    z: NDArray[np.float64],
    meas: MeasurementModel,
    p: UtParams = UtParams(),
    log: JitterLog | None = None,
) -> GaussianState:
    log = JitterLog() if log is None else log
    s = sigma_points(pred, p)
    z_hat, S, C = unscented_transform(s, meas.mean_fn, meas.noise_cov)
    factor = _factor_innovation(S, log)
    # K = C S^{-1}  <=>  S K^T = C^T
    K = factor.solve(C.T).T
    innov = np.asarray(z, dtype=np.float64) - z_hat
    mean = pred.mean + K @ innov
    cov = _spd_or_jitter(pred.cov - K @ factor.matrix @ K.T, log)
    return GaussianState(mean, cov)


def ukf_step(
    prior: GaussianState,
    z: NDArray[np.float64],
    dyn: DynamicModel,
    meas: MeasurementModel,
    p: UtParams = UtParams(),
    log: JitterLog | None = None,
) -> GaussianState:
    """One predict/update cycle; sigma points are redrawn after prediction."""
    log = JitterLog() if log is None else log
    pred = predict(prior, dyn, p)
    pred = GaussianState(pred.mean, _spd_or_jitter(pred.cov, log))
    return update(pred, z, meas, p, log)


class FilterFailure(NonPositivePivot):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"filter failed at time step {step}: {cause}")
        self.step = step


@dataclass(eq=False)
class FilterRun:
    means: NDArray[np.float64]  # (T, n): posterior means for k = 1..T
    covs: NDArray[np.float64]   # (T, n, n)
    jitter: JitterLog = field(default_factory=JitterLog)

    def states(self) -> list[GaussianState]:
        return [GaussianState(m, P) for m, P in zip(self.means, self.covs)]


def filter_sequence(
    prior: GaussianPrior | GaussianState,
    z_seq: NDArray[np.float64],
    dyn: DynamicModel,
    meas: MeasurementModel,
    p: UtParams = UtParams(),
) -> FilterRun:
    z_seq = np.asarray(z_seq, dtype=np.float64)
    if z_seq.ndim == 1:
        z_seq = z_seq[:, None]
    T = z_seq.shape[0]
    if T < 1:
        raise ValueError("need at least one measurement")
    n = np.asarray(prior.mean).size
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    log = JitterLog()
    state = GaussianState(np.asarray(prior.mean, dtype=np.float64), np.asarray(prior.cov, dtype=np.float64))
    for k in range(T):
        try:
            state = ukf_step(state, z_seq[k], dyn, meas, p, log)
        except NonPositivePivot as exc:
            raise FilterFailure(k + 1, exc) from exc
        means[k] = state.mean
        covs[k] = state.cov
    return FilterRun(means, covs, log)
