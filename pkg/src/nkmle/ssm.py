"""Additive-Gaussian state-space models.

A model is a mean function plus a noise covariance. Mean functions accept a
single state or a stack of states with shape (..., n_x) so that the UKF can
push all sigma points through in one call; analytic and neural functions
share that calling convention and are interchangeable everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from . import mlp
from .errors import BadValue, DimensionMismatch
from .numerics import spd, taylor_matrix_exp

MeanFn = Callable[[NDArray[np.float64]], NDArray[np.float64]]

RADAR_POSITIONS = ((0.0, 0.0), (150.0, 0.0))
BILATERATION_PRIOR_MEAN = (100.0, 1.0, 0.0, 2.0)
BILATERATION_PRIOR_VAR = (1.0, 0.1, 1.0, 0.1)
LORENZ_PRIOR_MEAN = (1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# analytic mean functions
# ---------------------------------------------------------------------------


def ncv_transition(x: NDArray[np.float64], tau: float) -> NDArray[np.float64]:
    """Nearly-constant-velocity step for states [px, vx, py, vy]."""
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    out[..., 0] += tau * x[..., 1]
    out[..., 2] += tau * x[..., 3]
    return out


def ncv_matrix(tau: float) -> NDArray[np.float64]:
    F = np.eye(4)
    F[0, 1] = tau
    F[2, 3] = tau
    return F


def ncv_process_cov(sigma_u_sq: float, tau: float) -> NDArray[np.float64]:
    """Continuous white-noise-acceleration covariance, one block per axis."""
    if not sigma_u_sq > 0:
        raise ValueError("sigma_u_sq must be positive")
    block = sigma_u_sq * np.array([[tau**3 / 3.0, tau**2 / 2.0], [tau**2 / 2.0, tau]])
    Q = np.zeros((4, 4))
    Q[:2, :2] = block
    Q[2:, 2:] = block
    return spd(Q)


def bilateration_h(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Ranges from the two radars at (0, 0) and (150, 0)."""
    x = np.asarray(x, dtype=np.float64)
    px, py = x[..., 0], x[..., 2]
    return np.stack(
        [np.hypot(px - ax, py - ay) for ax, ay in RADAR_POSITIONS], axis=-1
    )


def lorenz_A(x: NDArray[np.float64]) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    x1 = x[..., 0]
    A = np.zeros(x.shape[:-1] + (3, 3))
    A[..., 0, 0] = -10.0
    A[..., 0, 1] = 10.0
    A[..., 1, 0] = 28.0
    A[..., 1, 1] = -1.0
    A[..., 1, 2] = -x1
    A[..., 2, 1] = x1
    A[..., 2, 2] = -8.0 / 3.0
    return A


def lorenz_f(x: NDArray[np.float64], dt: float, j_terms: int) -> NDArray[np.float64]:
    """x_{k+1} = F(x_k) x_k with F the J-term Taylor series of exp(A(x_k) dt)."""
    x = np.asarray(x, dtype=np.float64)
    F = taylor_matrix_exp(lorenz_A(x), dt, j_terms)
    return (F @ x[..., None])[..., 0]


def spherical_h(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Distance of the state from the origin, as a length-1 measurement."""
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(np.sum(x * x, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# neural mean functions
# ---------------------------------------------------------------------------


class NeuralMean:
    """Eval-mode network wrapped as a mean function.

    With ``delta=True`` the network models the increment, f(x) = x + net(x).
    Optional ``input_shift``/``input_scale`` standardize states before the
    first layer (off unless the trainer was asked to normalize).
    """

    def __init__(
        self,
        params: mlp.MlpParams,
        delta: bool,
        input_shift: Optional[NDArray[np.float64]] = None,
        input_scale: Optional[NDArray[np.float64]] = None,
    ):
        if delta and params.in_dim != params.out_dim:
            raise DimensionMismatch("delta parameterization needs in_dim == out_dim")
        self.params = params
        self.delta = delta
        self.input_shift = None if input_shift is None else np.asarray(input_shift, dtype=np.float64)
        self.input_scale = None if input_scale is None else np.asarray(input_scale, dtype=np.float64)

    def network_output(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.params.in_dim:
            raise DimensionMismatch(f"state dim {x.shape[-1]} != in_dim {self.params.in_dim}")
        u = x
        if self.input_shift is not None:
            u = (u - self.input_shift) / self.input_scale
        lead = u.shape[:-1]
        y = mlp.predict(self.params, u.reshape(-1, self.params.in_dim))
        return y.reshape(lead + (self.params.out_dim,))

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        y = self.network_output(x)
        return np.asarray(x, dtype=np.float64) + y if self.delta else y


def neural_dynamic_mean(p: mlp.MlpParams, x: NDArray[np.float64]) -> NDArray[np.float64]:
    return NeuralMean(p, delta=True)(x)


def neural_measurement_mean(p: mlp.MlpParams, x: NDArray[np.float64]) -> NDArray[np.float64]:
    return NeuralMean(p, delta=False)(x)


# ---------------------------------------------------------------------------
# model containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mean: NDArray[np.float64]
    cov: NDArray[np.float64]

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if not np.all(np.isfinite(mean)):
            raise ValueError("prior mean must be finite")
        cov = spd(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch("prior mean / covariance dims disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True, eq=False)
class DynamicModel:
    mean_fn: MeanFn
    noise_cov: NDArray[np.float64]

    def __post_init__(self):
        object.__setattr__(self, "noise_cov", spd(self.noise_cov))


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    mean_fn: MeanFn
    noise_cov: NDArray[np.float64]

    def __post_init__(self):
        object.__setattr__(self, "noise_cov", spd(self.noise_cov))


SCENARIOS = ("bilateration", "lorenz")


@dataclass(frozen=True)
class ScenarioConfig:
    """Generative model and dataset sizes for one of the two scenarios.

    Bilateration uses ``tau``, ``sigma_u_sq`` and ``sigma_r_sq``. Lorenz uses
    ``dt``, ``j_terms``, ``r`` (measurement noise std), ``nu`` = q^2 / r^2 and
    ``gamma_sq`` (prior variance).
    """

    scenario: str = "bilateration"
    T: int = 50
    M_train: int = 1000
    M_test: int = 200
    seed: int = 0
    tau: float = 0.5
    sigma_u_sq: float = 1e-3
    sigma_r_sq: float = 1e-3
    dt: float = 0.02
    j_terms: int = 5
    r: float = 1e-3
    nu: float = 0.01
    gamma_sq: float = 1e-2

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise BadValue(f"unknown scenario {self.scenario!r}")
        if self.T < 1:
            raise BadValue("T must be >= 1")
        if self.M_train < 0 or self.M_test < 0:
            raise BadValue("dataset sizes must be >= 0")
        for name in ("tau", "sigma_u_sq", "sigma_r_sq", "dt", "r", "nu", "gamma_sq"):
            if not getattr(self, name) > 0:
                raise BadValue(f"{name} must be positive")
        if self.j_terms < 1:
            raise BadValue("j_terms must be >= 1")

    @property
    def n_x(self) -> int:
        return 4 if self.scenario == "bilateration" else 3

    @property
    def n_z(self) -> int:
        return 2 if self.scenario == "bilateration" else 1

    @property
    def q_sq(self) -> float:
        return self.nu * self.r**2

    def prior(self) -> GaussianPrior:
        if self.scenario == "bilateration":
            return GaussianPrior(np.array(BILATERATION_PRIOR_MEAN), np.diag(BILATERATION_PRIOR_VAR))
        return GaussianPrior(np.array(LORENZ_PRIOR_MEAN), self.gamma_sq * np.eye(3))

    def process_cov(self) -> NDArray[np.float64]:
        if self.scenario == "bilateration":
            return ncv_process_cov(self.sigma_u_sq, self.tau)
        return spd(self.q_sq * np.eye(3))

    def measurement_cov(self) -> NDArray[np.float64]:
        if self.scenario == "bilateration":
            return spd(self.sigma_r_sq * np.eye(2))
        return spd(np.array([[self.r**2]]))

    def transition_fn(self) -> MeanFn:
        if self.scenario == "bilateration":
            tau = self.tau
            return lambda x: ncv_transition(x, tau)
        dt, J = self.dt, self.j_terms
        return lambda x: lorenz_f(x, dt, J)

    def measurement_fn(self) -> MeanFn:
        return bilateration_h if self.scenario == "bilateration" else spherical_h

    def dynamic_model(self) -> DynamicModel:
        return DynamicModel(self.transition_fn(), self.process_cov())

    def measurement_model(self) -> MeasurementModel:
        return MeasurementModel(self.measurement_fn(), self.measurement_cov())

    # header round-trip for the container format; repr() keeps floats exact
    def to_header(self) -> dict[str, str]:
        return {f.name: repr(getattr(self, f.name)) if f.type != "str" else getattr(self, f.name)
                for f in fields(self)}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "ScenarioConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in header:
                continue
            raw = header[f.name]
            kw[f.name] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
        return cls(**kw)

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)
