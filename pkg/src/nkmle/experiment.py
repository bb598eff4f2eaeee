"""The four experiment arms, RMSE metrics and the stage artifacts.

Stages (generate -> train -> filter -> report) exchange data only through
files when driven from the CLI; :func:`run_experiment` chains them in memory
and optionally writes the same artifacts.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import container, mlp
from .config import ExperimentConfig
from .datagen import Dataset, generate_dataset, save_dataset
from .errors import DataError, LengthMismatch
from .ssm import DynamicModel, MeasurementModel, NeuralMean, ScenarioConfig
from .trainer import (
    TrainingReport,
    build_pairs,
    coordinate_ascent_train,
    known_predictor,
    update_cov_closed_form,
)
from .ukf import UtParams, filter_sequence

log = logging.getLogger(__name__)

ROLES = ("dynamic", "measurement")
CHECKPOINT_FILES = {"dynamic": "f.ckpt", "measurement": "h.ckpt"}
REPORT_FILES = {"dynamic": "f_report.csv", "measurement": "h_report.csv"}
FAILURE_MARKER = "FAILED"


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _errors(estimates, truths) -> NDArray[np.float64]:
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    if est.shape != tru.shape:
        raise LengthMismatch(f"estimates {est.shape} vs truths {tru.shape}")
    if est.ndim != 3 or est.shape[0] < 1:
        raise LengthMismatch("expected (N_test >= 1, T, n_x) arrays")
    return est - tru


def rmse_per_step(estimates, truths, normalize: bool = True) -> NDArray[np.float64]:
    """RMSE_k over sequences; ``normalize`` divides by n_x (per-component RMSE)."""
    e = _errors(estimates, truths)
    sq = np.sum(e * e, axis=2)  # (N, T)
    denom = e.shape[2] if normalize else 1
    return np.sqrt(sq.mean(axis=0) / denom)


def rmse_overall(estimates, truths, normalize: bool = True) -> float:
    e = _errors(estimates, truths)
    denom = e.shape[2] if normalize else 1
    return float(np.sqrt(np.mean(np.sum(e * e, axis=2)) / denom))


@dataclass
class RmseReport:
    per_step: list[float]
    overall: float
    per_step_unnormalized: list[float]
    overall_unnormalized: float
    n_test: int
    arm: str
    scenario: dict = field(default_factory=dict)
    jitter_count: int = 0

    @classmethod
    def from_estimates(cls, estimates, truths, arm: str, scenario: ScenarioConfig, jitter_count: int = 0):
        return cls(
            per_step=rmse_per_step(estimates, truths).tolist(),
            overall=rmse_overall(estimates, truths),
            per_step_unnormalized=rmse_per_step(estimates, truths, normalize=False).tolist(),
            overall_unnormalized=rmse_overall(estimates, truths, normalize=False),
            n_test=int(np.asarray(estimates).shape[0]),
            arm=arm,
            scenario=scenario.to_header(),
            jitter_count=jitter_count,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RmseReport":
        return cls(**json.loads(text))

    def summary(self) -> str:
        sc = self.scenario
        noise = (f"sigma_u_sq={sc.get('sigma_u_sq')} sigma_r_sq={sc.get('sigma_r_sq')}"
                 if sc.get("scenario") == "bilateration" else f"r={sc.get('r')}")
        return (f"scenario={sc.get('scenario')} T={sc.get('T')} {noise} arm={self.arm} "
                f"n_test={self.n_test} rmse={self.overall:.6g} "
                f"rmse_unnormalized={self.overall_unnormalized:.6g}")


# ---------------------------------------------------------------------------
# learned / known models and checkpoints
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ModelCheckpoint:
    """A mean function (analytic, rebuilt from the scenario, or neural) plus its covariance."""

    role: str
    cov: NDArray[np.float64]
    params: Optional[mlp.MlpParams] = None
    input_shift: Optional[NDArray[np.float64]] = None
    input_scale: Optional[NDArray[np.float64]] = None

    @property
    def function(self) -> str:
        return "analytic" if self.params is None else "neural"

    def mean_fn(self, scenario: ScenarioConfig):
        if self.params is None:
            return scenario.transition_fn() if self.role == "dynamic" else scenario.measurement_fn()
        return NeuralMean(self.params, delta=self.role == "dynamic",
                          input_shift=self.input_shift, input_scale=self.input_scale)

    def model(self, scenario: ScenarioConfig):
        cls = DynamicModel if self.role == "dynamic" else MeasurementModel
        return cls(self.mean_fn(scenario), self.cov)


def save_checkpoint(path, ckpt: ModelCheckpoint, scenario: ScenarioConfig) -> None:
    n = ckpt.cov.shape[0]
    header = {"kind": "checkpoint", "role": ckpt.role, "function": ckpt.function, "cov_dim": str(n)}
    arrays = {"cov": ckpt.cov}
    if ckpt.params is not None:
        p = ckpt.params
        header.update(in_dim=str(p.in_dim), hidden_dim=str(p.hidden_dim), out_dim=str(p.out_dim),
                      dropout_rate=repr(p.dropout_rate),
                      normalized="1" if ckpt.input_shift is not None else "0")
        arrays.update(p.arrays())
        if ckpt.input_shift is not None:
            arrays["input_shift"] = ckpt.input_shift
            arrays["input_scale"] = ckpt.input_scale
    header.update(scenario.to_header())
    container.save_container(path, header, arrays)


def load_checkpoint(path) -> ModelCheckpoint:
    header, arrays = container.load_container(path)
    if header.get("kind") != "checkpoint":
        raise DataError(f"{path}: expected kind=checkpoint, found {header.get('kind')!r}")
    role = header.get("role")
    if role not in ROLES:
        raise DataError(f"{path}: bad role {role!r}")
    n = container.header_int(header, "cov_dim")
    cov = container.take(arrays, "cov", (n, n))
    if header.get("function") == "analytic":
        return ModelCheckpoint(role, cov)
    i, h, o = (container.header_int(header, k) for k in ("in_dim", "hidden_dim", "out_dim"))
    shapes = {"W1": (h, i), "b1": (h,), "W2": (h, h), "b2": (h,), "W3": (o, h), "b3": (o,)}
    params = mlp.MlpParams.from_arrays(
        {k: container.take(arrays, k, s) for k, s in shapes.items()},
        float(header.get("dropout_rate", "0.1")),
    )
    shift = scale = None
    if header.get("normalized") == "1":
        shift = container.take(arrays, "input_shift", (i,))
        scale = container.take(arrays, "input_scale", (i,))
    return ModelCheckpoint(role, cov, params, shift, scale)


def _train_role(cfg: ExperimentConfig, train: Dataset, role: str):
    sc = cfg.scenario
    if not cfg.neural:
        if cfg.arm == "known_all":
            cov = sc.process_cov() if role == "dynamic" else sc.measurement_cov()
        else:
            # known functions: only the closed-form covariance step
            fn = sc.transition_fn() if role == "dynamic" else sc.measurement_fn()
            cov = update_cov_closed_form(build_pairs(train, role), known_predictor(fn, role))
        return ModelCheckpoint(role, cov), None
    tcfg = cfg.train_f if role == "dynamic" else cfg.train_h
    report = coordinate_ascent_train(train, tcfg)
    ckpt = ModelCheckpoint(role, report.final_cov, report.final_params,
                           report.input_shift, report.input_scale)
    return ckpt, report


def fit_models(cfg: ExperimentConfig, train: Dataset, threads: int = 1):
    """Returns {role: (checkpoint, TrainingReport | None)}; the two roles are independent."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = {role: pool.submit(_train_role, cfg, train, role) for role in ROLES}
            return {role: fut.result() for role, fut in futures.items()}
    return {role: _train_role(cfg, train, role) for role in ROLES}


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


def filter_dataset(
    scenario: ScenarioConfig,
    test: Dataset,
    dyn: DynamicModel,
    meas: MeasurementModel,
    ut: UtParams,
    threads: int = 1,
) -> tuple[NDArray[np.float64], int]:
    """Posterior means (M, T, n_x) for every test sequence and the total jitter count."""
    prior = scenario.prior()

    def run(i):
        return filter_sequence(prior, test.measurements[i], dyn, meas, ut)

    idx = range(test.M)
    if threads > 1 and test.M > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(run, idx))
    else:
        runs = [run(i) for i in idx]
    means = np.stack([r.means for r in runs]) if runs else np.zeros((0, test.T, scenario.n_x))
    jitter = sum(r.jitter.total for r in runs)
    if jitter:
        log.info("covariance jitter applied %d times", jitter)
    return means, jitter


def evaluate(cfg: ExperimentConfig, test: Dataset, models: dict, threads: int = 1):
    sc = cfg.scenario
    dyn = models["dynamic"].model(sc)
    meas = models["measurement"].model(sc)
    means, jitter = filter_dataset(sc, test, dyn, meas, cfg.ut, threads)
    report = RmseReport.from_estimates(means, test.states[:, 1:], cfg.arm, sc, jitter)
    return means, report


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def save_estimates(path, means: NDArray[np.float64], scenario: ScenarioConfig, arm: str) -> None:
    M, T, n = means.shape
    header = {"kind": "estimates", "arm": arm, "M": str(M), "T": str(T), "nx": str(n)}
    header.update(scenario.to_header())
    container.save_container(path, header, {"posterior_means": means})


def load_estimates(path) -> NDArray[np.float64]:
    header, arrays = container.load_container(path)
    if header.get("kind") != "estimates":
        raise DataError(f"{path}: expected kind=estimates")
    dims = tuple(container.header_int(header, k) for k in ("M", "T", "nx"))
    return container.take(arrays, "posterior_means", dims)


def write_training_outputs(out: Path, cfg: ExperimentConfig, fitted: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for role, (ckpt, report) in fitted.items():
        save_checkpoint(out / CHECKPOINT_FILES[role], ckpt, cfg.scenario)
        if report is not None:
            (out / REPORT_FILES[role]).write_text("\n".join(report.csv_lines()) + "\n", encoding="utf-8")


def write_rmse_csv(path, report: RmseReport) -> None:
    lines = ["k,rmse"] + [f"{k},{v!r}" for k, v in enumerate(report.per_step, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(eq=False)
class ExperimentResult:
    report: RmseReport
    estimates: NDArray[np.float64]
    checkpoints: dict
    training: dict  # role -> TrainingReport | None


def run_experiment(
    cfg: ExperimentConfig,
    threads: int = 1,
    out_dir=None,
    data: Optional[tuple[Dataset, Dataset]] = None,
) -> ExperimentResult:
    """Generate (unless ``data`` is given), fit the arm's models, filter the test split."""
    out = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        train, test = data if data is not None else generate_dataset(cfg.scenario, threads)
        if out is not None:
            save_dataset(out / "train.nkm", train)
            save_dataset(out / "test.nkm", test)
        fitted = fit_models(cfg, train, threads)
        if out is not None:
            write_training_outputs(out, cfg, fitted)
        models = {role: ckpt for role, (ckpt, _) in fitted.items()}
        means, report = evaluate(cfg, test, models, threads)
    except Exception as exc:
        if out is not None:
            (out / FAILURE_MARKER).write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    if out is not None:
        save_estimates(out / "estimates.nkm", means, cfg.scenario, cfg.arm)
        (out / "rmse_report.json").write_text(report.to_json(), encoding="utf-8")
    return ExperimentResult(
        report, means, models, {role: rep for role, (_, rep) in fitted.items()}
    )


__all__ = [
    "ExperimentResult",
    "ModelCheckpoint",
    "RmseReport",
    "TrainingReport",
    "evaluate",
    "filter_dataset",
    "fit_models",
    "load_checkpoint",
    "load_estimates",
    "rmse_overall",
    "rmse_per_step",
    "run_experiment",
    "save_checkpoint",
    "save_estimates",
]
