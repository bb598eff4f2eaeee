"""Experiment configuration files.

Flat ``key=value`` UTF-8 lines; ``#`` starts a comment. Only ``scenario`` and
``arm`` are required. Training hyper-parameters default to per-scenario
reference values, with separate rows for arms where the covariance is known
and arms where it is learned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import BadValue, MissingRequiredKey, UnknownKey
from .rng import derive_seed
from .ssm import SCENARIOS, ScenarioConfig
from .trainer import TrainConfig
from .ukf import UtParams

log = logging.getLogger(__name__)

ARMS = ("known_all", "known_fn_unknown_cov", "unknown_fn_known_cov", "unknown_all")
NEURAL_ARMS = ("unknown_fn_known_cov", "unknown_all")

# (hidden, learning rate, N_c, N_e, |B|); N_c is None for the known-cov rows
REFERENCE_HYPERPARAMS = {
    ("bilateration", "h", "K"): (256, 1e-3, None, 600, 160),
    ("bilateration", "h", "U"): (256, 1e-3, 10, 800, 160),
    ("bilateration", "f", "K"): (600, 1e-4, None, 150, 32),
    ("bilateration", "f", "U"): (600, 1e-4, 10, 150, 32),
    ("lorenz", "h", "K"): (400, 1e-3, None, 1500, 32),
    ("lorenz", "h", "U"): (400, 1e-3, 40, 3000, 32),
    ("lorenz", "f", "K"): (400, 1e-3, None, 300, 32),
    ("lorenz", "f", "U"): (400, 1e-3, 50, 2000, 32),
}
DEFAULT_DROPOUT = 0.1
DEFAULT_T = {"bilateration": 50, "lorenz": 25}


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _choice(options):
    def parse(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return raw
    return parse


def _opt_float(raw: str) -> Optional[float]:
    return None if raw.strip().lower() in ("", "none") else float(raw)


KEYS: dict[str, Callable[[str], object]] = {
    "scenario": _choice(SCENARIOS),
    "arm": _choice(ARMS),
    "seed": int,
    "data_seed": int,
    "T": int,
    "M_train": int,
    "M_test": int,
    "tau": float,
    "sigma_u_sq": float,
    "sigma_r_sq": float,
    "dt": float,
    "j_terms": int,
    "r": float,
    "nu": float,
    "gamma_sq": float,
    "ut_alpha": float,
    "ut_beta": float,
    "ut_kappa": float,
    "normalize_inputs": _bool,
    "epochs_total_mode": _bool,
    "early_stop_tol": _opt_float,
    "out_dir": str,
}
for _fn in ("f", "h"):
    KEYS.update({
        f"{_fn}_hidden": int,
        f"{_fn}_lr": float,
        f"{_fn}_n_coord": int,
        f"{_fn}_n_epochs": int,
        f"{_fn}_batch": int,
        f"{_fn}_dropout": float,
    })
REQUIRED = ("scenario", "arm")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    scenario: ScenarioConfig
    arm: str
    train_f: Optional[TrainConfig]
    train_h: Optional[TrainConfig]
    ut: UtParams
    seed: int
    out_dir: Optional[str] = None

    @property
    def neural(self) -> bool:
        return self.arm in NEURAL_ARMS


def parse_text(text: str, overrides: Optional[dict] = None) -> dict[str, object]:
    """Parse ``key=value`` lines into typed values, with line-numbered errors."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise BadValue(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in KEYS:
            raise UnknownKey(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise BadValue(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise BadValue(f"line {lineno}: bad value for {key}: {exc}") from None
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise UnknownKey(f"override: unknown key {key!r}")
        values[key] = value
    return values


def build_config(values: dict[str, object]) -> ExperimentConfig:
    for key in REQUIRED:
        if key not in values:
            raise MissingRequiredKey(f"missing required key {key!r}")
    name = values["scenario"]
    arm = values["arm"]
    seed = int(values.get("seed", 0))

    scen_kw = {k: values[k] for k in (
        "T", "M_train", "M_test", "tau", "sigma_u_sq", "sigma_r_sq",
        "dt", "j_terms", "r", "nu", "gamma_sq") if k in values}
    scen_kw.setdefault("T", DEFAULT_T[name])
    try:
        scenario = ScenarioConfig(name, seed=int(values.get("data_seed", seed)), **scen_kw)
        ut = UtParams(
            float(values.get("ut_alpha", 0.1)),
            float(values.get("ut_beta", 3.0)),
            float(values.get("ut_kappa", 0.0)),
        )
    except ValueError as exc:
        raise BadValue(str(exc)) from None

    train = {}
    if arm in NEURAL_ARMS:
        cov_row = "U" if arm == "unknown_all" else "K"
        for fn, kind, true_cov, stream in (
            ("f", "dynamic", scenario.process_cov(), 1),
            ("h", "measurement", scenario.measurement_cov(), 2),
        ):
            hidden, lr, n_coord, n_epochs, batch = REFERENCE_HYPERPARAMS[(name, fn, cov_row)]
            known_cov = cov_row == "K"
            try:
                train[fn] = TrainConfig(
                    n_coord=int(values.get(f"{fn}_n_coord", 1 if n_coord is None else n_coord)),
                    n_epochs=int(values.get(f"{fn}_n_epochs", n_epochs)),
                    batch_size=int(values.get(f"{fn}_batch", batch)),
                    learning_rate=float(values.get(f"{fn}_lr", lr)),
                    hidden_dim=int(values.get(f"{fn}_hidden", hidden)),
                    dropout_rate=float(values.get(f"{fn}_dropout", DEFAULT_DROPOUT)),
                    q_init=true_cov if known_cov else np.eye(true_cov.shape[0]),
                    seed=derive_seed(seed, stream),
                    target_kind=kind,
                    update_cov=not known_cov,
                    normalize_inputs=bool(values.get("normalize_inputs", False)),
                    epochs_total_mode=bool(values.get("epochs_total_mode", False)),
                    early_stop_tol=values.get("early_stop_tol"),
                )
            except ValueError as exc:
                raise BadValue(f"{fn} training config: {exc}") from None
    else:
        ignored = sorted(k for k in values if k[:2] in ("f_", "h_"))
        if ignored:
            log.warning("arm %s learns no functions; ignoring %s", arm, ", ".join(ignored))

    return ExperimentConfig(
        scenario=scenario,
        arm=arm,
        train_f=train.get("f"),
        train_h=train.get("h"),
        ut=ut,
        seed=seed,
        out_dir=values.get("out_dir"),
    )


def parse_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return build_config(parse_text(text, overrides))


def parse_config_text(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    return build_config(parse_text(text, overrides))
