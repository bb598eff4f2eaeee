"""Ground-truth trajectory sampling and dataset files."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
from numpy.typing import NDArray

from . import container, rng
from .errors import DataError
from .numerics import cholesky
from .ssm import ScenarioConfig

Split = Literal["train", "test"]


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: NDArray[np.float64]        # (T + 1, n_x): x_0 .. x_T
    measurements: NDArray[np.float64]  # (T, n_z):     z_1 .. z_T

    @property
    def T(self) -> int:
        return self.measurements.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    states: NDArray[np.float64]        # (M, T + 1, n_x)
    measurements: NDArray[np.float64]  # (M, T, n_z)
    scenario: ScenarioConfig
    split: Split

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.scenario.T

    def __len__(self) -> int:
        return self.M

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.measurements[i])

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self[i] for i in range(self.M)]

    @classmethod
    def from_trajectories(cls, trajs: Iterable[Trajectory], scenario: ScenarioConfig, split: Split) -> "Dataset":
        trajs = list(trajs)
        nx, nz, T = scenario.n_x, scenario.n_z, scenario.T
        if trajs:
            states = np.stack([t.states for t in trajs])
            meas = np.stack([t.measurements for t in trajs])
        else:
            states = np.zeros((0, T + 1, nx))
            meas = np.zeros((0, T, nz))
        if states.shape[1:] != (T + 1, nx) or meas.shape[1:] != (T, nz):
            raise DataError("trajectories disagree with the scenario's T / n_x / n_z")
        return cls(states, meas, scenario, split)


def sample_trajectory(scenario: ScenarioConfig, index: int) -> Trajectory:
    """Draw trajectory ``index`` of the dataset defined by ``scenario``.

    Noise for trajectory i, step k comes from counters keyed by
    (scenario.seed, i, k, draw); correlated draws are chol(C) @ u.
    """
    T, nx, nz = scenario.T, scenario.n_x, scenario.n_z
    prior = scenario.prior()
    f = scenario.transition_fn()
    h = scenario.measurement_fn()
    Lp = cholesky(prior.cov)
    Lq = cholesky(scenario.process_cov())
    Lr = cholesky(scenario.measurement_cov())

    steps = np.arange(T + 1)
    u_state = rng.normals(scenario.seed, index, steps, rng.STREAM_STATE, nx)
    u_meas = rng.normals(scenario.seed, index, steps[1:], rng.STREAM_MEASUREMENT, nz)
    w = u_state[1:] @ Lq.T
    v = u_meas @ Lr.T

    states = np.empty((T + 1, nx))
    states[0] = prior.mean + Lp @ u_state[0]
    for k in range(1, T + 1):
        states[k] = f(states[k - 1]) + w[k - 1]
    measurements = h(states[1:]) + v
    return Trajectory(states, measurements)


def sample_trajectories(scenario: ScenarioConfig, indices: Iterable[int], threads: int = 1) -> list[Trajectory]:
    indices = list(indices)
    if threads > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda i: sample_trajectory(scenario, i), indices))
    return [sample_trajectory(scenario, i) for i in indices]


def generate_dataset(scenario: ScenarioConfig, threads: int = 1) -> tuple[Dataset, Dataset]:
    """Trajectories 0..M_train-1 form the train split, the next M_test the test split."""
    n_train, n_test = scenario.M_train, scenario.M_test
    train = sample_trajectories(scenario, range(n_train), threads)
    test = sample_trajectories(scenario, range(n_train, n_train + n_test), threads)
    return (
        Dataset.from_trajectories(train, scenario, "train"),
        Dataset.from_trajectories(test, scenario, "test"),
    )


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def dataset_header(ds: Dataset) -> dict[str, str]:
    sc = ds.scenario
    header = {
        "kind": "dataset",
        "split": ds.split,
        "M": str(ds.M),
        "T": str(sc.T),
        "nx": str(sc.n_x),
        "nz": str(sc.n_z),
    }
    header.update(sc.to_header())
    return header


def save_dataset(path, ds: Dataset) -> None:
    container.save_container(
        path, dataset_header(ds), {"states": ds.states, "measurements": ds.measurements}
    )


def load_dataset(path) -> Dataset:
    header, arrays = container.load_container(path)
    if header.get("kind") != "dataset":
        raise DataError(f"{path}: expected kind=dataset, found {header.get('kind')!r}")
    M, T = container.header_int(header, "M"), container.header_int(header, "T")
    nx, nz = container.header_int(header, "nx"), container.header_int(header, "nz")
    scenario = ScenarioConfig.from_header(header)
    if (scenario.T, scenario.n_x, scenario.n_z) != (T, nx, nz):
        raise DataError(f"{path}: header dims disagree with scenario {scenario.scenario}")
    states = container.take(arrays, "states", (M, T + 1, nx))
    meas = container.take(arrays, "measurements", (M, T, nz))
    split = header.get("split", "train")
    return Dataset(states, meas, scenario, split)


def dump_csv(ds: Dataset, path) -> None:
    """One row per (trajectory, step); measurement columns blank at k = 0."""
    nx, nz = ds.scenario.n_x, ds.scenario.n_z
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "k"] + [f"x_{j + 1}" for j in range(nx)] + [f"z_{j + 1}" for j in range(nz)])
        for i in range(ds.M):
            for k in range(ds.T + 1):
                z = [""] * nz if k == 0 else [repr(float(v)) for v in ds.measurements[i, k - 1]]
                w.writerow([i, k] + [repr(float(v)) for v in ds.states[i, k]] + z)
