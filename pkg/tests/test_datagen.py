import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nkmle import container, rng
from nkmle.datagen import (
    dump_csv,
    generate_dataset,
    load_dataset,
    sample_trajectories,
    sample_trajectory,
    save_dataset,
)
from nkmle.errors import BadMagic, CountMismatch, TruncatedPayload, VersionMismatch
from nkmle.ssm import ScenarioConfig, ncv_matrix


class TestCounterRng:
    def test_splitmix_reference_value(self):
        # First output of the canonical SplitMix64 generator seeded with 0.
        assert int(rng.splitmix64(np.uint64(0))) == 0xE220A8397B1DCDAF

    def test_uniform_range(self):
        u = rng.uniforms(3, 7, np.arange(1000), 0, 8)
        assert u.shape == (1000, 8)
        assert np.all(u > 0.0) and np.all(u <= 1.0)

    def test_keyed_not_sequential(self):
        a = rng.normals(5, 2, np.arange(10), 0, 3)
        b = rng.normals(5, 2, np.arange(5, 10), 0, 3)
        np.testing.assert_array_equal(a[5:], b)

    def test_streams_differ(self):
        a = rng.normals(1, 0, [1], rng.STREAM_STATE, 4)
        b = rng.normals(1, 0, [1], rng.STREAM_MEASUREMENT, 4)
        assert not np.array_equal(a, b)

    def test_normal_moments(self):
        z = rng.normals(11, 0, np.arange(100_000), 0, 2).ravel()
        assert abs(z.mean()) < 0.01
        assert abs(z.var() - 1.0) < 0.01

    def test_odd_count_box_muller(self):
        z = rng.normals(1, 1, np.arange(3), 0, 3)
        assert z.shape == (3, 3)

    def test_derive_seed(self):
        assert rng.derive_seed(1, 2) == rng.derive_seed(1, 2)
        assert rng.derive_seed(1, 2) != rng.derive_seed(1, 3)
        assert 0 <= rng.derive_seed(2**64 - 1, 5) < 2**63


def small_bilateration(**kw):
    base = dict(T=10, M_train=3, M_test=2, seed=42)
    base.update(kw)
    return ScenarioConfig("bilateration", **base)


class TestSampling:
    def test_shapes(self):
        tr = sample_trajectory(small_bilateration(), 0)
        assert tr.states.shape == (11, 4) and tr.measurements.shape == (10, 2)
        assert np.all(np.isfinite(tr.states))

    def test_noiseless_limit(self):
        sc = small_bilateration(sigma_u_sq=1e-14, sigma_r_sq=1e-14)
        tr = sample_trajectory(sc, 0)
        F = ncv_matrix(0.5)
        x = tr.states[0]
        for k in range(1, 11):
            x = F @ x
            np.testing.assert_allclose(tr.states[k], x, atol=1e-3)
        from nkmle.ssm import bilateration_h
        np.testing.assert_allclose(tr.measurements, bilateration_h(tr.states[1:]), atol=1e-3)

    def test_noiseless_limit_from_prior_mean(self):
        sc = small_bilateration(sigma_u_sq=1e-14, sigma_r_sq=1e-14)
        tr = sample_trajectory(sc, 0)
        # x_0 is a draw from the prior: within a few prior std of the mean
        assert np.all(np.abs(tr.states[0] - [100, 1, 0, 2]) < 5 * np.sqrt([1, 0.1, 1, 0.1]))

    @pytest.mark.invariant
    def test_deterministic(self):
        sc = small_bilateration()
        a, b = sample_trajectory(sc, 1), sample_trajectory(sc, 1)
        assert np.array_equal(a.states, b.states) and np.array_equal(a.measurements, b.measurements)

    def test_lorenz_process_noise_variance(self):
        # q^2 = nu r^2 = 1e-8; 1000 x 34 x 3 = 102 000 draws
        sc = ScenarioConfig("lorenz", T=34, M_train=1000, M_test=0, r=1e-3, nu=0.01, seed=3)
        train, _ = generate_dataset(sc)
        f = sc.transition_fn()
        w = train.states[:, 1:] - f(train.states[:, :-1])
        assert w.size >= 100_000
        assert abs(w.var() / sc.q_sq - 1.0) < 0.05
        v = train.measurements[..., 0] - np.linalg.norm(train.states[:, 1:], axis=-1)
        assert abs(v.var() / sc.r**2 - 1.0) < 0.05

    @pytest.mark.invariant
    def test_empirical_process_cov_matches_q(self):
        sc = ScenarioConfig("bilateration", T=50, M_train=500, M_test=0, sigma_u_sq=0.1, sigma_r_sq=1.0, seed=9)
        train, _ = generate_dataset(sc)
        f = sc.transition_fn()
        w = (train.states[:, 1:] - f(train.states[:, :-1])).reshape(-1, 4)
        Q = sc.process_cov()
        Qhat = w.T @ w / w.shape[0]
        assert np.linalg.norm(Qhat - Q) / np.linalg.norm(Q) < 0.05


class TestGenerateDataset:
    def test_default_split_sizes(self):
        sc = ScenarioConfig("bilateration", T=2, M_train=1000, M_test=200)
        train, test = generate_dataset(sc)
        assert (train.M, test.M) == (1000, 200)
        assert train.split == "train" and test.split == "test"

    @pytest.mark.invariant
    def test_per_index_seeding(self):
        sc = small_bilateration(M_train=2, M_test=1)
        train, test = generate_dataset(sc)
        again = sample_trajectories(sc, [2])
        np.testing.assert_array_equal(test.states[0], again[0].states)
        assert not np.array_equal(train.states[0], train.states[1])

    @pytest.mark.invariant
    def test_thread_count_irrelevant(self):
        sc = small_bilateration(M_train=6, M_test=3)
        a = generate_dataset(sc, threads=1)
        b = generate_dataset(sc, threads=4)
        for x, y in zip(a, b):
            assert np.array_equal(x.states, y.states)
            assert np.array_equal(x.measurements, y.measurements)

    def test_empty_request(self, tmp_path):
        sc = small_bilateration(M_train=0, M_test=0)
        train, test = generate_dataset(sc)
        assert train.M == 0 and test.M == 0
        save_dataset(tmp_path / "e.nkm", train)
        assert load_dataset(tmp_path / "e.nkm").M == 0


class TestContainer:
    @pytest.mark.invariant
    def test_dataset_round_trip_bitwise(self, tmp_path):
        sc = ScenarioConfig("bilateration", T=5, M_train=1200, M_test=0, seed=7)
        train, _ = generate_dataset(sc)
        save_dataset(tmp_path / "d.nkm", train)
        back = load_dataset(tmp_path / "d.nkm")
        assert back.scenario == sc
        assert back.states.tobytes() == train.states.tobytes()
        assert back.measurements.tobytes() == train.measurements.tobytes()

    @pytest.mark.invariant
    @settings(max_examples=50, deadline=None)
    @given(values=st.lists(st.floats(allow_nan=True, allow_infinity=True), max_size=50),
           name=st.text(min_size=1, max_size=12))
    def test_generic_round_trip(self, values, name):
        arr = np.array(values, dtype=np.float64)
        header, arrays = container.decode(container.encode({"kind": "checkpoint"}, {name: arr}))
        assert header["kind"] == "checkpoint"
        assert arrays[name].tobytes() == arr.tobytes()

    def test_bad_magic(self, tmp_path):
        blob = container.encode({"kind": "dataset"}, {})
        (tmp_path / "x").write_bytes(b"XXXXXX" + blob[6:])
        with pytest.raises(BadMagic):
            container.load_container(tmp_path / "x")

    def test_version_mismatch(self):
        blob = container.encode({"kind": "dataset"}, {}).replace(b"format_version=1", b"format_version=9")
        with pytest.raises(VersionMismatch):
            container.decode(blob)

    def test_truncated(self):
        blob = container.encode({"kind": "dataset"}, {"a": np.arange(10.0)})
        with pytest.raises(TruncatedPayload):
            container.decode(blob[:-3])

    def test_count_mismatch(self, tmp_path):
        sc = small_bilateration(M_train=1, M_test=0)
        train, _ = generate_dataset(sc)
        save_dataset(tmp_path / "one.nkm", train)
        blob = (tmp_path / "one.nkm").read_bytes().replace(b"\nM=1\n", b"\nM=2\n")
        (tmp_path / "two.nkm").write_bytes(blob)
        with pytest.raises(CountMismatch):
            load_dataset(tmp_path / "two.nkm")

    def test_wire_layout(self):
        blob = container.encode({"kind": "dataset"}, {"ab": np.array([1.5])})
        assert blob.startswith(b"NKMLE1format_version=1\nkind=dataset\n\n")
        tail = blob[blob.index(b"\n\n") + 2:]
        assert tail == struct.pack("<I", 2) + b"ab" + struct.pack("<Q", 1) + struct.pack("<d", 1.5)


class TestCsvDump:
    def test_layout(self, tmp_path):
        sc = small_bilateration(T=2, M_train=2, M_test=0)
        train, _ = generate_dataset(sc)
        dump_csv(train, tmp_path / "d.csv")
        rows = (tmp_path / "d.csv").read_text().splitlines()
        assert rows[0] == "traj,k,x_1,x_2,x_3,x_4,z_1,z_2"
        assert len(rows) == 1 + 2 * 3
        assert rows[1].endswith(",,")  # k = 0 has no measurement
        assert float(rows[2].split(",")[6]) == train.measurements[0, 0, 0]
