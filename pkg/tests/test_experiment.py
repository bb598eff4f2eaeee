import math

import numpy as np
import pytest

from nkmle import mlp
from nkmle.config import parse_config, parse_config_text
from nkmle.datagen import Dataset, generate_dataset
from nkmle.errors import BadValue, LengthMismatch, MissingRequiredKey, NonPositivePivot, UnknownKey
from nkmle.experiment import (
    FAILURE_MARKER,
    ModelCheckpoint,
    RmseReport,
    fit_models,
    load_checkpoint,
    load_estimates,
    rmse_overall,
    rmse_per_step,
    run_experiment,
    save_checkpoint,
)
from nkmle.ssm import ScenarioConfig
from nkmle.trainer import build_pairs, update_theta


class TestConfig:
    def test_minimal_defaults(self):
        cfg = parse_config_text("scenario=bilateration\narm=known_all\n")
        assert cfg.scenario.tau == 0.5
        assert (cfg.ut.alpha, cfg.ut.beta, cfg.ut.kappa) == (0.1, 3.0, 0.0)
        assert cfg.scenario.T == 50 and cfg.scenario.M_train == 1000 and cfg.scenario.M_test == 200
        assert cfg.train_f is None and cfg.train_h is None

    def test_lorenz_default_horizon(self):
        assert parse_config_text("scenario=lorenz\narm=known_all").scenario.T == 25

    def test_neural_defaults_filled(self):
        cfg = parse_config_text("scenario=bilateration\narm=unknown_all")
        assert cfg.train_f.hidden_dim == 600 and cfg.train_f.learning_rate == 1e-4
        assert cfg.train_h.batch_size == 160 and cfg.train_h.n_coord == 10
        np.testing.assert_array_equal(cfg.train_h.q_init, np.eye(2))

    def test_known_cov_arm_pins_truth(self):
        cfg = parse_config_text("scenario=lorenz\narm=unknown_fn_known_cov")
        assert not cfg.train_f.update_cov and cfg.train_f.n_coord == 1
        np.testing.assert_array_equal(cfg.train_f.q_init, cfg.scenario.process_cov())

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# header\n\nscenario = lorenz  # inline\narm=known_all\nr=0.01\n")
        assert cfg.scenario.r == 0.01

    def test_bad_arm(self):
        with pytest.raises(BadValue, match="line 2"):
            parse_config_text("scenario=bilateration\narm=frobnicate")

    def test_duplicate_key(self):
        with pytest.raises(BadValue, match="line 3"):
            parse_config_text("scenario=bilateration\narm=known_all\narm=known_all")

    def test_unknown_key(self):
        with pytest.raises(UnknownKey, match="line 3"):
            parse_config_text("scenario=bilateration\narm=known_all\nsigma_u=1")

    def test_missing_key(self):
        with pytest.raises(MissingRequiredKey):
            parse_config_text("scenario=bilateration")

    def test_bad_number(self):
        with pytest.raises(BadValue):
            parse_config_text("scenario=bilateration\narm=known_all\nT=fifty")

    def test_invalid_scenario_value(self):
        with pytest.raises(BadValue):
            parse_config_text("scenario=bilateration\narm=known_all\ntau=-1")

    def test_seed_override(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("scenario=bilateration\narm=known_all\nseed=4\n")
        assert parse_config(path).scenario.seed == 4
        assert parse_config(path, {"seed": 9}).scenario.seed == 9

    def test_data_seed_decouples_training_seed(self):
        a = parse_config_text("scenario=bilateration\narm=unknown_all\nseed=1\ndata_seed=5")
        b = parse_config_text("scenario=bilateration\narm=unknown_all\nseed=2\ndata_seed=5")
        assert a.scenario == b.scenario
        assert a.train_f.seed != b.train_f.seed


class TestRmse:
    def test_identical(self):
        x = np.ones((2, 3, 4))
        np.testing.assert_array_equal(rmse_per_step(x, x), 0.0)
        assert rmse_overall(x, x) == 0.0

    def test_single_error(self):
        assert rmse_per_step(np.array([[[3.0]]]), np.zeros((1, 1, 1)))[0] == 3.0

    def test_mean_of_squares(self):
        est = np.array([[[math.sqrt(2)]], [[2.0]]])
        assert rmse_per_step(est, np.zeros_like(est))[0] == pytest.approx(math.sqrt(3), abs=1e-15)

    def test_overall_from_steps(self):
        est = np.array([[[1.0], [math.sqrt(3)]]])
        assert rmse_overall(est, np.zeros_like(est)) == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_constant_steps(self):
        est = np.full((4, 5, 1), 0.7)
        assert rmse_overall(est, np.zeros_like(est)) == pytest.approx(0.7, abs=1e-15)

    def test_normalization(self):
        est = np.full((1, 1, 4), 1.0)
        assert rmse_overall(est, np.zeros_like(est)) == 1.0
        assert rmse_overall(est, np.zeros_like(est), normalize=False) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rmse_per_step(np.zeros((2, 3, 1)), np.zeros((2, 4, 1)))
        with pytest.raises(LengthMismatch):
            rmse_overall(np.zeros((0, 3, 1)), np.zeros((0, 3, 1)))

    @pytest.mark.invariant
    def test_report_self_consistent(self):
        rng = np.random.default_rng(0)
        est, tru = rng.normal(size=(7, 9, 3)), rng.normal(size=(7, 9, 3))
        rep = RmseReport.from_estimates(est, tru, "known_all", ScenarioConfig("lorenz"))
        assert abs(rep.overall**2 - np.mean(np.square(rep.per_step))) <= 1e-12
        assert rep == RmseReport.from_json(rep.to_json())
        assert "arm=known_all" in rep.summary()


SMALL = "scenario=bilateration\narm={arm}\nT=10\nM_train=30\nM_test=4\nsigma_u_sq=1e-3\nsigma_r_sq=1e-3\n"


class TestRunExperiment:
    def test_known_all_smoke(self, tmp_path):
        cfg = parse_config_text(SMALL.format(arm="known_all"))
        res = run_experiment(cfg, out_dir=tmp_path)
        assert len(res.report.per_step) == 10
        assert np.all(np.isfinite(res.report.per_step))
        for name in ("train.nkm", "test.nkm", "f.ckpt", "h.ckpt", "estimates.nkm", "rmse_report.json"):
            assert (tmp_path / name).exists()
        np.testing.assert_array_equal(load_estimates(tmp_path / "estimates.nkm"), res.estimates)

    def test_known_functions_estimate_covariances(self):
        cfg = parse_config_text(SMALL.format(arm="known_fn_unknown_cov"))
        res = run_experiment(cfg)
        assert res.training == {"dynamic": None, "measurement": None}
        R = res.checkpoints["measurement"].cov
        assert 0.5e-3 < R[0, 0] < 2e-3

    @pytest.mark.invariant
    def test_known_cov_single_iteration_is_one_theta_update(self):
        text = SMALL.format(arm="unknown_fn_known_cov") + "f_hidden=8\nh_hidden=8\nf_n_epochs=2\nh_n_epochs=2\n"
        cfg = parse_config_text(text)
        train, _ = generate_dataset(cfg.scenario)
        fitted = fit_models(cfg, train)
        for role, tcfg in (("dynamic", cfg.train_f), ("measurement", cfg.train_h)):
            rng = np.random.default_rng(tcfg.seed)
            pairs = build_pairs(train, role)
            n_in, n_out = pairs.inputs.shape[1], pairs.targets.shape[1]
            p0 = mlp.init_params(n_in, tcfg.hidden_dim, n_out, rng, tcfg.dropout_rate)
            manual = update_theta(pairs, p0, tcfg.q_init, tcfg, rng)
            ckpt, _ = fitted[role]
            assert np.array_equal(ckpt.params.flat, manual.flat)
            assert np.array_equal(ckpt.cov, tcfg.q_init)

    def test_failure_marker(self, tmp_path):
        cfg = parse_config_text(SMALL.format(arm="known_fn_unknown_cov"))
        train, test = generate_dataset(cfg.scenario)
        poisoned = Dataset(np.full_like(train.states, np.nan), train.measurements, train.scenario, "train")
        with pytest.raises(NonPositivePivot):
            run_experiment(cfg, out_dir=tmp_path, data=(poisoned, test))
        assert (tmp_path / "train.nkm").exists()
        assert "NonPositivePivot" in (tmp_path / FAILURE_MARKER).read_text()


class TestCheckpoint:
    @pytest.mark.invariant
    def test_analytic_round_trip(self, tmp_path):
        sc = ScenarioConfig("lorenz")
        save_checkpoint(tmp_path / "f.ckpt", ModelCheckpoint("dynamic", 2e-8 * np.eye(3)), sc)
        back = load_checkpoint(tmp_path / "f.ckpt")
        assert back.function == "analytic"
        np.testing.assert_array_equal(back.cov, 2e-8 * np.eye(3))

    @pytest.mark.invariant
    def test_neural_round_trip(self, tmp_path):
        sc = ScenarioConfig("bilateration")
        p = mlp.init_params(4, 6, 2, np.random.default_rng(0), 0.1)
        ck = ModelCheckpoint("measurement", np.diag([1.0, 2.0]), p, np.arange(4.0), np.ones(4) * 3)
        save_checkpoint(tmp_path / "h.ckpt", ck, sc)
        back = load_checkpoint(tmp_path / "h.ckpt")
        assert back.params.flat.tobytes() == p.flat.tobytes()
        np.testing.assert_array_equal(back.input_shift, ck.input_shift)
        x = np.random.default_rng(1).normal(size=(5, 4))
        np.testing.assert_array_equal(back.mean_fn(sc)(x), ck.mean_fn(sc)(x))
