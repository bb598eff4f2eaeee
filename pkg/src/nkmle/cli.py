"""Command-line entry point: ``nkmle {generate,train,filter,report,dump}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from . import datagen, experiment
from .config import parse_config
from .errors import ConfigError, DataError, NkmleError, NumericalError

log = logging.getLogger("nkmle")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
FAILURE_MARKER = experiment.FAILURE_MARKER


def _load_config(args):
    overrides = {"seed": args.seed} if args.seed is not None else None
    return parse_config(args.config, overrides)


def cmd_generate(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = datagen.generate_dataset(cfg.scenario, args.threads)
    datagen.save_dataset(out / "train.nkm", train)
    datagen.save_dataset(out / "test.nkm", test)
    log.info("wrote %d train / %d test trajectories to %s", train.M, test.M, out)


def cmd_train(args) -> None:
    cfg = _load_config(args)
    train = datagen.load_dataset(Path(args.data) / "train.nkm")
    _check_scenario(cfg, train)
    fitted = experiment.fit_models(cfg, train, args.threads)
    experiment.write_training_outputs(Path(args.out), cfg, fitted)
    for role, (_, report) in fitted.items():
        if report is not None:
            log.info("%s: final nll %.6g after %d iterations (%.1fs)",
                     role, report.nll_trace[-1], len(report.nll_trace), report.wall_time)


def cmd_filter(args) -> None:
    cfg = _load_config(args)
    test = datagen.load_dataset(Path(args.data) / "test.nkm")
    _check_scenario(cfg, test)
    models = {
        role: experiment.load_checkpoint(Path(args.models) / name)
        for role, name in experiment.CHECKPOINT_FILES.items()
    }
    means, report = experiment.evaluate(cfg, test, models, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    experiment.save_estimates(out / "estimates.nkm", means, cfg.scenario, cfg.arm)
    (out / "rmse_report.json").write_text(report.to_json(), encoding="utf-8")
    log.info("%s", report.summary())


def cmd_report(args) -> None:
    path = Path(args.input) / "rmse_report.json"
    try:
        report = experiment.RmseReport.from_json(path.read_text(encoding="utf-8"))
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    experiment.write_rmse_csv(args.csv, report)
    print(report.summary())


def cmd_dump(args) -> None:
    datagen.dump_csv(datagen.load_dataset(args.input), args.csv)


def _check_scenario(cfg, ds) -> None:
    if ds.scenario != cfg.scenario.with_(seed=ds.scenario.seed, M_train=ds.scenario.M_train,
                                          M_test=ds.scenario.M_test):
        raise DataError("dataset was generated for a different scenario configuration")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (never changes outputs)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="nkmle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample train/test datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="fit models for the configured arm")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("filter", parents=[common], help="run the UKF over the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("report", parents=[common], help="per-step RMSE CSV and summary line")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dump", parents=[common], help="dataset container to CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_dump)
    return parser


def _mark_failure(args, exc: BaseException) -> None:
    out = getattr(args, "out", None)
    if not out:
        return
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / FAILURE_MARKER).write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        _mark_failure(args, exc)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        _mark_failure(args, exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NkmleError as exc:
        _mark_failure(args, exc)
        if args.verbose:
            traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
