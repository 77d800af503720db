"""
delaynet/commands/training.py

Training sub-commands: train, evaluate, predict, sweep.

Without `--series` the library comes from the configured pipeline
(generate, noise, rescale, embed); with it, the given series is embedded
with the configured (or selected) tau and D_E.
"""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, get_args

from pydantic import ValidationError

from delaynet.schemas.anneal_schema import AnnealSchedule
from delaynet.schemas.experiment_schema import ExperimentName
from delaynet.services.anneal import alpha_check, anneal, levels_table, save_record, select_best
from delaynet.services.data import SeriesOrigin, load_series, rescale
from delaynet.services.embed import select_embedding
from delaynet.services.evaluate import error_report, prediction_table
from delaynet.services.experiments import SweepContext, prepare_library, run_experiment
from delaynet.services.netaction import (
    Architecture,
    PairLibrary,
    Weights,
    build_pair_library,
    load_weights,
    save_weights,
)
from delaynet.utils.config import Settings
from delaynet.utils.exceptions import InvalidParameterError, ShapeMismatchError
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

CSV_OPTIONS: dict[str, Any] = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}


def _library(args: argparse.Namespace, settings: Settings, m: int) -> PairLibrary:
    if not args.series:
        return prepare_library(settings, m)

    ts = load_series(args.series)
    if ts.origin is not SeriesOrigin.RESCALED:
        ts, _ = rescale(ts)
    e = settings.embed
    spec, _, _ = select_embedding(
        ts,
        tau=e.tau,
        d_e=e.d_e,
        tau_max=e.tau_max,
        n_bins=e.n_bins,
        ami_samples=e.ami_samples,
        d_max=e.d_max,
        r_tol=e.r_tol,
        a_tol=e.a_tol,
        fnn_threshold=e.fnn_threshold,
    )
    return build_pair_library(ts, spec, m, m_total=settings.training.m_total)


def _weights_for(args: argparse.Namespace, settings: Settings) -> tuple[Weights, PairLibrary]:
    weights = load_weights(args.weights)
    lib = _library(args, settings, args.m or settings.training.m)
    if lib.d_e != weights.arch.d_e:
        raise ShapeMismatchError(
            "Weights were trained on a different embedding dimension.",
            detail=f"weights D_E={weights.arch.d_e}, library D_E={lib.d_e}",
        )
    return weights, lib


# ── Handlers ──────────────────────────────────────────────────

def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    net, tr = settings.network, settings.training
    updates: dict[str, Any] = {
        key: value
        for key, value in {
            "alpha": args.alpha,
            "n_inits": args.ninit,
            "r_f0_over_rm": args.rf0,
            "seed": args.seed,
        }.items()
        if value is not None
    }
    if args.rfmax is not None:
        updates.update({"r_f_max_over_rm": args.rfmax, "n_steps": None})
    if args.early_stop:
        updates["early_stop"] = True
    try:
        schedule = AnnealSchedule.model_validate({**settings.anneal.model_dump(), **updates})
    except ValidationError as exc:
        raise InvalidParameterError("Invalid annealing flags.", detail=str(exc)) from exc

    m = args.m or tr.m
    lib = _library(args, settings, m)
    arch = Architecture.from_depth(
        lib.d_e, args.dh or net.d_h, args.layers or net.l_f, net.output_activation, net.use_bias
    )
    workers = args.workers or tr.workers

    if args.alpha_check:
        report = alpha_check(lib, arch, schedule, settings.optimizer, workers)
        print(report.model_dump_json(indent=2))
        return 0

    record = anneal(lib, arch, schedule, settings.optimizer, workers)
    save_record(record, args.out)
    weights, diagnostics = select_best(record)
    weights_path = args.weights_out or str(Path(args.out).with_suffix("")) + "_weights.json"
    save_weights(weights, weights_path)
    if args.levels_csv:
        levels_table(record).to_csv(args.levels_csv, **CSV_OPTIONS)
    print(diagnostics.model_dump_json(indent=2))
    return 0


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    weights, lib = _weights_for(args, settings)
    against_clean = args.against_clean or settings.evaluate.against_clean
    report = error_report(weights, lib, against_clean=against_clean)
    print(report.model_dump_json(indent=2))
    return 0


def cmd_predict(args: argparse.Namespace, settings: Settings) -> int:
    ev = settings.evaluate
    weights, lib = _weights_for(args, settings)
    start = ev.predict_start if args.start is None else args.start
    steps = ev.predict_steps if args.steps is None else args.steps
    table = prediction_table(weights, lib, mode=args.mode, start=start, steps=steps)
    table.to_csv(args.out, **CSV_OPTIONS)
    print(f"wrote {len(table)} {args.mode} predictions to {args.out}")
    return 0


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    updates: dict[str, Any] = {"schedule": settings.anneal, "optimizer": settings.optimizer}
    if args.workers is not None:
        updates["workers"] = args.workers
    cfg = settings.experiments.model_copy(update=updates)
    manifest = run_experiment(args.experiment, cfg, SweepContext.from_settings(settings), args.out)
    for output in manifest.outputs:
        print(output)
    return 0


# ── Registration ──────────────────────────────────────────────

def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("train", help="Anneal a network on the pair library.")
    p.add_argument("--series", default=None, help="Series CSV; the configured pipeline when omitted.")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--layers", type=int, default=None, help="l_F, total layer count.")
    p.add_argument("--dh", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--ninit", type=int, default=None)
    p.add_argument("--rf0", type=float, default=None)
    p.add_argument("--rfmax", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--alpha-check", action="store_true", help="Compare against sqrt(alpha) and exit.")
    p.add_argument("--out", default="record.json")
    p.add_argument("--weights-out", default=None)
    p.add_argument("--levels-csv", default=None)
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser("evaluate", help="Training and validation MSE of trained weights.")
    p.add_argument("--weights", required=True)
    p.add_argument("--series", default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--against-clean", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = subparsers.add_parser("predict", help="One-step or closed-loop predictions as CSV.")
    p.add_argument("--weights", required=True)
    p.add_argument("--series", default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--mode", choices=["one-step", "closed-loop"], default="one-step")
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = subparsers.add_parser("sweep", help="Run a sweep and write its CSV tables and manifest.")
    p.add_argument("--experiment", choices=list(get_args(ExperimentName)), required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
