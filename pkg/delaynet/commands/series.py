"""
delaynet/commands/series.py

Series sub-commands: generate, noise, rescale, ami, fnn, lyapunov.

Each handler reads its inputs from CSV written by `save_series`, writes
its outputs to the paths given, and prints a one-line summary or a JSON
report on stdout.
"""

from __future__ import annotations

import argparse
from typing import Any

from delaynet.schemas.report_schema import EmbeddingReport, LyapunovReport
from delaynet.services.data import (
    add_noise,
    generate_lorenz96,
    load_series,
    lorenz96_tangent_exponents,
    rescale,
    save_series,
)
from delaynet.services.embed import (
    EmbeddingSpec,
    average_mutual_information,
    delay_vectors,
    false_nearest_neighbors,
    first_minimum,
    select_embedding,
    select_embedding_dimension,
)
from delaynet.services.lyap import fit_terms, local_jacobians, lyapunov_spectrum
from delaynet.utils.config import Settings
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

CSV_OPTIONS: dict[str, Any] = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}


def _pick(value: Any, default: Any) -> Any:
    return default if value is None else value


# ── Handlers ──────────────────────────────────────────────────

def cmd_generate(args: argparse.Namespace, settings: Settings) -> int:
    d = settings.data
    ts = generate_lorenz96(
        d=_pick(args.d, d.d),
        forcing=_pick(args.forcing, d.forcing),
        dt=_pick(args.dt, d.dt),
        n_total=_pick(args.n_total, d.n_total),
        n_discard=_pick(args.n_discard, d.n_discard),
        seed=_pick(args.seed, d.seed),
        component=_pick(args.component, d.component),
        perturbation=d.perturbation,
    )
    save_series(args.out, ts)
    print(f"wrote {len(ts)} samples to {args.out}")
    return 0


def cmd_noise(args: argparse.Namespace, settings: Settings) -> int:
    ts = load_series(args.input)
    noisy = add_noise(
        ts,
        _pick(args.sigma_fraction, settings.data.sigma_fraction),
        _pick(args.seed, settings.data.noise_seed),
    )
    save_series(args.out, noisy)
    print(f"wrote {len(noisy)} noisy samples to {args.out}")
    return 0


def cmd_rescale(args: argparse.Namespace, settings: Settings) -> int:
    ts = load_series(args.input)
    scaled, params = rescale(ts)
    save_series(args.out, scaled)
    print(f"rescaled [{params.y_min!r}, {params.y_max!r}] onto [-1, 1]; wrote {args.out}")
    return 0


def cmd_ami(args: argparse.Namespace, settings: Settings) -> int:
    e = settings.embed
    ts = load_series(args.input)
    curve = average_mutual_information(
        ts, _pick(args.tau_max, e.tau_max), _pick(args.bins, e.n_bins), args.workers
    )
    if args.out:
        curve.to_frame().to_csv(args.out, **CSV_OPTIONS)
    tau = first_minimum(curve)
    print(f"first AMI minimum: {tau if tau is not None else 'none'}")
    return 0


def cmd_fnn(args: argparse.Namespace, settings: Settings) -> int:
    e = settings.embed
    ts = load_series(args.input)
    tau = args.tau or e.tau
    if tau is None:
        spec, _, _ = select_embedding(
            ts, d_e=1, tau_max=e.tau_max, n_bins=e.n_bins, ami_samples=e.ami_samples
        )
        tau = spec.tau
    curve = false_nearest_neighbors(
        ts,
        tau,
        _pick(args.d_max, e.d_max),
        _pick(args.rtol, e.r_tol),
        _pick(args.atol, e.a_tol),
        args.workers,
    )
    if args.out:
        curve.to_frame().to_csv(args.out, **CSV_OPTIONS)
    d_e = select_embedding_dimension(curve, e.fnn_threshold)
    report = EmbeddingReport(
        tau=tau, d_e=d_e, tau_from_ami=args.tau is None and e.tau is None, d_e_from_fnn=True
    )
    print(report.model_dump_json())
    return 0


def cmd_lyapunov(args: argparse.Namespace, settings: Settings) -> int:
    e, lp = settings.embed, settings.lyap
    ts = load_series(args.input)
    if (args.tau or e.tau) and (args.de or e.d_e):
        spec = EmbeddingSpec(tau=args.tau or e.tau, d_e=args.de or e.d_e)
    else:
        spec, _, _ = select_embedding(
            ts,
            tau=args.tau or e.tau,
            d_e=args.de or e.d_e,
            tau_max=e.tau_max,
            n_bins=e.n_bins,
            ami_samples=e.ami_samples,
            d_max=e.d_max,
            r_tol=e.r_tol,
            a_tol=e.a_tol,
            fnn_threshold=e.fnn_threshold,
        )
    dt = _pick(args.dt, lp.dt)
    n_neighbors = _pick(args.neighbors, lp.n_neighbors)
    order = _pick(args.order, lp.order)
    if args.order is None and n_neighbors is not None and n_neighbors < fit_terms(spec.d_e, order):
        logger.info("Too few neighbours for a quadratic map; fitting affine maps", n_neighbors=n_neighbors)
        order = 1
    evolution = _pick(args.evolution, _pick(lp.evolution, spec.tau))
    jacobians = local_jacobians(
        delay_vectors(ts, spec),
        n_neighbors=n_neighbors,
        max_points=_pick(args.max_points, lp.max_points),
        order=order,
        evolution=evolution,
    )
    result = lyapunov_spectrum(jacobians, dt=dt)
    report = LyapunovReport(
        exponents=result.exponents.tolist(),
        ky_dimension=result.ky_dimension,
        skipped_points=result.skipped_points,
        n_jacobians=len(jacobians),
        dt=dt,
        order=order,
        evolution=evolution,
    )
    if args.reference:
        d = settings.data
        report.reference_exponents = lorenz96_tangent_exponents(
            d=d.d, forcing=d.forcing, dt=d.dt, seed=d.seed, perturbation=d.perturbation
        ).tolist()

    text = report.model_dump_json(indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    print(text)
    return 0


# ── Registration ──────────────────────────────────────────────

def _positive(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("generate", help="Integrate Lorenz96 and write the observed component.")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--forcing", "--f", dest="forcing", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--n-total", "--n", dest="n_total", type=int, default=None)
    p.add_argument("--n-discard", "--discard", dest="n_discard", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--component", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = subparsers.add_parser("noise", help="Add Gaussian observation noise to a clean series.")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-fraction", "--sigma-frac", dest="sigma_fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_noise)

    p = subparsers.add_parser("rescale", help="Map a series onto [-1, 1].")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rescale)

    p = subparsers.add_parser("ami", help="Average mutual information curve and its first minimum.")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tau-max", type=int, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--out", default=None, help="CSV (tau, ami_bits).")
    p.set_defaults(func=cmd_ami)

    p = subparsers.add_parser("fnn", help="False nearest neighbour fractions and the chosen D_E.")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--d-max", "--dmax", dest="d_max", type=int, default=None)
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--atol", type=float, default=None)
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--out", default=None, help="CSV (dim, fnn_fraction).")
    p.set_defaults(func=cmd_fnn)

    p = subparsers.add_parser("lyapunov", help="Lyapunov spectrum and Kaplan-Yorke dimension.")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--de", type=int, default=None)
    p.add_argument("--neighbors", type=int, default=None)
    p.add_argument("--order", type=int, choices=(1, 2), default=None, help="Local map: 1 affine, 2 quadratic.")
    p.add_argument("--evolution", type=_positive, default=None, help="Samples per local map; tau by default.")
    p.add_argument("--max-points", type=int, default=None)
    p.add_argument("--dt", type=float, default=None, help="Time per sample; 1 gives exponents per sample.")
    p.add_argument("--reference", action="store_true", help="Also integrate the tangent equations.")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lyapunov)
