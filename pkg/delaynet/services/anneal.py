"""
delaynet/services/anneal.py

Precision annealing: N_I independent lineages, each warm-started from its
own previous minimiser, minimised at R_f/R_m = r_f0 * alpha**i for every
step of the schedule.

Design Decisions:
- The inner minimiser is scipy's L-BFGS-B with no bounds, fed the
  analytic gradient from `netaction`.
- Activation gradients carry a 1/M that the weight gradients do not;
  the minimiser works on z with activations = sqrt(M) z so both blocks
  have curvature of one scale.
- Lineages are seeded from children of one SeedSequence, so init i is the
  same path whatever the number of workers.
- Parallelism is across lineages only (thread pool); each lineage owns
  its arrays and results are gathered in lineage order, so the record is
  identical for any `workers`.
- A lineage whose action stays non-finite for `max_nonfinite` steps in a
  row is dropped; when every lineage is gone the run fails.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TypeVar

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.optimize import minimize

from delaynet.schemas.anneal_schema import (
    AlphaCheckReport,
    AnnealRecord,
    AnnealSchedule,
    AnnealStep,
    OptimizerConfig,
    SelectionDiagnostics,
)
from delaynet.services.netaction import (
    Architecture,
    PairLibrary,
    PathState,
    Precisions,
    Weights,
    action_and_gradient_flat,
)
from delaynet.utils.exceptions import (
    AnnealDivergedError,
    InvalidParameterError,
    SeriesFormatError,
    ShapeMismatchError,
)
from delaynet.utils.logger import get_logger
from delaynet.utils.metrics import (
    anneal_steps_total,
    dropped_inits_total,
    lowest_action_level,
    minimizations_total,
    minimizer_iterations,
)

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True, eq=False)
class Minimized:
    """Result of one inner minimisation."""

    path: PathState
    action: float
    converged: bool
    iterations: int


def _ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# ── Initialisation ────────────────────────────────────────────

def init_paths(
    lib: PairLibrary,
    arch: Architecture,
    n_inits: int,
    seed: int,
    w0: float = 0.1,
) -> list[PathState]:
    """
    Starting paths for the N_I lineages.

    Port activations equal the data; hidden activations are uniform on
    [-1, 1]; weights (and biases) uniform on [-w0, w0].
    """
    if n_inits < 1:
        raise InvalidParameterError("n_inits must be at least 1.", detail=f"got {n_inits}")
    if arch.d_e != lib.d_e:
        raise ShapeMismatchError("Architecture and library D_E differ.", detail=f"{arch.d_e} != {lib.d_e}")

    paths = []
    for child in np.random.SeedSequence(seed).spawn(n_inits):
        rng = np.random.default_rng(child)
        hidden = [rng.uniform(-1.0, 1.0, size=(lib.m, width)) for width in arch.layer_widths[1:-1]]
        weights = Weights.uniform(arch, w0, rng)
        layers = (lib.inputs.copy(), *hidden, lib.outputs.copy())
        paths.append(PathState(layers, weights))
    return paths


# ── Inner minimisation ────────────────────────────────────────

def variable_scale(arch: Architecture, m: int) -> np.ndarray:
    """Per-entry scale of the flat path: sqrt(m) on activations, 1 on weights."""
    scale = np.ones(m * sum(arch.layer_widths) + arch.n_weights)
    scale[: m * sum(arch.layer_widths)] = math.sqrt(m)
    return scale


def scaled_action_and_gradient(
    z: np.ndarray, scale: np.ndarray, lib: PairLibrary, arch: Architecture, prec: Precisions
) -> tuple[float, np.ndarray]:
    """Action at x = scale * z and its gradient with respect to z."""
    value, grad = action_and_gradient_flat(z * scale, lib, arch, prec)
    return value, grad * scale


def minimize_at_beta(
    ps: PathState,
    lib: PairLibrary,
    arch: Architecture,
    prec: Precisions,
    opt_cfg: OptimizerConfig | None = None,
) -> Minimized:
    """
    Local minimiser of the action at fixed precisions, started from `ps`.

    The returned action never exceeds the starting action; a minimiser
    that stops early or goes non-finite hands back its best point, or the
    start.

    Raises:
        InvalidParameterError: The starting path is not finite.
    """
    opt_cfg = opt_cfg or OptimizerConfig()
    x0 = ps.to_flat()
    if not np.all(np.isfinite(x0)):
        raise InvalidParameterError("Starting path must be finite.")
    start_action, _ = action_and_gradient_flat(x0, lib, arch, prec)
    scale = variable_scale(arch, lib.m) if opt_cfg.precondition else np.ones_like(x0)

    result = minimize(
        scaled_action_and_gradient,
        x0 / scale,
        args=(scale, lib, arch, prec),
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": opt_cfg.max_iter,
            "maxcor": opt_cfg.history,
            "gtol": opt_cfg.gtol,
            "ftol": opt_cfg.ftol,
            "maxls": opt_cfg.max_line_search,
        },
    )
    iterations = int(result.nit)
    minimizer_iterations.observe(iterations)

    x = np.asarray(result.x, dtype=np.float64) * scale
    if not np.isfinite(result.fun) or not np.all(np.isfinite(x)):
        minimizations_total.labels(outcome="nonfinite").inc()
        logger.debug("Minimiser left the finite region; keeping start", iterations=iterations)
        return Minimized(ps, float(start_action), False, iterations)

    if result.fun > start_action:
        minimizations_total.labels(outcome="rejected").inc()
        return Minimized(ps, float(start_action), False, iterations)

    outcome = "converged" if result.success else "max_iter"
    minimizations_total.labels(outcome=outcome).inc()
    path = PathState.from_flat(arch, lib.m, x)
    return Minimized(path, float(result.fun), bool(result.success), iterations)


# ── Annealing loop ────────────────────────────────────────────

def _should_stop(steps: list[AnnealStep], schedule: AnnealSchedule) -> bool:
    span = schedule.steps_per_decade
    if len(steps) <= span:
        return False
    now = steps[-1].levels[0]
    then = steps[-1 - span].levels[0]
    rel_change = abs(now - then) / max(abs(now), np.finfo(np.float64).tiny)
    median = float(np.median(steps[-1].levels))
    return rel_change < schedule.early_stop_rel_change and now < schedule.early_stop_median_fraction * median


def anneal(
    lib: PairLibrary,
    arch: Architecture,
    schedule: AnnealSchedule,
    opt_cfg: OptimizerConfig | None = None,
    workers: int = 1,
) -> AnnealRecord:
    """
    Run precision annealing over the full schedule.

    Args:
        lib: Training pairs.
        arch: Network architecture.
        schedule: R_f steps, number of lineages and seed.
        opt_cfg: Inner minimiser settings.
        workers: Threads used across lineages; does not change the result.

    Raises:
        AnnealDivergedError: Every lineage is non-finite at some step.
    """
    opt_cfg = opt_cfg or OptimizerConfig()
    paths: list[PathState | None] = list(
        init_paths(lib, arch, schedule.n_inits, schedule.seed, schedule.w0)
    )
    streaks = [0] * schedule.n_inits
    record = AnnealRecord(
        arch=arch.to_document(), schedule=schedule, optimizer=opt_cfg, m=lib.m
    )
    logger.info(
        "Annealing started",
        m=lib.m,
        layer_widths=list(arch.layer_widths),
        n_inits=schedule.n_inits,
        n_steps=schedule.total_steps,
        alpha=schedule.alpha,
    )

    for step, r_f in enumerate(schedule.r_f_values()):
        prec = Precisions(r_m=1.0, r_f=r_f)
        active = [i for i, p in enumerate(paths) if p is not None]

        def run(i: int, prec: Precisions = prec) -> Minimized:
            path = paths[i]
            assert path is not None
            return minimize_at_beta(path, lib, arch, prec, opt_cfg)

        results = dict(zip(active, _ordered_map(run, active, workers), strict=True))

        init_actions: list[float | None] = [None] * schedule.n_inits
        converged = 0
        for i, res in results.items():
            if math.isfinite(res.action):
                paths[i] = res.path
                init_actions[i] = res.action
                streaks[i] = 0
                converged += int(res.converged)
                continue
            streaks[i] += 1
            if streaks[i] >= schedule.max_nonfinite:
                paths[i] = None
                dropped_inits_total.inc()
                logger.warning("Dropping lineage after repeated non-finite actions", init=i, step=step)

        finite = [(a, i) for i, a in enumerate(init_actions) if a is not None]
        if not finite:
            raise AnnealDivergedError(
                "Every lineage produced a non-finite action.",
                detail=f"step {step}, R_f/R_m={r_f:.3e}; try a smaller alpha",
            )
        best_action, best_init = min(finite)
        levels = sorted(a for a, _ in finite)

        record.steps.append(
            AnnealStep(
                step=step,
                r_f_over_rm=r_f,
                levels=levels,
                init_actions=init_actions,
                best_init=best_init,
                converged=converged,
            )
        )
        anneal_steps_total.inc()
        lowest_action_level.set(best_action)
        logger.debug(
            "Annealing step done",
            step=step,
            r_f_over_rm=r_f,
            lowest=best_action,
            highest=levels[-1],
            converged=converged,
        )

        if schedule.early_stop and _should_stop(record.steps, schedule):
            record.stopped_early = True
            logger.info("Lowest level has plateaued; stopping early", step=step, r_f_over_rm=r_f)
            break

    last = record.steps[-1]
    record.final_weights = [
        p.weights.to_document() if p is not None and last.init_actions[i] is not None else None
        for i, p in enumerate(paths)
    ]
    record.best_init = last.best_init
    best_path = paths[last.best_init]
    assert best_path is not None
    record.best_path = best_path.to_document()
    logger.info(
        "Annealing finished",
        steps=len(record.steps),
        best_init=record.best_init,
        lowest=last.levels[0],
        stopped_early=record.stopped_early,
    )
    return record


# ── Selection and diagnostics ─────────────────────────────────

def select_best(rec: AnnealRecord) -> tuple[Weights, SelectionDiagnostics]:
    """
    Weights of the lineage with the lowest final action (lowest index on ties).

    Diagnostics carry the gap to the runner-up and exp(-gap).
    """
    if not rec.steps:
        raise InvalidParameterError("Annealing record has no steps.")
    final = rec.steps[-1].init_actions
    candidates = sorted(
        (a, i)
        for i, a in enumerate(final)
        if a is not None and i < len(rec.final_weights) and rec.final_weights[i] is not None
    )
    if not candidates:
        raise InvalidParameterError("No lineage survived to the final step.")

    best_action, best_init = candidates[0]
    doc = rec.final_weights[best_init]
    assert doc is not None
    diagnostics = SelectionDiagnostics(
        best_init=best_init, best_action=best_action, n_candidates=len(candidates)
    )
    if len(candidates) > 1:
        gap = candidates[1][0] - best_action
        diagnostics.second_action = candidates[1][0]
        diagnostics.gap = gap
        diagnostics.dominance_factor = math.exp(-gap)
    return Weights.from_document(doc), diagnostics


def alpha_check(
    lib: PairLibrary,
    arch: Architecture,
    schedule: AnnealSchedule,
    opt_cfg: OptimizerConfig | None = None,
    workers: int = 1,
) -> AlphaCheckReport:
    """Rerun with sqrt(alpha) over the same R_f range and compare lowest final levels."""
    coarse_schedule = schedule.model_copy(update={"early_stop": False})
    refined_schedule = coarse_schedule.model_copy(
        update={
            "alpha": math.sqrt(schedule.alpha),
            "n_steps": 2 * (schedule.total_steps - 1) + 1,
        }
    )
    coarse = anneal(lib, arch, coarse_schedule, opt_cfg, workers)
    refined = anneal(lib, arch, refined_schedule, opt_cfg, workers)

    low = coarse.steps[-1].levels[0]
    low_refined = refined.steps[-1].levels[0]
    discrepancy = abs(low - low_refined) / max(abs(low), np.finfo(np.float64).tiny)
    if discrepancy > 0.05:
        logger.warning("alpha may be too large", alpha=schedule.alpha, relative_discrepancy=discrepancy)
    return AlphaCheckReport(
        alpha=schedule.alpha,
        alpha_refined=refined_schedule.alpha,
        lowest_at_alpha=low,
        lowest_at_refined=low_refined,
        relative_discrepancy=discrepancy,
    )


def levels_table(rec: AnnealRecord) -> pd.DataFrame:
    """Rows (step, r_f_over_rm, level_1 .. level_NI); missing levels are NaN."""
    n_levels = rec.schedule.n_inits
    rows = []
    for st in rec.steps:
        padded = st.levels + [math.nan] * (n_levels - len(st.levels))
        rows.append([st.step, st.r_f_over_rm, *padded])
    columns = ["step", "r_f_over_rm", *(f"level_{i + 1}" for i in range(n_levels))]
    return pd.DataFrame(rows, columns=columns)


# ── Persistence ───────────────────────────────────────────────

def save_record(rec: AnnealRecord, path: str | Path) -> None:
    Path(path).write_text(rec.model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_record(path: str | Path) -> AnnealRecord:
    try:
        return AnnealRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as exc:
        raise SeriesFormatError(f"Could not read annealing record {path}.", detail=str(exc)) from exc
