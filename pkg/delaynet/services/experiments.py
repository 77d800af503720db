"""
delaynet/services/experiments.py

Sweep harness: anneals one network per (M, D_h, l_F) cell and writes the
action-level, max-action, MSE and action-surface tables as CSV.

Design Decisions:
- Each cell gets its own seed, hashed from (base seed, M, D_h, l_F), so a
  cell's result does not depend on which other cells run or in what order.
- Every finished cell is written to `<out>/cells/` as JSON together with a
  hash of the settings that produced it. A rerun reuses matching cells and
  rebuilds the CSV from them; the CSV bytes depend only on cell contents.
- The data pipeline (generate, noise, rescale, embed) runs once per
  process per data/embed settings and is shared by every cell.
- Cells run on a thread pool (`workers`); results are gathered in grid
  order.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from delaynet import __version__
from delaynet.schemas.experiment_schema import (
    CellResult,
    CellStatus,
    ExperimentName,
    RunManifest,
    SweepConfig,
)
from delaynet.services.anneal import anneal, select_best
from delaynet.services.data import (
    ScaleParams,
    SeriesOrigin,
    TimeSeries,
    add_noise,
    apply_scale,
    generate_lorenz96,
    rescale,
)
from delaynet.services.embed import EmbeddingSpec, select_embedding
from delaynet.services.evaluate import training_mse, validation_mse
from delaynet.services.netaction import Architecture, PairLibrary, build_pair_library
from delaynet.utils.config import Settings
from delaynet.utils.exceptions import EmptySweepError, InvalidParameterError
from delaynet.utils.logger import get_logger
from delaynet.utils.metrics import sweep_cells_total

logger = get_logger(__name__)

CSV_OPTIONS: dict[str, Any] = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}


# ── Data pipeline ─────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PreparedSeries:
    """The series every sweep cell trains on, with its embedding."""

    clean: TimeSeries
    noisy: TimeSeries
    rescaled: TimeSeries
    scale: ScaleParams
    spec: EmbeddingSpec

    def clean_rescaled(self) -> TimeSeries:
        """Clean series in the rescaled coordinates of the noisy one."""
        return TimeSeries(
            values=apply_scale(self.clean, self.scale), dt=self.clean.dt, origin=SeriesOrigin.CLEAN
        )


_prepared: dict[str, PreparedSeries] = {}
_prepared_lock = threading.Lock()


def _data_key(settings: Settings) -> str:
    payload = settings.data.model_dump_json() + settings.embed.model_dump_json()
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def prepare_series(settings: Settings) -> PreparedSeries:
    """Generate, add noise, rescale and embed; cached per process."""
    key = _data_key(settings)
    with _prepared_lock:
        if key in _prepared:
            return _prepared[key]

        d, e = settings.data, settings.embed
        clean = generate_lorenz96(
            d=d.d,
            forcing=d.forcing,
            dt=d.dt,
            n_total=d.n_total,
            n_discard=d.n_discard,
            seed=d.seed,
            component=d.component,
            perturbation=d.perturbation,
        )
        noisy = add_noise(clean, d.sigma_fraction, d.noise_seed)
        scaled, params = rescale(noisy)
        spec, _, _ = select_embedding(
            scaled,
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
        prepared = PreparedSeries(clean=clean, noisy=noisy, rescaled=scaled, scale=params, spec=spec)
        _prepared[key] = prepared
        return prepared


def prepare_library(settings: Settings, m: int) -> PairLibrary:
    """Pair library with M training pairs from the prepared series."""
    prepared = prepare_series(settings)
    return build_pair_library(
        prepared.rescaled,
        prepared.spec,
        m,
        m_total=settings.training.m_total,
        clean=prepared.clean_rescaled(),
    )


# ── Cells ─────────────────────────────────────────────────────

def cell_seed(base_seed: int, m: int, d_h: int, l_f: int) -> int:
    """Seed of one sweep cell: the first 8 bytes of SHA-256 over its coordinates."""
    digest = hashlib.sha256(f"{base_seed}:{m}:{d_h}:{l_f}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class SweepContext:
    """What a sweep needs besides its grid: the data source and network options."""

    library_factory: Callable[[int], PairLibrary]
    fingerprint: str = ""
    output_activation: str = "tanh"
    use_bias: bool = False
    profile: str = "ci"
    settings: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_settings(cls, settings: Settings) -> SweepContext:
        net = settings.network
        fingerprint = "|".join(
            [
                _data_key(settings),
                net.model_dump_json(include={"output_activation", "use_bias"}),
                str(settings.training.m_total),
            ]
        )
        return cls(
            library_factory=lambda m: prepare_library(settings, m),
            fingerprint=fingerprint,
            output_activation=net.output_activation,
            use_bias=net.use_bias,
            profile=settings.profile,
            settings=settings.model_dump(mode="json"),
        )


def _settings_hash(cfg: SweepConfig, ctx: SweepContext, seed: int) -> str:
    payload = json.dumps(
        {
            "schedule": cfg.schedule.model_dump(mode="json", exclude={"seed"}),
            "optimizer": cfg.optimizer.model_dump(mode="json"),
            "context": ctx.fingerprint,
            "seed": seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _cell_path(out_dir: Path, m: int, d_h: int, l_f: int) -> Path:
    return out_dir / "cells" / f"cell_m{m}_dh{d_h}_lf{l_f}.json"


def _load_cached(path: Path, settings_hash: str) -> CellResult | None:
    if not path.is_file():
        return None
    try:
        cached = CellResult.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as exc:
        logger.warning("Ignoring unreadable cell file", path=str(path), error=str(exc))
        return None
    if cached.settings_hash != settings_hash:
        logger.info("Cell settings changed; recomputing", path=str(path))
        return None
    return cached


def run_cell(
    cfg: SweepConfig, ctx: SweepContext, out_dir: Path, m: int, d_h: int, l_f: int
) -> tuple[CellResult, CellStatus]:
    """Anneal one cell, or read it back from a previous run."""
    seed = cell_seed(cfg.seed, m, d_h, l_f)
    settings_hash = _settings_hash(cfg, ctx, seed)
    path = _cell_path(out_dir, m, d_h, l_f)

    cached = _load_cached(path, settings_hash)
    if cached is not None:
        sweep_cells_total.labels(status="cached").inc()
        logger.debug("Cell reused", m=m, d_h=d_h, l_f=l_f)
        return cached, CellStatus(m=m, d_h=d_h, l_f=l_f, seed=seed, status="cached", path=str(path))

    lib = ctx.library_factory(m)
    arch = Architecture.from_depth(lib.d_e, d_h, l_f, ctx.output_activation, ctx.use_bias)
    schedule = cfg.schedule.model_copy(update={"seed": seed})
    record = anneal(lib, arch, schedule, cfg.optimizer, cfg.anneal_workers)
    weights, _ = select_best(record)

    result = CellResult(
        m=m,
        d_h=d_h,
        l_f=l_f,
        seed=seed,
        settings_hash=settings_hash,
        r_f_over_rm=[st.r_f_over_rm for st in record.steps],
        levels=[st.levels for st in record.steps],
        best_init=record.best_init,
        train_mse=training_mse(weights, lib),
        validation_mse=validation_mse(weights, lib) if lib.n_holdout else None,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
    sweep_cells_total.labels(status="computed").inc()
    logger.info("Cell computed", m=m, d_h=d_h, l_f=l_f, lowest=result.levels[-1][0])
    return result, CellStatus(m=m, d_h=d_h, l_f=l_f, seed=seed, status="computed", path=str(path))


def _run_cells(
    cfg: SweepConfig, ctx: SweepContext, out_dir: Path, cells: Sequence[tuple[int, int, int]]
) -> list[tuple[CellResult, CellStatus]]:
    if not cells:
        raise EmptySweepError("The sweep has no cells.", detail="check m_values, dh_values and lf_values")

    def run(cell: tuple[int, int, int]) -> tuple[CellResult, CellStatus]:
        return run_cell(cfg, ctx, out_dir, *cell)

    if cfg.workers <= 1 or len(cells) == 1:
        return [run(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=min(cfg.workers, len(cells))) as pool:
        return list(pool.map(run, cells))


def _require(values: Sequence[int], name: str) -> None:
    if not values:
        raise EmptySweepError(f"{name} is empty.", detail=f"set experiments.{name} in the profile")


def _write_csv(frame: pd.DataFrame, path: Path) -> str:
    frame.to_csv(path, **CSV_OPTIONS)
    return str(path)


# ── Sweeps ────────────────────────────────────────────────────

@dataclass
class SweepOutcome:
    outputs: list[str]
    cells: list[CellStatus]


def run_action_level_sweep(cfg: SweepConfig, ctx: SweepContext, out_dir: Path) -> SweepOutcome:
    """One CSV per M: (step, r_f_over_rm, level_1 .. level_NI)."""
    _require(cfg.m_values, "m_values")
    results = _run_cells(cfg, ctx, out_dir, [(m, cfg.d_h, cfg.l_f) for m in cfg.m_values])
    n_levels = cfg.schedule.n_inits
    columns = ["step", "r_f_over_rm", *(f"level_{i + 1}" for i in range(n_levels))]

    outputs = []
    for result, _ in results:
        rows = [
            [step, r_f, *levels, *([np.nan] * (n_levels - len(levels)))]
            for step, (r_f, levels) in enumerate(zip(result.r_f_over_rm, result.levels, strict=True))
        ]
        path = out_dir / f"action_levels_m{result.m}.csv"
        outputs.append(_write_csv(pd.DataFrame(rows, columns=columns), path))
    return SweepOutcome(outputs, [status for _, status in results])


def run_max_action_vs_m(cfg: SweepConfig, ctx: SweepContext, out_dir: Path) -> SweepOutcome:
    """(m, mean_max_action, std_max_action) over the final-step levels of every lineage."""
    _require(cfg.m_values, "m_values")
    results = _run_cells(cfg, ctx, out_dir, [(m, cfg.d_h, cfg.l_f) for m in cfg.m_values])
    rows = []
    for result, _ in results:
        final = np.asarray(result.levels[-1])
        rows.append({"m": result.m, "mean_max_action": float(final.mean()), "std_max_action": float(final.std())})
    path = _write_csv(pd.DataFrame(rows), out_dir / "max_action_vs_m.csv")
    return SweepOutcome([path], [status for _, status in results])


def run_mse_sweeps(
    cfg: SweepConfig, ctx: SweepContext, out_dir: Path, vary: str = "width"
) -> SweepOutcome:
    """
    Training/validation MSE against M for each hidden width (vary="width")
    or each depth (vary="depth").
    """
    _require(cfg.m_values, "m_values")
    if vary == "width":
        _require(cfg.dh_values, "dh_values")
        cells = [(m, d_h, cfg.l_f) for d_h in cfg.dh_values for m in cfg.m_values]
        column, filename = "d_h", "mse_width.csv"
    elif vary == "depth":
        _require(cfg.lf_values, "lf_values")
        cells = [(m, cfg.d_h, l_f) for l_f in cfg.lf_values for m in cfg.m_values]
        column, filename = "l_f", "mse_depth.csv"
    else:
        raise InvalidParameterError(f"Unknown sweep axis '{vary}'.", detail="use width or depth")

    results = _run_cells(cfg, ctx, out_dir, cells)
    rows = [
        {
            "m": r.m,
            column: r.d_h if vary == "width" else r.l_f,
            "train_mse": r.train_mse,
            "validation_mse": r.validation_mse if r.validation_mse is not None else np.nan,
        }
        for r, _ in results
    ]
    path = _write_csv(pd.DataFrame(rows), out_dir / filename)
    return SweepOutcome([path], [status for _, status in results])


def run_action_surface(cfg: SweepConfig, ctx: SweepContext, out_dir: Path) -> SweepOutcome:
    """(m, r_f_over_rm, min_level, max_level) over the whole (M, R_f/R_m) grid."""
    _require(cfg.m_values, "m_values")
    results = _run_cells(cfg, ctx, out_dir, [(m, cfg.d_h, cfg.l_f) for m in cfg.m_values])
    rows = [
        {"m": r.m, "r_f_over_rm": r_f, "min_level": levels[0], "max_level": levels[-1]}
        for r, _ in results
        for r_f, levels in zip(r.r_f_over_rm, r.levels, strict=True)
    ]
    path = _write_csv(pd.DataFrame(rows), out_dir / "action_surface.csv")
    return SweepOutcome([path], [status for _, status in results])


def run_experiment(
    experiment: ExperimentName, cfg: SweepConfig, ctx: SweepContext, out_dir: str | Path
) -> RunManifest:
    """Run one named sweep into `out_dir` and write its manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("Sweep started", experiment=experiment, out_dir=str(out), workers=cfg.workers)

    if experiment == "action-levels":
        outcome = run_action_level_sweep(cfg, ctx, out)
    elif experiment == "max-action":
        outcome = run_max_action_vs_m(cfg, ctx, out)
    elif experiment == "mse-width":
        outcome = run_mse_sweeps(cfg, ctx, out, vary="width")
    elif experiment == "mse-depth":
        outcome = run_mse_sweeps(cfg, ctx, out, vary="depth")
    elif experiment == "action-surface":
        outcome = run_action_surface(cfg, ctx, out)
    else:
        raise InvalidParameterError(f"Unknown experiment '{experiment}'.")

    manifest = RunManifest(
        experiment=experiment,
        profile=ctx.profile,
        version=__version__,
        settings={"sweep": cfg.model_dump(mode="json"), **ctx.settings},
        cells=outcome.cells,
        outputs=outcome.outputs,
    )
    (out / "manifest.json").write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    computed = sum(1 for c in outcome.cells if c.status == "computed")
    logger.info("Sweep finished", experiment=experiment, computed=computed, cached=len(outcome.cells) - computed)
    return manifest
