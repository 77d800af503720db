"""
delaynet/schemas/experiment_schema.py

Pydantic v2 schemas for the sweep harness: sweep configuration, the
cached per-cell result and the run manifest.

Design Decisions:
- A cell result stores a hash of every setting that influenced it, so a
  resumed sweep only reuses cells computed under the same settings.
- The manifest is the only artifact with a timestamp; CSV outputs are
  rebuilt from cell files and stay byte-identical across reruns.
"""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Annotated, Any, Literal

from pydantic import BaseModel, Field

from delaynet.schemas.anneal_schema import AnnealSchedule, OptimizerConfig

ExperimentName = Literal["action-levels", "max-action", "mse-width", "mse-depth", "action-surface"]


class SweepConfig(BaseModel):
    """
    Grid of sweep cells plus the schedule every cell anneals with.

    Fields:
        m_values: Training set sizes M.
        dh_values: Hidden widths for the width sweep.
        lf_values: Layer counts l_F for the depth sweep.
        d_h / l_f: Architecture used when the sweep varies only M.
        seed: Base seed; each cell derives its own from it.
        workers: Cells annealed concurrently.
    """

    m_values: list[int] = Field(default_factory=lambda: [50, 300, 900, 1200])
    dh_values: list[int] = Field(default_factory=lambda: [15, 25, 35])
    lf_values: list[int] = Field(default_factory=lambda: [4, 5, 6])
    d_h: Annotated[int, Field(ge=1)] = 15
    l_f: Annotated[int, Field(ge=3)] = 4
    schedule: AnnealSchedule = Field(default_factory=AnnealSchedule)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seed: int = 0
    workers: Annotated[int, Field(ge=1)] = 1
    anneal_workers: Annotated[int, Field(ge=1)] = 1


class CellResult(BaseModel):
    """Cached outcome of annealing one (M, D_h, l_F) cell."""

    m: int
    d_h: int
    l_f: int
    seed: int
    settings_hash: str
    r_f_over_rm: list[float]
    levels: list[list[float]]
    best_init: int
    train_mse: float
    validation_mse: float | None = None


class CellStatus(BaseModel):
    m: int
    d_h: int
    l_f: int
    seed: int
    status: Literal["computed", "cached"]
    path: str


class RunManifest(BaseModel):
    """Everything needed to reproduce a sweep directory."""

    experiment: ExperimentName
    profile: str
    version: str
    settings: dict[str, Any]
    cells: list[CellStatus] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
