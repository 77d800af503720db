"""
delaynet/schemas/anneal_schema.py

Pydantic v2 schemas for everything the training side persists or reads
from configuration: annealing schedule, optimiser settings, network
weights, path checkpoints and the annealing record.

Design Decisions:
- Field validators enforce parameter ranges at the schema layer so the
  annealing service doesn't need to repeat them.
- No timestamps inside the record: serial and parallel runs with the same
  inputs must serialise to identical bytes.
- Arrays are stored as nested lists, row-major, so the documents stay
  readable and portable without a binary format.
"""

from __future__ import annotations

import math
from typing import Annotated, Literal

from pydantic import BaseModel, Field, model_validator


# ── Configuration schemas ──────────────────────────────────────

class AnnealSchedule(BaseModel):
    """
    Precision annealing schedule in units of R_m (R_m is fixed at 1).

    Either `n_steps` or `r_f_max_over_rm` determines the number of steps;
    `n_steps` wins when both are given.
    """

    r_f0_over_rm: Annotated[float, Field(gt=0.0, description="Starting R_f/R_m.")] = 1e-8
    alpha: Annotated[float, Field(gt=1.0, description="Multiplier applied to R_f per step.")] = 1.1
    r_f_max_over_rm: Annotated[
        float | None,
        Field(gt=0.0, description="Largest R_f/R_m to reach; sets n_steps when n_steps is unset."),
    ] = 1e11
    n_steps: Annotated[int | None, Field(ge=1)] = None
    n_inits: Annotated[int, Field(ge=1, description="Number of independent lineages N_I.")] = 20
    seed: int = 0
    w0: Annotated[float, Field(gt=0.0, description="Half-width of the uniform weight init.")] = 0.1
    early_stop: bool = False
    early_stop_rel_change: Annotated[float, Field(gt=0.0)] = 1e-3
    early_stop_median_fraction: Annotated[float, Field(gt=0.0)] = 0.1
    max_nonfinite: Annotated[int, Field(ge=1)] = 3

    @model_validator(mode="after")
    def _needs_length(self) -> AnnealSchedule:
        if self.n_steps is None and self.r_f_max_over_rm is None:
            raise ValueError("either n_steps or r_f_max_over_rm must be set")
        if self.n_steps is None and self.r_f_max_over_rm is not None:
            if self.r_f_max_over_rm < self.r_f0_over_rm:
                raise ValueError("r_f_max_over_rm must not be below r_f0_over_rm")
        return self

    @property
    def total_steps(self) -> int:
        if self.n_steps is not None:
            return self.n_steps
        assert self.r_f_max_over_rm is not None
        span = math.log(self.r_f_max_over_rm / self.r_f0_over_rm) / math.log(self.alpha)
        # Guard against 1e11/1e-8 landing a hair above an integer
        return math.ceil(span - 1e-9) + 1

    def r_f_values(self) -> list[float]:
        """R_f/R_m at every step: r_f0 * alpha**i."""
        return [self.r_f0_over_rm * self.alpha**i for i in range(self.total_steps)]

    @property
    def steps_per_decade(self) -> int:
        return math.ceil(math.log(10.0) / math.log(self.alpha))


class OptimizerConfig(BaseModel):
    """Settings of the inner limited-memory quasi-Newton minimiser."""

    gtol: Annotated[float, Field(gt=0.0, description="Projected gradient inf-norm tolerance.")] = 1e-8
    max_iter: Annotated[int, Field(ge=1)] = 2000
    ftol: Annotated[float, Field(ge=0.0, description="Relative reduction tolerance.")] = 1e-15
    history: Annotated[int, Field(ge=1, description="Stored curvature pairs.")] = 10
    max_line_search: Annotated[int, Field(ge=1)] = 20
    precondition: Annotated[
        bool, Field(description="Scale activations by sqrt(M) so they curve like the weights.")
    ] = True


# ── Network documents ──────────────────────────────────────────

class ArchitectureDocument(BaseModel):
    """Serialised network architecture."""

    layer_widths: list[int]
    # Hidden transitions are always tanh; recorded so weight files describe themselves
    activation: Literal["tanh"] = "tanh"
    output_activation: Literal["tanh", "identity"] = "tanh"
    use_bias: bool = False


class WeightsDocument(BaseModel):
    """
    Weights file: {"arch": {...}, "matrices": [...], "biases": [...] | null}.

    `matrices[l]` is W(l), shape D_h(l+1) x D_hl, as a list of rows.
    """

    arch: ArchitectureDocument
    matrices: list[list[list[float]]]
    biases: list[list[float]] | None = None


class PathStateDocument(BaseModel):
    """Checkpoint of a full path: every layer's activations plus weights."""

    layers: list[list[list[float]]]
    weights: WeightsDocument


# ── Annealing record ───────────────────────────────────────────

class AnnealStep(BaseModel):
    """
    Outcome of one R_f step.

    Fields:
        step: Zero-based step index.
        r_f_over_rm: Value of R_f/R_m at this step.
        levels: Finite minimised actions of the active lineages, ascending.
        init_actions: Action per lineage in init order, null when dropped
            or non-finite at this step.
        best_init: Lineage holding the lowest level (lowest index on ties).
        converged: Number of lineages whose minimiser met its tolerance.
    """

    step: int
    r_f_over_rm: float
    levels: list[float]
    init_actions: list[float | None]
    best_init: int
    converged: int


class AnnealRecord(BaseModel):
    """Full history of one precision annealing run."""

    arch: ArchitectureDocument
    schedule: AnnealSchedule
    optimizer: OptimizerConfig
    m: int
    steps: list[AnnealStep] = Field(default_factory=list)
    final_weights: list[WeightsDocument | None] = Field(default_factory=list)
    best_init: int = 0
    best_path: PathStateDocument | None = None
    stopped_early: bool = False


class SelectionDiagnostics(BaseModel):
    """How dominant the selected lowest path is over the runner-up."""

    best_init: int
    best_action: float
    second_action: float | None = None
    gap: float | None = None
    dominance_factor: float | None = Field(
        default=None, description="exp(-gap): relative weight of the runner-up path."
    )
    n_candidates: int


class AlphaCheckReport(BaseModel):
    """Comparison of the lowest final level at alpha and at sqrt(alpha)."""

    alpha: float
    alpha_refined: float
    lowest_at_alpha: float
    lowest_at_refined: float
    relative_discrepancy: float
