"""
delaynet/schemas/report_schema.py

Pydantic v2 schemas for the JSON reports the analysis commands print or
write: Lyapunov spectrum, train/validation errors and embedding choice.
"""

from __future__ import annotations

from typing import Annotated

from pydantic import BaseModel, Field


class LyapunovReport(BaseModel):
    """
    Result of `delaynet lyapunov`.

    Fields:
        exponents: Spectrum sorted descending, in 1/dt units.
        ky_dimension: Kaplan-Yorke dimension of the spectrum.
        skipped_points: Trajectory points whose local fit was singular.
        n_jacobians: Jacobians entering the QR product.
        dt: Time unit the exponents are expressed in.
        order: Local map order, 1 affine or 2 quadratic.
        evolution: Samples spanned by one local map.
        reference_exponents: Tangent-space exponents of the generating
            equations per time unit, when requested.
    """

    exponents: list[float]
    ky_dimension: float
    skipped_points: Annotated[int, Field(ge=0)] = 0
    n_jacobians: Annotated[int, Field(ge=0)] = 0
    dt: float = 1.0
    order: Annotated[int, Field(ge=1, le=2)] = 1
    evolution: Annotated[int, Field(ge=1)] = 1
    reference_exponents: list[float] | None = None


class ErrorReport(BaseModel):
    """Training and validation mean squared errors of a trained network."""

    m: int
    n_holdout: int
    train_mse: float
    validation_mse: float | None = None
    train_mse_clean: float | None = None
    validation_mse_clean: float | None = None


class EmbeddingReport(BaseModel):
    """The delay and dimension chosen for a series."""

    tau: int
    d_e: int
    tau_from_ami: bool
    d_e_from_fnn: bool
