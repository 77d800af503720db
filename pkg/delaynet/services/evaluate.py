"""
delaynet/services/evaluate.py

Training and validation errors of a trained network, one-step prediction
and closed-loop iteration of the network as a map s(n) -> s(n + 1).

Design Decisions:
- Errors are measured against the noisy targets the network was trained
  on; clean-target errors are reported alongside when the library carries
  clean outputs.
- The holdout is the whole library remainder after the first M pairs.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
import pandas as pd

from delaynet.schemas.report_schema import ErrorReport
from delaynet.services.netaction import PairLibrary, Weights, forward
from delaynet.utils.exceptions import InsufficientDataError, InvalidParameterError, ShapeMismatchError
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

PredictionMode = Literal["one-step", "closed-loop"]


def _mse(w: Weights, inputs: np.ndarray, targets: np.ndarray) -> float:
    if inputs.shape[0] == 0:
        raise InsufficientDataError("No pairs to evaluate.")
    predicted = forward(w, None, inputs)[-1]
    if predicted.shape != targets.shape:
        raise ShapeMismatchError("Targets do not match the network output.", detail=f"{targets.shape}")
    per_pair = ((predicted - targets) ** 2).mean(axis=1)
    return math.fsum(per_pair.tolist()) / per_pair.size


def training_mse(w: Weights, lib: PairLibrary) -> float:
    """(1/M) sum_k (1/D_E) sum_q (x^(k)_q(l_F) - y(k + 1 + (q - 1) tau))^2."""
    return _mse(w, lib.inputs, lib.outputs)


def validation_mse(w: Weights, lib: PairLibrary) -> float:
    """The training formula averaged over the held-out pairs.

    Raises:
        InsufficientDataError: The library has no held-out pairs.
    """
    if lib.n_holdout == 0:
        raise InsufficientDataError("Library has no held-out pairs.", detail="raise m_total or shorten M")
    return _mse(w, lib.holdout_inputs, lib.holdout_outputs)


def error_report(w: Weights, lib: PairLibrary, against_clean: bool = False) -> ErrorReport:
    report = ErrorReport(
        m=lib.m,
        n_holdout=lib.n_holdout,
        train_mse=training_mse(w, lib),
        validation_mse=validation_mse(w, lib) if lib.n_holdout else None,
    )
    if against_clean:
        if lib.clean_outputs is None:
            logger.warning("Clean targets requested but the library carries none")
        else:
            report.train_mse_clean = _mse(w, lib.inputs, lib.clean_outputs)
            if lib.n_holdout and lib.clean_holdout_outputs is not None:
                report.validation_mse_clean = _mse(w, lib.holdout_inputs, lib.clean_holdout_outputs)
    logger.info(
        "Errors evaluated",
        m=report.m,
        train_mse=report.train_mse,
        validation_mse=report.validation_mse,
    )
    return report


def one_step_predict(w: Weights, vector: np.ndarray) -> np.ndarray:
    """Network output for one delay vector; its first entry predicts y(n + 1)."""
    vec = np.asarray(vector, dtype=np.float64)
    if vec.ndim != 1:
        raise ShapeMismatchError("Expected a single D_E-vector.", detail=f"shape {vec.shape}")
    return forward(w, None, vec)[-1]


def closed_loop_predict(w: Weights, seed_vector: np.ndarray, n_steps: int) -> np.ndarray:
    """
    Iterate the network on its own output.

    Returns:
        (n_steps + 1, D_E) array; row 0 is the seed.
    """
    if n_steps < 0:
        raise InvalidParameterError("n_steps must be non-negative.", detail=f"got {n_steps}")
    state = np.asarray(seed_vector, dtype=np.float64)
    if state.ndim != 1:
        raise ShapeMismatchError("Expected a single D_E-vector.", detail=f"shape {state.shape}")
    trajectory = np.empty((n_steps + 1, state.size))
    trajectory[0] = state
    for n in range(n_steps):
        state = forward(w, None, state)[-1]
        trajectory[n + 1] = state
    return trajectory


def prediction_table(
    w: Weights,
    lib: PairLibrary,
    mode: PredictionMode = "one-step",
    start: int = 0,
    steps: int = 500,
) -> pd.DataFrame:
    """
    Rows (n, predicted, actual) of the observed component.

    `start` indexes the library's pairs, training pairs first. In one-step
    mode every prediction is fed the true delay vector; in closed-loop
    mode only the vector at `start` is.
    """
    inputs = np.vstack([lib.inputs, lib.holdout_inputs])
    outputs = np.vstack([lib.outputs, lib.holdout_outputs])
    if start < 0 or steps < 0:
        raise InvalidParameterError("start and steps must be non-negative.")
    if start + steps > inputs.shape[0]:
        raise InsufficientDataError(
            "Prediction window runs past the library.",
            detail=f"start={start}, steps={steps}, pairs={inputs.shape[0]}",
        )

    actual = outputs[start : start + steps, 0]
    if mode == "one-step":
        predicted = forward(w, None, inputs[start : start + steps])[-1][:, 0]
    elif mode == "closed-loop":
        predicted = closed_loop_predict(w, inputs[start], steps)[1:, 0]
    else:
        raise InvalidParameterError(f"Unknown prediction mode '{mode}'.", detail="use one-step or closed-loop")

    return pd.DataFrame(
        {"n": np.arange(start + 1, start + steps + 1), "predicted": predicted, "actual": actual}
    )
