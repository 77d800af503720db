"""
delaynet/services/lyap.py

Lyapunov spectrum of a delay-embedded series: local maps fitted on
nearest neighbours give a Jacobian per trajectory point; a recursive QR
factorisation of their product gives the exponents; the Kaplan-Yorke
formula gives the attractor's information dimension.

Design Decisions:
- The local map is a polynomial in the displacement from the fitted
  point: affine (order 1) or with all quadratic terms (order 2). Only the
  linear part enters the spectrum; the constant and quadratic terms soak
  up curvature.
- The map may span `evolution` samples, S(n) -> S(n + evolution); the
  chain of Jacobians then visits every `evolution`-th point and the
  exponents are divided by evolution * dt.
- Neighbours come from `embed.theiler_neighbors`, so temporally adjacent
  points (|i - j| <= tau) never enter a fit.
- A rank-deficient neighbour set skips that point; the count is reported
  and logged once, never raised to the caller.
- dt defaults to 1, i.e. exponents per sample.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.spatial import KDTree

from delaynet.services.embed import DelayVectors, theiler_neighbors
from delaynet.utils.exceptions import EmptyJacobianSequenceError, InvalidParameterError, SingularFitError
from delaynet.utils.logger import get_logger
from delaynet.utils.metrics import lyapunov_skipped_points_total

logger = get_logger(__name__)

FIT_ORDERS = (1, 2)


@dataclass(frozen=True, eq=False)
class JacobianSequence:
    """Local Jacobians in trajectory order, plus the points that were skipped."""

    matrices: np.ndarray
    indices: np.ndarray
    skipped_points: int
    evolution: int = 1

    def __len__(self) -> int:
        return int(self.matrices.shape[0])


@dataclass(frozen=True, eq=False)
class LyapunovResult:
    exponents: np.ndarray
    ky_dimension: float
    skipped_points: int = 0


def fit_terms(dim: int, order: int = 1) -> int:
    """Coefficients per output of a local polynomial map in `dim` variables."""
    if order not in FIT_ORDERS:
        raise InvalidParameterError("Local fit order must be 1 or 2.", detail=f"got {order}")
    linear = 1 + dim
    return linear if order == 1 else linear + dim * (dim + 1) // 2


def fit_local_jacobian(
    sources: np.ndarray,
    images: np.ndarray,
    order: int = 1,
    centre: np.ndarray | None = None,
) -> np.ndarray:
    """
    Least-squares fit images ≈ c + J u (+ quadratic terms in u), u = sources - centre.

    Returns J, the derivative of the fitted map at `centre` (the
    neighbourhood mean by default).

    Raises:
        SingularFitError: The neighbours do not determine every coefficient.
    """
    n_points, dim = sources.shape
    n_terms = fit_terms(dim, order)
    centre = sources.mean(axis=0) if centre is None else np.asarray(centre, dtype=np.float64)
    offsets = sources - centre
    radius = float(np.max(np.linalg.norm(offsets, axis=1)))
    if radius == 0.0:
        raise SingularFitError("Neighbours coincide with the fitted point.")
    u = offsets / radius

    columns = [np.ones((n_points, 1)), u]
    if order == 2:
        rows, cols = np.triu_indices(dim)
        columns.append(u[:, rows] * u[:, cols])
    design = np.hstack(columns)
    coef, _, rank, _ = np.linalg.lstsq(design, images, rcond=None)
    if rank < n_terms:
        raise SingularFitError(
            "Rank-deficient neighbour set.", detail=f"rank {rank} < {n_terms}"
        )
    return coef[1 : 1 + dim].T / radius


def local_jacobians(
    dv: DelayVectors,
    n_neighbors: int | None = None,
    window: int | None = None,
    max_points: int | None = None,
    start: int = 0,
    order: int = 1,
    evolution: int = 1,
) -> JacobianSequence:
    """
    Jacobians of the map S(n) -> S(n + evolution) along the trajectory.

    Points start, start + evolution, ... are fitted, so consecutive
    Jacobians chain into the tangent dynamics.

    Args:
        dv: Delay vectors of the series.
        n_neighbors: Neighbours per fit; defaults to twice the number of
            fit coefficients, 2 (D_E + 1) for the affine map.
        window: Theiler window; defaults to the embedding delay.
        max_points: Trajectory span, in samples, covered from `start`; all by default.
        start: First trajectory index.
        order: 1 for an affine local map, 2 to add quadratic terms.
        evolution: Samples spanned by one local map.

    Raises:
        InvalidParameterError: Too few neighbours for the fit, bad order or
            evolution, or start out of range.
    """
    d_e = dv.matrix.shape[1]
    n_terms = fit_terms(d_e, order)
    k = n_neighbors if n_neighbors is not None else 2 * n_terms
    if k < n_terms:
        raise InvalidParameterError(
            "Too few neighbours for the local fit.",
            detail=f"n_neighbors={k}, need >= {n_terms} for order {order}",
        )
    if evolution < 1:
        raise InvalidParameterError("evolution must be at least 1.", detail=f"got {evolution}")
    window = dv.spec.tau if window is None else window

    # Only points with an image `evolution` samples ahead can serve as sources
    domain = dv.matrix[:-evolution]
    images = dv.matrix[evolution:]
    if not 0 <= start < domain.shape[0]:
        raise InvalidParameterError("start outside the trajectory.", detail=f"start={start}")
    stop = domain.shape[0] if max_points is None else min(domain.shape[0], start + max_points)
    query = np.arange(start, stop, evolution)

    _, neighbors = theiler_neighbors(domain, k, window, query=query, tree=KDTree(domain))

    matrices: list[np.ndarray] = []
    kept: list[int] = []
    skipped = 0
    for row, point in enumerate(query):
        nb = neighbors[row]
        try:
            centre = domain[point] if order == 2 else None
            matrices.append(fit_local_jacobian(domain[nb], images[nb], order, centre))
            kept.append(int(point))
        except SingularFitError:
            skipped += 1

    if skipped:
        lyapunov_skipped_points_total.inc(skipped)
        logger.warning("Skipped singular local fits", skipped=skipped, fitted=len(kept))

    stacked = np.asarray(matrices).reshape(len(matrices), d_e, d_e)
    return JacobianSequence(
        matrices=stacked,
        indices=np.asarray(kept, dtype=int),
        skipped_points=skipped,
        evolution=evolution,
    )


def kaplan_yorke_dimension(exponents: Sequence[float] | np.ndarray) -> float:
    """K + (sum of the first K exponents) / |lambda_{K+1}|, K the last index with a non-negative partial sum."""
    lam = np.sort(np.asarray(exponents, dtype=np.float64))[::-1]
    partial = np.cumsum(lam)
    non_negative = np.nonzero(partial >= 0.0)[0]
    if non_negative.size == 0:
        return 0.0
    k = int(non_negative[-1]) + 1
    if k == lam.size:
        return float(lam.size)
    return k + float(partial[k - 1]) / abs(float(lam[k]))


def lyapunov_spectrum(
    jacobians: JacobianSequence | Sequence[np.ndarray] | np.ndarray, dt: float = 1.0
) -> LyapunovResult:
    """
    Exponents from the recursive QR of J_k Q_{k-1} = Q_k R_k.

    lambda_i = (1 / (K dt)) sum_k log |R_k(i, i)|, sorted descending. For a
    JacobianSequence whose maps span several samples, dt is multiplied by
    its `evolution`.

    Raises:
        EmptyJacobianSequenceError: No Jacobians given.
    """
    skipped = 0
    evolution = 1
    if isinstance(jacobians, JacobianSequence):
        skipped = jacobians.skipped_points
        evolution = jacobians.evolution
        jacobians = jacobians.matrices
    mats = np.asarray(jacobians, dtype=np.float64)
    if mats.ndim != 3 or mats.shape[0] == 0:
        raise EmptyJacobianSequenceError("No Jacobians to accumulate.")
    if not dt > 0:
        raise InvalidParameterError("dt must be positive.", detail=f"got dt={dt}")

    dim = mats.shape[1]
    q = np.eye(dim)
    log_sums = np.zeros(dim)
    tiny = np.finfo(np.float64).tiny
    for jac in mats:
        q, r = np.linalg.qr(jac @ q)
        log_sums += np.log(np.maximum(np.abs(np.diag(r)), tiny))

    exponents = np.sort(log_sums / (mats.shape[0] * evolution * dt))[::-1]
    ky = kaplan_yorke_dimension(exponents)
    logger.info(
        "Lyapunov spectrum computed",
        exponents=[round(float(x), 5) for x in exponents],
        ky_dimension=round(ky, 3),
        jacobians=int(mats.shape[0]),
    )
    return LyapunovResult(exponents=exponents, ky_dimension=ky, skipped_points=skipped)
