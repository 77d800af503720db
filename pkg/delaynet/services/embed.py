"""
delaynet/services/embed.py

Delay embedding: choose tau by the first minimum of the average mutual
information, choose D_E by global false nearest neighbours, and build the
delay vectors S(n) = [s(n), s(n + tau), ..., s(n + (D_E - 1) tau)].

Design Decisions:
- AMI uses a plug-in estimate on an n_bins x n_bins uniform histogram over
  the data range, marginals taken from the joint, result in bits. Cell
  terms are summed with math.fsum, so the result does not depend on cell
  order (reversing the series transposes the histogram and gives exactly
  the same number).
- Neighbour searches go through scipy's k-d tree and exclude a Theiler
  window of |i - j| <= tau; `brute_force_neighbors` is the all-pairs
  oracle the tests compare against.
- Per-lag and per-dimension work is independent; `workers > 1` maps it
  over a thread pool, results are collected in order and are identical
  to the serial ones.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TypeVar

import numpy as np
import pandas as pd
from scipy.spatial import KDTree
from scipy.spatial.distance import cdist

from delaynet.services.data import TimeSeries
from delaynet.utils.exceptions import (
    EmbeddingDimensionNotFoundError,
    InsufficientDataError,
    InvalidParameterError,
)
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class EmbeddingSpec:
    tau: int
    d_e: int

    def __post_init__(self) -> None:
        if self.tau < 1 or self.d_e < 1:
            raise InvalidParameterError(
                "Embedding delay and dimension must be positive.",
                detail=f"tau={self.tau}, d_e={self.d_e}",
            )

    @property
    def window(self) -> int:
        """Samples spanned by one delay vector beyond its first entry."""
        return (self.d_e - 1) * self.tau


@dataclass(frozen=True, eq=False)
class AMICurve:
    taus: np.ndarray
    ami_bits: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"tau": self.taus, "ami_bits": self.ami_bits})


@dataclass(frozen=True, eq=False)
class FNNCurve:
    dims: np.ndarray
    fnn_fraction: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"dim": self.dims, "fnn_fraction": self.fnn_fraction})


@dataclass(frozen=True, eq=False)
class DelayVectors:
    matrix: np.ndarray
    spec: EmbeddingSpec

    def __len__(self) -> int:
        return int(self.matrix.shape[0])


def _ordered_map(func: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="delaynet-embed") as pool:
        return list(pool.map(func, items))


# ── Average mutual information ─────────────────────────────────

def _ami_at_lag(values: np.ndarray, tau: int, n_bins: int, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    joint, _, _ = np.histogram2d(
        values[:-tau], values[tau:], bins=n_bins, range=[[lo, hi], [lo, hi]]
    )
    p_joint = joint / joint.sum()
    p_first = p_joint.sum(axis=1)
    p_second = p_joint.sum(axis=0)
    rows, cols = np.nonzero(p_joint)
    cells = p_joint[rows, cols]
    terms = cells * np.log2(cells / (p_first[rows] * p_second[cols]))
    ami = math.fsum(terms.tolist())
    # Plug-in MI is a KL divergence; only rounding can push it below zero
    assert ami > -1e-12, f"negative AMI {ami} at tau={tau}"
    return max(ami, 0.0)


def average_mutual_information(
    ts: TimeSeries,
    tau_max: int,
    n_bins: int = 128,
    workers: int = 1,
    n_samples: int | None = None,
) -> AMICurve:
    """
    AMI between s(n) and s(n + tau), in bits, for tau = 1 .. tau_max.

    With `n_samples`, only the leading samples of the series enter the
    histogram; the bins then span the range of that slice.

    Raises:
        InsufficientDataError: Series shorter than tau_max + 1.
        InvalidParameterError: tau_max >= length / 2, tau_max < 1 or n_bins < 2.
    """
    if n_samples is not None and n_samples < 2:
        raise InvalidParameterError("n_samples must be at least 2.", detail=f"got {n_samples}")
    values = ts.values if n_samples is None else ts.values[:n_samples]
    if len(values) < tau_max + 1:
        raise InsufficientDataError(
            "Series too short for the requested lags.",
            detail=f"{len(values)} samples, tau_max={tau_max}",
        )
    if tau_max < 1 or tau_max >= len(values) / 2:
        raise InvalidParameterError(
            "tau_max must lie in [1, length / 2).", detail=f"tau_max={tau_max}, length={len(values)}"
        )
    if n_bins < 2:
        raise InvalidParameterError("AMI needs at least 2 bins.", detail=f"n_bins={n_bins}")

    lo, hi = float(values.min()), float(values.max())
    taus = np.arange(1, tau_max + 1)
    ami = _ordered_map(lambda tau: _ami_at_lag(values, int(tau), n_bins, lo, hi), taus, workers)
    logger.debug("AMI computed", tau_max=tau_max, n_bins=n_bins, samples=len(values))
    return AMICurve(taus=taus, ami_bits=np.asarray(ami))


def first_minimum(curve: AMICurve) -> int | None:
    """
    Smallest tau with ami[tau - 1] > ami[tau] < ami[tau + 1].

    Returns None when the curve has no interior minimum; the caller decides
    the fallback.
    """
    ami = curve.ami_bits
    if ami.size < 3:
        raise InvalidParameterError("A first minimum needs at least 3 points.", detail=f"got {ami.size}")
    for i in range(1, ami.size - 1):
        if ami[i - 1] > ami[i] < ami[i + 1]:
            return int(curve.taus[i])
    return None


# ── Delay vectors ─────────────────────────────────────────────

def delay_vectors(ts: TimeSeries, spec: EmbeddingSpec) -> DelayVectors:
    """
    Rows S(n) with S_q(n) = s(n + (q - 1) tau), n = 0 .. N - (D_E - 1) tau - 1.

    Raises:
        InsufficientDataError: Series too short for a single vector.
    """
    values = ts.values
    n_rows = values.size - spec.window
    if n_rows < 1:
        raise InsufficientDataError(
            "Series too short for one delay vector.",
            detail=f"{values.size} samples, tau={spec.tau}, d_e={spec.d_e}",
        )
    matrix = np.column_stack([values[q * spec.tau : q * spec.tau + n_rows] for q in range(spec.d_e)])
    return DelayVectors(matrix=matrix, spec=spec)


# ── Neighbour search ──────────────────────────────────────────

def _select_outside_window(
    dist: np.ndarray, idx: np.ndarray, query: np.ndarray, k: int, window: int, n_points: int
) -> tuple[np.ndarray, np.ndarray]:
    valid = (np.abs(idx - query[:, None]) > window) & (idx < n_points)
    # Stable sort keeps candidates in distance order within the valid group
    order = np.argsort(~valid, axis=1, kind="stable")[:, :k]
    chosen_valid = np.take_along_axis(valid, order, axis=1)
    if not chosen_valid.all():
        raise InsufficientDataError(
            "Not enough neighbours outside the Theiler window.",
            detail=f"k={k}, window={window}, points={n_points}",
        )
    return np.take_along_axis(dist, order, axis=1), np.take_along_axis(idx, order, axis=1)


def theiler_neighbors(
    points: np.ndarray,
    k: int,
    window: int,
    query: np.ndarray | None = None,
    tree: KDTree | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    k nearest neighbours (Euclidean) of points[query] among `points`,
    excluding indices j with |j - i| <= window.

    Returns:
        (distances, indices), each of shape (len(query), k), nearest first.
    """
    n_points = points.shape[0]
    query = np.arange(n_points) if query is None else np.asarray(query)
    if n_points < k + 1:
        raise InsufficientDataError("Too few points for the neighbour search.", detail=f"{n_points} points, k={k}")
    tree = tree or KDTree(points)
    n_candidates = min(k + 2 * window + 1, n_points)
    dist, idx = tree.query(points[query], k=n_candidates)
    dist = np.asarray(dist).reshape(len(query), n_candidates)
    idx = np.asarray(idx).reshape(len(query), n_candidates)
    return _select_outside_window(dist, idx, query, k, window, n_points)


def brute_force_neighbors(
    points: np.ndarray, k: int, window: int, query: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs version of `theiler_neighbors`."""
    n_points = points.shape[0]
    query = np.arange(n_points) if query is None else np.asarray(query)
    dist = cdist(points[query], points)
    idx = np.broadcast_to(np.arange(n_points), dist.shape)
    order = np.argsort(dist, axis=1, kind="stable")
    return _select_outside_window(
        np.take_along_axis(dist, order, axis=1),
        np.take_along_axis(idx, order, axis=1),
        query,
        k,
        window,
        n_points,
    )


# ── False nearest neighbours ──────────────────────────────────

def _fnn_at_dim(
    values: np.ndarray,
    tau: int,
    dim: int,
    r_tol: float,
    a_tol: float,
    scale: float,
    neighbor_search: Callable[..., tuple[np.ndarray, np.ndarray]],
) -> float:
    n_rows = values.size - dim * tau
    points = np.column_stack([values[q * tau : q * tau + n_rows] for q in range(dim)])
    dist, idx = neighbor_search(points, 1, tau)
    dist = dist[:, 0]
    nn = idx[:, 0]
    rows = np.arange(n_rows)
    extra = np.abs(values[rows + dim * tau] - values[nn + dim * tau])
    dist_next = np.sqrt(dist**2 + extra**2)
    false = (extra > r_tol * dist) | (dist_next > a_tol * scale)
    return float(np.count_nonzero(false)) / n_rows


def false_nearest_neighbors(
    ts: TimeSeries,
    tau: int,
    d_max: int,
    r_tol: float = 15.0,
    a_tol: float = 2.0,
    workers: int = 1,
    brute_force: bool = False,
) -> FNNCurve:
    """
    Global false nearest neighbour fraction for D = 1 .. d_max.

    A neighbour in dimension D is false when the added coordinate
    separates it by more than r_tol times the D-distance, or when the
    (D + 1)-distance exceeds a_tol series standard deviations.

    Raises:
        InvalidParameterError: d_max < 2 or tau < 1.
        InsufficientDataError: Too few vectors at d_max.
    """
    if d_max < 2:
        raise InvalidParameterError("d_max must be at least 2.", detail=f"got {d_max}")
    if tau < 1:
        raise InvalidParameterError("tau must be at least 1.", detail=f"got {tau}")
    values = ts.values
    if values.size - d_max * tau < 2 * tau + 2:
        raise InsufficientDataError(
            "Series too short for FNN at d_max.",
            detail=f"{values.size} samples, tau={tau}, d_max={d_max}",
        )

    scale = float(np.std(values))
    search = brute_force_neighbors if brute_force else theiler_neighbors
    dims = np.arange(1, d_max + 1)
    fractions = _ordered_map(
        lambda dim: _fnn_at_dim(values, tau, int(dim), r_tol, a_tol, scale, search), dims, workers
    )
    logger.debug("FNN computed", tau=tau, d_max=d_max, fractions=[round(f, 4) for f in fractions])
    return FNNCurve(dims=dims, fnn_fraction=np.asarray(fractions))


def select_embedding_dimension(curve: FNNCurve, threshold: float = 0.01) -> int:
    """Smallest D whose FNN fraction is at or below `threshold`."""
    below = np.nonzero(curve.fnn_fraction <= threshold)[0]
    if below.size == 0:
        raise EmbeddingDimensionNotFoundError(
            "No dimension reaches the FNN threshold.",
            detail=f"threshold={threshold}, minimum fraction={curve.fnn_fraction.min():.4f}; raise d_max",
        )
    return int(curve.dims[below[0]])


def select_embedding(
    ts: TimeSeries,
    tau: int | None = None,
    d_e: int | None = None,
    tau_max: int = 50,
    n_bins: int = 128,
    ami_samples: int | None = None,
    d_max: int = 10,
    r_tol: float = 15.0,
    a_tol: float = 2.0,
    fnn_threshold: float = 0.01,
    workers: int = 1,
) -> tuple[EmbeddingSpec, bool, bool]:
    """
    Resolve (tau, D_E), computing whichever is not given.

    Without an interior AMI minimum, tau falls back to the global minimum
    of the curve (logged as a warning).

    Returns:
        (spec, tau_from_ami, d_e_from_fnn)
    """
    tau_from_ami = tau is None
    if tau is None:
        curve = average_mutual_information(ts, tau_max, n_bins, workers, n_samples=ami_samples)
        tau = first_minimum(curve)
        if tau is None:
            tau = int(curve.taus[int(np.argmin(curve.ami_bits))])
            logger.warning("AMI has no interior minimum; using its global minimum", tau=tau)

    d_e_from_fnn = d_e is None
    if d_e is None:
        fnn = false_nearest_neighbors(ts, tau, d_max, r_tol, a_tol, workers)
        d_e = select_embedding_dimension(fnn, fnn_threshold)

    logger.info("Embedding selected", tau=tau, d_e=d_e)
    return EmbeddingSpec(tau=tau, d_e=d_e), tau_from_ami, d_e_from_fnn
