"""
delaynet/services/data.py

Ground-truth data for delaynet: Lorenz96 integration, observation noise,
rescaling onto [-1, 1] and CSV persistence of scalar series.

Design Decisions:
- Lorenz96 in its standard cyclic form
  dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F, integrated with
  fixed-step RK4 at the sampling step. The sampling step of the source
  data is unknown, 0.05 reproduces the downstream delay and dimension.
- TimeSeries and ScaleParams are frozen dataclasses (not Pydantic): they
  wrap numpy arrays and are never serialised to JSON directly.
- Every random draw goes through np.random.default_rng(seed), so identical
  inputs give bitwise-identical outputs.
- CSV keeps 17 significant digits; metadata rides in `#` header lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from delaynet.utils.exceptions import (
    DegenerateRangeError,
    IntegrationDivergedError,
    InvalidParameterError,
    SeriesFormatError,
)
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

_RESCALE_TOL = 1e-12


class SeriesOrigin(str, Enum):
    CLEAN = "clean"
    NOISY = "noisy"
    RESCALED = "rescaled"


@dataclass(frozen=True)
class ScaleParams:
    """Data range used by `rescale`; allows exact inversion."""

    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not self.y_max > self.y_min:
            raise DegenerateRangeError(
                "Scale range is empty.",
                detail=f"y_max ({self.y_max}) must exceed y_min ({self.y_min}).",
            )


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """
    A uniformly sampled scalar series.

    Attributes:
        values: 1-D float64 array, read-only.
        dt: Sampling step in model time units.
        origin: clean | noisy | rescaled.
        seed: Seed of the last random step that produced the values.
        scale: Range the values were rescaled from, if origin is rescaled.
    """

    values: np.ndarray
    dt: float
    origin: SeriesOrigin
    seed: int | None = None
    scale: ScaleParams | None = field(default=None)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise InvalidParameterError("A time series needs at least one value.")
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("Time series values must be finite.")
        if not self.dt > 0:
            raise InvalidParameterError("dt must be positive.", detail=f"got dt={self.dt}")
        origin = SeriesOrigin(self.origin)
        if origin is SeriesOrigin.RESCALED:
            if abs(values.min() + 1.0) > _RESCALE_TOL or abs(values.max() - 1.0) > _RESCALE_TOL:
                raise InvalidParameterError(
                    "A rescaled series must span exactly [-1, 1].",
                    detail=f"min={values.min()!r}, max={values.max()!r}",
                )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", origin)

    def __len__(self) -> int:
        return int(self.values.size)


# ── Lorenz96 ──────────────────────────────────────────────────

def lorenz96_rhs(x: np.ndarray, forcing: float) -> np.ndarray:
    """(x_{i+1} - x_{i-2}) x_{i-1} - x_i + F with cyclic indices."""
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def lorenz96_jacobian(x: np.ndarray) -> np.ndarray:
    """Jacobian of `lorenz96_rhs` at state x."""
    d = x.size
    jac = -np.eye(d)
    for i in range(d):
        jac[i, (i + 1) % d] += x[(i - 1) % d]
        jac[i, (i - 2) % d] -= x[(i - 1) % d]
        jac[i, (i - 1) % d] += x[(i + 1) % d] - x[(i - 2) % d]
    return jac


def rk4_step(x: np.ndarray, dt: float, forcing: float) -> np.ndarray:
    k1 = lorenz96_rhs(x, forcing)
    k2 = lorenz96_rhs(x + 0.5 * dt * k1, forcing)
    k3 = lorenz96_rhs(x + 0.5 * dt * k2, forcing)
    k4 = lorenz96_rhs(x + dt * k3, forcing)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def initial_state(d: int, forcing: float, seed: int, perturbation: float = 0.01) -> np.ndarray:
    """Fixed point x_i = F plus a seeded uniform kick of half-width `perturbation`."""
    rng = np.random.default_rng(seed)
    return forcing + perturbation * rng.uniform(-1.0, 1.0, size=d)


def integrate_lorenz96(x0: np.ndarray, forcing: float, dt: float, n_steps: int) -> np.ndarray:
    """
    Integrate Lorenz96 with fixed-step RK4.

    Returns:
        Array of shape (n_steps + 1, D); row 0 is x0.

    Raises:
        IntegrationDivergedError: If the state becomes non-finite.
    """
    states = np.empty((n_steps + 1, x0.size))
    states[0] = x0
    x = np.array(x0, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, n_steps + 1):
            x = rk4_step(x, dt, forcing)
            if not np.all(np.isfinite(x)):
                raise IntegrationDivergedError(
                    "Lorenz96 integration diverged.",
                    detail=f"Non-finite state at step {n}; reduce dt (currently {dt}).",
                    step=n,
                )
            states[n] = x
    return states


def generate_lorenz96(
    d: int = 5,
    forcing: float = 8.15,
    dt: float = 0.05,
    n_total: int = 100_000,
    n_discard: int = 10_000,
    seed: int = 42,
    component: int = 0,
    perturbation: float = 0.01,
) -> TimeSeries:
    """
    Generate the observed scalar from Lorenz96.

    Samples n = 0 .. n_total - 1 are the state after n RK4 steps; the first
    `n_discard` are dropped as transient.

    Raises:
        InvalidParameterError: d < 4, n_discard >= n_total, dt <= 0 or a bad
            component index.
        IntegrationDivergedError: On a non-finite state.
    """
    if d < 4:
        raise InvalidParameterError("Lorenz96 needs at least 4 components.", detail=f"got d={d}")
    if not 0 <= n_discard < n_total:
        raise InvalidParameterError(
            "n_discard must lie in [0, n_total).",
            detail=f"n_discard={n_discard}, n_total={n_total}",
        )
    if not dt > 0:
        raise InvalidParameterError("dt must be positive.", detail=f"got dt={dt}")
    if not 0 <= component < d:
        raise InvalidParameterError("Observed component out of range.", detail=f"component={component}, d={d}")

    x0 = initial_state(d, forcing, seed, perturbation)
    states = integrate_lorenz96(x0, forcing, dt, n_total - 1)
    values = states[n_discard:, component]

    logger.info(
        "Generated Lorenz96 series",
        d=d,
        forcing=forcing,
        dt=dt,
        samples=int(values.size),
        discarded=n_discard,
    )
    return TimeSeries(values=values, dt=dt, origin=SeriesOrigin.CLEAN, seed=seed)


def lorenz96_tangent_exponents(
    d: int = 5,
    forcing: float = 8.15,
    dt: float = 0.05,
    n_steps: int = 50_000,
    n_transient: int = 5_000,
    seed: int = 42,
    renorm_every: int = 1,
    perturbation: float = 0.01,
) -> np.ndarray:
    """
    Lyapunov spectrum of Lorenz96 from the known equations.

    State and tangent matrix are advanced together with RK4; the tangent
    basis is re-orthonormalised by QR every `renorm_every` steps.

    Returns:
        Exponents per model time unit, sorted descending.
    """
    if renorm_every < 1:
        raise InvalidParameterError("renorm_every must be at least 1.")

    x = initial_state(d, forcing, seed, perturbation)
    for _ in range(n_transient):
        x = rk4_step(x, dt, forcing)

    basis = np.eye(d)
    log_sums = np.zeros(d)
    n_renorm = 0
    for n in range(1, n_steps + 1):
        k1 = lorenz96_rhs(x, forcing)
        v1 = lorenz96_jacobian(x) @ basis
        x2 = x + 0.5 * dt * k1
        k2 = lorenz96_rhs(x2, forcing)
        v2 = lorenz96_jacobian(x2) @ (basis + 0.5 * dt * v1)
        x3 = x + 0.5 * dt * k2
        k3 = lorenz96_rhs(x3, forcing)
        v3 = lorenz96_jacobian(x3) @ (basis + 0.5 * dt * v2)
        x4 = x + dt * k3
        k4 = lorenz96_rhs(x4, forcing)
        v4 = lorenz96_jacobian(x4) @ (basis + dt * v3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        basis = basis + dt / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)

        if n % renorm_every == 0:
            basis, r = np.linalg.qr(basis)
            log_sums += np.log(np.abs(np.diag(r)))
            n_renorm += 1

    if not np.all(np.isfinite(x)):
        raise IntegrationDivergedError("Tangent integration diverged.", detail=f"dt={dt}")

    exponents = log_sums / (n_renorm * renorm_every * dt)
    return np.sort(exponents)[::-1]


# ── Noise and scaling ─────────────────────────────────────────

def add_noise(ts: TimeSeries, sigma_fraction: float, seed: int) -> TimeSeries:
    """
    Add Gaussian noise with std `sigma_fraction` x (max - min) of the series.

    Raises:
        InvalidParameterError: Series not clean, or sigma_fraction outside [0, 1).
    """
    if ts.origin is not SeriesOrigin.CLEAN:
        raise InvalidParameterError(
            "Noise is added to clean series only.", detail=f"series origin is {ts.origin.value}"
        )
    if not 0.0 <= sigma_fraction < 1.0:
        raise InvalidParameterError("sigma_fraction must lie in [0, 1).", detail=f"got {sigma_fraction}")

    if sigma_fraction == 0.0:
        return TimeSeries(values=ts.values.copy(), dt=ts.dt, origin=SeriesOrigin.NOISY, seed=seed)

    sigma = sigma_fraction * float(ts.values.max() - ts.values.min())
    rng = np.random.default_rng(seed)
    noisy = ts.values + rng.normal(0.0, sigma, size=ts.values.size)
    logger.debug("Added observation noise", sigma=sigma, samples=len(ts))
    return TimeSeries(values=noisy, dt=ts.dt, origin=SeriesOrigin.NOISY, seed=seed)


def apply_scale(ts: TimeSeries, params: ScaleParams) -> np.ndarray:
    """Map values through (2y - (y_max + y_min)) / (y_max - y_min)."""
    return (2.0 * ts.values - (params.y_max + params.y_min)) / (params.y_max - params.y_min)


def rescale(ts: TimeSeries) -> tuple[TimeSeries, ScaleParams]:
    """
    Rescale onto [-1, 1].

    Raises:
        DegenerateRangeError: The series is constant.
    """
    y_min = float(ts.values.min())
    y_max = float(ts.values.max())
    if y_max == y_min:
        raise DegenerateRangeError(
            "Cannot rescale a constant series.", detail=f"every value equals {y_min!r}"
        )
    params = ScaleParams(y_min=y_min, y_max=y_max)
    scaled = np.clip(apply_scale(ts, params), -1.0, 1.0)
    return (
        TimeSeries(values=scaled, dt=ts.dt, origin=SeriesOrigin.RESCALED, seed=ts.seed, scale=params),
        params,
    )


def unscale(
    ts: TimeSeries,
    params: ScaleParams | None = None,
    origin: SeriesOrigin = SeriesOrigin.NOISY,
) -> TimeSeries:
    """Invert `rescale` using `params` (or the params stored on the series)."""
    params = params or ts.scale
    if params is None:
        raise InvalidParameterError("No scale parameters to invert with.")
    values = (ts.values * (params.y_max - params.y_min) + (params.y_max + params.y_min)) / 2.0
    return TimeSeries(values=values, dt=ts.dt, origin=origin, seed=ts.seed)


# ── Persistence ───────────────────────────────────────────────

def save_series(path: str | Path, ts: TimeSeries) -> None:
    """Write one value per line with `# key=value` metadata header lines."""
    header = [f"dt={ts.dt!r}", f"origin={ts.origin.value}"]
    header.append(f"seed={ts.seed}" if ts.seed is not None else "seed=")
    if ts.scale is not None:
        header += [f"y_min={ts.scale.y_min!r}", f"y_max={ts.scale.y_max!r}"]
    np.savetxt(Path(path), ts.values, fmt="%.17g", header="\n".join(header), comments="# ")
    logger.debug("Series saved", path=str(path), samples=len(ts))


def load_series(path: str | Path) -> TimeSeries:
    """
    Read a series written by `save_series`.

    Raises:
        SeriesFormatError: Missing file, missing dt/origin, or bad values.
    """
    path = Path(path)
    if not path.is_file():
        raise SeriesFormatError(f"Series file not found: {path.name}", detail=str(path))

    meta: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, sep, value = line.lstrip("#").strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()

    try:
        values = np.loadtxt(path, comments="#", ndmin=1, dtype=np.float64)
        dt = float(meta["dt"])
        origin = SeriesOrigin(meta["origin"])
        seed = int(meta["seed"]) if meta.get("seed") else None
        scale = (
            ScaleParams(y_min=float(meta["y_min"]), y_max=float(meta["y_max"]))
            if "y_min" in meta and "y_max" in meta
            else None
        )
    except (KeyError, ValueError) as exc:
        raise SeriesFormatError(
            f"Malformed series file: {path.name}",
            detail=f"{type(exc).__name__}: {exc}",
        ) from exc

    return TimeSeries(values=values, dt=dt, origin=origin, seed=seed, scale=scale)
