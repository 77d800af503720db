"""
delaynet/services/netaction.py

The multilayer perceptron as a path-estimation problem: the layer rule
x(l+1) = f(W(l) x(l)), the action (measurement error at the input/output
ports plus the precision-weighted layer-rule error) and its analytic
gradient with respect to every activation and weight.

Design Decisions:
- Activations are held per layer as (M, D_hl) arrays; the frozen flat
  layout used by the optimiser is activations by (k, l, q), then weights
  by (l, row, col), then biases when they are enabled.
- No bias terms by default. The output transition uses tanh too, which is
  why series are rescaled onto [-1, 1] before training; `identity` is
  available as an architecture switch.
- R_m is fixed at 1; only R_f/R_m matters.
- The model-term sum runs over the transitions l = l_0 .. l_F - 1.
- Scalar reductions over the M pairs use math.fsum, so the action is
  independent of pair order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from delaynet.schemas.anneal_schema import ArchitectureDocument, PathStateDocument, WeightsDocument
from delaynet.services.data import SeriesOrigin, TimeSeries
from delaynet.services.embed import EmbeddingSpec
from delaynet.utils.exceptions import (
    InsufficientDataError,
    InvalidParameterError,
    SeriesFormatError,
    ShapeMismatchError,
)
from delaynet.utils.logger import get_logger

logger = get_logger(__name__)


class Activation(str, Enum):
    TANH = "tanh"
    IDENTITY = "identity"


# ── Domain types ──────────────────────────────────────────────

@dataclass(frozen=True)
class Architecture:
    """
    Layer widths [D_h0, ..., D_hF] with D_h0 = D_hF = D_E.

    l_F = len(layer_widths) layers in total, l_F - 2 of them hidden.
    """

    layer_widths: tuple[int, ...]
    output_activation: Activation = Activation.TANH
    use_bias: bool = False

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 3:
            raise InvalidParameterError(
                "A network needs at least one hidden layer.", detail=f"widths={widths}"
            )
        if min(widths) < 1:
            raise InvalidParameterError("Layer widths must be positive.", detail=f"widths={widths}")
        if widths[0] != widths[-1]:
            raise ShapeMismatchError(
                "Input and output layers must both have D_E units.", detail=f"widths={widths}"
            )
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "output_activation", Activation(self.output_activation))

    @classmethod
    def from_depth(
        cls,
        d_e: int,
        d_h: int,
        l_f: int,
        output_activation: Activation | str = Activation.TANH,
        use_bias: bool = False,
    ) -> Architecture:
        """[D_E, D_h, ..., D_h, D_E] with l_F - 2 hidden layers."""
        if l_f < 3:
            raise InvalidParameterError("l_F must be at least 3.", detail=f"got {l_f}")
        widths = (d_e, *([d_h] * (l_f - 2)), d_e)
        return cls(widths, Activation(output_activation), use_bias)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    @property
    def n_transitions(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def d_e(self) -> int:
        return self.layer_widths[0]

    @property
    def n_weights(self) -> int:
        """Length of the flat weight vector, biases included."""
        widths = self.layer_widths
        total = sum(widths[l + 1] * widths[l] for l in range(self.n_transitions))
        return total + (sum(widths[1:]) if self.use_bias else 0)

    @property
    def model_normaliser(self) -> int:
        """Sum of D_hl over l = l_1 .. l_F."""
        return sum(self.layer_widths[1:])

    def transfer_is_tanh(self, layer: int) -> bool:
        """Whether transition `layer` -> `layer + 1` uses tanh."""
        if layer == self.n_transitions - 1:
            return self.output_activation is Activation.TANH
        return True

    def to_document(self) -> ArchitectureDocument:
        return ArchitectureDocument(
            layer_widths=list(self.layer_widths),
            activation=Activation.TANH.value,
            output_activation=self.output_activation.value,
            use_bias=self.use_bias,
        )

    @classmethod
    def from_document(cls, doc: ArchitectureDocument) -> Architecture:
        return cls(tuple(doc.layer_widths), Activation(doc.output_activation), doc.use_bias)


@dataclass(frozen=True, eq=False)
class Weights:
    """W(l), shape D_h(l+1) x D_hl, for l = 0 .. l_F - 1; biases optional."""

    arch: Architecture
    matrices: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...] | None = None

    def __post_init__(self) -> None:
        widths = self.arch.layer_widths
        mats = tuple(np.asarray(m, dtype=np.float64) for m in self.matrices)
        if len(mats) != self.arch.n_transitions:
            raise ShapeMismatchError(
                "Wrong number of weight matrices.",
                detail=f"got {len(mats)}, architecture has {self.arch.n_transitions} transitions",
            )
        for layer, mat in enumerate(mats):
            if mat.shape != (widths[layer + 1], widths[layer]):
                raise ShapeMismatchError(
                    f"W({layer}) has shape {mat.shape}.",
                    detail=f"expected {(widths[layer + 1], widths[layer])}",
                )
        object.__setattr__(self, "matrices", mats)

        if self.arch.use_bias:
            if self.biases is None:
                raise ShapeMismatchError("Architecture uses biases but none were given.")
            vecs = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
            if [v.size for v in vecs] != list(widths[1:]):
                raise ShapeMismatchError("Bias sizes do not match the layer widths.")
            object.__setattr__(self, "biases", vecs)
        elif self.biases is not None:
            raise ShapeMismatchError("Biases given for an architecture without them.")

    @classmethod
    def zeros(cls, arch: Architecture) -> Weights:
        widths = arch.layer_widths
        mats = tuple(np.zeros((widths[l + 1], widths[l])) for l in range(arch.n_transitions))
        biases = tuple(np.zeros(w) for w in widths[1:]) if arch.use_bias else None
        return cls(arch, mats, biases)

    @classmethod
    def uniform(cls, arch: Architecture, w0: float, rng: np.random.Generator) -> Weights:
        widths = arch.layer_widths
        mats = tuple(
            rng.uniform(-w0, w0, size=(widths[l + 1], widths[l])) for l in range(arch.n_transitions)
        )
        biases = tuple(rng.uniform(-w0, w0, size=w) for w in widths[1:]) if arch.use_bias else None
        return cls(arch, mats, biases)

    @property
    def size(self) -> int:
        total = sum(m.size for m in self.matrices)
        if self.biases is not None:
            total += sum(b.size for b in self.biases)
        return total

    def to_flat(self) -> np.ndarray:
        parts = [m.ravel() for m in self.matrices]
        if self.biases is not None:
            parts += list(self.biases)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch: Architecture, flat: np.ndarray) -> Weights:
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != arch.n_weights:
            raise ShapeMismatchError(
                "Flat weight vector has the wrong length.", detail=f"{flat.size} != {arch.n_weights}"
            )
        widths = arch.layer_widths
        mats = []
        offset = 0
        for l in range(arch.n_transitions):
            n = widths[l + 1] * widths[l]
            mats.append(flat[offset : offset + n].reshape(widths[l + 1], widths[l]))
            offset += n
        biases = None
        if arch.use_bias:
            biases = []
            for w in widths[1:]:
                biases.append(flat[offset : offset + w])
                offset += w
        return cls(arch, tuple(mats), tuple(biases) if biases is not None else None)

    def to_document(self) -> WeightsDocument:
        return WeightsDocument(
            arch=self.arch.to_document(),
            matrices=[m.tolist() for m in self.matrices],
            biases=[b.tolist() for b in self.biases] if self.biases is not None else None,
        )

    @classmethod
    def from_document(cls, doc: WeightsDocument) -> Weights:
        arch = Architecture.from_document(doc.arch)
        biases = tuple(np.asarray(b) for b in doc.biases) if doc.biases is not None else None
        return cls(arch, tuple(np.asarray(m) for m in doc.matrices), biases)


@dataclass(frozen=True, eq=False)
class PairLibrary:
    """
    Training pairs (first M) and held-out pairs (the remainder).

    Input row k holds y(k + (q - 1) tau), output row k holds
    y(k + 1 + (q - 1) tau), q = 1 .. D_E.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    holdout_inputs: np.ndarray
    holdout_outputs: np.ndarray
    tau: int
    clean_outputs: np.ndarray | None = None
    clean_holdout_outputs: np.ndarray | None = None

    @property
    def m(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def d_e(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def n_holdout(self) -> int:
        return int(self.holdout_inputs.shape[0])


@dataclass(frozen=True)
class Precisions:
    r_m: float = 1.0
    r_f: float = 0.0

    def __post_init__(self) -> None:
        if not self.r_m > 0:
            raise InvalidParameterError("R_m must be positive.", detail=f"got {self.r_m}")
        if not self.r_f >= 0:
            raise InvalidParameterError("R_f must be non-negative.", detail=f"got {self.r_f}")


@dataclass(frozen=True, eq=False)
class PathState:
    """Every activation x^(k)_q(l) (one (M, D_hl) array per layer) plus the weights."""

    layers: tuple[np.ndarray, ...]
    weights: Weights

    def __post_init__(self) -> None:
        layers = tuple(np.asarray(x, dtype=np.float64) for x in self.layers)
        widths = self.weights.arch.layer_widths
        if len(layers) != len(widths):
            raise ShapeMismatchError("Path has the wrong number of layers.", detail=f"{len(layers)} != {len(widths)}")
        m = layers[0].shape[0]
        for l, (x, w) in enumerate(zip(layers, widths, strict=True)):
            if x.shape != (m, w):
                raise ShapeMismatchError(f"Layer {l} activations have shape {x.shape}.", detail=f"expected {(m, w)}")
        object.__setattr__(self, "layers", layers)

    @property
    def arch(self) -> Architecture:
        return self.weights.arch

    @property
    def m(self) -> int:
        return int(self.layers[0].shape[0])

    @property
    def size(self) -> int:
        return sum(x.size for x in self.layers) + self.weights.size

    def to_flat(self) -> np.ndarray:
        """Activations by (k, l, q), then weights by (l, row, col), then biases."""
        activations = np.concatenate(self.layers, axis=1).ravel()
        return np.concatenate([activations, self.weights.to_flat()])

    @classmethod
    def from_flat(cls, arch: Architecture, m: int, flat: np.ndarray) -> PathState:
        widths = arch.layer_widths
        n_act = m * sum(widths)
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != n_act + arch.n_weights:
            raise ShapeMismatchError(
                "Flat path vector has the wrong length.", detail=f"{flat.size} != {n_act + arch.n_weights}"
            )
        block = flat[:n_act].reshape(m, sum(widths))
        layers = tuple(np.split(block, np.cumsum(widths)[:-1], axis=1))
        return cls(layers, Weights.from_flat(arch, flat[n_act:]))

    def copy(self) -> PathState:
        return PathState.from_flat(self.arch, self.m, self.to_flat().copy())

    def to_document(self) -> PathStateDocument:
        return PathStateDocument(
            layers=[x.tolist() for x in self.layers], weights=self.weights.to_document()
        )

    @classmethod
    def from_document(cls, doc: PathStateDocument) -> PathState:
        return cls(tuple(np.asarray(x) for x in doc.layers), Weights.from_document(doc.weights))


# ── Library construction ──────────────────────────────────────

def build_pair_library(
    ts: TimeSeries,
    spec: EmbeddingSpec,
    m: int,
    m_total: int | None = None,
    clean: TimeSeries | None = None,
) -> PairLibrary:
    """
    Pair every delay vector with its one-step successor.

    The first `m` pairs train; the remaining pairs (up to `m_total` pairs
    in all) are held out for validation.

    Raises:
        InvalidParameterError: m < 1 or m_total < m.
        InsufficientDataError: Fewer than m pairs available.
    """
    if m < 1:
        raise InvalidParameterError("M must be at least 1.", detail=f"got {m}")
    if ts.origin is not SeriesOrigin.RESCALED:
        logger.warning("Building pairs from a series that is not rescaled", origin=ts.origin.value)

    values = ts.values
    n_pairs = values.size - spec.window - 1
    if n_pairs < m:
        raise InsufficientDataError(
            "Not enough input/output pairs.", detail=f"{max(n_pairs, 0)} available, M={m}"
        )
    if m_total is not None:
        if m_total < m:
            raise InvalidParameterError("m_total must be at least M.", detail=f"m_total={m_total}, M={m}")
        n_pairs = min(n_pairs, m_total)

    def pairs(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cols = range(spec.d_e)
        inputs = np.column_stack([series[q * spec.tau : q * spec.tau + n_pairs] for q in cols])
        outputs = np.column_stack([series[q * spec.tau + 1 : q * spec.tau + 1 + n_pairs] for q in cols])
        return inputs, outputs

    inputs, outputs = pairs(values)
    clean_out = None
    if clean is not None:
        if len(clean) != len(ts):
            raise ShapeMismatchError("Clean series must align with the noisy one.")
        _, clean_out = pairs(clean.values)

    logger.debug("Pair library built", m=m, holdout=n_pairs - m, tau=spec.tau, d_e=spec.d_e)
    return PairLibrary(
        inputs=inputs[:m],
        outputs=outputs[:m],
        holdout_inputs=inputs[m:],
        holdout_outputs=outputs[m:],
        tau=spec.tau,
        clean_outputs=clean_out[:m] if clean_out is not None else None,
        clean_holdout_outputs=clean_out[m:] if clean_out is not None else None,
    )


# ── Layer rule ────────────────────────────────────────────────

def _transfer(arch: Architecture, layer: int, pre: np.ndarray) -> np.ndarray:
    return np.tanh(pre) if arch.transfer_is_tanh(layer) else pre


def _pre_activation(w: Weights, layer: int, x: np.ndarray) -> np.ndarray:
    pre = x @ w.matrices[layer].T
    if w.biases is not None:
        pre = pre + w.biases[layer]
    return pre


def forward(w: Weights, arch: Architecture | None, inputs: np.ndarray) -> list[np.ndarray]:
    """
    Run the layer rule from `inputs` (one D_E-vector or a batch of rows).

    Returns:
        Activations of every layer, layer 0 being the input.
    """
    arch = arch or w.arch
    if arch != w.arch:
        raise ShapeMismatchError("Weights were built for a different architecture.")
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[-1] != arch.d_e:
        raise ShapeMismatchError("Input width differs from D_E.", detail=f"{x.shape[-1]} != {arch.d_e}")
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("Network input must be finite.")
    activations = [x]
    for layer in range(arch.n_transitions):
        x = _transfer(arch, layer, _pre_activation(w, layer, x))
        activations.append(x)
    return activations


def path_from_forward(w: Weights, lib: PairLibrary) -> PathState:
    """The path whose activations follow the layer rule from the library inputs."""
    return PathState(tuple(forward(w, None, lib.inputs)), w)


# ── Action ────────────────────────────────────────────────────

def _check_library(ps: PathState, lib: PairLibrary) -> None:
    if ps.m != lib.m or ps.arch.d_e != lib.d_e:
        raise ShapeMismatchError(
            "Path and library disagree.", detail=f"path M={ps.m}, D_E={ps.arch.d_e}; library M={lib.m}, D_E={lib.d_e}"
        )


def _measurement_terms(ps: PathState, lib: PairLibrary, r_m: float) -> np.ndarray:
    arch = ps.arch
    norm = arch.layer_widths[0] + arch.layer_widths[-1]
    sq = ((ps.layers[0] - lib.inputs) ** 2).sum(axis=1) + ((ps.layers[-1] - lib.outputs) ** 2).sum(axis=1)
    return (r_m / 2.0) * sq / norm


def _model_terms(ps: PathState, r_f: float) -> np.ndarray:
    arch, w = ps.arch, ps.weights
    sq = np.zeros(ps.m)
    for layer in range(arch.n_transitions):
        resid = ps.layers[layer + 1] - _transfer(arch, layer, _pre_activation(w, layer, ps.layers[layer]))
        sq += (resid**2).sum(axis=1)
    return (r_f / 2.0) * sq / arch.model_normaliser


def measurement_error(ps: PathState, lib: PairLibrary, r_m: float = 1.0) -> float:
    """(1/M) sum_k (R_m/2) (1/(D_h0 + D_hF)) [|x(l_0) - input|^2 + |x(l_F) - output|^2]."""
    _check_library(ps, lib)
    return math.fsum(_measurement_terms(ps, lib, r_m).tolist()) / ps.m


def model_error(ps: PathState, arch: Architecture | None, r_f: float) -> float:
    """(1/M) sum_k (R_f/2) (1/sum_{l>=1} D_hl) sum_l |x(l+1) - f(W(l) x(l))|^2."""
    if arch is not None and arch != ps.arch:
        raise ShapeMismatchError("Path was built for a different architecture.")
    if r_f == 0.0:
        return 0.0
    return math.fsum(_model_terms(ps, r_f).tolist()) / ps.m


def total_action(ps: PathState, lib: PairLibrary, arch: Architecture | None, prec: Precisions) -> float:
    """A(X): measurement error plus model error."""
    return measurement_error(ps, lib, prec.r_m) + model_error(ps, arch, prec.r_f)


def _gradient_arrays(
    ps: PathState, lib: PairLibrary, prec: Precisions
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray] | None, float]:
    arch, w = ps.arch, ps.weights
    m = ps.m
    c_m = prec.r_m / (m * (arch.layer_widths[0] + arch.layer_widths[-1]))
    c_f = prec.r_f / (m * arch.model_normaliser)

    in_resid = ps.layers[0] - lib.inputs
    out_resid = ps.layers[-1] - lib.outputs
    meas_terms = 0.5 * c_m * m * ((in_resid**2).sum(axis=1) + (out_resid**2).sum(axis=1))

    grad_x = [np.zeros_like(x) for x in ps.layers]
    grad_x[0] += c_m * in_resid
    grad_x[-1] += c_m * out_resid
    grad_w = [np.zeros_like(mat) for mat in w.matrices]
    grad_b = [np.zeros_like(b) for b in w.biases] if w.biases is not None else None

    model_terms = np.zeros(m)
    if prec.r_f != 0.0:
        for layer in range(arch.n_transitions):
            x_l = ps.layers[layer]
            out = _transfer(arch, layer, _pre_activation(w, layer, x_l))
            resid = ps.layers[layer + 1] - out
            model_terms += 0.5 * c_f * m * (resid**2).sum(axis=1)
            delta = resid * (1.0 - out**2) if arch.transfer_is_tanh(layer) else resid
            grad_x[layer + 1] += c_f * resid
            grad_x[layer] -= c_f * (delta @ w.matrices[layer])
            grad_w[layer] = -c_f * (delta.T @ x_l)
            if grad_b is not None:
                grad_b[layer] = -c_f * delta.sum(axis=0)

    action = math.fsum(meas_terms.tolist()) / m + math.fsum(model_terms.tolist()) / m
    return grad_x, grad_w, grad_b, action


def action_gradient(ps: PathState, lib: PairLibrary, arch: Architecture | None, prec: Precisions) -> PathState:
    """Exact partial derivatives of `total_action`, laid out as a PathState."""
    if arch is not None and arch != ps.arch:
        raise ShapeMismatchError("Path was built for a different architecture.")
    _check_library(ps, lib)
    grad_x, grad_w, grad_b, _ = _gradient_arrays(ps, lib, prec)
    return PathState(tuple(grad_x), Weights(ps.arch, tuple(grad_w), tuple(grad_b) if grad_b is not None else None))


def action_and_gradient_flat(
    flat: np.ndarray, lib: PairLibrary, arch: Architecture, prec: Precisions
) -> tuple[float, np.ndarray]:
    """Action and flat gradient at a flat path vector, in one pass."""
    ps = PathState.from_flat(arch, lib.m, flat)
    grad_x, grad_w, grad_b, action = _gradient_arrays(ps, lib, prec)
    parts = [np.concatenate(grad_x, axis=1).ravel(), *(g.ravel() for g in grad_w)]
    if grad_b is not None:
        parts += grad_b
    return action, np.concatenate(parts)


# ── Persistence ───────────────────────────────────────────────

def save_weights(w: Weights, path: str | Path) -> None:
    Path(path).write_text(w.to_document().model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_weights(path: str | Path) -> Weights:
    """
    Raises:
        SeriesFormatError: Unreadable or malformed weights file.
    """
    try:
        doc = WeightsDocument.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as exc:
        raise SeriesFormatError(f"Could not read weights file {path}.", detail=str(exc)) from exc
    return Weights.from_document(doc)
