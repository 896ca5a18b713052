"""Fully-connected network mapping (x, z, t) to (u, v, p).

Inputs are affinely normalized to [0, 1] and outputs to [-1, 1]; the jet
forward pass folds both affine maps into the propagated derivatives so a
:class:`FieldJet` always speaks unnormalized nondimensional coordinates and
field scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import D2_PAIRS, Jet2, Tensor


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of the fully-connected network (input and output fixed at 3)."""

    hidden_layers: int
    hidden_units: int
    activation: str = "tanh"

    INPUT_DIM = 3
    OUTPUT_DIM = 3

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_units < 1:
            raise ValueError("hidden_layers and hidden_units must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layer_sizes(self) -> list[int]:
        return [self.INPUT_DIM] + [self.hidden_units] * self.hidden_layers + [self.OUTPUT_DIM]

    def param_count(self) -> int:
        sizes = self.layer_sizes()
        return sum((fi + 1) * fo for fi, fo in zip(sizes[:-1], sizes[1:]))


@dataclass
class ParameterSet:
    """Per-layer weight matrices (fan_out x fan_in) and bias vectors.

    Flattening order is canonical: layer 0 weights row-major, layer 0 bias,
    layer 1 weights, ... -- everything downstream (gradients, Adam state,
    checkpoints) is aligned to it.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i in range(len(self.weights) - 1):
            if self.weights[i + 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError(f"layer {i + 1} fan_in does not chain with layer {i} fan_out")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias length must equal weight fan_out")

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @staticmethod
    def from_flat(spec: MlpSpec, flat: np.ndarray) -> "ParameterSet":
        sizes = spec.layer_sizes()
        weights, biases = [], []
        pos = 0
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos:pos + fi * fo].reshape(fo, fi).copy())
            pos += fi * fo
            biases.append(flat[pos:pos + fo].copy())
            pos += fo
        if pos != flat.size:
            raise ValueError("flat vector length does not match the spec")
        return ParameterSet(weights, biases)

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def allclose(self, other: "ParameterSet", tol: float = 0.0) -> bool:
        return all(
            np.allclose(a, b, rtol=0.0, atol=tol)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


def init_params(spec: MlpSpec, seed: int) -> ParameterSet:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes()
    weights, biases = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-bound, bound, size=(fo, fi)))
        biases.append(np.zeros(fo))
    return ParameterSet(weights, biases)


@dataclass
class NormalizationMaps:
    """Affine input maps to [0, 1] and output maps to [-1, 1].

    Stored as (scale, offset) pairs per variable: normalized = scale * raw
    + offset.  Output scaling is symmetric max-abs, which keeps the zero
    level of the pressure at the drained boundaries.
    """

    in_scale: np.ndarray
    in_offset: np.ndarray
    out_scale: np.ndarray
    out_offset: np.ndarray

    def __post_init__(self):
        for name in ("in_scale", "in_offset", "out_scale", "out_offset"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if np.any(self.in_scale == 0.0) or np.any(self.out_scale == 0.0):
            raise ValueError("normalization scales must be nonzero")

    @staticmethod
    def from_bounds(in_lo, in_hi, out_absmax) -> "NormalizationMaps":
        in_lo = np.asarray(in_lo, dtype=float)
        in_hi = np.asarray(in_hi, dtype=float)
        if np.any(in_hi <= in_lo):
            raise ValueError("input bounds must satisfy hi > lo")
        in_scale = 1.0 / (in_hi - in_lo)
        # Degenerate all-zero output columns get unit scale.
        m = np.where(np.asarray(out_absmax, dtype=float) > 0.0, out_absmax, 1.0)
        return NormalizationMaps(in_scale, -in_lo * in_scale, 1.0 / m, np.zeros(3))

    @staticmethod
    def from_data(inputs: np.ndarray, outputs: np.ndarray) -> "NormalizationMaps":
        return NormalizationMaps.from_bounds(
            inputs.min(axis=0), inputs.max(axis=0), np.abs(outputs).max(axis=0)
        )

    def normalize_inputs(self, xzt: np.ndarray) -> np.ndarray:
        return xzt * self.in_scale + self.in_offset

    def normalize_outputs(self, uvp: np.ndarray) -> np.ndarray:
        return uvp * self.out_scale + self.out_offset

    def denormalize_outputs(self, norm: np.ndarray) -> np.ndarray:
        return (norm - self.out_offset) / self.out_scale

    @property
    def output_gains(self) -> np.ndarray:
        """Factor turning a normalized-output derivative into a raw one."""
        return 1.0 / self.out_scale


@dataclass
class FieldJet:
    """Jets of the three fields at one point, in unnormalized coordinates."""

    u: Jet2
    v: Jet2
    p: Jet2

    def __getitem__(self, name: str) -> Jet2:
        return {"u": self.u, "v": self.v, "p": self.p}[name]

    def is_finite(self) -> bool:
        return self.u.is_finite() and self.v.is_finite() and self.p.is_finite()


#: jet component slots: value, 3 first, 6 second derivatives
JET_SLOTS = 10


def build_jet_graph(w_nodes, b_nodes, spec: MlpSpec, maps: NormalizationMaps,
                    points: np.ndarray) -> list[Tensor]:
    """Forward-propagate second-order jets through the network as tape nodes.

    Returns 10 nodes of shape (N, 3): the raw normalized outputs and their
    derivatives with respect to the *unnormalized* inputs (the input affine
    map is folded into the derivative seeds).  Output denormalization is
    left to the caller so the data loss can stay in normalized space.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    xn = maps.normalize_inputs(points)

    comps = [Tensor.constant(xn)]
    for i in range(3):
        seed = np.zeros((n, 3))
        seed[:, i] = maps.in_scale[i]
        comps.append(Tensor.constant(seed))
    comps.extend(Tensor.constant(np.zeros((n, 3))) for _ in D2_PAIRS)

    n_layers = len(w_nodes)
    for layer, (w, b) in enumerate(zip(w_nodes, b_nodes)):
        lin = [ad.matmul_t(c, w) for c in comps]
        lin[0] = ad.add_bias(lin[0], b)
        if layer == n_layers - 1:
            comps = lin
            break
        a0, s1, s2 = ad.activation_nodes(lin[0], spec.activation)
        out = [a0]
        d1 = [s1 * lin[1 + i] for i in range(3)]
        out.extend(d1)
        for slot, (i, j) in enumerate(D2_PAIRS):
            term = s1 * lin[4 + slot]
            if s2 is not None:
                term = term + s2 * (lin[1 + i] * lin[1 + j])
            out.append(term)
        comps = out
    return comps


def _layer_params_as_nodes(params: ParameterSet, trainable: bool = False):
    make = Tensor.leaf if trainable else Tensor.constant
    return [make(w) for w in params.weights], [make(b) for b in params.biases]


def forward_values(params: ParameterSet, spec: MlpSpec, maps: NormalizationMaps,
                   points: np.ndarray) -> np.ndarray:
    """Plain batched forward pass; returns denormalized (N, 3) predictions."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    act = {"tanh": np.tanh,
           "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
           "relu": lambda x: np.where(x > 0.0, x, 0.0)}[spec.activation]
    a = maps.normalize_inputs(points)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if not np.isfinite(z).all():
            raise FloatingPointError(f"non-finite activation entering layer {i}")
        a = z if i == last else act(z)
    return maps.denormalize_outputs(a)


def forward_jet(params: ParameterSet, spec: MlpSpec, maps: NormalizationMaps,
                point) -> FieldJet:
    """Fields and all first/second input-derivatives at one point."""
    w_nodes, b_nodes = _layer_params_as_nodes(params)
    comps = build_jet_graph(w_nodes, b_nodes, spec, maps, np.asarray(point, dtype=float))
    raw = np.stack([c.value[0] for c in comps])  # (10, 3)
    if not np.isfinite(raw).all():
        forward_values(params, spec, maps, point)  # names the offending layer
        raise FloatingPointError("non-finite derivative component in forward pass")

    jets = []
    for f in range(3):
        gain = maps.output_gains[f]
        value = (raw[0, f] - maps.out_offset[f]) * gain
        d1 = raw[1:4, f] * gain
        d2 = np.zeros((3, 3))
        for slot, (i, j) in enumerate(D2_PAIRS):
            d2[i, j] = d2[j, i] = raw[4 + slot, f] * gain
        jets.append(Jet2(value, d1, d2))
    return FieldJet(*jets)


def forward(params: ParameterSet, spec: MlpSpec, maps: NormalizationMaps,
            point) -> tuple[float, float, float]:
    """Denormalized (u, v, p) prediction at one point.

    Shares the jet forward pass, so its values equal forward_jet's exactly.
    """
    jet = forward_jet(params, spec, maps, point)
    return (jet.u.value, jet.v.value, jet.p.value)
