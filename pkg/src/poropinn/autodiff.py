"""Differentiation engine.

Two cooperating pieces:

* ``Jet2`` -- a scalar value carried together with its first and second
  partial derivatives with respect to the three inputs (x, z, t).  Jets
  propagate forward through elementary operations via the second-order
  chain rule, so derivatives are exact to machine precision.

* ``Tensor`` -- a node in a reverse-mode tape over numpy arrays.  The
  network forward pass builds jet components as ``Tensor`` nodes; calling
  :func:`backward` on a scalar loss node accumulates exact gradients with
  respect to every leaf (the network weights and biases), including paths
  that run through second input-derivatives inside the PDE residuals.

All arithmetic is float64.  That is deliberate: the residual losses mix
third-order derivative information and 32-bit accumulation is not accurate
enough for the finite-difference tolerances used in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

AXES = ("x", "z", "t")
D2_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
D2_NAMES = ("xx", "zz", "tt", "xz", "xt", "zt")


class DivergedError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _tanh_derivs(x):
    t = math.tanh(x)
    s1 = 1.0 - t * t
    return t, s1, -2.0 * t * s1


def _sigmoid_derivs(x):
    s = 1.0 / (1.0 + math.exp(-x))
    s1 = s * (1.0 - s)
    return s, s1, s1 * (1.0 - 2.0 * s)


def _relu_derivs(x):
    # Subgradient convention: relu'(0) = 0, relu'' = 0 everywhere.
    return (x if x > 0.0 else 0.0), (1.0 if x > 0.0 else 0.0), 0.0


#: activation name -> callable returning (value, first, second derivative)
ACTIVATIONS = {
    "tanh": _tanh_derivs,
    "sigmoid": _sigmoid_derivs,
    "relu": _relu_derivs,
}


# ---------------------------------------------------------------------------
# scalar second-order jets
# ---------------------------------------------------------------------------

@dataclass
class Jet2:
    """Value plus first and second partials w.r.t. the inputs (x, z, t).

    ``d2`` is stored as the full symmetric 3x3 matrix.
    """

    value: float
    d1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d2: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        self.d1 = np.asarray(self.d1, dtype=float).reshape(3)
        d2 = np.asarray(self.d2, dtype=float).reshape(3, 3)
        if not np.array_equal(d2, d2.T):
            d2 = 0.5 * (d2 + d2.T)
        self.d2 = d2

    @staticmethod
    def constant(c: float) -> "Jet2":
        return Jet2(float(c))

    @staticmethod
    def coordinate(value: float, axis: int) -> "Jet2":
        """Seed jet of one input coordinate: unit first derivative along ``axis``."""
        d1 = np.zeros(3)
        d1[axis] = 1.0
        return Jet2(float(value), d1)

    @staticmethod
    def seed(point) -> tuple["Jet2", "Jet2", "Jet2"]:
        """Coordinate jets of (x, z, t) at ``point``."""
        x, z, t = point
        return (Jet2.coordinate(x, 0), Jet2.coordinate(z, 1), Jet2.coordinate(t, 2))

    def __add__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value + other.value, self.d1 + other.d1, self.d2 + other.d2)

    def __sub__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value - other.value, self.d1 - other.d1, self.d2 - other.d2)

    def __mul__(self, other):
        if isinstance(other, Jet2):
            cross = np.outer(self.d1, other.d1)
            return Jet2(
                self.value * other.value,
                self.d1 * other.value + self.value * other.d1,
                self.d2 * other.value + self.value * other.d2 + cross + cross.T,
            )
        return self.scale(other)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Jet2":
        c = float(c)
        return Jet2(c * self.value, c * self.d1, c * self.d2)

    def apply(self, activation: str) -> "Jet2":
        """Chain a scalar activation through the jet (Faa di Bruno to order 2)."""
        f0, f1, f2 = ACTIVATIONS[activation](self.value)
        return Jet2(f0, f1 * self.d1, f1 * self.d2 + f2 * np.outer(self.d1, self.d1))

    def component(self, name: str) -> float:
        """Look up a component by name: value, dx/dz/dt, dxx/dzz/dtt/dxz/dxt/dzt."""
        if name == "value":
            return float(self.value)
        if name in ("dx", "dz", "dt"):
            return float(self.d1[AXES.index(name[1])])
        i, j = AXES.index(name[1]), AXES.index(name[2])
        return float(self.d2[i, j])

    def is_finite(self) -> bool:
        return (
            math.isfinite(self.value)
            and bool(np.isfinite(self.d1).all())
            and bool(np.isfinite(self.d2).all())
        )


def affine_combine(jets, coeffs, const: float = 0.0) -> Jet2:
    """Sum of ``coeffs[i] * jets[i]`` plus a constant."""
    value = float(const)
    d1 = np.zeros(3)
    d2 = np.zeros((3, 3))
    for j, c in zip(jets, coeffs):
        value += c * j.value
        d1 += c * j.d1
        d2 += c * j.d2
    return Jet2(value, d1, d2)


def jet_compose(op_kind: str, *operands, coeffs=None, const=0.0, activation=None) -> Jet2:
    """Compose jets through one elementary operation.

    ``op_kind`` is one of add, sub, mul, scale, affine_combine,
    activation_apply.  ``scale`` expects (jet, scalar); ``affine_combine``
    takes any number of jets plus ``coeffs``/``const``; ``activation_apply``
    takes one jet plus ``activation``.
    """
    if op_kind == "add":
        return operands[0] + operands[1]
    if op_kind == "sub":
        return operands[0] - operands[1]
    if op_kind == "mul":
        return operands[0] * operands[1]
    if op_kind == "scale":
        return operands[0].scale(operands[1])
    if op_kind in ("affine_combine", "affine-combine"):
        return affine_combine(operands, coeffs, const)
    if op_kind in ("activation_apply", "activation-apply"):
        return operands[0].apply(activation)
    raise ValueError(f"unknown jet operation {op_kind!r}")


# ---------------------------------------------------------------------------
# reverse-mode tape over numpy arrays
# ---------------------------------------------------------------------------

class Tensor:
    """One node of the reverse-mode graph.

    ``value`` is a float64 ndarray.  ``parents`` and ``bwd`` describe how to
    push an incoming gradient to the parents; constants carry neither.
    """

    __slots__ = ("value", "parents", "bwd", "grad", "needs_grad")

    def __init__(self, value, parents=(), bwd=None, needs_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.bwd = bwd
        self.grad = None
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def leaf(value) -> "Tensor":
        return Tensor(value, needs_grad=True)

    @staticmethod
    def constant(value) -> "Tensor":
        return Tensor(value)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # -- elementary ops -------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        out = Tensor(self.value + other.value, (self, other))
        def bwd(g):
            if self.needs_grad:
                self._accum(g)
            if other.needs_grad:
                other._accum(g)
        out.bwd = bwd
        return out

    def __sub__(self, other: "Tensor") -> "Tensor":
        out = Tensor(self.value - other.value, (self, other))
        def bwd(g):
            if self.needs_grad:
                self._accum(g)
            if other.needs_grad:
                other._accum(-g)
        out.bwd = bwd
        return out

    def __mul__(self, other: "Tensor") -> "Tensor":
        out = Tensor(self.value * other.value, (self, other))
        def bwd(g):
            if self.needs_grad:
                self._accum(g * other.value)
            if other.needs_grad:
                other._accum(g * self.value)
        out.bwd = bwd
        return out

    def scale(self, c: float) -> "Tensor":
        out = Tensor(self.value * c, (self,))
        def bwd(g):
            if self.needs_grad:
                self._accum(g * c)
        out.bwd = bwd
        return out

    def add_const(self, arr) -> "Tensor":
        out = Tensor(self.value + arr, (self,))
        def bwd(g):
            if self.needs_grad:
                self._accum(g)
        out.bwd = bwd
        return out

    def rsub_const(self, c: float) -> "Tensor":
        """c - self."""
        out = Tensor(c - self.value, (self,))
        def bwd(g):
            if self.needs_grad:
                self._accum(-g)
        out.bwd = bwd
        return out


def matmul_t(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` for x (N, fan_in) and w (fan_out, fan_in)."""
    out = Tensor(x.value @ w.value.T, (x, w))
    def bwd(g):
        if x.needs_grad:
            x._accum(g @ w.value)
        if w.needs_grad:
            w._accum(g.T @ x.value)
    out.bwd = bwd
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add for x (N, fan_out), b (fan_out,)."""
    out = Tensor(x.value + b.value, (x, b))
    def bwd(g):
        if x.needs_grad:
            x._accum(g)
        if b.needs_grad:
            b._accum(g.sum(axis=0))
    out.bwd = bwd
    return out


def column(x: Tensor, j: int) -> Tensor:
    out = Tensor(x.value[:, j], (x,))
    def bwd(g):
        if x.needs_grad:
            full = np.zeros_like(x.value)
            full[:, j] = g
            x._accum(full)
    out.bwd = bwd
    return out


def lincomb(tensors, coeffs, const=None) -> Tensor:
    """Fixed linear combination sum_i coeffs[i]*tensors[i] (+ const array)."""
    acc = coeffs[0] * tensors[0].value
    for t, c in zip(tensors[1:], coeffs[1:]):
        acc = acc + c * t.value
    if const is not None:
        acc = acc + const
    out = Tensor(acc, tuple(tensors))
    def bwd(g):
        for t, c in zip(tensors, coeffs):
            if t.needs_grad:
                t._accum(g * c)
    out.bwd = bwd
    return out


def tanh(x: Tensor) -> Tensor:
    v = np.tanh(x.value)
    out = Tensor(v, (x,))
    def bwd(g):
        if x.needs_grad:
            x._accum(g * (1.0 - v * v))
    out.bwd = bwd
    return out


def sigmoid(x: Tensor) -> Tensor:
    v = 1.0 / (1.0 + np.exp(-x.value))
    out = Tensor(v, (x,))
    def bwd(g):
        if x.needs_grad:
            x._accum(g * v * (1.0 - v))
    out.bwd = bwd
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0.0
    out = Tensor(np.where(mask, x.value, 0.0), (x,))
    def bwd(g):
        if x.needs_grad:
            x._accum(g * mask)
    out.bwd = bwd
    return out


def heaviside(x: Tensor) -> Tensor:
    """Step function (x > 0); derivative taken as zero everywhere."""
    return Tensor(np.where(x.value > 0.0, 1.0, 0.0), (x,), bwd=lambda g: None)


def mean_square(x: Tensor) -> Tensor:
    """Mean of squared entries; the basic MSE reduction."""
    n = x.value.size
    out = Tensor(np.dot(x.value, x.value) / n, (x,))
    def bwd(g):
        if x.needs_grad:
            x._accum((2.0 / n) * g * x.value)
    out.bwd = bwd
    return out


def add_scalars(tensors) -> Tensor:
    out = Tensor(sum(t.value for t in tensors), tuple(tensors))
    def bwd(g):
        for t in tensors:
            if t.needs_grad:
                t._accum(g)
    out.bwd = bwd
    return out


def activation_nodes(z: Tensor, kind: str):
    """Activation value and its first/second derivative as tape nodes.

    Building sigma' and sigma'' out of elementary nodes means the reverse
    pass differentiates through them automatically, which is what makes the
    loss gradient exact through the second-order jet components.
    """
    if kind == "tanh":
        a0 = tanh(z)
        s1 = (a0 * a0).rsub_const(1.0)
        s2 = a0.scale(-2.0) * s1
        return a0, s1, s2
    if kind == "sigmoid":
        a0 = sigmoid(z)
        s1 = a0 * a0.rsub_const(1.0)
        s2 = s1 * a0.scale(2.0).rsub_const(1.0)
        return a0, s1, s2
    if kind == "relu":
        return relu(z), heaviside(z), None
    raise ValueError(f"unknown activation {kind!r}")


def backward(root: Tensor) -> None:
    """Reverse accumulation from a scalar root node.

    Topological order is rebuilt per call; gradient accumulation order is
    fixed by graph construction order, so repeated runs are bit-identical.
    """
    if root.value.size != 1:
        raise ValueError("backward() expects a scalar root")
    if not np.isfinite(root.value):
        raise DivergedError("loss is not finite")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited and parent.needs_grad:
                stack.append((parent, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)


def loss_parameter_gradient(loss: Tensor, leaves) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. flattened leaves, in leaf order.

    Raises :class:`DivergedError` if the loss is not finite (training
    divergence); leaves untouched by the graph get zero entries.
    """
    backward(loss)
    parts = []
    for leaf in leaves:
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        parts.append(np.asarray(g, dtype=np.float64).ravel())
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# finite-difference verification harness
# ---------------------------------------------------------------------------

@dataclass
class FdEntry:
    name: str
    analytic: float
    numeric: float

    @property
    def abs_diff(self) -> float:
        return abs(self.analytic - self.numeric)

    @property
    def rel_diff(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-6)
        return self.abs_diff / scale


@dataclass
class FdReport:
    point: tuple
    step: float
    entries: list[FdEntry]

    def entry(self, name: str) -> FdEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def max_abs(self) -> float:
        return max(e.abs_diff for e in self.entries)

    @property
    def max_rel(self) -> float:
        return max(e.rel_diff for e in self.entries)

    def max_rel_over(self, names) -> float:
        return max(self.entry(n).rel_diff for n in names)

    def __str__(self) -> str:
        lines = [f"fd check at {self.point}, step {self.step:g}"]
        for e in self.entries:
            lines.append(
                f"  {e.name:5s} analytic={e.analytic: .12e} "
                f"numeric={e.numeric: .12e} abs={e.abs_diff:.3e} rel={e.rel_diff:.3e}"
            )
        return "\n".join(lines)


def fd_check(fn, point, step: float = 1e-4, jet: Jet2 | None = None) -> FdReport:
    """Compare an analytic jet against central differences of ``fn``.

    ``fn`` maps a length-3 point to a scalar; ``jet`` holds the analytic
    derivatives at ``point``.  Discrepancies are reported, never raised.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    if jet is None:
        raise ValueError("fd_check needs the analytic jet to compare against")
    p = np.asarray(point, dtype=float)
    h = float(step)
    f0 = fn(p)
    entries = [FdEntry("value", jet.value, f0)]

    for i, ax in enumerate(AXES):
        e = np.zeros(3)
        e[i] = h
        fp, fm = fn(p + e), fn(p - e)
        entries.append(FdEntry(f"d{ax}", float(jet.d1[i]), (fp - fm) / (2 * h)))

    for (i, j), name in zip(D2_PAIRS, D2_NAMES):
        if i == j:
            e = np.zeros(3)
            e[i] = h
            num = (fn(p + e) - 2 * f0 + fn(p - e)) / h**2
        else:
            ei = np.zeros(3)
            ej = np.zeros(3)
            ei[i] = h
            ej[j] = h
            num = (fn(p + ei + ej) - fn(p + ei - ej) - fn(p - ei + ej) + fn(p - ei - ej)) / (4 * h**2)
        entries.append(FdEntry(f"d{name}", float(jet.d2[i, j]), num))

    return FdReport(tuple(p), h, entries)
