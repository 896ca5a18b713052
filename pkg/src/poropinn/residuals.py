"""PDE residuals of the coupled consolidation equations and the MSE losses.

The governing system couples two elastic equilibrium equations with a mass
balance equation; in nondimensional form it depends only on the parameter
pair (eta, beta).  Residual operators are defined once, as coefficient
tables over jet components, and consumed both eagerly (for analytical
verification) and as tape nodes (inside training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import FieldJet


@dataclass(frozen=True)
class NondimParams:
    """Nondimensional problem constants and source location."""

    eta: float
    beta: float
    omega: float
    x0: float
    z0: float
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.eta <= 0.0 or self.beta <= 0.0:
            raise ValueError("eta and beta must be positive")
        if not (0.0 < self.x0 < self.a and 0.0 < self.z0 < self.b):
            raise ValueError("source location must lie strictly inside the domain")


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional material constants of the porous medium."""

    lame_lambda: float  # stress units
    lame_mu: float      # stress units
    k: float            # hydraulic conductivity, length/time
    gamma_f: float      # fluid unit weight, force/volume
    length_l: float     # characteristic length

    def __post_init__(self):
        if self.lame_lambda < 0.0:
            raise ValueError("lame_lambda must be nonnegative")
        for name in ("lame_mu", "k", "gamma_f", "length_l"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class DimensionalScales:
    """Multiplicative factors taking dimensional quantities to nondimensional.

    nondim_x = coord_factor * x_bar, nondim_t = time_factor * t_bar,
    nondim_u = displacement_factor * u_bar, nondim_p = pressure_factor * p_bar.
    """

    eta: float
    beta: float
    coord_factor: float
    time_factor: float
    displacement_factor: float
    pressure_factor: float


def nondimensionalize(phys: PhysicalParams) -> DimensionalScales:
    """Derive (eta, beta) and the coordinate/field scale factors."""
    lam, mu = phys.lame_lambda, phys.lame_mu
    confined = lam + 2.0 * mu
    eta = 1.0 + lam / mu
    beta = phys.gamma_f * phys.length_l**2 / (confined * phys.k)
    return DimensionalScales(
        eta=eta,
        beta=beta,
        coord_factor=1.0 / phys.length_l,
        time_factor=confined * phys.k / (phys.gamma_f * phys.length_l**2),
        displacement_factor=1.0 / phys.length_l,
        pressure_factor=1.0 / confined,
    )


@dataclass(frozen=True)
class ResidualTriple:
    """Equilibrium-x, equilibrium-z and mass-balance residuals at one point."""

    f: float
    g: float
    h: float


@dataclass(frozen=True)
class LossBreakdown:
    """All nine loss scalars of one training step or epoch."""

    mse_u: float
    mse_v: float
    mse_p: float
    mse_f: float
    mse_g: float
    mse_h: float
    mse_t: float
    mse_c: float
    total: float

    FIELDS = ("mse_u", "mse_v", "mse_p", "mse_f", "mse_g", "mse_h", "mse_t", "mse_c", "total")

    @staticmethod
    def from_components(mse_u, mse_v, mse_p, mse_f, mse_g, mse_h) -> "LossBreakdown":
        mse_t = mse_u + mse_v + mse_p
        mse_c = mse_f + mse_g + mse_h
        return LossBreakdown(mse_u, mse_v, mse_p, mse_f, mse_g, mse_h,
                             mse_t, mse_c, mse_t + mse_c)

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, name) for name in self.FIELDS)


def residual_terms(eta: float) -> dict[str, list[tuple[str, str, float]]]:
    """Coefficient tables of the three residual operators.

    Each entry is (field, jet component, coefficient).  The mass-balance
    Laplacian carries the sign under which the analytical benchmark fields
    are an exact solution of the operator (the drained-source consolidation
    system); the verification suite pins this down against the series
    solution.  The source term -beta*Q is appended separately.
    """
    e1 = eta + 1.0
    return {
        "f": [("u", "dxx", e1), ("u", "dzz", 1.0), ("v", "dxz", eta), ("p", "dx", e1)],
        "g": [("v", "dxx", 1.0), ("v", "dzz", e1), ("u", "dxz", eta), ("p", "dz", e1)],
        "h": [("u", "dxt", 1.0), ("v", "dzt", 1.0), ("p", "dxx", 1.0), ("p", "dzz", 1.0)],
    }


def residuals(jet: FieldJet, params: NondimParams, q_value: float) -> ResidualTriple:
    """Evaluate the three residuals from one FieldJet and the source value."""
    terms = residual_terms(params.eta)
    out = {}
    for name, table in terms.items():
        acc = 0.0
        for field, comp, coeff in table:
            acc += coeff * jet[field].component(comp)
        out[name] = acc
    out["h"] -= params.beta * q_value
    return ResidualTriple(out["f"], out["g"], out["h"])


def training_loss(pred: np.ndarray, target: np.ndarray):
    """Per-field MSE over N points plus their sum, in normalized output space."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError("pred and target must both be (N, 3)")
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    sq = (pred - target) ** 2
    mse_u, mse_v, mse_p = sq.mean(axis=0)
    return float(mse_u), float(mse_v), float(mse_p), float(mse_u + mse_v + mse_p)


def constraint_loss(res: np.ndarray):
    """Per-residual MSE over N points plus their sum.

    ``res`` is (N, 3) with columns f, g, h (a list of ResidualTriple is
    also accepted).
    """
    if len(res) and isinstance(res[0], ResidualTriple):
        res = np.array([(r.f, r.g, r.h) for r in res])
    res = np.asarray(res, dtype=float)
    if res.ndim != 2 or res.shape[1] != 3:
        raise ValueError("residuals must be (N, 3)")
    if res.shape[0] == 0:
        raise ValueError("empty batch")
    sq = res**2
    mse_f, mse_g, mse_h = sq.mean(axis=0)
    return float(mse_f), float(mse_g), float(mse_h), float(mse_f + mse_g + mse_h)


def total_loss(mse_t: float, mse_c: float) -> float:
    """Unweighted sum of training and constraint losses."""
    return mse_t + mse_c
