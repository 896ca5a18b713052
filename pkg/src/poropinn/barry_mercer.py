"""Exact series solution of the Barry-Mercer point-source problem.

An oscillating point source inside a rectangular poroelastic medium with
drained boundaries admits a closed-form double sine/cosine series solution.
This module evaluates that solution (scalar, scattered-batch and full-grid
variants), the source term, and generates datasets from it.

Truncation is an implementation necessity: the series is summed over
1..n_max x 1..q_max.  Summation runs q innermost, n outermost, in plain
64-bit accumulation; a compensated (exactly rounded) variant is available
for the scalar path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CollocationSet
from .network import NormalizationMaps
from .residuals import NondimParams

#: largest x with exp(-x) > 0 in float64; modes beyond it contribute exact zeros
_EXP_CUTOFF = 745.0


@dataclass(frozen=True)
class DomainSpec:
    """Nondimensional extents of the medium and the end time."""

    a: float
    b: float
    t_max: float

    def __post_init__(self):
        if self.a <= 0.0 or self.b <= 0.0 or self.t_max <= 0.0:
            raise ValueError("domain extents and t_max must be positive")


@dataclass(frozen=True)
class SourceSpec:
    """Oscillating point source and how its delta spike is represented."""

    x0: float
    z0: float
    omega: float
    mollifier_mode: str = "gaussian"  # gaussian | grid_delta | omit
    epsilon: float = 0.025

    def __post_init__(self):
        if self.mollifier_mode not in ("gaussian", "grid_delta", "omit"):
            raise ValueError(f"unknown mollifier mode {self.mollifier_mode!r}")
        if self.mollifier_mode == "gaussian" and self.epsilon <= 0.0:
            raise ValueError("gaussian mollifier needs epsilon > 0")


@dataclass(frozen=True)
class SeriesTruncation:
    """Upper limits of the double series."""

    n_max: int = 200
    q_max: int = 200

    def __post_init__(self):
        if self.n_max < 1 or self.q_max < 1:
            raise ValueError("truncation limits must be >= 1")


def lambda_n(n: int, a: float) -> float:
    return n * math.pi / a


def lambda_q(q: int, b: float) -> float:
    return q * math.pi / b


def lambda_nq(n: int, q: int, a: float, b: float) -> float:
    return lambda_n(n, a) ** 2 + lambda_q(q, b) ** 2


def p_hat(n: int, q: int, t: float, params: NondimParams, domain: DomainSpec) -> float:
    """Modal pressure coefficient at time t."""
    ln = lambda_n(n, domain.a)
    lq = lambda_q(q, domain.b)
    lnq = ln * ln + lq * lq
    w = params.omega
    timefac = lnq * math.sin(w * t) - w * math.cos(w * t) + w * math.exp(-lnq * t)
    return -params.beta * math.sin(ln * params.x0) * math.sin(lq * params.z0) \
        / (lnq * lnq + w * w) * timefac


def u_hat(n: int, q: int, t: float, params: NondimParams, domain: DomainSpec) -> float:
    """Modal horizontal-displacement coefficient."""
    ln = lambda_n(n, domain.a)
    lnq = lambda_nq(n, q, domain.a, domain.b)
    return ln / lnq * p_hat(n, q, t, params, domain)


def v_hat(n: int, q: int, t: float, params: NondimParams, domain: DomainSpec) -> float:
    """Modal vertical-displacement coefficient."""
    lq = lambda_q(q, domain.b)
    lnq = lambda_nq(n, q, domain.a, domain.b)
    return lq / lnq * p_hat(n, q, t, params, domain)


class _ModalTables:
    """Mode-indexed arrays reused across evaluations at one truncation."""

    def __init__(self, params: NondimParams, domain: DomainSpec, trunc: SeriesTruncation):
        self.params = params
        self.domain = domain
        self.trunc = trunc
        self.ln = np.arange(1, trunc.n_max + 1) * np.pi / domain.a
        self.lq = np.arange(1, trunc.q_max + 1) * np.pi / domain.b
        self.ln2 = self.ln**2
        self.lq2 = self.lq**2
        self.lnq = self.ln2[:, None] + self.lq2[None, :]
        w = params.omega
        amp = -params.beta * np.sin(self.ln * params.x0)[:, None] \
            * np.sin(self.lq * params.z0)[None, :] / (self.lnq**2 + w * w)
        self.w_sin = amp * self.lnq
        self.w_cos = -w * amp
        self.w_exp = w * amp
        self.mode_u = self.ln[:, None] / self.lnq
        self.mode_v = self.lq[None, :] / self.lnq

    def pressure_modes(self, t: float) -> np.ndarray:
        w = self.params.omega
        return (self.w_sin * math.sin(w * t) + self.w_cos * math.cos(w * t)
                + self.w_exp * np.exp(-self.lnq * t))

    def exp_block_size(self, t: float) -> tuple[int, int]:
        """Mode block outside which exp(-lnq*t) underflows to exactly zero."""
        if t <= 0.0:
            return self.trunc.n_max, self.trunc.q_max
        lim = _EXP_CUTOFF / t
        nb = int(np.searchsorted(self.ln2, lim, side="right")) + 1
        qb = int(np.searchsorted(self.lq2, lim, side="right")) + 1
        return min(nb, self.trunc.n_max), min(qb, self.trunc.q_max)


def solution_at(x: float, z: float, t: float, params: NondimParams,
                domain: DomainSpec, trunc: SeriesTruncation,
                compensated: bool = False) -> tuple[float, float, float]:
    """Truncated-series (u, v, p) at a single point."""
    tables = _ModalTables(params, domain, trunc)
    ph = tables.pressure_modes(t)
    uh = tables.mode_u * ph
    vh = tables.mode_v * ph
    sx, cx = np.sin(tables.ln * x), np.cos(tables.ln * x)
    sz, cz = np.sin(tables.lq * z), np.cos(tables.lq * z)
    pref = 4.0 / (domain.a * domain.b)

    def contract(modal, fx, fz):
        terms = modal * fx[:, None] * fz[None, :]
        if compensated:
            return pref * math.fsum(terms.ravel())
        return pref * float(terms.sum(axis=1).sum())

    return (contract(uh, cx, sz), contract(vh, sx, cz), contract(ph, sx, sz))


def solution_at_points(points: np.ndarray, params: NondimParams, domain: DomainSpec,
                       trunc: SeriesTruncation, chunk: int = 256) -> np.ndarray:
    """Truncated-series fields at scattered (x, z, t) rows; returns (N, 3).

    The sin/cos parts of the time factor separate from the mode index, so
    they reduce to two weighted spatial sums; the decaying exponential part
    is summed only over the mode block where it has not underflowed to zero
    (exact, not an approximation).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tables = _ModalTables(params, domain, trunc)
    pref = 4.0 / (domain.a * domain.b)
    out = np.empty((points.shape[0], 3))

    for start in range(0, points.shape[0], chunk):
        pts = points[start:start + chunk]
        x, z, t = pts[:, 0], pts[:, 1], pts[:, 2]
        sxm, cxm = np.sin(np.outer(tables.ln, x)), np.cos(np.outer(tables.ln, x))
        szm, czm = np.sin(np.outer(tables.lq, z)), np.cos(np.outer(tables.lq, z))
        st, ct = np.sin(params.omega * t), np.cos(params.omega * t)
        for fi, (mode_fac, fx, fz) in enumerate((
                (tables.mode_u, cxm, szm),
                (tables.mode_v, sxm, czm),
                (1.0, sxm, szm))):
            ws, wc, we = tables.w_sin * mode_fac, tables.w_cos * mode_fac, tables.w_exp * mode_fac
            acc = np.einsum("qm,qm->m", ws.T @ fx, fz) * st
            acc += np.einsum("qm,qm->m", wc.T @ fx, fz) * ct
            for m, tm in enumerate(t):
                nb, qb = tables.exp_block_size(tm)
                blk = np.exp(-tables.lnq[:nb, :qb] * tm) * we[:nb, :qb]
                acc[m] += (fx[:nb, m] @ blk) @ fz[:qb, m]
            out[start:start + len(pts), fi] = pref * acc
    return out


def solution_on_grid(params: NondimParams, domain: DomainSpec,
                     x_axis: np.ndarray, z_axis: np.ndarray, t_axis: np.ndarray,
                     trunc: SeriesTruncation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated-series fields on a tensor grid; returns (U, V, P) of shape
    (len(x_axis), len(z_axis), len(t_axis))."""
    tables = _ModalTables(params, domain, trunc)
    pref = 4.0 / (domain.a * domain.b)
    sx = np.sin(np.outer(tables.ln, x_axis))
    cx = np.cos(np.outer(tables.ln, x_axis))
    sz = np.sin(np.outer(tables.lq, z_axis))
    cz = np.cos(np.outer(tables.lq, z_axis))
    shape = (len(x_axis), len(z_axis), len(t_axis))
    U, V, P = np.empty(shape), np.empty(shape), np.empty(shape)
    for it, t in enumerate(t_axis):
        ph = tables.pressure_modes(float(t))
        U[:, :, it] = pref * (cx.T @ (tables.mode_u * ph) @ sz)
        V[:, :, it] = pref * (sx.T @ (tables.mode_v * ph) @ cz)
        P[:, :, it] = pref * (sx.T @ ph @ sz)
    return U, V, P


def sine_series_delta(r: np.ndarray, r0: float, count: int, length: float) -> np.ndarray:
    """Truncated sine-series representation of delta(r - r0) on (0, length)."""
    lam = np.arange(1, count + 1) * np.pi / length
    return 2.0 / length * np.einsum("n,n...->...", np.sin(lam * r0),
                                    np.sin(np.multiply.outer(lam, np.asarray(r, dtype=float))))


def source_Q(x, z, t, source: SourceSpec, grid_dx: float | None = None,
             grid_dz: float | None = None):
    """Source term at (x, z, t) under the configured delta representation.

    gaussian: product of unit-mass Gaussians of width epsilon times sin(wt);
    grid_delta: sin(wt)/(dx*dz) at the grid node nearest the source, zero
    elsewhere (requires the caller's grid spacings); omit: identically zero.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    osc = np.sin(source.omega * t)
    if source.mollifier_mode == "omit":
        return np.zeros(np.broadcast(x, z, t).shape)
    if source.mollifier_mode == "gaussian":
        eps = source.epsilon
        norm = 1.0 / (eps * math.sqrt(2.0 * math.pi))
        gx = norm * np.exp(-0.5 * ((x - source.x0) / eps) ** 2)
        gz = norm * np.exp(-0.5 * ((z - source.z0) / eps) ** 2)
        return gx * gz * osc
    if grid_dx is None or grid_dz is None:
        raise ValueError("grid_delta source mode requires grid spacings")
    node_x = round(source.x0 / grid_dx) * grid_dx
    node_z = round(source.z0 / grid_dz) * grid_dz
    on_node = (np.abs(x - node_x) < 1e-9 * max(1.0, grid_dx)) \
        & (np.abs(z - node_z) < 1e-9 * max(1.0, grid_dz))
    return np.where(on_node, osc / (grid_dx * grid_dz), 0.0)


def grid_axes(domain: DomainSpec, nx: int, nz: int, nt: int):
    """Uniform inclusive axes over [0,a] x [0,b] x [0,t_max]."""
    if min(nx, nz, nt) < 2:
        raise ValueError("each grid count must be >= 2")
    return (np.linspace(0.0, domain.a, nx),
            np.linspace(0.0, domain.b, nz),
            np.linspace(0.0, domain.t_max, nt))


def generate_grid_dataset(domain: DomainSpec, params: NondimParams,
                          grid: tuple[int, int, int],
                          trunc: SeriesTruncation) -> CollocationSet:
    """Analytical fields on a uniform tensor grid as one collocation row per
    node, ordered (t outer, z middle, x inner)."""
    nx, nz, nt = grid
    x_axis, z_axis, t_axis = grid_axes(domain, nx, nz, nt)
    U, V, P = solution_on_grid(params, domain, x_axis, z_axis, t_axis, trunc)

    tt, zz, xx = np.meshgrid(t_axis, z_axis, x_axis, indexing="ij")
    inputs = np.column_stack([xx.ravel(), zz.ravel(), tt.ravel()])
    # (Nx,Nz,Nt) -> (Nt,Nz,Nx) row order
    targets = np.column_stack([arr.transpose(2, 1, 0).ravel() for arr in (U, V, P)])
    maps = NormalizationMaps.from_data(inputs, targets)
    return CollocationSet(inputs, targets, maps)
