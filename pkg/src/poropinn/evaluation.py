"""Full-domain prediction, error norms, and CSV exports.

The exports are the tabular data behind the standard verification plots:
a deformed spatial mesh at a chosen time, field-vs-time probes at a point,
and the loss history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CollocationSet
from .network import MlpSpec, NormalizationMaps, ParameterSet, forward_values

_FIELD_INDEX = {"u": 0, "v": 1, "p": 2}


@dataclass
class FieldGrid:
    """Three fields sampled on a tensor grid."""

    x: np.ndarray
    z: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("x", "z", "t"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if np.any(np.diff(axis) <= 0.0):
                raise ValueError(f"{name} axis must be strictly increasing")
            setattr(self, name, axis)
        shape = (len(self.x), len(self.z), len(self.t))
        for name in ("u", "v", "p"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.x), len(self.z), len(self.t))

    @staticmethod
    def from_dataset(dataset: CollocationSet, shape: tuple[int, int, int]) -> "FieldGrid":
        """Reshape (t outer, z middle, x inner) rows back onto the grid."""
        nx, nz, nt = shape
        if len(dataset) != nx * nz * nt:
            raise ValueError(f"dataset has {len(dataset)} rows, grid wants {nx * nz * nt}")
        cols = dataset.inputs
        x = np.unique(cols[:, 0])
        z = np.unique(cols[:, 1])
        t = np.unique(cols[:, 2])
        if (len(x), len(z), len(t)) != (nx, nz, nt):
            raise ValueError("dataset coordinates do not form the stated grid")
        fields = [dataset.targets[:, i].reshape(nt, nz, nx).transpose(2, 1, 0)
                  for i in range(3)]
        return FieldGrid(x, z, t, *fields)


def predict_grid(params: ParameterSet, spec: MlpSpec, maps: NormalizationMaps,
                 x_axis, z_axis, t_axis, chunk: int = 8192) -> FieldGrid:
    """Network prediction at every grid node."""
    x_axis = np.asarray(x_axis, dtype=float)
    z_axis = np.asarray(z_axis, dtype=float)
    t_axis = np.asarray(t_axis, dtype=float)
    tt, zz, xx = np.meshgrid(t_axis, z_axis, x_axis, indexing="ij")
    pts = np.column_stack([xx.ravel(), zz.ravel(), tt.ravel()])
    vals = np.empty_like(pts)
    for s in range(0, len(pts), chunk):
        vals[s:s + chunk] = forward_values(params, spec, maps, pts[s:s + chunk])
    shape = (len(t_axis), len(z_axis), len(x_axis))
    fields = [vals[:, i].reshape(shape).transpose(2, 1, 0) for i in range(3)]
    return FieldGrid(x_axis, z_axis, t_axis, *fields)


def relative_l2(pred: FieldGrid, truth: FieldGrid, field: str, absolute: bool = False) -> float:
    """||pred - truth||_2 / ||truth||_2 over all grid nodes (or the plain
    error norm with ``absolute=True``)."""
    a = pred.field(field)
    b = truth.field(field)
    if a.shape != b.shape:
        raise ValueError("grids have different shapes")
    err = np.linalg.norm((a - b).ravel())
    if absolute:
        return float(err)
    ref = np.linalg.norm(b.ravel())
    if ref == 0.0:
        raise ValueError(f"reference field {field!r} is identically zero")
    return float(err / ref)


def export_deformed_mesh(grid: FieldGrid, t_index: int, scale: float, path) -> None:
    """Write `x,z,x_def,z_def` rows of the displaced mesh at one time index."""
    if not (0 <= t_index < len(grid.t)):
        raise IndexError(f"time index {t_index} out of range [0, {len(grid.t)})")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,z,x_def,z_def\n")
        for iz in range(len(grid.z)):
            for ix in range(len(grid.x)):
                x, z = grid.x[ix], grid.z[iz]
                xd = x + scale * grid.u[ix, iz, t_index]
                zd = z + scale * grid.v[ix, iz, t_index]
                fh.write(f"{x:.17g},{z:.17g},{xd:.17g},{zd:.17g}\n")


def export_timeseries(grid: FieldGrid, point, field: str, path) -> float:
    """Write `t,value` rows of one field at the grid node nearest ``point``.

    Returns the snap distance between the requested point and the node used.
    """
    x_req, z_req = float(point[0]), float(point[1])
    ix = int(np.argmin(np.abs(grid.x - x_req)))
    iz = int(np.argmin(np.abs(grid.z - z_req)))
    snap = float(np.hypot(grid.x[ix] - x_req, grid.z[iz] - z_req))
    series = grid.field(field)[ix, iz, :]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,value\n")
        for t, val in zip(grid.t, series):
            fh.write(f"{t:.17g},{val:.17g}\n")
    return snap


def nearest_index(axis: np.ndarray, value: float) -> int:
    return int(np.argmin(np.abs(np.asarray(axis) - value)))
