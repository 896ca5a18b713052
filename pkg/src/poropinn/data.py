"""Collocation datasets: (x, z, t) -> (u, v, p) rows plus normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NormalizationMaps

CSV_HEADER = "x,z,t,u,v,p"


@dataclass
class CollocationSet:
    """N collocation rows with the normalization maps they were scaled by.

    Subsets keep the parent's maps, so training samples and full-grid truth
    always normalize identically.
    """

    inputs: np.ndarray   # (N, 3) x, z, t
    targets: np.ndarray  # (N, 3) u, v, p
    maps: NormalizationMaps

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 3:
            raise ValueError("inputs must be (N, 3)")
        if self.targets.shape != self.inputs.shape:
            raise ValueError("targets must match inputs shape")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices) -> "CollocationSet":
        return CollocationSet(self.inputs[indices], self.targets[indices], self.maps)

    def normalized_targets(self) -> np.ndarray:
        return self.maps.normalize_outputs(self.targets)

    def grid_spacings(self) -> tuple[float, float]:
        """Spacings of the underlying uniform grid in x and z."""
        def spacing(col):
            vals = np.unique(col)
            if len(vals) < 2:
                raise ValueError("cannot infer a grid spacing from a single coordinate")
            steps = np.diff(vals)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError("coordinates are not uniformly gridded")
            return float(steps[0])

        return spacing(self.inputs[:, 0]), spacing(self.inputs[:, 1])

    def save_csv(self, path) -> None:
        rows = np.hstack([self.inputs, self.targets])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @staticmethod
    def load_csv(path) -> "CollocationSet":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"unexpected dataset header {header!r} in {path}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.shape[1] != 6:
            raise ValueError(f"expected 6 columns in {path}, found {data.shape[1]}")
        inputs, targets = data[:, :3], data[:, 3:]
        return CollocationSet(inputs, targets, NormalizationMaps.from_data(inputs, targets))
