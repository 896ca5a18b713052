"""Sampling, mini-batch Adam training of the total loss, and checkpoints.

One epoch is one pass over the fixed training sample: shuffle, split into
ceil(N/batch) batches, and per batch evaluate forward jets, PDE residuals
with the configured source representation, the nine-way loss breakdown, the
parameter gradient of the total loss, and one Adam update.

Gradient evaluation is internally chunked (fixed chunk size, fixed
left-to-right accumulation), which both bounds memory and makes runs
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DivergedError, Tensor
from .barry_mercer import SourceSpec, source_Q
from .data import CollocationSet
from .network import MlpSpec, NormalizationMaps, ParameterSet, build_jet_graph, init_params
from .residuals import LossBreakdown, NondimParams, residual_terms

#: jet component slot per derivative name, matching build_jet_graph's output
_SLOT = {"dx": 1, "dz": 2, "dt": 3, "dxx": 4, "dzz": 5, "dtt": 6,
         "dxz": 7, "dxt": 8, "dzt": 9}
_FIELD_COL = {"u": 0, "v": 1, "p": 2}


@dataclass(frozen=True)
class TrainingConfig:
    spec: MlpSpec
    params: NondimParams
    source: SourceSpec
    sample_size: int
    batch_size: int
    learning_rate: float
    epochs: int
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    deterministic: bool = True
    chunk_size: int = 2500

    def __post_init__(self):
        if not (1 <= self.batch_size <= self.sample_size):
            raise ValueError("need 1 <= batch_size <= sample_size")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ValueError("adam_eps must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @staticmethod
    def fresh(param_count: int) -> "AdamState":
        return AdamState(np.zeros(param_count), np.zeros(param_count), 0)


@dataclass
class TrainingHistory:
    """Per-epoch loss breakdowns, epoch numbering starting at 1."""

    records: list[LossBreakdown] = field(default_factory=list)

    CSV_HEADER = "epoch,mse_u,mse_v,mse_p,mse_f,mse_g,mse_h,mse_t,mse_c,total"

    def append(self, record: LossBreakdown) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> LossBreakdown:
        return self.records[i]

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for epoch, rec in enumerate(self.records, start=1):
                vals = ",".join(f"{v:.17g}" for v in rec.as_tuple())
                fh.write(f"{epoch},{vals}\n")

    @staticmethod
    def load_csv(path) -> "TrainingHistory":
        history = TrainingHistory()
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != TrainingHistory.CSV_HEADER:
                raise ValueError(f"unexpected history header {header!r} in {path}")
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                cells = line.split(",")
                if len(cells) != 10:
                    raise ValueError(f"{path}:{lineno}: expected 10 columns")
                history.append(LossBreakdown(*(float(c) for c in cells[1:])))
        return history


class TrainingDiverged(DivergedError):
    """Loss or gradient went non-finite; carries the last good state."""

    def __init__(self, message, epoch, batch, params, state, history):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.params = params
        self.state = state
        self.history = history


def sample_training_set(dataset: CollocationSet, n: int, seed: int) -> CollocationSet:
    """Uniform draw of n distinct rows; deterministic per seed."""
    if n > len(dataset):
        raise ValueError(f"cannot sample {n} rows from a dataset of {len(dataset)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=n, replace=False)
    return dataset.subset(idx)


def adam_step(params: ParameterSet, grads: np.ndarray, state: AdamState,
              config: TrainingConfig) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update over the flattened parameters."""
    theta = params.flatten()
    if grads.shape != theta.shape:
        raise ValueError("gradient length does not match parameter count")
    if not np.isfinite(grads).all():
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise DivergedError(f"non-finite gradient at parameter index {bad}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads**2
    t = state.step + 1
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return ParameterSet.from_flat(config.spec, theta), AdamState(m, v, t)


def _residual_nodes(comps, gains, eta, beta, q_vals):
    """Assemble f, g, h tape nodes from the 10 jet-component nodes."""
    terms = residual_terms(eta)
    nodes = {}
    for name, table in terms.items():
        tensors, coeffs = [], []
        for fld, comp, coeff in table:
            tensors.append(ad.column(comps[_SLOT[comp]], _FIELD_COL[fld]))
            coeffs.append(coeff * gains[_FIELD_COL[fld]])
        const = -beta * q_vals if name == "h" else None
        nodes[name] = ad.lincomb(tensors, coeffs, const)
    return nodes["f"], nodes["g"], nodes["h"]


def batch_loss_and_grad(params: ParameterSet, spec: MlpSpec, maps: NormalizationMaps,
                        points: np.ndarray, targets_norm: np.ndarray, q_vals: np.ndarray,
                        nondim: NondimParams, chunk_size: int = 2500):
    """Loss breakdown and parameter gradient of the total loss on one batch.

    Chunks are processed in fixed order and each contributes its sum of
    squared terms, so the result is independent of chunking only up to
    float rounding -- but exactly reproducible for a fixed chunk size.
    """
    n = points.shape[0]
    grad = np.zeros(spec.param_count())
    sums = np.zeros(6)  # ssq of u, v, p, f, g, h errors
    gains = maps.output_gains

    for start in range(0, n, chunk_size):
        end = min(start + chunk_size, n)
        w_nodes = [Tensor.leaf(w) for w in params.weights]
        b_nodes = [Tensor.leaf(b) for b in params.biases]
        comps = build_jet_graph(w_nodes, b_nodes, spec, maps, points[start:end])

        diff = comps[0].add_const(-targets_norm[start:end])
        f, g, h = _residual_nodes(comps, gains, nondim.eta, nondim.beta, q_vals[start:end])
        parts = [ad.column(diff, 0), ad.column(diff, 1), ad.column(diff, 2), f, g, h]
        ssq = [ad.mean_square(p).scale(float(end - start)) for p in parts]
        root = ad.add_scalars(ssq).scale(1.0 / n)

        grad += ad.loss_parameter_gradient(root, [t for pair in zip(w_nodes, b_nodes) for t in pair])
        sums += [s.value.item() for s in ssq]

    breakdown = LossBreakdown.from_components(*(sums / n))
    return breakdown, grad


def train(config: TrainingConfig, dataset: CollocationSet) -> tuple[ParameterSet, TrainingHistory]:
    """Full training loop; returns final parameters and per-epoch history."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    params = init_params(config.spec, config.seed)
    state = AdamState.fresh(config.spec.param_count())
    history = TrainingHistory()

    sample = sample_training_set(dataset, config.sample_size, config.seed)
    maps = sample.maps
    points = sample.inputs
    targets_norm = sample.normalized_targets()
    if config.source.mollifier_mode == "grid_delta":
        dx, dz = dataset.grid_spacings()
        q_vals = source_Q(points[:, 0], points[:, 1], points[:, 2], config.source, dx, dz)
    else:
        q_vals = source_Q(points[:, 0], points[:, 1], points[:, 2], config.source)

    n = len(sample)
    n_batches = math.ceil(n / config.batch_size)
    shuffle_rng = np.random.default_rng(config.seed)

    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        batch_records = []
        for bi in range(n_batches):
            idx = perm[bi * config.batch_size:(bi + 1) * config.batch_size]
            try:
                breakdown, grad = batch_loss_and_grad(
                    params, config.spec, maps, points[idx], targets_norm[idx],
                    q_vals[idx], config.params, config.chunk_size)
                params, state = adam_step(params, grad, state, config)
            except DivergedError as err:
                raise TrainingDiverged(
                    f"training diverged at epoch {epoch}, batch {bi + 1}: {err}",
                    epoch, bi + 1, params, state, history) from err
            batch_records.append(breakdown)

        means = np.mean([[getattr(r, f) for f in ("mse_u", "mse_v", "mse_p",
                                                  "mse_f", "mse_g", "mse_h")]
                         for r in batch_records], axis=0)
        history.append(LossBreakdown.from_components(*means))
    return params, history


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def _history_path(path) -> str:
    return f"{path}.history.csv"


def save_checkpoint(params: ParameterSet, spec: MlpSpec, state: AdamState | None,
                    history: TrainingHistory | None, path) -> None:
    """Text checkpoint: header, one line per layer (W row-major then b),
    optional Adam section; history goes to a CSV side file."""
    lines = [f"mlp {spec.hidden_layers} {spec.hidden_units} {spec.activation}"]
    for w, b in zip(params.weights, params.biases):
        nums = np.concatenate([w.ravel(), b])
        lines.append(" ".join(f"{v:.17g}" for v in nums))
    if state is not None:
        lines.append(f"adam {state.step}")
        lines.append(" ".join(f"{v:.17g}" for v in state.m))
        lines.append(" ".join(f"{v:.17g}" for v in state.v))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if history is not None:
        history.save_csv(_history_path(path))


def load_checkpoint(path):
    """Returns (params, spec, adam_state | None, history)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CheckpointError(f"{path}:1: empty checkpoint")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "mlp":
        raise CheckpointError(f"{path}:1: expected 'mlp <layers> <units> <activation>'")
    spec = MlpSpec(int(head[1]), int(head[2]), head[3])

    sizes = spec.layer_sizes()
    weights, biases = [], []
    lineno = 1
    for layer, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        lineno += 1
        if lineno > len(lines):
            raise CheckpointError(f"{path}: truncated file, expected layer {layer}")
        vals = np.array(lines[lineno - 1].split(), dtype=np.float64)
        if vals.size != fi * fo + fo:
            raise CheckpointError(
                f"{path}:{lineno}: layer {layer} needs {fi * fo + fo} values, got {vals.size}")
        weights.append(vals[:fi * fo].reshape(fo, fi))
        biases.append(vals[fi * fo:])
    params = ParameterSet(weights, biases)

    state = None
    if lineno < len(lines) and lines[lineno].startswith("adam"):
        step = int(lines[lineno].split()[1])
        if lineno + 2 >= len(lines):
            raise CheckpointError(f"{path}:{lineno + 1}: truncated Adam section")
        m = np.array(lines[lineno + 1].split(), dtype=np.float64)
        v = np.array(lines[lineno + 2].split(), dtype=np.float64)
        if m.size != spec.param_count() or v.size != spec.param_count():
            raise CheckpointError(f"{path}:{lineno + 2}: Adam vectors must have length "
                                  f"{spec.param_count()}")
        state = AdamState(m, v, step)

    try:
        history = TrainingHistory.load_csv(_history_path(path))
    except FileNotFoundError:
        history = TrainingHistory()
    return params, spec, state, history
