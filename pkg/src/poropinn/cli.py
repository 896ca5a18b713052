"""Command-line entry point: generate, train, evaluate, export.

Configuration is a flat `key = value` text file with sections [domain],
[source], [network], [training] and [paths]; command-line flags override
file values.  Exit codes: 0 success, 2 configuration error, 3 numerical
divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Bad configuration file or option combination."""


_SCHEMA = {
    "domain": {
        "a": float, "b": float, "t_max": float,
        "eta": float, "beta": float, "omega": float,
        "nx": int, "nz": int, "nt": int,
        "n_max": int, "q_max": int,
    },
    "source": {"x0": float, "z0": float, "mode": str, "epsilon": float},
    "network": {"hidden_layers": int, "hidden_units": int, "activation": str},
    "training": {
        "sample_size": int, "batch_size": int, "learning_rate": float,
        "epochs": int, "seed": int, "adam_beta1": float, "adam_beta2": float,
        "adam_eps": float, "deterministic": bool, "chunk_size": int,
    },
    "paths": {"dataset": str, "checkpoint": str, "history": str, "out_dir": str},
}

_DEFAULTS = {
    "domain": {"a": 1.0, "b": 1.0, "t_max": 2.0 * math.pi, "eta": 1.5, "beta": 2.0,
               "omega": 1.0, "nx": 41, "nz": 41, "nt": 41, "n_max": 200, "q_max": 200},
    "source": {"x0": 0.25, "z0": 0.25, "mode": "gaussian", "epsilon": 0.025},
    "network": {"hidden_layers": 5, "hidden_units": 40, "activation": "tanh"},
    "training": {"sample_size": 20000, "batch_size": 5000, "learning_rate": 1e-3,
                 "epochs": 5000, "seed": 0, "adam_beta1": 0.9, "adam_beta2": 0.999,
                 "adam_eps": 1e-8, "deterministic": True, "chunk_size": 2500},
    "paths": {"dataset": "dataset.csv", "checkpoint": "model.ckpt",
              "history": "history.csv", "out_dir": "out"},
}


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """Merged view of all sections, populated with defaults."""

    values: dict = field(default_factory=lambda: {s: dict(d) for s, d in _DEFAULTS.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @staticmethod
    def from_file(path) -> "RunConfig":
        cfg = RunConfig()
        section = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if line.startswith("[") and line.endswith("]"):
                    section = line[1:-1].strip()
                    if section not in _SCHEMA:
                        raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                if section is None:
                    raise ConfigError(f"{path}:{lineno}: key outside any section")
                key, _, value = (part.strip() for part in line.partition("="))
                schema = _SCHEMA[section]
                if key not in schema:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in [{section}]")
                caster = _parse_bool if schema[key] is bool else schema[key]
                try:
                    cfg.values[section][key] = caster(value)
                except ValueError as err:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {err}") from err
        return cfg

    # -- object builders ------------------------------------------------------

    def domain(self):
        from .barry_mercer import DomainSpec
        d = self["domain"]
        return DomainSpec(d["a"], d["b"], d["t_max"])

    def truncation(self):
        from .barry_mercer import SeriesTruncation
        d = self["domain"]
        return SeriesTruncation(d["n_max"], d["q_max"])

    def nondim_params(self):
        from .residuals import NondimParams
        d, s = self["domain"], self["source"]
        return NondimParams(d["eta"], d["beta"], d["omega"], s["x0"], s["z0"],
                            d["a"], d["b"])

    def source(self):
        from .barry_mercer import SourceSpec
        s, d = self["source"], self["domain"]
        return SourceSpec(s["x0"], s["z0"], d["omega"], s["mode"], s["epsilon"])

    def mlp_spec(self):
        from .network import MlpSpec
        n = self["network"]
        return MlpSpec(n["hidden_layers"], n["hidden_units"], n["activation"])

    def training_config(self):
        from .trainer import TrainingConfig
        t = self["training"]
        return TrainingConfig(
            spec=self.mlp_spec(), params=self.nondim_params(), source=self.source(),
            sample_size=t["sample_size"], batch_size=t["batch_size"],
            learning_rate=t["learning_rate"], epochs=t["epochs"], seed=t["seed"],
            adam_beta1=t["adam_beta1"], adam_beta2=t["adam_beta2"],
            adam_eps=t["adam_eps"], deterministic=t["deterministic"],
            chunk_size=t["chunk_size"])

    def grid_counts(self):
        d = self["domain"]
        return (d["nx"], d["nz"], d["nt"])


def _apply_overrides(cfg: RunConfig, args) -> None:
    if args.seed is not None:
        cfg["training"]["seed"] = args.seed
    if args.activation is not None:
        cfg["network"]["activation"] = args.activation
    if args.source_mode is not None:
        cfg["source"]["mode"] = args.source_mode
    if args.out is not None:
        cfg["paths"]["out_dir"] = args.out
    if args.deterministic:
        cfg["training"]["deterministic"] = True


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    _apply_overrides(cfg, args)
    try:
        # Build every sub-object once so invariant violations surface as
        # configuration errors before any work starts.
        cfg.domain(), cfg.truncation(), cfg.nondim_params()
        cfg.source(), cfg.mlp_spec(), cfg.training_config()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return cfg


def _truth_grid(cfg: RunConfig, dataset):
    from .evaluation import FieldGrid
    return FieldGrid.from_dataset(dataset, cfg.grid_counts())


def cmd_generate(args) -> int:
    from .barry_mercer import generate_grid_dataset
    cfg = _load_config(args)
    trunc = cfg.truncation()
    dataset = generate_grid_dataset(cfg.domain(), cfg.nondim_params(),
                                    cfg.grid_counts(), trunc)
    path = cfg["paths"]["dataset"]
    dataset.save_csv(path)
    print(f"wrote {len(dataset)} rows to {path} "
          f"(series truncation {trunc.n_max} x {trunc.q_max})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import CollocationSet
    from .evaluation import predict_grid, relative_l2
    from .trainer import TrainingDiverged, save_checkpoint, train

    cfg = _load_config(args)
    dataset = CollocationSet.load_csv(cfg["paths"]["dataset"])
    tconf = cfg.training_config()
    ckpt_path = cfg["paths"]["checkpoint"]
    try:
        params, history = train(tconf, dataset)
    except TrainingDiverged as err:
        save_checkpoint(err.params, tconf.spec, err.state, err.history, ckpt_path)
        print(f"error: {err}", file=sys.stderr)
        print(f"partial checkpoint retained at {ckpt_path}", file=sys.stderr)
        return EXIT_DIVERGED

    save_checkpoint(params, tconf.spec, None, history, ckpt_path)
    history.save_csv(cfg["paths"]["history"])
    final = history[-1]
    print("final losses: " + " ".join(
        f"{name}={getattr(final, name):.6e}" for name in final.FIELDS))

    nx, nz, nt = cfg.grid_counts()
    if len(dataset) == nx * nz * nt:
        truth = _truth_grid(cfg, dataset)
        pred = predict_grid(params, tconf.spec, dataset.maps, truth.x, truth.z, truth.t)
        for fld in ("u", "v", "p"):
            print(f"relative_l2[{fld}] = {relative_l2(pred, truth, fld):.6e}")
    print(f"checkpoint written to {ckpt_path}, history to {cfg['paths']['history']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .data import CollocationSet
    from .evaluation import predict_grid, relative_l2
    from .trainer import load_checkpoint

    cfg = _load_config(args)
    dataset = CollocationSet.load_csv(cfg["paths"]["dataset"])
    params, spec, _, _ = load_checkpoint(args.checkpoint or cfg["paths"]["checkpoint"])
    truth = _truth_grid(cfg, dataset)
    pred = predict_grid(params, spec, dataset.maps, truth.x, truth.z, truth.t)
    for fld in ("u", "v", "p"):
        err = pred.field(fld) - truth.field(fld)
        print(f"{fld}: mse={(err**2).mean():.6e} "
              f"relative_l2={relative_l2(pred, truth, fld):.6e}")
    return EXIT_OK


def cmd_export(args) -> int:
    import shutil

    from .data import CollocationSet
    from .evaluation import (export_deformed_mesh, export_timeseries, nearest_index,
                             predict_grid)
    from .trainer import load_checkpoint

    cfg = _load_config(args)
    out_dir = cfg["paths"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)

    if args.what == "history":
        src = cfg["paths"]["history"]
        dst = os.path.join(out_dir, "history.csv")
        shutil.copyfile(src, dst)
        print(f"wrote {dst}")
        return EXIT_OK

    dataset = CollocationSet.load_csv(cfg["paths"]["dataset"])
    truth = _truth_grid(cfg, dataset)
    params, spec, _, _ = load_checkpoint(args.checkpoint or cfg["paths"]["checkpoint"])
    pred = predict_grid(params, spec, dataset.maps, truth.x, truth.z, truth.t)

    if args.what == "mesh":
        for t_snap, tag in ((math.pi / 2.0, "quarter"), (3.0 * math.pi / 2.0, "three_quarter")):
            ti = nearest_index(truth.t, t_snap)
            for grid, kind in ((truth, "true"), (pred, "pred")):
                dst = os.path.join(out_dir, f"mesh_{kind}_{tag}.csv")
                export_deformed_mesh(grid, ti, args.scale, dst)
                print(f"wrote {dst} (t = {truth.t[ti]:.6g})")
        return EXIT_OK

    # timeseries probes: u at (0, 0.25) and v at (0.25, 0)
    for fld, point in (("u", (0.0, 0.25)), ("v", (0.25, 0.0))):
        for grid, kind in ((truth, "true"), (pred, "pred")):
            dst = os.path.join(out_dir, f"timeseries_{fld}_{kind}.csv")
            snap = export_timeseries(grid, point, fld, dst)
            print(f"wrote {dst} (snap distance {snap:.3g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poropinn",
                                     description="physics-informed consolidation model")
    parser.add_argument("--config", metavar="PATH", help="configuration file")
    parser.add_argument("--seed", type=int, help="override training seed")
    parser.add_argument("--threads", type=int, help="BLAS thread cap")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, fixed reduction order")
    parser.add_argument("--activation", choices=("tanh", "relu", "sigmoid"))
    parser.add_argument("--source-mode", choices=("gaussian", "grid_delta", "omit"))
    parser.add_argument("--out", metavar="DIR", help="output directory for exports")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write the analytical dataset CSV")
    sub.add_parser("train", help="train and write checkpoint + history")
    p_eval = sub.add_parser("evaluate", help="report errors of a checkpoint")
    p_eval.add_argument("--checkpoint", metavar="PATH")
    p_exp = sub.add_parser("export", help="write plot-ready CSV data")
    p_exp.add_argument("what", choices=("mesh", "timeseries", "history"))
    p_exp.add_argument("--checkpoint", metavar="PATH")
    p_exp.add_argument("--scale", type=float, default=1.0,
                       help="deformation magnification for mesh export")
    return parser


def _set_thread_env(args) -> None:
    n = 1 if args.deterministic else args.threads
    if n is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_thread_env(args)  # must precede numpy import to take effect

    from .autodiff import DivergedError

    handlers = {"generate": cmd_generate, "train": cmd_train,
                "evaluate": cmd_evaluate, "export": cmd_export}
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
