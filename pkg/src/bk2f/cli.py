"""``bk2f`` command line: generate datasets, train the net, evaluate, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import DEFAULTS, RunConfig, load_config_file
from .errors import Bk2fError, FingerprintMismatchError, MemoryGuardError
from .evaluation import evaluate, format_table, write_report
from .mlp import build_pairs, fit, load_model, save_model, scaler_recipe
from .model import derive_g2
from .sim import generate_dataset, read_dataset, write_dataset

log = logging.getLogger("bk2f")

# 4**10 nodes at the widest level, ~80 MiB of working set
LARGE_NODES = 4**10

_SHORT_FLAGS = {
    "seed": "master_seed",
    "threads": "threads",
    "eta_source": "modes.eta_source",
    "drift_mode": "modes.drift_mode",
    "depth": "sim.depth",
    "scenarios": "sim.n_scenarios",
    "out": "output_dir",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", help="master seed (u64)")
    p.add_argument("--threads", help="worker processes for dataset generation")
    p.add_argument("--allow-large", action="store_true", help=f"allow levels above {LARGE_NODES} nodes")
    p.add_argument("--eta-source", dest="eta_source", choices=("as_printed", "derivation"))
    p.add_argument("--drift-mode", dest="drift_mode", choices=("none", "indexed"))
    p.add_argument("--depth", help="number of branching steps")
    p.add_argument("--scenarios", help="number of scenarios per dataset")
    p.add_argument("--out", help="output directory (fallback: $BK2F_OUT)")
    p.add_argument("-v", "--verbose", action="store_true")
    keys = p.add_argument_group("config keys", "any config key may be overridden as --<key> <value>")
    for key in DEFAULTS:
        if key == "threads":
            continue
        keys.add_argument(f"--{key}", dest=f"key:{key}", metavar="V", help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bk2f", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bk2f {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a percentile dataset")
    p.add_argument("--which", choices=("train", "valid"), default="train")
    _add_common(p)

    p = sub.add_parser("train", help="train the network on a training dataset")
    p.add_argument("--dataset", type=Path, help="default: <out>/train.csv")
    _add_common(p)

    for name, text in (("evaluate", "write RMSE and cross-section reports"),
                       ("report", "evaluate and print the RMSE table")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", type=Path, help="default: <out>/model.txt")
        p.add_argument("--train-data", type=Path, help="default: <out>/train.csv")
        p.add_argument("--valid-data", type=Path, help="default: <out>/valid.csv")
        _add_common(p)

    p = sub.add_parser("run", help="generate both datasets, train, evaluate and report")
    _add_common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, object] = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    for key in DEFAULTS:
        v = getattr(args, f"key:{key}", None)
        if v is not None:
            values[key] = v
    for flag, key in _SHORT_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if "output_dir" not in values and os.environ.get("BK2F_OUT"):
        values["output_dir"] = os.environ["BK2F_OUT"]
    return RunConfig.from_values(values)


def _versions() -> dict[str, str]:
    return {
        "bk2f": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(cfg: RunConfig, command: str, **extra) -> Path:
    manifest = {
        "command": command,
        "config": cfg.echo(),
        "seeds": {"master_seed": cfg.sim.master_seed, "valid_seed": cfg.valid_sim.master_seed,
                  "train_seed": cfg.train.seed},
        "versions": _versions(),
        **extra,
    }
    path = cfg.output_dir / f"manifest_{command}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _guard(cfg: RunConfig, allow_large: bool) -> None:
    nodes = cfg.sim.peak_nodes
    if nodes > LARGE_NODES and not allow_large:
        raise MemoryGuardError(
            f"widest level has {nodes} nodes, about {cfg.sim.memory_estimate / 2**20:.0f} MiB "
            f"per scenario in flight; rerun with --allow-large to proceed"
        )


def cmd_generate(cfg: RunConfig, which: str, allow_large: bool = False) -> Path:
    _guard(cfg, allow_large)
    params = cfg.params_train if which == "train" else cfg.params_valid
    sim = cfg.sim if which == "train" else cfg.valid_sim
    ds = generate_dataset(params, sim, workers=cfg.threads)
    path = write_dataset(ds, cfg.output_dir / f"{which}.csv")
    write_manifest(cfg, f"generate_{which}", fingerprints={which: ds.fingerprint}, artifacts=[path.name])
    return path


def _check_params(ds, params, label: str, path: Path) -> None:
    if ds.params.fingerprint() != params.fingerprint():
        raise FingerprintMismatchError(
            f"{path}: dataset parameters {ds.params.fingerprint()} do not match "
            f"config {label} {params.fingerprint()}"
        )


def cmd_train(cfg: RunConfig, dataset_path: Path | None = None) -> Path:
    path = dataset_path or cfg.output_dir / "train.csv"
    ds = read_dataset(path)
    _check_params(ds, cfg.params_train, "params_train", path)
    g2 = derive_g2(ds.params, cfg.eta_source)
    result = fit(
        build_pairs(ds, g2), cfg.train,
        input_activation=cfg.input_activation,
        scaler=scaler_recipe(cfg.eta_source),
        train_params=ds.params.fingerprint(),
    )
    model_path = save_model(result.model, cfg.output_dir / "model.txt")
    print(f"best epoch {result.best_epoch}: train loss {result.final_train_loss:.6e}, "
          f"holdout loss {result.final_holdout_loss:.6e}")
    write_manifest(
        cfg, "train",
        fingerprints={"train": ds.fingerprint},
        training={"best_epoch": result.best_epoch, "epochs_run": len(result.train_loss),
                  "train_loss": repr(result.final_train_loss),
                  "holdout_loss": repr(result.final_holdout_loss)},
        artifacts=[model_path.name],
    )
    return model_path


def cmd_evaluate(cfg: RunConfig, model_path: Path | None = None, train_path: Path | None = None,
                 valid_path: Path | None = None, command: str = "evaluate"):
    model_path = model_path or cfg.output_dir / "model.txt"
    train_path = train_path or cfg.output_dir / "train.csv"
    valid_path = valid_path or cfg.output_dir / "valid.csv"
    model = load_model(model_path)
    train_ds = read_dataset(train_path)
    valid_ds = read_dataset(valid_path)
    _check_params(train_ds, cfg.params_train, "params_train", train_path)
    _check_params(valid_ds, cfg.params_valid, "params_valid", valid_path)
    if model.train_params and model.train_params != train_ds.params.fingerprint():
        raise FingerprintMismatchError(
            f"{model_path}: trained on parameters {model.train_params}, "
            f"{train_path} has {train_ds.params.fingerprint()}"
        )
    try:
        report = evaluate(model, train_ds, valid_ds, eta_source=cfg.eta_source, drift_mode=cfg.drift_mode)
    except FingerprintMismatchError as exc:
        raise FingerprintMismatchError(f"{model_path}: {exc}") from None
    out = write_report(report, cfg.output_dir / "report")
    write_manifest(cfg, command, fingerprints=report.dataset_fingerprints,
                   artifacts=sorted(str(p.relative_to(cfg.output_dir)) for p in out.iterdir()))
    return out, report


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            print(cmd_generate(cfg, args.which, args.allow_large))
        elif args.command == "train":
            print(cmd_train(cfg, args.dataset))
        elif args.command in ("evaluate", "report"):
            out, report = cmd_evaluate(cfg, args.model, args.train_data, args.valid_data, args.command)
            if args.command == "report":
                print(format_table(report))
            print(out)
        elif args.command == "run":
            cmd_generate(cfg, "train", args.allow_large)
            cmd_generate(cfg, "valid", args.allow_large)
            cmd_train(cfg)
            out, report = cmd_evaluate(cfg, command="run")
            print(format_table(report))
            print(out)
    except Bk2fError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
