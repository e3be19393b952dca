"""Command-line entry point: python -m cli <command> ..."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
import yaml
from pydantic import ValidationError

from core.config import BEAM_CONFIG, RunConfig, load_config
from core.dataset import Manifest, generate_dataset, import_external_labels
from core.errors import (
    DegenerateGeometryError,
    FormatError,
    NumericFault,
    OutOfFrameError,
    ParameterError,
    ShapeError,
    StateError,
)
from core.experiments import ExperimentKind, analytical_compare, data_efficiency, resolution, throughput
from core.mechanics import FREQUENCY_LABELS
from core.search import TargetSpec, run_campaign, sample_targets
from core.seeding import derive_seed
from models.network import build, evaluate, load_checkpoint, predictions_frame, save_checkpoint, train, write_history
from models.oracle import OracleSurrogate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)


def _config(args: argparse.Namespace) -> RunConfig:
    path = Path(args.config or BEAM_CONFIG)
    if not path.exists():
        raise ParameterError(f"config file not found: {path}")
    return load_config(path, seed=args.seed)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


def _surrogate(args: argparse.Namespace, manifest: Optional[Manifest], beam):
    if args.surrogate == "oracle":
        labels = manifest.label_names if manifest is not None else FREQUENCY_LABELS
        return OracleSurrogate(beam, labels)
    if not args.checkpoint:
        raise ParameterError("--checkpoint is required unless --surrogate oracle is given")
    return load_checkpoint(args.checkpoint)


def cmd_generate(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = config.require_dataset()
    manifest = generate_dataset(spec, args.out, n_jobs=args.n_jobs or config.n_jobs)
    _emit({"out": str(args.out), "samples": len(manifest), **manifest.generation})
    return EXIT_OK


def cmd_import_labels(args: argparse.Namespace) -> int:
    manifest = import_external_labels(Manifest.load(args.data), args.labels)
    manifest.save()
    _emit({"data": str(args.data), "label_set": list(manifest.label_names)})
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    manifest = Manifest.load(args.data)
    arch = config.architecture.model_copy(update={"number_of_labels": len(manifest.label_names)})
    cfg = config.train_config(manifest.label_names)
    model = build(arch, manifest.label_names, seed=cfg.seed)
    model, history = train(model, manifest, cfg)

    out = Path(args.out)
    header = save_checkpoint(model, out / args.name)
    write_history(history, out / "history.csv")
    _emit({"checkpoint": str(header), "lr": cfg.lr, "epochs": len(history),
           "best_val_mse": float(history["val_mse"].min())})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = Manifest.load(args.data)
    model = _surrogate(args, manifest, manifest.spec.beam)
    metrics = evaluate(model, manifest, args.split)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    predictions_frame(model, manifest, args.split).to_csv(out / "predictions.csv", index=False, lineterminator="\n")
    _emit({"split": args.split, "mse": metrics.mse, "mae": metrics.mae, "mape": metrics.mape})
    return EXIT_OK


def _read_targets(path: Path, config: RunConfig) -> List[TargetSpec]:
    search = config.search
    if path.suffix == ".csv":
        triples = pd.read_csv(path)[list(FREQUENCY_LABELS)].to_numpy().tolist()
    else:
        triples = yaml.safe_load(path.read_text()) or []
    return [
        TargetSpec(target=tuple(t), budget=search.budget, restarts=search.restarts, seed=derive_seed(search.seed, i))
        for i, t in enumerate(triples)
    ]


def cmd_optimize(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.budget or args.restarts:
        update = {k: v for k, v in (("budget", args.budget), ("restarts", args.restarts)) if v}
        config = config.model_copy(update={
            "search": config.search.model_copy(update={
                **update, "targets": [t.model_copy(update=update) for t in config.search.targets],
            }),
        })
    manifest = Manifest.load(args.data) if args.data else None
    beam = manifest.spec.beam if manifest is not None else config.beam

    if args.targets:
        targets = _read_targets(Path(args.targets), config)
    elif config.search.targets:
        targets = list(config.search.targets)
    elif manifest is not None:
        targets = sample_targets(manifest, config.search.n_targets, config.search.seed,
                                 config.search.budget, config.search.restarts)
    else:
        raise ParameterError("no targets: give --targets, list them in the config, or pass --data")

    model = _surrogate(args, None, beam)
    space = config.search_space()
    campaign = config.search.campaign
    if args.n_jobs:
        campaign = campaign.model_copy(update={"n_jobs": args.n_jobs})
    report = run_campaign(targets, model, args.out, space, beam, campaign)
    _emit({"out": str(args.out), **report.aggregates})
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    config = _config(args)
    manifest = Manifest.load(args.data)
    exp = config.experiment
    kind = ExperimentKind(args.kind)
    arch = config.architecture.model_copy(update={"number_of_labels": len(manifest.label_names)})
    cfg = config.train_config(manifest.label_names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if kind is ExperimentKind.DATA_EFFICIENCY:
        runs, summary = data_efficiency(manifest, arch, cfg, exp.sizes, exp.seeds)
    elif kind is ExperimentKind.RESOLUTION:
        runs, summary = resolution(manifest, arch, cfg, exp.img_sizes, exp.seeds)
    elif kind is ExperimentKind.ANALYTICAL_COMPARE:
        runs = analytical_compare(manifest, _surrogate(args, manifest, manifest.spec.beam), exp.split)
        summary = runs.groupby("label")[["analytical_pct_error", "model_pct_error"]].mean().reset_index()
    else:
        runs = throughput(_surrogate(args, manifest, manifest.spec.beam), manifest, exp.batch_sizes, exp.split)
        summary = None

    runs.to_csv(out / f"{kind.value}.csv", index=False, lineterminator="\n")
    if summary is not None:
        summary.to_csv(out / f"{kind.value}_summary.csv", index=False, lineterminator="\n")
    _emit({"kind": kind.value, "rows": len(runs), "out": str(out)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help=f"YAML/JSON run config (default: {BEAM_CONFIG})")
    common.add_argument("--seed", type=int, default=None, help="Override every seed in the config")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = argparse.ArgumentParser(prog="cli", description="Beam cross-section surrogate toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="Generate a labeled dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-jobs", type=int, default=None)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("import-labels", parents=[common], help="Merge external labels into a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="CSV with an id column plus label columns")
    p.set_defaults(handler=cmd_import_labels)

    p = sub.add_parser("train", parents=[common], help="Train a surrogate on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--name", default="model")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint on a dataset split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--surrogate", choices=["network", "oracle"], default="network")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("optimize", parents=[common], help="Search cross-sections for target eigenfrequencies")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None, help="Dataset whose test split supplies targets")
    p.add_argument("--targets", type=Path, default=None, help="CSV (f1_hz,f2_hz,f3_hz) or YAML list of triples")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--surrogate", choices=["network", "oracle"], default="network")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--n-jobs", type=int, default=None)
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("experiment", parents=[common], help="Run an experiment harness")
    p.add_argument("kind", choices=[k.value for k in ExperimentKind])
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--surrogate", choices=["network", "oracle"], default="network")
    p.set_defaults(handler=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.handler(args)
    except (ParameterError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DegenerateGeometryError, OutOfFrameError, ShapeError, StateError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericFault as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception:
        logger.exception(f"{args.command} failed")
        raise
