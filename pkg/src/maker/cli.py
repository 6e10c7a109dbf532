"""Command line entry point.

    maker [--config FILE] [--seed N] [--out DIR] {ingest,synth,train,evaluate,ablate,stratify} ...

Each subcommand prints one line: the path of its main result file.  Exit
status is 0 on success, 2 on configuration errors and 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import IntervalModel, parse_ais_csv, segment_trajectories, synth_dataset, write_store
from .errors import ConfigError
from .forecaster import VARIANTS
from .harness.config import ExperimentConfig, load_config
from .harness.experiment import (
    ablation_matrix,
    build_datasets,
    evaluate_checkpoint,
    evaluate_model,
    load_checkpoint,
    train_run,
)

log = logging.getLogger("maker")

MIN_INTERVALS = {"us_coast": 180, "danish": 60}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maker", description="Vessel trajectory forecasting experiments")
    _global_flags(parser, None)
    # the global flags are accepted after the subcommand too
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help)

    p = command("ingest", help="AIS CSV -> canonical trajectory store")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--dialect", choices=["us_coast", "danish"], required=True)
    p.add_argument("--min-interval", type=float, help="seconds (default 180 us_coast, 60 danish)")
    p.add_argument("--max-gap", type=float, help="seconds (default 10x min interval)")

    p = command("synth", help="write synthetic trajectories to a store")
    p.add_argument("--kind", default="mixed", choices=["straight", "loop", "zigzag", "mixed"])
    p.add_argument("--n", type=int, default=72, help="points per trajectory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0, help="position noise, degrees")
    p.add_argument("--interval", default="regular:60", help="regular:D | jittered:D,SIGMA | bursty[:D,P,F]")

    command("train", help="train one configuration")

    p = command("evaluate", help="horizon-banded MAE of a checkpoint")
    p.add_argument("--checkpoint", help="default: <out>/checkpoint.pt")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = command("ablate", help="train and evaluate ablation variants")
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma separated variant names")

    p = command("stratify", help="quartile-stratified MAE of a checkpoint")
    p.add_argument("--checkpoint", help="default: <out>/checkpoint_best.pt")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    return parser


def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    parser.add_argument("--config", default=default, help="flat YAML experiment config")
    parser.add_argument("--seed", type=int, default=default, help="overrides the config seed")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=default or False)


def _config(args) -> ExperimentConfig:
    return load_config(args.config, seed=args.seed)


def _out(args, cfg: ExperimentConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    return Path("runs") / (cfg.hash() if cfg else "out")


def cmd_ingest(args) -> Path:
    min_interval = args.min_interval or MIN_INTERVALS[args.dialect]
    records, dropped = [], 0
    for path in args.inputs:
        recs, n = parse_ais_csv(path, args.dialect)
        records.extend(recs)
        dropped += n
    records.sort(key=lambda r: (r.vessel_id, r.timestamp))
    trajs = segment_trajectories(records, min_interval, args.max_gap)
    log.info("%d records (%d dropped) -> %d trajectories", len(records), dropped, len(trajs))
    return write_store(trajs, _out(args) / "trajectories.jsonl")


def cmd_synth(args) -> Path:
    trajs = synth_dataset(args.count, args.n, args.kind, args.noise, args.seed or 0, IntervalModel.parse(args.interval))
    return write_store(trajs, _out(args) / "trajectories.jsonl")


def cmd_train(args) -> Path:
    cfg = _config(args)
    result = train_run(cfg, _out(args, cfg))
    return result.run_dir / "metrics.json"


def cmd_evaluate(args) -> Path:
    cfg = _config(args) if args.config else None
    out = _out(args, cfg)
    report = evaluate_checkpoint(args.checkpoint or out / "checkpoint.pt", args.split)
    return report.write(out, f"eval_{args.split}")


def cmd_ablate(args) -> Path:
    cfg = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    out = _out(args, cfg)
    ablation_matrix(cfg, variants, out)
    return out / "ablation.csv"


def cmd_stratify(args) -> Path:
    cfg = _config(args) if args.config else None
    out = _out(args, cfg)
    model, ckpt_cfg, provider = load_checkpoint(args.checkpoint or out / "checkpoint_best.pt")
    items = build_datasets(ckpt_cfg, provider)[args.split]
    report = evaluate_model(model, items, ckpt_cfg.eval_batch_size)
    path = out / f"strata_{args.split}.json"
    path.write_text(json.dumps(report.strata, indent=2, sort_keys=True))
    return path


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "stratify": cmd_stratify,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        path = COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
