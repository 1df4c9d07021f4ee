"""Command-line front end.

Subcommands:
  gen-synthetic   write a synthetic feature file from generator settings
  run             execute an experiment described by a config file
  sweep-delta     rerun ice_o across a list of OTHER-logit values
  inspect         print a feature file's header and per-class counts

Exit codes: 0 success, 2 config/usage problem, 3 bad or unreadable data,
1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data_io, runner
from .core import DataModelError
from .data_io import ConfigError, FeatureFileError, SyntheticSpec
from .strategies import STRATEGY_KINDS, StrategyError

log = logging.getLogger("cildrift")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cildrift")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic feature file")
    gen.add_argument("--out", required=True)
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--train", type=int, required=True, help="train instances per class")
    gen.add_argument("--dev", type=int, default=0)
    gen.add_argument("--test", type=int, required=True)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--mean-scale", type=float, default=10.0)
    gen.add_argument("--cov-scale", type=float, default=1.0)
    gen.add_argument("--mode", choices=("detection", "classification"), default="classification")
    gen.add_argument("--neg-train", type=int, default=0)
    gen.add_argument("--neg-dev", type=int, default=0)
    gen.add_argument("--neg-test", type=int, default=0)
    gen.add_argument("--background-spread", type=float, default=3.0)
    gen.add_argument("--anisotropy", type=float, default=1.0,
                     help="scale of the shared feature-cone direction")
    gen.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--resume", action="store_true")
    run.add_argument("--permutations", type=int)
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--strategy", choices=STRATEGY_KINDS)
    run.add_argument("--delta", type=float)
    run.add_argument("--lr", type=float)
    run.add_argument("--weight-decay", type=float)
    run.add_argument("--accum-steps", type=int)
    run.add_argument("--microbatch", type=int)
    run.add_argument("--max-epochs", type=int)
    run.add_argument("--patience", type=int)
    run.add_argument("--exemplars", type=int, help="replay memory capacity per class")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--max-negatives", type=int, help="down-sample negative candidates per view")

    sweep = sub.add_parser("sweep-delta", help="ice_o across a list of OTHER logits")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--deltas", required=True, help="comma-separated values, e.g. -5,-1,0,1,5")
    sweep.add_argument("--out", help="override the output directory")

    insp = sub.add_parser("inspect", help="print feature file header and stats")
    insp.add_argument("path")
    return parser


_STRATEGY_FLAGS = {
    "strategy": "kind",
    "delta": "delta",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "accum_steps": "accum_steps",
    "microbatch": "microbatch_size",
    "max_epochs": "max_epochs",
    "patience": "patience",
    "exemplars": "exemplars_per_class",
}


def _apply_overrides(cfg, args) -> "runner.ExperimentConfig":
    updates = {}
    if args.permutations is not None:
        updates["permutations"] = args.permutations
    if args.seed is not None:
        updates["master_seed"] = args.seed
    strat_updates = {
        field: getattr(args, flag)
        for flag, field in _STRATEGY_FLAGS.items()
        if getattr(args, flag, None) is not None
    }
    if strat_updates:
        updates["strategy"] = dataclasses.replace(cfg.strategy, **strat_updates)
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.max_negatives is not None:
        updates["negative_cap"] = args.max_negatives
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_gen(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        train_per_class=args.train,
        dev_per_class=args.dev,
        test_per_class=args.test,
        dim=args.dim,
        mean_scale=args.mean_scale,
        cov_scale=args.cov_scale,
        task_mode=args.mode,
        negatives_train=args.neg_train,
        negatives_dev=args.neg_dev,
        negatives_test=args.neg_test,
        background_spread=args.background_spread,
        anisotropy=args.anisotropy,
        seed=args.seed,
    )
    store, ontology = data_io.generate_synthetic(spec)
    data_io.write_features(store, ontology, args.out)
    print(f"wrote {len(store)} instances ({store.dim}-d, {len(ontology.classes)} classes) to {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _apply_overrides(data_io.parse_config(args.config), args)
    report = runner.run_experiment(cfg, resume=args.resume)
    for row in report.averaged:
        parts = [f"session {row['session']}: micro={row['micro']:.4f} macro={row['macro']:.4f}"]
        if row["acc_old"] is not None:
            parts.append(f"acc_old={row['acc_old']:.4f}")
        print("  ".join(parts))
    if cfg.out_dir:
        print(f"report written to {cfg.out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        deltas = [float(x) for x in args.deltas.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigError(f"cannot parse delta list {args.deltas!r}") from None
    if not deltas:
        raise ConfigError("empty delta list")
    base = data_io.parse_config(args.config)
    out_dir = Path(args.out) if args.out else (Path(base.out_dir) if base.out_dir else None)

    results = []
    for delta in deltas:
        cfg = dataclasses.replace(
            base,
            strategy=dataclasses.replace(base.strategy, kind="ice_o", delta=delta),
            out_dir=str(out_dir / f"delta_{delta:g}") if out_dir else None,
        )
        report = runner.run_experiment(cfg)
        results.append((delta, report.final_micro_mean()))
        log.info("delta=%g final micro=%.4f", delta, results[-1][1])

    header = "delta\t" + "\t".join(f"{d:g}" for d, _ in results)
    values = "final_micro_f1\t" + "\t".join(repr(v) for _, v in results)
    print(header)
    print(values)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "delta_sweep.tsv").write_text(header + "\n" + values + "\n")
        print(f"sweep table written to {out_dir / 'delta_sweep.tsv'}")
    return 0


def _cmd_inspect(args) -> int:
    store, ontology = data_io.load_features(args.path)
    counts = store.class_counts
    splits = {s: int(store.indices(s).size) for s in ("train", "dev", "test")}
    n_other = int((store.label_codes < 0).sum())
    print(f"feature file : {args.path}")
    print(f"task mode    : {ontology.task_mode}")
    print(f"dimension    : {store.dim}")
    print(f"instances    : {len(store)} (train {splits['train']}, dev {splits['dev']}, test {splits['test']})")
    print(f"classes      : {len(ontology.classes)}")
    print(f"negatives    : {n_other}")
    for name in ontology.classes:
        print(f"  {name}: {counts[name]} train")
    return 0


_HANDLERS = {
    "gen-synthetic": _cmd_gen,
    "run": _cmd_run,
    "sweep-delta": _cmd_sweep,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, runner.RunError, StrategyError, ValueError) as e:
        if isinstance(e, (FeatureFileError, DataModelError)):
            print(f"error (data): {e}", file=sys.stderr)
            return 3
        print(f"error (config): {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error (data): {e}", file=sys.stderr)
        return 3
    except Exception as e:  # pragma: no cover
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
