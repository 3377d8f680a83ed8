"""Command line entry point: synth, train, eval, ablate, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 invalid input data,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from sgseg import __version__
from sgseg.config import RunConfig, apply_overrides, from_dict, load_config_file, toy_config
from sgseg.errors import ConfigError, ContractError, DimensionError, NumericError, ValidationError

log = logging.getLogger("sgseg")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def _override_pairs(extra: list[str]) -> list[tuple[str, str]]:
    """Turn ``--key value`` leftovers into pairs; ``--flag`` alone means true."""
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}; overrides take the form --key value")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            value = extra[i + 1]
            i += 2
        else:
            value = "true"
            i += 1
        pairs.append((key, value))
    return pairs


def _run_config(args, extra: list[str]) -> RunConfig:
    values = toy_config().to_dict() if getattr(args, "toy", False) else {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    values = apply_overrides(values, _override_pairs(extra))
    if getattr(args, "threads", None) is not None:
        values["threads"] = args.threads
    return from_dict(values)


def _echo(line: str) -> None:
    print(line, flush=True)


def cmd_synth(args, extra) -> int:
    from sgseg.data import DEFAULT_DATASET, GeneratorConfig, generate_dataset, save_dataset

    values = dict(DEFAULT_DATASET)
    if args.config:
        values.update(load_config_file(args.config))
    known = GeneratorConfig.__dataclass_fields__
    for key, raw in _override_pairs(extra):
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown generator config key: {key}")
        values[key] = json.loads(raw) if raw not in ("None", "none") else None
    cfg = GeneratorConfig.from_dict(values)
    root = save_dataset(generate_dataset(cfg), args.out, cfg)
    _echo(f"wrote {cfg.num_samples} samples to {root}")
    return EXIT_OK


def _split(cfg: RunConfig, samples, which: str):
    from sgseg.data import split_folds

    if which == "all":
        return samples
    train, test = split_folds(samples, cfg.num_folds, cfg.seed)[cfg.eval_fold]
    return train if which == "train" else test


def cmd_train(args, extra) -> int:
    from sgseg.data import load_dataset
    from sgseg.train import DatasetInfo, Trainer

    samples = load_dataset(args.data)
    if args.resume:
        overrides = apply_overrides({}, _override_pairs(extra))
        trainer = Trainer.from_checkpoint(args.resume, args.out, _echo, **overrides)
        cfg = trainer.cfg
    else:
        cfg = _run_config(args, extra)
        trainer = Trainer(cfg, DatasetInfo.from_samples(samples), args.out, _echo)
    train = _split(cfg, samples, args.split)
    trainer.fit(train)
    _echo(f"checkpoint: {Path(args.out) / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    from sgseg.data import load_dataset
    from sgseg.evaluate import evaluate, plot_timeline, report_rows, write_report, write_timeline
    from sgseg.train import load_model

    model, info, cfg = load_model(args.checkpoint)
    changes = apply_overrides({}, _override_pairs(extra))
    if changes:
        cfg = cfg.replace(**changes)
        model.cfg = cfg
    samples = load_dataset(args.data)
    if len(samples[0].class_names) != info.num_classes:
        raise ConfigError(f"dataset has {len(samples[0].class_names)} classes, "
                          f"checkpoint expects {info.num_classes}")
    subset = _split(cfg, samples, args.split)
    result = evaluate(model, subset, info.num_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.csv", report_rows(result, cfg, class_names=info.class_names))
    write_timeline(out / "timeline.csv", result.predictions)
    if args.plot:
        plot_timeline(out / "timeline.png", result.predictions, info.num_classes)
    _echo(f"segmental_f1={result.segmental.macro_f1:.4f} frame_f1={result.frame.macro_f1:.4f} "
          f"iou_threshold={cfg.iou_threshold} alpha={cfg.alpha}")
    return EXIT_OK


def cmd_ablate(args, extra) -> int:
    from sgseg.ablate import run_ablation
    from sgseg.data import load_dataset
    from sgseg.evaluate import write_report

    cfg = _run_config(args, extra)
    groups = args.groups.split(",") if args.groups else None
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_ablation(cfg, load_dataset(args.data), groups, seeds, _echo)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(f"report: {write_report(out / 'ablation.csv', rows)}")
    return EXIT_OK


def cmd_gradcheck(args, extra) -> int:
    from sgseg.checks import TOLERANCE, run_gradchecks

    if extra:
        raise UsageError(f"gradcheck takes no overrides, got {extra}")
    only = set(args.only.split(",")) if args.only else None
    results = run_gradchecks(max_coords=args.max_coords, seed=args.seed, include_model=not args.skip_model,
                             only=only)
    failed = False
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failed |= not r.passed
        _echo(f"{r.name:<12} max_rel_error={r.max_rel_error:.3e} time={r.seconds:.1f}s {status}")
    _echo(f"tolerance {TOLERANCE:g}: {'FAILED' if failed else 'all passed'}")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgseg", description="Multi-modal action segmentation with sparse device guidance.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads (1 = deterministic)")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON or YAML file with generator settings")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON or YAML file with run settings")
    p.add_argument("--toy", action="store_true", help="start from the small test configuration")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--split", choices=("train", "all"), default="train",
                   help="train on the training folds (default) or every sample")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--plot", action="store_true", help="also write timeline.png (needs matplotlib)")

    p = sub.add_parser("ablate", help="train and score a grid of variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--groups", help="comma list of modalities,fusion,interactions,losses,lambda2,alpha")
    p.add_argument("--seeds", default="0")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and the full model")
    p.add_argument("--max-coords", type=int, default=4, help="probes per parameter tensor of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="comma list of check names")
    p.add_argument("--skip-model", action="store_true")
    return parser


def _thread_limit(threads: int | None):
    if threads is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        with _thread_limit(args.threads if args.threads is not None else 1):
            return COMMANDS[args.command](args, extra)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, DimensionError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
