"""``ebnet`` command line: cost reports, training, evaluation, search, export and benchmarks.

Exit codes: 0 success, 2 usage, parse or config error, 3 infeasible search
budget, 4 unreadable data or checkpoint, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from loguru import logger
from pydantic import ValidationError

from ..arch import DIRECTIONS, SearchConfig, cost_model, parse_arch, search
from ..data import DATASET_KINDS, make_loader, open_dataset
from ..errors import ConfigError, EbnetError, FormatError, InfeasibleBudgetError, ShapeError
from ..logging import LoguruInitializer
from ..settings import RuntimeSettings
from ..trainer import (
    PolicyConfig,
    ProxyTrainer,
    TrainingPolicy,
    adapt_to_dataset,
    evaluate,
    load_model,
    run_stage2_from,
    save_model,
)
from . import bench, export

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_DATA = 4

_GROUP_MIX = {"auto": None, "true": True, "false": False}

Handler = Callable[[argparse.Namespace], int]


def _add_arch_options(p: argparse.ArgumentParser, *, flag: str = "--arch") -> None:
    p.add_argument(flag, required=True, help="Architecture string N0N1N2N3-E-G0:G1:G2:G3, e.g. 1262-2-4:8:8:16.")
    p.add_argument("--experts", type=int, default=1, help="Experts per expert binary convolution.")
    p.add_argument("--group-mix", choices=tuple(_GROUP_MIX), default="auto")
    p.add_argument("--downsample", choices=("auto", "vanilla", "linear", "relu", "prelu"), default="auto")
    p.add_argument("--base-width", type=int, default=64)


def _arch_from(args: argparse.Namespace, text: str, **options: Any):
    return parse_arch(
        text,
        n_experts=args.experts,
        group_mix=_GROUP_MIX[args.group_mix],
        downsample_variant=args.downsample,
        base_width=args.base_width,
        **options,
    )


def _add_data_options(p: argparse.ArgumentParser, *, required: bool = True) -> None:
    p.add_argument("--dataset", choices=DATASET_KINDS, required=required)
    p.add_argument("--data-dir", type=Path, required=required)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-batches", type=int, default=None, help="Cap on batches per epoch and per evaluation.")
    p.add_argument("--workers", type=int, default=0)


# cost


def cmd_cost(args: argparse.Namespace) -> int:
    spec = _arch_from(args, args.arch, input_resolution=args.input, stem=args.stem, classes=args.classes)
    report = cost_model(spec)
    if args.format == "json":
        sys.stdout.write(report.to_json())
    else:
        sys.stdout.write(f"arch={spec.name}\nexperts={spec.n_experts}\ngroup_mix={int(spec.mix_enabled)}\n")
        sys.stdout.write(report.to_text())
    return EXIT_OK


# train


def _policy_config(args: argparse.Namespace) -> PolicyConfig:
    cfg = PolicyConfig.from_yaml(args.config) if args.config is not None else PolicyConfig()
    if args.epochs is not None:
        cfg = cfg.scaled(args.epochs)
    overrides = {"seed": args.seed, "workers": args.workers}
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.max_batches is not None:
        overrides["max_batches"] = args.max_batches
    stages = {
        name: type(stage).model_validate(stage.model_dump() | overrides)
        for name, stage in (("stage1", cfg.stage1), ("stage2", cfg.stage2))
    }
    return PolicyConfig.model_validate(cfg.model_dump() | stages)


def _print_history(history: dict[str, list[dict]]) -> None:
    for step, rows in sorted(history.items()):
        if rows:
            last = rows[-1]
            sys.stdout.write(f"{step} epochs={len(rows)} top1={last['val_top1']:.2f} top5={last['val_top5']:.2f}\n")


def cmd_train(args: argparse.Namespace) -> int:
    data = open_dataset(args.dataset, args.data_dir)
    spec = adapt_to_dataset(_arch_from(args, args.arch), data)
    cfg = _policy_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(args.out / "config.yaml", fill_default_comments=True)

    if args.policy == "stage2":
        if args.resume is None:
            raise ConfigError("--policy stage2 needs --resume pointing at a stage I checkpoint")
        model, metrics = run_stage2_from(args.resume, data, cfg.stage2, out_dir=args.out, arch=spec)
        history = {"step4": metrics.as_state()}
        save_model(args.out / "step4.ckpt", model, step="step4", seed=args.seed, history=history)
        _print_history(history)
        return EXIT_OK

    if args.resume is not None:
        logger.warning("--resume is only used with --policy stage2; runs in {} resume from their snapshots", args.out)
        raise ConfigError("--resume needs --policy stage2")
    policy = TrainingPolicy(arch=spec, config=cfg, seed=args.seed, data=data, out_dir=args.out)
    if args.policy == "stage1":
        # a single expert has nothing to replicate, so stage I ends with step 1
        until = "step1" if spec.n_experts == 1 else "step3"
    else:
        until = "step4"
    policy.run(until=until)
    _print_history(policy.history)
    return EXIT_OK


# eval


def cmd_eval(args: argparse.Namespace) -> int:
    if export.is_exported(args.ckpt):
        model = export.load_exported(args.ckpt)
    else:
        model, _ = load_model(args.ckpt)
    data = open_dataset(args.dataset, args.data_dir)
    spec = model.spec
    if spec.classes != data.classes or spec.in_channels != data.in_channels:
        raise ConfigError(
            f"{args.ckpt} predicts {spec.classes} classes from {spec.in_channels} channels, "
            f"{args.dataset} has {data.classes} classes and {data.in_channels} channels"
        )
    loader = make_loader(data, split="test", batch_size=args.batch_size or 128, seed=0, workers=args.workers)
    report = evaluate(model, loader, max_batches=args.max_batches)
    sys.stdout.write(f"top1={report.top1:.4f}\ntop5={report.top5:.4f}\nsamples={report.samples}\n")
    for name, row in report.utilization.items():
        sys.stdout.write(f"utilization.{name}=" + ",".join(f"{v:.4f}" for v in row) + "\n")
    return EXIT_OK


# search


def _parse_settings(items: Sequence[str]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for item in items:
        direction, sep, values = item.partition("=")
        if not sep or direction not in DIRECTIONS or not values:
            raise ConfigError(f"--settings expects DIRECTION=v1,v2,... with a direction in {DIRECTIONS}, got {item!r}")
        out[direction] = values.split(",")
    return out


def cmd_search(args: argparse.Namespace) -> int:
    directions = args.directions.split(",")
    cfg = SearchConfig(
        directions=directions,
        max_bops=args.budget_bops,
        max_flops=args.budget_flops,
        rounds=args.rounds,
        keep_top=args.keep_top,
        settings=_parse_settings(args.settings),
        proxy_epochs=args.proxy_epochs,
        proxy_dataset=args.dataset or "cifar10",
    )
    if args.proxy == "train":
        if args.dataset is None or args.data_dir is None:
            raise ConfigError("--proxy train needs --dataset and --data-dir")
        data = open_dataset(args.dataset, args.data_dir)
        proxy = ProxyTrainer(
            data, epochs=cfg.proxy_epochs, batch_size=args.batch_size or 128, seed=args.seed, max_batches=args.max_batches
        )
    else:

        def proxy(spec) -> float:
            return -float(cost_model(spec).bops)

    seed = _arch_from(args, args.seed_arch, input_resolution=args.input)
    result = search(seed, cfg, proxy)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(args.out / "search.yaml", fill_default_comments=True)
    for r in result.rounds:
        r.write_csv(args.out / f"round_{r.index}.csv")
    if result.status == "empty":
        raise InfeasibleBudgetError(
            f"no candidate around {seed.name} fits {cfg.max_bops} BOPs and {cfg.max_flops} FLOPs"
        )
    result.write_csv(args.out / "ranking.csv")
    sys.stdout.write(result.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="Report BOPs, FLOPs and model size of an architecture.")
    _add_arch_options(p)
    p.add_argument("--input", type=int, default=224, help="Input resolution.")
    p.add_argument("--stem", choices=("imagenet7x7", "cifar3x3"), default="imagenet7x7")
    p.add_argument("--classes", type=int, default=1000)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(handler=cmd_cost)

    p = sub.add_parser("train", help="Run the staged training policy.")
    _add_arch_options(p)
    _add_data_options(p)
    p.add_argument("--epochs", type=int, default=None, help="Epochs per stage; milestones scale along.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="Run directory for snapshots, metrics and logs.")
    p.add_argument("--policy", choices=("full", "stage1", "stage2"), default="full")
    p.add_argument("--resume", type=Path, default=None, help="Stage I checkpoint that --policy stage2 starts from.")
    p.add_argument("--config", type=Path, default=None, help="PolicyConfig YAML.")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Top-1/top-5 accuracy and expert utilization of a checkpoint.")
    p.add_argument("--ckpt", type=Path, required=True)
    _add_data_options(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("search", help="Coordinate search around a seed architecture.")
    _add_arch_options(p, flag="--seed-arch")
    _add_data_options(p, required=False)
    p.add_argument("--input", type=int, default=224)
    p.add_argument("--budget-bops", type=int, required=True)
    p.add_argument("--budget-flops", type=int, required=True)
    p.add_argument("--directions", default="blocks,width,groups", help=f"Comma-separated subset of {DIRECTIONS}.")
    p.add_argument("--settings", action="append", default=[], help="DIRECTION=v1,v2,... (repeatable).")
    p.add_argument("--rounds", type=int, default=3, help="Sweep plus combination rounds.")
    p.add_argument("--keep-top", type=int, default=2)
    p.add_argument("--proxy", choices=("train", "dry"), default="train", help="dry ranks by fewest BOPs.")
    p.add_argument("--proxy-epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_search)

    export.add_parser(sub)
    bench.add_parser(sub)
    return parser


def _init_logging(args: argparse.Namespace) -> None:
    init = LoguruInitializer()
    if args.command == "train":
        init.preset_training(args.out)
    if args.verbose:
        init.set_level("DEBUG")
    init.initialize(on_reinitialize="overwrite")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, InfeasibleBudgetError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (FormatError, FileNotFoundError, NotADirectoryError)):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, ShapeError, ValidationError)):
        return EXIT_USAGE
    return EXIT_FAILURE


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    _init_logging(args)
    handler: Handler = args.handler
    try:
        RuntimeSettings.from_env().apply()
        return handler(args)
    except (EbnetError, ValidationError, OSError, RuntimeError) as exc:
        code = _exit_code(exc)
        logger.error("{} failed: {}", args.command, exc)
        if code == EXIT_FAILURE:
            logger.opt(exception=exc).debug("Traceback")
        return code
