"""Command line front door: ``train``, ``eval``, ``plot`` and ``model-report``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, parse_config
from .evaluation import (collect_transitions, dimension_labels, evaluate_policy, r_squared, summarize,
                         write_episode_csv, write_json, write_quality_csv)
from .nn import CheckpointError, DimensionError
from .plotting import plot_runs
from .trainer import env_from_config, latest_checkpoint, load_checkpoint, run_training

log = logging.getLogger("mambpo")


def _config_from_args(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f'output_dir="{args.out}"')
    return parse_config(args.config, overrides)


def new_run_dir(root, config) -> Path:
    """``<root>/<env>-<algorithm>-s<seed>-<UTC timestamp>``, suffixed if it already exists."""
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    base = Path(root) / f"{config.env}-{config.algorithm}-s{config.seed}-{stamp}"
    path, k = base, 1
    while path.exists():
        path, k = base.with_name(f"{base.name}-{k}"), k + 1
    path.mkdir(parents=True)
    return path


def cmd_train(args) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        config = parse_config(run_dir / "config.toml", args.set or [])
        if latest_checkpoint(run_dir) is None:
            raise CheckpointError(str(run_dir), "no checkpoint to resume from")
    else:
        config = _config_from_args(args)
        try:
            run_dir = new_run_dir(config.output_dir, config)
        except OSError as exc:
            raise OSError(f"cannot create a run directory under {config.output_dir!r}: {exc}") from exc
    log.info("run directory %s", run_dir)

    def progress(state):
        if state.episode % 10 == 0:
            log.info("episode %d  t=%d", state.episode, state.t)

    result = run_training(config, run_dir, resume=bool(args.resume), on_episode_end=progress)
    print(result.run_dir)
    return 0


def _resolve_checkpoint(path) -> Path:
    path = Path(path)
    if (path / "state.bin").exists():
        return path
    found = latest_checkpoint(path)
    if found is None:
        raise CheckpointError(str(path), "no checkpoint found")
    return found


def _model_report(state, env, n: int, seed: int, out: Path) -> dict:
    batch = collect_transitions(state.learners, env, n, seed)
    report = r_squared(state.model, batch, dimension_labels(state.config.env, env.n_agents))
    write_quality_csv(report, out / "model_quality.csv")
    return report.as_dict()


def cmd_eval(args) -> int:
    ckpt = _resolve_checkpoint(args.checkpoint)
    state = load_checkpoint(ckpt)
    env = env_from_config(state.config)
    out = Path(args.out) if args.out else ckpt / "eval"
    out.mkdir(parents=True, exist_ok=True)
    records = evaluate_policy(state.learners, env, args.episodes, args.seed)
    write_episode_csv(records, out / "episodes.csv")
    summary = {"checkpoint": str(ckpt), "seed": args.seed, **summarize(records)}
    if state.model is not None and state.model.trained:
        summary["model_quality"] = _model_report(state, env, args.transitions, args.seed, out)
    write_json(summary, out / "summary.json")
    print(out / "summary.json")
    return 0


def cmd_model_report(args) -> int:
    ckpt = _resolve_checkpoint(args.checkpoint)
    state = load_checkpoint(ckpt)
    if state.model is None or not state.model.trained:
        raise CheckpointError(str(ckpt), "checkpoint holds no trained world model")
    env = env_from_config(state.config)
    out = Path(args.out) if args.out else ckpt / "model_report"
    out.mkdir(parents=True, exist_ok=True)
    write_json(_model_report(state, env, args.transitions, args.seed, out), out / "model_report.json")
    print(out / "model_report.json")
    return 0


def cmd_plot(args) -> int:
    groups: dict[str, list[str]] = {}
    for item in args.runs:
        label, _, path = item.rpartition("=")
        groups.setdefault(label or "return", []).append(path)
    svg, csv_path = plot_runs(groups, args.out, args.window, title=args.title)
    print(svg)
    print(csv_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mambpo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train MAMBPO or MASAC and write a run directory")
    t.add_argument("--config", help="flat dotted-key TOML file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key (repeatable)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output root (default: $MAMBPO_OUTPUT_ROOT or ./runs)")
    t.add_argument("--resume", metavar="RUN_DIR", help="continue a run from its newest checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with mean actions")
    e.add_argument("checkpoint", help="checkpoint directory or run directory")
    e.add_argument("--episodes", type=int, default=250)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--transitions", type=int, default=1000, help="fresh transitions for the model report")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("model-report", help="world-model R² and reward bias on fresh transitions")
    m.add_argument("checkpoint")
    m.add_argument("--transitions", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_model_report)

    pl = sub.add_parser("plot", help="smoothed learning curves (SVG + CSV) across runs")
    pl.add_argument("runs", nargs="+", metavar="[LABEL=]RUN_DIR")
    pl.add_argument("--window", type=int, default=200)
    pl.add_argument("--title")
    pl.add_argument("--out", default="curves", help="output path prefix")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, DimensionError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
