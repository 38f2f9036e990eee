"""Command line entry point: ``v2xshare {train,eval,baseline,compare,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, TrainConfig, load_config
from .dqn import CheckpointError, DivergenceError
from .evaluation import (
    REWARD_CURVE_NAME,
    SUCCESS_CURVE_NAME,
    SUMMARY_NAME,
    compare_models,
    emit_success_curve,
    emit_training_curve,
    evaluate,
    load_policy,
    plot_curves,
    read_summary_csv,
    write_summary_csv,
)
from .training import run_training


def _config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _write_eval(summary, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv([summary], out / SUMMARY_NAME)
    emit_success_curve(summary.delivered_fracs, out / SUCCESS_CURVE_NAME)
    print(f"{summary.model}: success {summary.v2v_success_prob:.4f}, "
          f"V2I {summary.avg_v2i_mbps:.5f} Mbps over {summary.n_episodes} episodes -> {out / SUMMARY_NAME}")


def cmd_train(args) -> None:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.episodes is not None:
        cfg.episodes = args.episodes
    cfg.mode = args.mode
    out = Path(args.out)
    log, _ = run_training(cfg, out)
    emit_training_curve(log, args.window, out / REWARD_CURVE_NAME)
    tail = log.cum_rewards[-min(50, len(log)):].mean() if len(log) else float("nan")
    print(f"trained {args.mode} for {len(log)} episodes, final-50 mean reward {tail:.3f} -> {out}")


def cmd_eval(args) -> None:
    policy = load_policy(args.checkpoint_dir)
    summary = evaluate(policy, policy.config, args.episodes, args.payload_bytes, args.seed)
    _write_eval(summary, Path(args.out or args.checkpoint_dir))


def cmd_baseline(args) -> None:
    cfg = _config(args.config)
    summary = evaluate("random", cfg, args.episodes, args.payload_bytes, args.seed)
    _write_eval(summary, Path(args.out))


def cmd_compare(args) -> None:
    summaries = [s for path in args.summaries for s in read_summary_csv(path)]
    print(compare_models(summaries))


def cmd_plot(args) -> None:
    print(plot_curves(args.log, args.out, args.window))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2xshare", description="Spectrum sharing in vehicular networks with deep Q-learning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train MARL or SARL agents")
    t.add_argument("--config", help="key = value config file (defaults if omitted)")
    t.add_argument("--mode", choices=("marl", "sarl"), required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int, help="override the configured episode count")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--window", type=int, default=50, help="moving-average window for reward_curve.csv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a trained run")
    e.add_argument("--checkpoint-dir", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--payload-bytes", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="where to write results (default: the checkpoint dir)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="evaluate the random policy")
    b.add_argument("--config")
    b.add_argument("--episodes", type=int)
    b.add_argument("--payload-bytes", type=float)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", default="baseline")
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("compare", help="tabulate eval_summary.csv files")
    c.add_argument("summaries", nargs="+")
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="render a training log or success curve as SVG/PDF")
    pl.add_argument("--log", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--window", type=int, default=50)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, CheckpointError, DivergenceError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"v2xshare {args.command}: error: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
