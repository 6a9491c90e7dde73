"""Command-line entry point: ``python -m aaris <command> [options]``."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .agents import MsatAgent, evaluate_policy
from .config import BASELINES, SWEEP_AXES, ExperimentConfig, desk_scale, load_config
from .env import AarisEnv
from .errors import AarisError
from .harness import (
    baseline_env_config,
    compare_adaptation,
    complexity_estimate,
    emit_plot_data,
    held_out_task,
    parameter_total,
    read_records,
    run_baseline,
    sweep,
)
from .meta import build_globals, load_meta_checkpoint, make_tasks, meta_adapt, meta_train, restore_networks, save_meta_checkpoint
from .nn import load_mlps, save_mlps
from .telemetry import RunMetrics, configure_logging, configure_tracing, log_buffer

logger = logging.getLogger(__name__)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.desk_scale:
        cfg = desk_scale(cfg)
    updates = {}
    if args.baseline:
        updates["baseline"] = args.baseline
    if args.seed is not None:
        updates["seeds"] = [args.seed]
    if args.out:
        updates["out_dir"] = args.out
    return cfg.model_copy(update=updates) if updates else cfg


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_train(cfg: ExperimentConfig, args) -> None:
    out = Path(cfg.out_dir)
    metrics = RunMetrics()
    records = []
    for seed in cfg.seeds:
        result = run_baseline(cfg, cfg.baseline, seed, out_dir=out, metrics=metrics)
        save_mlps(out / f"agent_{cfg.baseline}_seed{seed}.ckpt", result.agent.networks())
        records.extend(result.records)
    metrics.write_textfile(out)
    paths = emit_plot_data(records, out)
    _emit({"baseline": cfg.baseline, "seeds": cfg.seeds, "episodes": cfg.episodes, "files": [str(p) for p in paths]})


def cmd_meta_train(cfg: ExperimentConfig, args) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = RunMetrics()
    summary = {}
    for seed in cfg.seeds:
        env_cfg = baseline_env_config(cfg.env, cfg.baseline)
        tasks = make_tasks(env_cfg, cfg.meta.n_tasks, seed=seed)
        result = meta_train(cfg, tasks, seed=seed, env_cfg=env_cfg, metrics=metrics, baseline=cfg.baseline)
        path = out / f"meta_seed{seed}.ckpt"
        save_meta_checkpoint(path, result.globals, tasks)
        summary[str(seed)] = {"checkpoint": str(path),
                              "final_rewards": {str(t): h[-1] if h else None for t, h in result.history.items()}}
    metrics.write_textfile(out)
    _emit(summary)


def cmd_adapt(cfg: ExperimentConfig, args) -> None:
    out = Path(cfg.out_dir)
    mlps, tasks = load_meta_checkpoint(args.checkpoint)
    seed = cfg.seeds[0]
    env_cfg = baseline_env_config(cfg.env, cfg.baseline)
    globals_ = build_globals(env_cfg, cfg, seed)
    restore_networks(globals_, mlps)
    task = held_out_task(env_cfg, len(tasks), seed)
    episodes = args.episodes if args.episodes is not None else cfg.meta.episodes_adapt
    agent, curve = meta_adapt(globals_, task, episodes, cfg, env_cfg, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    save_mlps(out / f"adapted_seed{seed}.ckpt", agent.networks())
    _emit({"task": task.model_dump(mode="json"), "rewards": [m.mean_reward for m in curve]})


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    seed = cfg.seeds[0]
    env_cfg = baseline_env_config(cfg.env, cfg.baseline)
    env = AarisEnv(env_cfg, seed=seed)
    agent = MsatAgent.for_env(env, cfg.agent, seed=seed)
    restore_networks(agent, load_mlps(args.checkpoint))
    task = held_out_task(env_cfg, cfg.meta.n_tasks, seed)
    results = evaluate_policy(env, agent, task, episodes=args.episodes or 1)
    _emit([{"mean_reward": m.mean_reward, "avg_ee": m.avg_ee, "avg_sum_rate": m.avg_sum_rate,
            "violations": m.violations} for m in results])


def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    values = [float(v) for v in args.values.split(",")] if args.values else None
    rows = sweep(cfg, axis=args.axis, values=values, out_dir=Path(cfg.out_dir))
    _emit([{"value": r.value, "mean_ee": r.mean_ee, "std_ee": r.std_ee} for r in rows])


def cmd_plot_data(cfg: ExperimentConfig, args) -> None:
    out = Path(cfg.out_dir)
    source = Path(args.metrics) if args.metrics else out / "metrics.jsonl"
    paths = emit_plot_data(read_records(source), out)
    _emit({"files": [str(p) for p in paths]})


def cmd_complexity(cfg: ExperimentConfig, args) -> None:
    est = complexity_estimate(cfg)
    _emit({"meta_training_cost": est.meta_training_cost, "meta_adaptation_cost": est.meta_adaptation_cost,
           "parameters_per_agent": parameter_total(cfg)})


def cmd_compare(cfg: ExperimentConfig, args) -> None:
    results = [compare_adaptation(cfg, seed, episodes=args.episodes) for seed in cfg.seeds]
    _emit([{"seed": r.seed, "target": r.target, "meta_episodes": r.meta_episodes,
            "scratch_episodes": r.scratch_episodes} for r in results])


COMMANDS = {
    "train": (cmd_train, "Train one baseline for every configured seed"),
    "meta-train": (cmd_meta_train, "Meta-train MMSAT globals and save a meta checkpoint"),
    "adapt": (cmd_adapt, "Adapt meta-trained globals to a held-out task"),
    "eval": (cmd_eval, "Greedy rollouts of a saved agent"),
    "sweep": (cmd_sweep, "Final-window EE across one configuration axis"),
    "plot-data": (cmd_plot_data, "Write convergence CSVs from metrics.jsonl"),
    "complexity": (cmd_complexity, "Abstract op-count estimate for meta-training and adaptation"),
    "compare": (cmd_compare, "Meta-adapted vs from-scratch episodes-to-target"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aaris", description="Aerial active-RIS RSMA simulator and MSAT/MMSAT trainer")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="Layered section.key = value config file (default: reference parameter set)")
        p.add_argument("--seed", type=int, help="Run a single seed instead of the configured list")
        p.add_argument("--baseline", choices=BASELINES, help="Baseline to run (default: from config)")
        p.add_argument("--out", help="Output directory (default: experiment.out_dir)")
        p.add_argument("--desk-scale", action="store_true", help="K=2, M=4, N_BS=2, L=50, E=200 preset")
        if name in ("adapt", "eval"):
            p.add_argument("--checkpoint", required=True, help="Checkpoint file to load")
        if name in ("adapt", "eval", "compare"):
            p.add_argument("--episodes", type=int, help="Episode count override")
        if name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES, help="Sweep axis (default: experiment.sweep_axis)")
            p.add_argument("--values", help="Comma-separated axis values (P_max_bs in dBm)")
        if name == "plot-data":
            p.add_argument("--metrics", help="metrics.jsonl to read (default: <out>/metrics.jsonl)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    configure_tracing()
    out: Optional[Path] = None
    try:
        cfg = _load(args)
        out = Path(cfg.out_dir)
        COMMANDS[args.command][0](cfg, args)
    except AarisError as e:
        logger.error("command failed command=%s error=%s", args.command, e)
        if out is not None and out.is_dir():
            log_buffer.dump(out / "failure.log")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
