"""
Experiment orchestration: baselines, sweeps, complexity estimates and plot data.

Per-episode records go to an append-only ``metrics.jsonl`` (one pydantic
record per line); per-slot detail goes to ``slots.jsonl`` when enabled.
"""

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from .agents import EpisodeMetrics, MsatAgent, msat_train_episode
from .config import BASELINES, SWEEP_AXES, EnvConfig, ExperimentConfig, dbm_to_watt, worker_count
from .env import N_CONSTRAINTS, AarisEnv, TaskSpec
from .errors import ConfigError, InvalidArgumentError
from .meta import MetaResult, make_tasks, meta_adapt, meta_train
from .nn import param_count
from .telemetry import RunMetrics, tracer

logger = logging.getLogger(__name__)

FIXED_RIS_POSITION = (75.0, 75.0, 100.0)
FINAL_WINDOW = 0.1
HELD_OUT_SEED_OFFSET = 10_000
PLOT_COLUMNS = ("episode", "baseline", "seed", "mean_reward", "avg_ee", "avg_sum_rate")


class MetricsRecord(BaseModel):
    episode: int
    seed: int
    baseline: str
    mean_reward: float
    avg_ee: float
    avg_sum_rate: float
    avg_power: float
    violations: list[int]
    wall_clock_s: float


class SlotRecord(BaseModel):
    episode: int
    seed: int
    baseline: str
    slot: int
    r_total: float
    p_total: float
    ee: float
    reward: float
    violations: int


class JsonlSink:
    """Append-only line-delimited records; writes are serialized per file."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.lock = Lock()

    def write(self, records: Iterable[BaseModel]) -> None:
        lines = "".join(r.model_dump_json() + "\n" for r in records)
        if not lines:
            return
        with self.lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(lines)


def read_records(path: Path) -> list[MetricsRecord]:
    with open(path, encoding="utf-8") as f:
        return [MetricsRecord.model_validate_json(line) for line in f if line.strip()]


def baseline_env_config(env_cfg: EnvConfig, baseline: str) -> EnvConfig:
    if baseline not in BASELINES:
        raise InvalidArgumentError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")
    data = env_cfg.model_dump()
    if baseline == "passive_ris":
        data["ris_mode"] = "passive"
    elif baseline == "fixed_ris":
        data["fixed_uav"] = True
        data["uav_init"] = (*FIXED_RIS_POSITION[:2], env_cfg.altitude)
    return EnvConfig.model_validate(data)


def held_out_task(env_cfg: EnvConfig, n_train: int, seed: int) -> TaskSpec:
    return make_tasks(env_cfg, 1, seed=seed + HELD_OUT_SEED_OFFSET, first_id=n_train)[0]


@dataclass
class RunResult:
    baseline: str
    seed: int
    records: list[MetricsRecord]
    agent: MsatAgent
    meta: Optional[MetaResult] = None
    slots: list[SlotRecord] = field(default_factory=list)


class _Recorder:
    def __init__(self, baseline: str, seed: int, metrics: Optional[RunMetrics]):
        self.baseline, self.seed, self.metrics = baseline, seed, metrics
        self.records: list[MetricsRecord] = []
        self.slots: list[SlotRecord] = []
        self._t0 = time.perf_counter()

    def __call__(self, episode: int, m: EpisodeMetrics) -> None:
        now = time.perf_counter()
        elapsed, self._t0 = now - self._t0, now
        self.records.append(MetricsRecord(episode=episode, seed=self.seed, baseline=self.baseline,
                                          mean_reward=m.mean_reward, avg_ee=m.avg_ee, avg_sum_rate=m.avg_sum_rate,
                                          avg_power=m.avg_power, violations=m.violations, wall_clock_s=elapsed))
        self.slots.extend(SlotRecord(episode=episode, seed=self.seed, baseline=self.baseline, **s) for s in m.slots)
        if self.metrics is not None:
            self.metrics.episodes.labels(baseline=self.baseline).inc()
            self.metrics.episode_ee.labels(baseline=self.baseline).set(m.avg_ee)
            self.metrics.episode_duration.labels(baseline=self.baseline).observe(elapsed)
        logger.info("episode done baseline=%s seed=%d episode=%d reward=%.6g ee=%.6g sum_rate=%.6g",
                    self.baseline, self.seed, episode, m.mean_reward, m.avg_ee, m.avg_sum_rate)


def train_msat(cfg: ExperimentConfig, env_cfg: EnvConfig, task: TaskSpec, episodes: int, seed: int,
               recorder=None, metrics: Optional[RunMetrics] = None, baseline: str = "msat") -> MsatAgent:
    env = AarisEnv(env_cfg, seed=seed)
    agent = MsatAgent.for_env(env, cfg.agent, seed=seed, task_id=task.task_id)
    for episode in range(episodes):
        with tracer.start_as_current_span("train_episode") as span:
            span.set_attribute("baseline", baseline)
            span.set_attribute("episode", episode)
            m = msat_train_episode(env, agent, task, detail=cfg.detail, metrics=metrics)
        if metrics is not None:
            metrics.slots.labels(baseline=baseline).inc(env.horizon)
        if recorder is not None:
            recorder(episode, m)
    return agent


def run_baseline(cfg: ExperimentConfig, baseline: Optional[str] = None, seed: int = 0,
                 out_dir: Optional[Path] = None, metrics: Optional[RunMetrics] = None) -> RunResult:
    """
    Train one baseline for one seed on the held-out task.

    ``msat`` learns from scratch; the other three meta-train on ``n_tasks``
    tasks first and then adapt, with the RIS or UAV pinned as the baseline requires.
    """
    baseline = baseline or cfg.baseline
    env_cfg = baseline_env_config(cfg.env, baseline)
    task = held_out_task(env_cfg, cfg.meta.n_tasks, seed)
    recorder = _Recorder(baseline, seed, metrics)
    logger.info("run started baseline=%s seed=%d episodes=%d K=%d M=%d N_BS=%d",
                baseline, seed, cfg.episodes, env_cfg.k, env_cfg.m, env_cfg.channel.n_bs)
    meta_result = None
    if baseline == "msat":
        agent = train_msat(cfg, env_cfg, task, cfg.episodes, seed, recorder, metrics, baseline)
    else:
        tasks = make_tasks(env_cfg, cfg.meta.n_tasks, seed=seed)
        meta_result = meta_train(cfg, tasks, seed=seed, env_cfg=env_cfg, metrics=metrics, baseline=baseline)
        agent, _ = meta_adapt(meta_result.globals, task, cfg.episodes, cfg, env_cfg, seed=seed, detail=cfg.detail,
                              metrics=metrics, baseline=baseline, on_episode=recorder)
    if out_dir is not None:
        JsonlSink(Path(out_dir) / "metrics.jsonl").write(recorder.records)
        if cfg.detail:
            JsonlSink(Path(out_dir) / "slots.jsonl").write(recorder.slots)
    return RunResult(baseline=baseline, seed=seed, records=recorder.records, agent=agent, meta=meta_result,
                     slots=recorder.slots)


def final_window_mean(values: Sequence[float], frac: float = FINAL_WINDOW) -> float:
    """Mean over the last ``frac`` of the series (at least one entry)."""
    if not values:
        raise InvalidArgumentError("empty series")
    n = max(1, int(math.ceil(len(values) * frac)))
    return float(np.mean(values[-n:]))


def apply_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweep axis set; P_max_bs values are in dBm."""
    data = cfg.model_dump()
    env = data["env"]
    if axis == "M":
        side = int(round(math.sqrt(value)))
        if side * side != int(value):
            raise InvalidArgumentError(f"M={value} is not a square UPA size")
        env["channel"].update(mx=side, my=side)
    elif axis == "P_max_bs":
        env["bs_power"]["p_max"] = dbm_to_watt(float(value))
    elif axis == "N_BS":
        env["channel"]["n_bs"] = int(value)
    elif axis == "QoS":
        env["qos"] = [float(value)] * env["k"]
    else:
        raise InvalidArgumentError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"sweep.{axis}", e.errors()[0]["msg"]) from e


@dataclass
class SweepRow:
    axis: str
    value: float
    baseline: str
    mean_ee: float
    std_ee: float
    per_seed: list[float]


def _init_worker() -> None:
    torch.set_num_threads(1)


def _sweep_point(args: tuple[str, str, int]) -> float:
    cfg_json, baseline, seed = args
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    with tracer.start_as_current_span("sweep_point") as span:
        span.set_attribute("baseline", baseline)
        span.set_attribute("seed", seed)
        result = run_baseline(cfg, baseline, seed)
    return final_window_mean([r.avg_ee for r in result.records])


def sweep(cfg: ExperimentConfig, axis: Optional[str] = None, values: Optional[Sequence[float]] = None,
          baseline: Optional[str] = None, out_dir: Optional[Path] = None, workers: Optional[int] = None) -> list[SweepRow]:
    """Train every (axis value, seed) point and report the final-window mean EE per value."""
    axis = axis or cfg.sweep_axis
    values = list(values if values is not None else cfg.sweep_values)
    baseline = baseline or cfg.baseline
    if axis is None:
        raise InvalidArgumentError("no sweep axis configured")
    if len(values) < 2:
        raise InvalidArgumentError(f"sweep needs >= 2 axis values, got {values}")
    if len(cfg.seeds) < 3:
        raise InvalidArgumentError(f"sweep needs >= 3 seeds, got {cfg.seeds}")
    points = [apply_axis(cfg, axis, v) for v in values]
    jobs = [(p.model_dump_json(), baseline, seed) for p in points for seed in cfg.seeds]
    workers = workers or worker_count()
    logger.info("sweep started axis=%s values=%s baseline=%s seeds=%d workers=%d",
                axis, values, baseline, len(cfg.seeds), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
            finals = list(pool.map(_sweep_point, jobs))
    else:
        finals = [_sweep_point(job) for job in jobs]
    n = len(cfg.seeds)
    rows = []
    for i, value in enumerate(values):
        per_seed = finals[i * n:(i + 1) * n]
        rows.append(SweepRow(axis=axis, value=float(value), baseline=baseline, mean_ee=float(np.mean(per_seed)),
                             std_ee=float(np.std(per_seed)), per_seed=per_seed))
        logger.info("sweep point done axis=%s value=%s mean_ee=%.6g std_ee=%.6g", axis, value,
                    rows[-1].mean_ee, rows[-1].std_ee)
    if out_dir is not None:
        write_sweep_csv(rows, Path(out_dir))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], out_dir: Path) -> Path:
    path = _prepare(out_dir) / f"sweep_{rows[0].axis}.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("axis_value", "baseline", "mean_ee", "std_ee", "n_seeds"))
        for r in rows:
            writer.writerow((repr(r.value), r.baseline, repr(r.mean_ee), repr(r.std_ee), len(r.per_seed)))
    return path


@dataclass(frozen=True)
class ComplexityEstimate:
    meta_training_cost: int
    meta_adaptation_cost: int


def complexity_estimate(cfg: ExperimentConfig, layer_dims: Optional[Sequence[int]] = None) -> ComplexityEstimate:
    """
    Abstract op counts: (sum_l h_l*h_{l+1}) * |batch| * E * L, times T for meta-training.

    Defaults to the modified-SAC actor's layer sizes for ``cfg``.
    """
    if layer_dims is None:
        env = AarisEnv(cfg.env)
        layer_dims = [env.state_dim, *cfg.agent.hidden, env.m]
    neurons = sum(a * b for a, b in zip(layer_dims[:-1], layer_dims[1:]))
    per_episode = neurons * cfg.agent.batch_size * cfg.env.horizon_slots
    return ComplexityEstimate(meta_training_cost=per_episode * cfg.meta.episodes_train * cfg.meta.n_tasks,
                              meta_adaptation_cost=per_episode * cfg.meta.episodes_adapt)


def parameter_total(cfg: ExperimentConfig) -> int:
    """Trainable parameters (weights and biases) of one MSAT agent."""
    env = AarisEnv(cfg.env)
    s, m, d, h = env.state_dim, env.m, env.action_dim, cfg.agent.hidden
    sac = param_count([s, *h]) + 2 * param_count([h[-1], m]) + 2 * param_count([s + m, *h, 1])
    td3 = param_count([s, *h, d]) + 2 * param_count([s + d, *h, 1])
    return sac + td3


def _prepare(out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InvalidArgumentError(f"cannot create output directory {out_dir}: {e}") from e
    return out_dir


def emit_plot_data(records: Sequence[MetricsRecord], out_dir: Path) -> list[Path]:
    """Write ``convergence.csv`` (reward/EE/sum-rate curves) and ``violations.csv``, sorted deterministically."""
    if not records:
        raise InvalidArgumentError("no metrics records to emit")
    out_dir = _prepare(out_dir)
    ordered = sorted(records, key=lambda r: (r.baseline, r.seed, r.episode))
    paths = [out_dir / "convergence.csv", out_dir / "violations.csv"]
    try:
        with open(paths[0], "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(PLOT_COLUMNS)
            for r in ordered:
                writer.writerow((r.episode, r.baseline, r.seed, repr(r.mean_reward), repr(r.avg_ee),
                                 repr(r.avg_sum_rate)))
        with open(paths[1], "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("episode", "baseline", "seed", *(f"C{i}" for i in range(1, N_CONSTRAINTS + 1))))
            for r in ordered:
                writer.writerow((r.episode, r.baseline, r.seed, *r.violations))
    except OSError as e:
        raise InvalidArgumentError(f"cannot write plot data to {out_dir}: {e}") from e
    return paths


def episodes_to_reach(rewards: Sequence[float], target: float) -> int:
    """First episode index whose mean reward reaches ``target``; len(rewards) when never reached."""
    for i, r in enumerate(rewards):
        if r >= target:
            return i
    return len(rewards)


def reach_target(final: float, frac: float = 0.8) -> float:
    # 80% of the final value, measured towards zero for negative rewards
    return final - (1.0 - frac) * abs(final)


@dataclass
class AdaptationComparison:
    seed: int
    target: float
    meta_rewards: list[float]
    scratch_rewards: list[float]
    meta_episodes: int
    scratch_episodes: int

    @property
    def meta_faster(self) -> bool:
        return self.meta_episodes < self.scratch_episodes


def compare_adaptation(cfg: ExperimentConfig, seed: int = 0, episodes: Optional[int] = None) -> AdaptationComparison:
    """Meta-adapted vs from-scratch MSAT on the same held-out task with matched seeds."""
    episodes = cfg.meta.episodes_adapt if episodes is None else episodes
    env_cfg = cfg.env
    task = held_out_task(env_cfg, cfg.meta.n_tasks, seed)
    tasks = make_tasks(env_cfg, cfg.meta.n_tasks, seed=seed)
    meta_result = meta_train(cfg, tasks, seed=seed, env_cfg=env_cfg)
    _, meta_curve = meta_adapt(meta_result.globals, task, episodes, cfg, env_cfg, seed=seed)
    scratch = _Recorder("msat", seed, None)
    train_msat(cfg, env_cfg, task, episodes, seed, recorder=scratch)
    meta_rewards = [m.mean_reward for m in meta_curve]
    scratch_rewards = [r.mean_reward for r in scratch.records]
    target = reach_target(final_window_mean(scratch_rewards))
    result = AdaptationComparison(seed=seed, target=target, meta_rewards=meta_rewards, scratch_rewards=scratch_rewards,
                                  meta_episodes=episodes_to_reach(meta_rewards, target),
                                  scratch_episodes=episodes_to_reach(scratch_rewards, target))
    logger.info("adaptation compared seed=%d target=%.6g meta_episodes=%d scratch_episodes=%d",
                seed, target, result.meta_episodes, result.scratch_episodes)
    return result


__all__ = [
    "MetricsRecord", "SlotRecord", "JsonlSink", "RunResult", "run_baseline", "sweep", "SweepRow",
    "complexity_estimate", "ComplexityEstimate", "emit_plot_data", "compare_adaptation", "final_window_mean",
    "baseline_env_config", "apply_axis", "read_records", "parameter_total",
]
