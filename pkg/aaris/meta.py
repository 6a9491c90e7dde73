"""
MMSAT: first-order meta-training of the MSAT networks across user-placement
tasks, and meta-adaptation of the learned initialization to a new task.

Each task owns an environment, a replay buffer, a pair of random streams and
an adapted copy of the global networks together with its own target copies.
Tasks run slot-major: in every slot each task acts, stores its transition
and adapts from the globals; the outer update then moves the globals using
gradients taken at the adapted parameters on fresh validation batches.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .agents import (
    Batch,
    EpisodeMetrics,
    EpisodeTracker,
    MsatAgent,
    ReplayBuffer,
    bits_to_pm,
    msat_act,
    msat_train_episode,
    sac_losses,
    td3_losses,
)
from .config import EnvConfig, ExperimentConfig, MetaConfig
from .env import AarisEnv, TaskSpec, random_task
from .errors import CheckpointError, InvalidArgumentError
from .nn import Mlp, copy_params, mlp_from_bytes, mlp_to_bytes, pack_blobs, soft_update, unpack_blobs
from .telemetry import RunMetrics, tracer

logger = logging.getLogger(__name__)

META_MAGIC = b"AARM"
META_VERSION = 1

GROUPS = ("sac_critic", "sac_actor", "td3_critic", "td3_actor")

__all__ = [
    "TaskSpec", "TaskLearner", "MetaResult", "make_tasks", "load_online", "sync_targets", "task_gradients",
    "inner_adapt", "outer_update", "meta_train", "meta_adapt", "save_meta_checkpoint", "load_meta_checkpoint",
    "restore_networks",
]


def make_tasks(env_cfg: EnvConfig, n: int, seed: int = 0, first_id: int = 0) -> list[TaskSpec]:
    rng = np.random.default_rng(seed)
    return [random_task(env_cfg, first_id + i, rng) for i in range(n)]


def param_groups(agent: MsatAgent) -> dict[str, list[torch.Tensor]]:
    return {
        "sac_critic": agent.sac.critic_params(),
        "sac_actor": agent.sac.actor_params(),
        "td3_critic": agent.td3.critic_params(),
        "td3_actor": agent.td3.actor_params(),
    }


def load_online(dst: MsatAgent, src: MsatAgent) -> None:
    for d, s in zip(dst.online_modules(), src.online_modules()):
        copy_params(d, s)


def sync_targets(agent: MsatAgent) -> None:
    for target, online in agent.target_pairs():
        copy_params(target, online)


def _grads(loss: torch.Tensor, params: list[torch.Tensor]) -> list[torch.Tensor]:
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(params, grads)]


def task_gradients(agent: MsatAgent, batch: Batch, generator: Optional[torch.Generator] = None):
    """Gradients of each head's critic and actor losses, each w.r.t. its own parameters only."""
    generator = generator or agent.generator
    sac_critic, sac_actor = sac_losses(agent.sac, batch, generator)
    td3_critic, td3_actor = td3_losses(agent.td3, batch, generator)
    params = param_groups(agent)
    losses = {"sac_critic": sac_critic, "sac_actor": sac_actor, "td3_critic": td3_critic, "td3_actor": td3_actor}
    return {name: _grads(losses[name], params[name]) for name in GROUPS}


@torch.no_grad()
def _descend(params: list[torch.Tensor], grads: list[torch.Tensor], lr: float) -> None:
    for p, g in zip(params, grads):
        p.sub_(lr * g)


@dataclass
class TaskLearner:
    task: TaskSpec
    env: AarisEnv
    agent: MsatAgent
    inner_steps: int = 0
    warned: bool = False


def make_learner(globals_: MsatAgent, task: TaskSpec, env_cfg: EnvConfig, cfg: ExperimentConfig,
                 seed: int) -> TaskLearner:
    env = AarisEnv(env_cfg, seed=seed)
    agent = MsatAgent.for_env(env, cfg.agent, seed=seed, task_id=task.task_id)
    load_online(agent, globals_)
    sync_targets(agent)
    return TaskLearner(task=task, env=env, agent=agent)


def inner_adapt(learner: TaskLearner, globals_: MsatAgent, meta: MetaConfig) -> bool:
    """
    Reset the learner's online networks to the globals, then take ``n_inner``
    SGD steps on batches from the task buffer. Returns False when the buffer is
    still too small (the learner then holds an exact copy of the globals).
    """
    agent = learner.agent
    load_online(agent, globals_)
    if meta.n_inner == 0:
        return True
    if len(agent.buffer) < agent.cfg.batch_size:
        log = logger.debug if learner.warned else logger.warning
        log("inner adaptation skipped task=%d buffer=%d batch=%d", learner.task.task_id, len(agent.buffer),
            agent.cfg.batch_size)
        learner.warned = True
        return False
    params = param_groups(agent)
    for _ in range(meta.n_inner):
        batch = agent.buffer.sample(agent.cfg.batch_size, agent.rng)
        grads = task_gradients(agent, batch)
        learner.inner_steps += 1
        for name in ("sac_critic", "sac_actor", "td3_critic"):
            _descend(params[name], grads[name], meta.inner_lr)
        if agent.cfg.tau > 0:
            for target, online in agent.sac.targets():
                soft_update(target, online, agent.cfg.tau)
        if learner.inner_steps % agent.cfg.policy_delay == 0:
            _descend(params["td3_actor"], grads["td3_actor"], meta.inner_lr)
            pairs = agent.td3.targets()
            if agent.cfg.tau_actor > 0:
                soft_update(*pairs[0], agent.cfg.tau_actor)
            if agent.cfg.tau_critic > 0:
                for target, online in pairs[1:]:
                    soft_update(target, online, agent.cfg.tau_critic)
    return True


def outer_update(globals_: MsatAgent, adapted: Sequence[MsatAgent], val_batches: Sequence[Optional[Batch]],
                 beta_meta: float, generators: Optional[Sequence[torch.Generator]] = None,
                 step_counter: Optional[int] = None) -> int:
    """
    globals -= beta_meta * sum_t grad L_t(adapted_t, val_t); returns the number of tasks used.

    The TD3 actor group only moves on every ``policy_delay``-th outer step, counted
    on the globals' TD3 update counter unless ``step_counter`` is given.
    """
    if len(adapted) != len(val_batches):
        raise InvalidArgumentError(f"{len(adapted)} adapted agents but {len(val_batches)} validation batches")
    generators = generators or [a.generator for a in adapted]
    total: dict[str, list[torch.Tensor]] = {}
    used = 0
    for agent, batch, gen in zip(adapted, val_batches, generators):
        if batch is None:
            logger.warning("outer update skipped task=%d reason=no_validation_batch", agent.task_id)
            continue
        grads = task_gradients(agent, batch, gen)
        for name in GROUPS:
            if name in total:
                total[name] = [a + b for a, b in zip(total[name], grads[name])]
            else:
                total[name] = grads[name]
        used += 1
    if not used:
        return 0
    globals_.td3.updates += 1
    counter = globals_.td3.updates if step_counter is None else step_counter
    if counter % globals_.cfg.policy_delay != 0:
        total.pop("td3_actor")
    if beta_meta > 0:
        params = param_groups(globals_)
        for name, grads in total.items():
            _descend(params[name], grads, beta_meta)
    return used


@dataclass
class MetaResult:
    globals: MsatAgent
    tasks: list[TaskSpec]
    history: dict[int, list[float]] = field(default_factory=dict)
    episodes: dict[int, list[EpisodeMetrics]] = field(default_factory=dict)
    buffers: dict[int, ReplayBuffer] = field(default_factory=dict)


def build_globals(env_cfg: EnvConfig, cfg: ExperimentConfig, seed: int) -> MsatAgent:
    shape_env = AarisEnv(env_cfg, seed=seed)
    return MsatAgent.for_env(shape_env, cfg.agent, seed=seed)


def meta_train(cfg: ExperimentConfig, tasks: Sequence[TaskSpec], episodes: Optional[int] = None, seed: int = 0,
               env_cfg: Optional[EnvConfig] = None, metrics: Optional[RunMetrics] = None, baseline: str = "mmsat",
               on_episode: Optional[Callable[[int, dict[int, EpisodeMetrics]], None]] = None) -> MetaResult:
    if not tasks:
        raise InvalidArgumentError("meta_train needs at least one task")
    env_cfg = env_cfg or cfg.env
    episodes = cfg.meta.episodes_train if episodes is None else episodes
    globals_ = build_globals(env_cfg, cfg, seed)
    learners = [make_learner(globals_, task, env_cfg, cfg, seed=seed * 1000 + i + 1) for i, task in enumerate(tasks)]
    result = MetaResult(globals=globals_, tasks=list(tasks),
                        history={t.task_id: [] for t in tasks}, episodes={t.task_id: [] for t in tasks},
                        buffers={lrn.task.task_id: lrn.agent.buffer for lrn in learners})
    batch_size = cfg.agent.batch_size

    for episode in range(episodes):
        with tracer.start_as_current_span("meta_round") as span:
            span.set_attribute("episode", episode)
            states, trackers = [], []
            for learner in learners:
                load_online(learner.agent, globals_)
                sync_targets(learner.agent)
                states.append(learner.env.reset(learner.task))
                trackers.append(EpisodeTracker())
            done = False
            while not done:
                for i, learner in enumerate(learners):
                    agent = learner.agent
                    action = msat_act(agent, states[i], explore=True)
                    next_state, reward, done, info = learner.env.step(action)
                    agent.buffer.push(states[i], bits_to_pm(action.sel_mask), action.raw_cont, reward, next_state,
                                      done, learner.task.task_id)
                    trackers[i].add(reward, info)
                    states[i] = next_state
                    inner_adapt(learner, globals_, cfg.meta)
                    if metrics is not None:
                        metrics.slots.labels(baseline=baseline).inc()
                        metrics.record_violations(list(info.flags.sat))
                val = [learner.agent.buffer.sample(batch_size, learner.agent.rng)
                       if len(learner.agent.buffer) >= batch_size else None for learner in learners]
                if any(b is not None for b in val):
                    outer_update(globals_, [learner.agent for learner in learners], val, cfg.meta.beta_meta)
                    if metrics is not None:
                        metrics.updates.labels(agent="meta_outer").inc()
            finished = {}
            for learner, tracker in zip(learners, trackers):
                m = tracker.finish()
                finished[learner.task.task_id] = m
                result.history[learner.task.task_id].append(m.mean_reward)
                result.episodes[learner.task.task_id].append(m)
            mean_reward = float(np.mean([m.mean_reward for m in finished.values()]))
            span.set_attribute("mean_reward", mean_reward)
            logger.info("meta round done baseline=%s seed=%d episode=%d tasks=%d mean_reward=%.6g",
                        baseline, seed, episode, len(learners), mean_reward)
            if on_episode is not None:
                on_episode(episode, finished)
    return result


def meta_adapt(globals_: MsatAgent, task: TaskSpec, episodes: int, cfg: ExperimentConfig,
               env_cfg: Optional[EnvConfig] = None, seed: int = 0, detail: bool = False,
               metrics: Optional[RunMetrics] = None, baseline: str = "mmsat",
               on_episode: Optional[Callable[[int, EpisodeMetrics], None]] = None):
    """Fresh MSAT agent initialized from the globals (targets re-synced), trained on its own buffer."""
    env_cfg = env_cfg or cfg.env
    env = AarisEnv(env_cfg, seed=seed)
    agent = MsatAgent.for_env(env, cfg.agent, seed=seed, task_id=task.task_id)
    load_online(agent, globals_)
    sync_targets(agent)
    curve: list[EpisodeMetrics] = []
    for episode in range(episodes):
        with tracer.start_as_current_span("meta_adapt") as span:
            span.set_attribute("episode", episode)
            m = msat_train_episode(env, agent, task, detail=detail, metrics=metrics)
            span.set_attribute("mean_reward", m.mean_reward)
        curve.append(m)
        if metrics is not None:
            metrics.slots.labels(baseline=baseline).inc(env.horizon)
        if on_episode is not None:
            on_episode(episode, m)
    return agent, curve


def restore_networks(agent: MsatAgent, mlps: Sequence[Mlp]) -> None:
    """Copy checkpointed online networks into ``agent`` and re-sync its targets."""
    nets = agent.networks()
    if len(nets) != len(mlps):
        raise CheckpointError(f"checkpoint holds {len(mlps)} networks, agent has {len(nets)}")
    for dst, src in zip(nets, mlps):
        if dst.layer_dims != src.layer_dims:
            raise CheckpointError(f"network shape {src.layer_dims} does not match agent {dst.layer_dims}")
        copy_params(dst, src)
    sync_targets(agent)


def save_meta_checkpoint(path, globals_: MsatAgent, tasks: Sequence[TaskSpec]) -> None:
    registry = json.dumps({"tasks": [t.model_dump(mode="json") for t in tasks]}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(META_MAGIC + struct.pack("<H", META_VERSION))
        f.write(pack_blobs([mlp_to_bytes(m) for m in globals_.networks()]))
        f.write(struct.pack("<Q", len(registry)) + registry)
    logger.info("meta checkpoint saved path=%s networks=%d tasks=%d", path, len(globals_.networks()), len(tasks))


def load_meta_checkpoint(path) -> tuple[list[Mlp], list[TaskSpec]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != META_MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r} in {path}")
    try:
        (version,) = struct.unpack_from("<H", data, 4)
        if version != META_VERSION:
            raise CheckpointError(f"unsupported meta checkpoint version {version}")
        blobs, offset = unpack_blobs(data, 6)
        (size,) = struct.unpack_from("<Q", data, offset)
        registry = json.loads(data[offset + 8:offset + 8 + size].decode("utf-8"))
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"malformed meta checkpoint {path}: {e}") from e
    tasks = [TaskSpec.model_validate(t) for t in registry["tasks"]]
    return [mlp_from_bytes(b) for b in blobs], tasks
