"""
Modified-SAC element-selection head, TD3 continuous head and their MSAT composition.

The SAC critics score the +/-1 mask that is actually applied; the actor is
trained through a straight-through estimator (hard mask forward, tanh
sample gradient backward). Bits are stored as {0, 1} in actions and as
{-1, +1} in the replay buffer.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .config import AgentConfig
from .env import N_CONSTRAINTS, AarisEnv, JointAction, TaskSpec
from .errors import InvalidArgumentError, InvalidStateError
from .nn import DTYPE, GaussianHead, Mlp, make_optimizer, sample_reparameterized, soft_update
from .power import energy_efficiency
from .telemetry import RunMetrics

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    state: torch.Tensor
    sel: torch.Tensor  # +/-1
    cont: torch.Tensor
    reward: torch.Tensor
    next_state: torch.Tensor
    done: torch.Tensor
    task_id: np.ndarray


class ReplayBuffer:
    """Ring buffer of joint transitions; each head reads its own action slice."""

    def __init__(self, capacity: int, state_dim: int, m: int, d: int):
        if capacity < 1:
            raise InvalidArgumentError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.sel = np.zeros((capacity, m))
        self.cont = np.zeros((capacity, d))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.task_id = np.full(capacity, -1, dtype=int)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, state, sel_pm, cont, reward: float, next_state, done: bool, task_id: int = -1) -> None:
        i = self._next
        self.state[i] = state
        self.sel[i] = sel_pm
        self.cont[i] = cont
        self.reward[i] = reward
        self.next_state[i] = next_state
        self.done[i] = float(done)
        self.task_id[i] = task_id
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise InvalidStateError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        t = lambda a: torch.as_tensor(a[idx], dtype=DTYPE)  # noqa: E731
        return Batch(state=t(self.state), sel=t(self.sel), cont=t(self.cont), reward=t(self.reward),
                     next_state=t(self.next_state), done=t(self.done), task_id=self.task_id[idx].copy())


@dataclass
class LossReport:
    critic_loss: float
    actor_loss: Optional[float]
    actor_updated: bool


def to_mask(a: torch.Tensor) -> torch.Tensor:
    """+1 where a > 0, else -1 (exact zero is OFF)."""
    return torch.where(a > 0, torch.ones_like(a), -torch.ones_like(a))


def bits_to_pm(bits: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(bits, dtype=float) - 1.0


class SacAgent:
    def __init__(self, state_dim: int, m: int, cfg: AgentConfig, generator: Optional[torch.Generator] = None):
        self.state_dim, self.m, self.cfg = state_dim, m, cfg
        self.actor = GaussianHead(state_dim, m, cfg.hidden, generator)
        self.q1 = Mlp([state_dim + m, *cfg.hidden, 1], generator)
        self.q2 = Mlp([state_dim + m, *cfg.hidden, 1], generator)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.actor_opt = make_optimizer(self.actor.parameters(), cfg.lr_sac_actor, cfg.optimizer)
        self.critic_opt = make_optimizer(self.critic_params(), cfg.lr_sac_critic, cfg.optimizer)
        self.updates = 0

    def actor_params(self) -> list[torch.Tensor]:
        return list(self.actor.parameters())

    def critic_params(self) -> list[torch.Tensor]:
        return [*self.q1.parameters(), *self.q2.parameters()]

    def networks(self) -> list[Mlp]:
        return [*self.actor.mlps(), self.q1, self.q2]

    def targets(self) -> list[tuple[Mlp, Mlp]]:
        return [(self.q1_target, self.q1), (self.q2_target, self.q2)]


class Td3Agent:
    def __init__(self, state_dim: int, d: int, cfg: AgentConfig, generator: Optional[torch.Generator] = None,
                 low: float = -1.0, high: float = 1.0):
        self.state_dim, self.d, self.cfg = state_dim, d, cfg
        self.low, self.high = low, high
        self.actor = Mlp([state_dim, *cfg.hidden, d], generator, squash_output=True)
        self.q1 = Mlp([state_dim + d, *cfg.hidden, 1], generator)
        self.q2 = Mlp([state_dim + d, *cfg.hidden, 1], generator)
        self.actor_target = copy.deepcopy(self.actor)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.actor_opt = make_optimizer(self.actor.parameters(), cfg.lr_td3_actor, cfg.optimizer)
        self.critic_opt = make_optimizer(self.critic_params(), cfg.lr_td3_critic, cfg.optimizer)
        self.updates = 0

    def actor_params(self) -> list[torch.Tensor]:
        return list(self.actor.parameters())

    def critic_params(self) -> list[torch.Tensor]:
        return [*self.q1.parameters(), *self.q2.parameters()]

    def networks(self) -> list[Mlp]:
        return [self.actor, self.q1, self.q2]

    def targets(self) -> list[tuple[Mlp, Mlp]]:
        return [(self.actor_target, self.actor), (self.q1_target, self.q1), (self.q2_target, self.q2)]


def _state(agent, state) -> torch.Tensor:
    s = torch.as_tensor(state, dtype=DTYPE)
    if s.shape[-1] != agent.state_dim:
        raise InvalidArgumentError(f"state has {s.shape[-1]} entries, agent expects {agent.state_dim}")
    return s


def _q(net: Mlp, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
    return net(torch.cat([state, action], dim=-1)).squeeze(-1)


# -- modified SAC ---------------------------------------------------------

def sac_select_discrete(agent: SacAgent, state, explore: bool, generator: Optional[torch.Generator] = None):
    """Return ``(bits, raw)``; bits in {0, 1}, raw is the tanh-squashed sample (or tanh(mean))."""
    with torch.no_grad():
        mean, log_std = agent.actor(_state(agent, state))
        if explore:
            a, _, _ = sample_reparameterized(mean, log_std, generator, agent.cfg.tanh_correction)
        else:
            a = torch.tanh(mean)
    raw = a.numpy()
    return (raw > 0).astype(int), raw


def sac_critic_target(agent: SacAgent, reward: torch.Tensor, next_state: torch.Tensor, done: torch.Tensor,
                      generator: Optional[torch.Generator] = None) -> torch.Tensor:
    cfg = agent.cfg
    with torch.no_grad():
        mean, log_std = agent.actor(next_state)
        a, log_prob, _ = sample_reparameterized(mean, log_std, generator, cfg.tanh_correction)
        mask = to_mask(a)
        q = torch.min(_q(agent.q1_target, next_state, mask), _q(agent.q2_target, next_state, mask))
        return reward + cfg.gamma * (1.0 - done) * (q - cfg.temperature * log_prob)


def sac_critic_loss(agent: SacAgent, batch: Batch, generator=None) -> torch.Tensor:
    y = sac_critic_target(agent, batch.reward, batch.next_state, batch.done, generator)
    return F.mse_loss(_q(agent.q1, batch.state, batch.sel), y) + F.mse_loss(_q(agent.q2, batch.state, batch.sel), y)


def sac_actor_loss(agent: SacAgent, batch: Batch, generator=None) -> torch.Tensor:
    mean, log_std = agent.actor(batch.state)
    a, log_prob, _ = sample_reparameterized(mean, log_std, generator, agent.cfg.tanh_correction)
    mask = to_mask(a.detach()) + a - a.detach()
    q = torch.min(_q(agent.q1, batch.state, mask), _q(agent.q2, batch.state, mask))
    return (agent.cfg.temperature * log_prob - q).mean()


def sac_losses(agent: SacAgent, batch: Batch, generator=None) -> tuple[torch.Tensor, torch.Tensor]:
    return sac_critic_loss(agent, batch, generator), sac_actor_loss(agent, batch, generator)


def _step(opt: torch.optim.Optimizer, loss: torch.Tensor) -> None:
    opt.zero_grad()
    loss.backward()
    opt.step()


def _soft_update_all(pairs, tau: float) -> None:
    if tau > 0:
        for target, online in pairs:
            soft_update(target, online, tau)


def sac_update_on_batch(agent: SacAgent, batch: Batch, generator=None) -> LossReport:
    critic_loss = sac_critic_loss(agent, batch, generator)
    _step(agent.critic_opt, critic_loss)
    actor_loss = sac_actor_loss(agent, batch, generator)
    _step(agent.actor_opt, actor_loss)
    _soft_update_all(agent.targets(), agent.cfg.tau)
    agent.updates += 1
    return LossReport(critic_loss=float(critic_loss), actor_loss=float(actor_loss), actor_updated=True)


def sac_update(agent: SacAgent, buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator,
               generator=None) -> LossReport:
    return sac_update_on_batch(agent, buffer.sample(batch_size, rng), generator)


# -- TD3 --------------------------------------------------------------------

def smooth_target_action(mu_bar, noise, noise_clip: float, low: float = -1.0, high: float = 1.0) -> torch.Tensor:
    mu_bar, noise = torch.as_tensor(mu_bar, dtype=DTYPE), torch.as_tensor(noise, dtype=DTYPE)
    return torch.clamp(mu_bar + torch.clamp(noise, -noise_clip, noise_clip), low, high)


def td3_select(agent: Td3Agent, state) -> np.ndarray:
    with torch.no_grad():
        return agent.actor(_state(agent, state)).numpy()


def td3_target_action(agent: Td3Agent, next_state: torch.Tensor, generator=None) -> torch.Tensor:
    cfg = agent.cfg
    with torch.no_grad():
        mu_bar = agent.actor_target(next_state)
        noise = torch.randn(mu_bar.shape, generator=generator, dtype=DTYPE) * cfg.smoothing_std
        return smooth_target_action(mu_bar, noise, cfg.noise_clip, agent.low, agent.high)


def td3_critic_loss(agent: Td3Agent, batch: Batch, generator=None) -> torch.Tensor:
    cfg = agent.cfg
    a_next = td3_target_action(agent, batch.next_state, generator)
    with torch.no_grad():
        q_next = torch.min(_q(agent.q1_target, batch.next_state, a_next), _q(agent.q2_target, batch.next_state, a_next))
        y = batch.reward + cfg.gamma * (1.0 - batch.done) * q_next
    return F.mse_loss(_q(agent.q1, batch.state, batch.cont), y) + F.mse_loss(_q(agent.q2, batch.state, batch.cont), y)


def td3_actor_loss(agent: Td3Agent, batch: Batch) -> torch.Tensor:
    q = _q(agent.q1, batch.state, agent.actor(batch.state)).mean()
    return q if agent.cfg.literal_td3_actor_loss else -q


def td3_losses(agent: Td3Agent, batch: Batch, generator=None) -> tuple[torch.Tensor, torch.Tensor]:
    return td3_critic_loss(agent, batch, generator), td3_actor_loss(agent, batch)


def td3_update_on_batch(agent: Td3Agent, batch: Batch, generator=None, step_counter: Optional[int] = None) -> LossReport:
    agent.updates += 1
    counter = agent.updates if step_counter is None else step_counter
    critic_loss = td3_critic_loss(agent, batch, generator)
    _step(agent.critic_opt, critic_loss)
    if counter % agent.cfg.policy_delay != 0:
        return LossReport(critic_loss=float(critic_loss), actor_loss=None, actor_updated=False)
    actor_loss = td3_actor_loss(agent, batch)
    _step(agent.actor_opt, actor_loss)
    _soft_update_all(agent.targets()[:1], agent.cfg.tau_actor)
    _soft_update_all(agent.targets()[1:], agent.cfg.tau_critic)
    return LossReport(critic_loss=float(critic_loss), actor_loss=float(actor_loss), actor_updated=True)


def td3_update(agent: Td3Agent, buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator, generator=None,
               step_counter: Optional[int] = None) -> LossReport:
    return td3_update_on_batch(agent, buffer.sample(batch_size, rng), generator, step_counter)


# -- MSAT -------------------------------------------------------------------

@dataclass
class MsatAgent:
    """SAC + TD3 pair sharing one replay buffer and one pair of seeded random streams."""
    sac: SacAgent
    td3: Td3Agent
    buffer: ReplayBuffer
    cfg: AgentConfig
    rng: np.random.Generator
    generator: torch.Generator
    task_id: int = -1

    @classmethod
    def create(cls, state_dim: int, m: int, d: int, cfg: AgentConfig, seed: int = 0, task_id: int = -1) -> "MsatAgent":
        generator = torch.Generator().manual_seed(int(seed))
        sac = SacAgent(state_dim, m, cfg, generator)
        td3 = Td3Agent(state_dim, d, cfg, generator)
        return cls(sac=sac, td3=td3, buffer=ReplayBuffer(cfg.buffer_capacity, state_dim, m, d), cfg=cfg,
                   rng=np.random.default_rng(seed), generator=generator, task_id=task_id)

    @classmethod
    def for_env(cls, env: AarisEnv, cfg: AgentConfig, seed: int = 0, task_id: int = -1) -> "MsatAgent":
        return cls.create(env.state_dim, env.m, env.action_dim, cfg, seed, task_id)

    def networks(self) -> list[Mlp]:
        return [*self.sac.networks(), *self.td3.networks()]

    def online_modules(self) -> list[torch.nn.Module]:
        return [self.sac.actor, self.sac.q1, self.sac.q2, self.td3.actor, self.td3.q1, self.td3.q2]

    def target_pairs(self) -> list[tuple[Mlp, Mlp]]:
        return [*self.sac.targets(), *self.td3.targets()]


def msat_act(agent: MsatAgent, state, explore: bool) -> JointAction:
    bits, _ = sac_select_discrete(agent.sac, state, explore, agent.generator)
    cont = td3_select(agent.td3, state)
    if explore and agent.cfg.explore_std > 0:
        cont = np.clip(cont + agent.rng.normal(0.0, agent.cfg.explore_std, size=cont.shape), -1.0, 1.0)
    return JointAction(sel_mask=bits, raw_cont=cont)


def msat_learn_step(agent: MsatAgent, metrics: Optional[RunMetrics] = None) -> bool:
    """One SAC and one TD3 update on independent batches, once the buffer is warm."""
    if len(agent.buffer) < agent.cfg.batch_size:
        return False
    sac_update(agent.sac, agent.buffer, agent.cfg.batch_size, agent.rng, agent.generator)
    report = td3_update(agent.td3, agent.buffer, agent.cfg.batch_size, agent.rng, agent.generator)
    if metrics is not None:
        metrics.updates.labels(agent="sac").inc()
        metrics.updates.labels(agent="td3_critic").inc()
        if report.actor_updated:
            metrics.updates.labels(agent="td3_actor").inc()
    return True


@dataclass
class EpisodeMetrics:
    mean_reward: float
    avg_ee: float
    avg_sum_rate: float
    avg_power: float
    violations: list[int]
    slots: list[dict] = field(default_factory=list)


class EpisodeTracker:
    def __init__(self, detail: bool = False):
        self.detail = detail
        self.rewards: list[float] = []
        self.rates: list[float] = []
        self.powers: list[float] = []
        self.violations = [0] * N_CONSTRAINTS
        self.slots: list[dict] = []

    def add(self, reward: float, info) -> None:
        self.rewards.append(reward)
        self.rates.append(info.r_total)
        self.powers.append(info.p_total)
        for i, ok in enumerate(info.flags.sat):
            self.violations[i] += 0 if ok else 1
        if self.detail:
            self.slots.append({"slot": len(self.rewards) - 1, "r_total": info.r_total, "p_total": info.p_total,
                               "ee": info.ee, "reward": reward, "violations": info.flags.violations})

    def finish(self) -> EpisodeMetrics:
        return EpisodeMetrics(mean_reward=float(np.mean(self.rewards)),
                              avg_ee=energy_efficiency(self.rates, self.powers),
                              avg_sum_rate=float(np.mean(self.rates)), avg_power=float(np.mean(self.powers)),
                              violations=list(self.violations), slots=self.slots)


def msat_train_episode(env: AarisEnv, agent: MsatAgent, task: TaskSpec, detail: bool = False,
                       metrics: Optional[RunMetrics] = None) -> EpisodeMetrics:
    """Roll one episode with exploration, storing every joint transition and learning after each slot."""
    state = env.reset(task)
    tracker = EpisodeTracker(detail)
    done = False
    while not done:
        action = msat_act(agent, state, explore=True)
        next_state, reward, done, info = env.step(action)
        agent.buffer.push(state, bits_to_pm(action.sel_mask), action.raw_cont, reward, next_state, done, agent.task_id)
        msat_learn_step(agent, metrics)
        tracker.add(reward, info)
        if metrics is not None:
            metrics.record_violations(list(info.flags.sat))
        state = next_state
    return tracker.finish()


def evaluate_policy(env: AarisEnv, agent: MsatAgent, task: TaskSpec, episodes: int = 1) -> list[EpisodeMetrics]:
    """Greedy rollouts; nothing is stored or learned."""
    results = []
    for _ in range(episodes):
        state = env.reset(task)
        tracker = EpisodeTracker()
        done = False
        while not done:
            state, reward, done, info = env.step(msat_act(agent, state, explore=False))
            tracker.add(reward, info)
        results.append(tracker.finish())
    return results
