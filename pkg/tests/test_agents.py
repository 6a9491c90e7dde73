import math

import numpy as np
import pytest
import torch

from aaris.agents import (
    Batch,
    MsatAgent,
    ReplayBuffer,
    SacAgent,
    Td3Agent,
    bits_to_pm,
    msat_act,
    msat_train_episode,
    sac_critic_loss,
    sac_critic_target,
    sac_select_discrete,
    sac_update,
    sac_update_on_batch,
    smooth_target_action,
    td3_actor_loss,
    td3_critic_loss,
    td3_select,
    td3_target_action,
    td3_update,
    td3_update_on_batch,
    to_mask,
)
from aaris.config import AgentConfig
from aaris.env import AarisEnv, TaskSpec
from aaris.errors import InvalidArgumentError, InvalidStateError
from aaris.nn import DTYPE, flat_params

TASK2 = TaskSpec(task_id=4, user_positions=[(30.0, 30.0), (120.0, 90.0)], mobility_seed=3)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


def random_batch(rng, n, state_dim, m, d, done=0.0):
    t = lambda a: torch.as_tensor(a, dtype=DTYPE)  # noqa: E731
    return Batch(state=t(rng.normal(size=(n, state_dim))), sel=t(rng.choice([-1.0, 1.0], size=(n, m))),
                 cont=t(rng.uniform(-1, 1, size=(n, d))), reward=t(rng.normal(size=n)),
                 next_state=t(rng.normal(size=(n, state_dim))), done=t(np.full(n, done)),
                 task_id=np.full(n, -1))


def set_constant(mlp, value):
    with torch.no_grad():
        mlp.layers[-1].weight.zero_()
        mlp.layers[-1].bias.fill_(value)


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(3, state_dim=2, m=2, d=1)
    for i in range(5):
        buf.push(np.full(2, i), [1, -1], [0.5], float(i), np.zeros(2), False, task_id=7)
    assert len(buf) == 3
    assert sorted(buf.reward) == [2.0, 3.0, 4.0]
    batch = buf.sample(10, np.random.default_rng(0))
    assert batch.state.shape == (10, 2) and batch.sel.shape == (10, 2)
    assert set(batch.task_id) == {7}
    with pytest.raises(InvalidStateError):
        ReplayBuffer(20, 2, 2, 1).sample(1, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        ReplayBuffer(0, 2, 2, 1)


def test_mask_conventions():
    assert torch.equal(to_mask(torch.tensor([0.3, 0.0, -0.2])), torch.tensor([1.0, -1.0, -1.0]))
    assert list(bits_to_pm([1, 0, 1])) == [1.0, -1.0, 1.0]


def test_greedy_selection_follows_mean_sign():
    agent = SacAgent(3, 4, AgentConfig(hidden=[8]), gen())
    set_constant(agent.actor.mean, 5.0)
    bits, raw = sac_select_discrete(agent, np.zeros(3), explore=False)
    assert list(bits) == [1, 1, 1, 1] and np.all(raw > 0)
    set_constant(agent.actor.mean, 0.0)
    bits, _ = sac_select_discrete(agent, np.zeros(3), explore=False)
    assert list(bits) == [0, 0, 0, 0]
    with pytest.raises(InvalidArgumentError):
        sac_select_discrete(agent, np.zeros(5), explore=False)


def test_exploration_frequency_matches_gaussian_mass():
    agent = SacAgent(3, 4, AgentConfig(hidden=[8]), gen())
    set_constant(agent.actor.mean, 0.5)
    set_constant(agent.actor.log_std, 0.0)
    g = gen(11)
    on = np.mean([sac_select_discrete(agent, np.zeros(3), True, g)[0] for _ in range(2000)])
    phi = 0.5 * (1 + math.erf(0.5 / math.sqrt(2)))
    assert on == pytest.approx(phi, abs=0.03)


def test_critic_target_takes_twin_minimum():
    agent = SacAgent(3, 2, AgentConfig(hidden=[8], temperature=0.0, gamma=0.9), gen())
    set_constant(agent.q1_target, 1.0)
    set_constant(agent.q2_target, 3.0)
    reward = torch.tensor([0.5, -1.0], dtype=DTYPE)
    next_state = torch.zeros(2, 3, dtype=DTYPE)
    y = sac_critic_target(agent, reward, next_state, torch.tensor([0.0, 1.0], dtype=DTYPE), gen())
    assert torch.allclose(y, torch.tensor([0.5 + 0.9 * 1.0, -1.0], dtype=DTYPE))
    myopic = SacAgent(3, 2, AgentConfig(hidden=[8], gamma=0.0), gen())
    y0 = sac_critic_target(myopic, reward, next_state, torch.zeros(2, dtype=DTYPE), gen())
    assert torch.equal(y0, reward)


def test_critic_target_ignores_twin_order():
    agent = SacAgent(3, 2, AgentConfig(hidden=[8], gamma=0.9, temperature=0.2), gen(4))
    rng = np.random.default_rng(3)
    reward = torch.as_tensor(rng.normal(size=16), dtype=DTYPE)
    next_state = torch.as_tensor(rng.normal(size=(16, 3)), dtype=DTYPE)
    done = torch.as_tensor(rng.integers(0, 2, 16), dtype=DTYPE)
    before = sac_critic_target(agent, reward, next_state, done, gen(5))
    agent.q1_target, agent.q2_target = agent.q2_target, agent.q1_target
    assert torch.equal(sac_critic_target(agent, reward, next_state, done, gen(5)), before)


def test_critic_step_reduces_loss_on_the_same_batch():
    rng = np.random.default_rng(0)
    decreased = 0
    for trial in range(20):
        agent = SacAgent(4, 3, AgentConfig(hidden=[16], optimizer="sgd", lr_sac_critic=0.01), gen(trial))
        batch = random_batch(rng, 16, 4, 3, 1)
        g = gen(100 + trial)
        snapshot = g.get_state()
        loss = sac_critic_loss(agent, batch, g)
        agent.critic_opt.zero_grad()
        loss.backward()
        agent.critic_opt.step()
        g.set_state(snapshot)
        decreased += int(sac_critic_loss(agent, batch, g).item() < loss.item())
    assert decreased >= 18


def test_td3_critic_step_reduces_loss_on_the_same_batch():
    rng = np.random.default_rng(1)
    decreased = 0
    for trial in range(20):
        agent = Td3Agent(4, 3, AgentConfig(hidden=[16], optimizer="sgd", lr_td3_critic=0.01), gen(trial))
        batch = random_batch(rng, 16, 4, 1, 3)
        g = gen(200 + trial)
        snapshot = g.get_state()
        loss = td3_critic_loss(agent, batch, g)
        agent.critic_opt.zero_grad()
        loss.backward()
        agent.critic_opt.step()
        g.set_state(snapshot)
        decreased += int(td3_critic_loss(agent, batch, g).item() < loss.item())
    assert decreased >= 18


def test_repeated_critic_steps_shrink_toward_reward():
    cfg = AgentConfig(hidden=[8], optimizer="sgd", lr_sac_critic=0.02, gamma=0.0)
    agent = SacAgent(3, 2, cfg, gen(1))
    set_constant(agent.q1, 1.0)
    set_constant(agent.q2, 1.0)
    batch = random_batch(np.random.default_rng(2), 32, 3, 2, 1)
    batch.reward = torch.zeros(32, dtype=DTYPE)
    first = sac_critic_loss(agent, batch).item()
    for _ in range(100):
        loss = sac_critic_loss(agent, batch)
        agent.critic_opt.zero_grad()
        loss.backward()
        agent.critic_opt.step()
    assert sac_critic_loss(agent, batch).item() < 0.1 * first


def test_zero_tau_freezes_targets():
    agent = SacAgent(3, 2, AgentConfig(hidden=[8], tau=0.0), gen())
    before = flat_params([agent.q1_target, agent.q2_target])
    report = sac_update_on_batch(agent, random_batch(np.random.default_rng(0), 8, 3, 2, 1), gen(1))
    assert report.actor_updated and agent.updates == 1
    assert np.array_equal(flat_params([agent.q1_target, agent.q2_target]), before)
    assert not np.array_equal(flat_params([agent.q1]), flat_params([agent.q1_target]))


def test_target_smoothing():
    assert smooth_target_action(0.9, 0.8, 0.5).item() == 1.0
    assert smooth_target_action(0.0, -0.3, 0.5).item() == pytest.approx(-0.3)
    assert smooth_target_action(-0.9, -0.7, 0.5).item() == -1.0
    assert smooth_target_action(0.2, 0.4, 0.1).item() == pytest.approx(0.3)


def test_td3_actions_stay_in_bounds_and_targets_start_equal():
    agent = Td3Agent(3, 5, AgentConfig(hidden=[8]), gen())
    for pair in agent.targets():
        assert np.array_equal(flat_params([pair[0]]), flat_params([pair[1]]))
    out = td3_select(agent, np.random.default_rng(0).normal(size=(50, 3)) * 100)
    assert out.shape == (50, 5) and np.all(np.abs(out) <= 1.0)


def test_td3_policy_delay():
    agent = Td3Agent(3, 2, AgentConfig(hidden=[8], policy_delay=2), gen())
    rng = np.random.default_rng(0)
    reports = [td3_update_on_batch(agent, random_batch(rng, 8, 3, 1, 2), gen(i)) for i in range(10)]
    assert sum(r.actor_updated for r in reports) == 5
    assert [r.actor_updated for r in reports[:2]] == [False, True]
    assert agent.updates == 10


def test_td3_actor_loss_sign():
    batch = random_batch(np.random.default_rng(0), 8, 3, 1, 2)
    agent = Td3Agent(3, 2, AgentConfig(hidden=[8]), gen())
    literal = Td3Agent(3, 2, AgentConfig(hidden=[8], literal_td3_actor_loss=True), gen())
    assert td3_actor_loss(agent, batch).item() == pytest.approx(-td3_actor_loss(literal, batch).item())


def test_msat_act_shapes(tiny_cfg):
    env = AarisEnv(tiny_cfg.env)
    agent = MsatAgent.for_env(env, tiny_cfg.agent, seed=3)
    state = env.reset(TASK2)
    action = msat_act(agent, state, explore=True)
    assert action.sel_mask.shape == (env.m,) and set(action.sel_mask) <= {0, 1}
    assert action.raw_cont.shape == (env.action_dim,) and np.all(np.abs(action.raw_cont) <= 1.0)
    greedy = [msat_act(agent, state, explore=False) for _ in range(2)]
    assert np.array_equal(greedy[0].raw_cont, greedy[1].raw_cont)


def test_single_slot_episode_stores_one_transition(make_cfg):
    cfg = make_cfg(env={"horizon_slots": 1})
    env = AarisEnv(cfg.env)
    agent = MsatAgent.for_env(env, cfg.agent, seed=0, task_id=4)
    result = msat_train_episode(env, agent, TASK2, detail=True)
    assert len(agent.buffer) == 1 and agent.buffer.done[0] == 1.0
    assert agent.buffer.task_id[0] == 4
    assert agent.sac.updates == 0 and agent.td3.updates == 0
    assert len(result.slots) == 1 and len(result.violations) == 13


def test_learning_starts_once_a_batch_is_available(tiny_cfg):
    env = AarisEnv(tiny_cfg.env)
    agent = MsatAgent.for_env(env, tiny_cfg.agent, seed=0)
    for _ in range(3):
        msat_train_episode(env, agent, TASK2)
    # 12 transitions, batch of 8: updates after pushes 8..12
    assert len(agent.buffer) == 12
    assert agent.sac.updates == 5 and agent.td3.updates == 5


def test_same_seed_same_agent(tiny_cfg):
    env = AarisEnv(tiny_cfg.env)
    a = MsatAgent.for_env(env, tiny_cfg.agent, seed=9)
    b = MsatAgent.for_env(env, tiny_cfg.agent, seed=9)
    assert np.array_equal(flat_params(a.networks()), flat_params(b.networks()))
    assert len(a.networks()) == 8



def test_td3_target_action_stays_near_the_target_actor():
    cfg = AgentConfig(hidden=[8], smoothing_std=1.0, noise_clip=0.3)
    agent = Td3Agent(3, 4, cfg, gen())
    next_state = torch.as_tensor(np.random.default_rng(1).normal(size=(64, 3)), dtype=DTYPE)
    a = td3_target_action(agent, next_state, gen(2))
    mu_bar = agent.actor_target(next_state).detach()
    assert a.shape == (64, 4)
    assert torch.all(a.abs() <= 1.0)
    assert torch.all((a - mu_bar).abs() <= 0.3 + 1e-12)
    assert not torch.equal(a, mu_bar)


def test_updates_sample_from_the_buffer():
    buf = ReplayBuffer(50, state_dim=3, m=2, d=2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        buf.push(rng.normal(size=3), [1, -1], rng.uniform(-1, 1, 2), float(rng.normal()), rng.normal(size=3), False)
    sac = SacAgent(3, 2, AgentConfig(hidden=[8]), gen())
    td3 = Td3Agent(3, 2, AgentConfig(hidden=[8], policy_delay=2), gen())
    assert sac_update(sac, buf, 4, rng, gen(1)).actor_updated
    assert not td3_update(td3, buf, 4, rng, gen(1), step_counter=1).actor_updated
    assert td3_update(td3, buf, 4, rng, gen(1), step_counter=2).actor_updated
    assert sac.updates == 1 and td3.updates == 2
    with pytest.raises(InvalidStateError):
        sac_update(sac, buf, 11, rng)
