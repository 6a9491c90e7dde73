"""
Episodic MDP around the aerial active-RIS downlink.

The agent observes the slot-l channels and commits an action for slot l;
rates, power and constraints are evaluated on those channels, after which
the UAV and the users move and the slot-(l+1) channels are drawn for the
next observation.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from .channel import ChannelRealization, NetworkGeometry, draw_channels
from .config import EnvConfig, dbm_to_watt
from .errors import InvalidArgumentError, InvalidStateError
from .power import propulsion_power, ris_output_power, ris_power, total_power
from .rsma import BeamformingSet, RateReport, RisConfig, common_rate_ok, compute_rates, effective_ris_matrix

logger = logging.getLogger(__name__)

N_CONSTRAINTS = 13
FEASIBILITY_TOL = 1e-12
# scales for the budget entries of the state
REFERENCE_P_MAX_BS = dbm_to_watt(25.0)
REFERENCE_A_MAX_UAV = 6.0


class TaskSpec(BaseModel):
    """One meta-task: users' initial horizontal positions plus their mobility seed."""
    task_id: int = 0
    user_positions: list[tuple[float, float]]
    mobility_seed: int = 0


def random_task(cfg: EnvConfig, task_id: int, rng: np.random.Generator) -> TaskSpec:
    lo, hi = np.array(cfg.q_min[:2]), np.array(cfg.q_max[:2])
    pos = rng.uniform(lo, hi, size=(cfg.k, 2))
    return TaskSpec(task_id=task_id, user_positions=[tuple(map(float, p)) for p in pos],
                    mobility_seed=int(rng.integers(2**31 - 1)))


class ActionLayout:
    """Slices of the continuous action vector; baselines drop the segments they pin."""

    def __init__(self, k: int, m: int, n_bs: int, with_velocity: bool = True, with_amplitude: bool = True):
        self.k, self.m, self.n_bs = k, m, n_bs
        sizes = [("beams", 2 * n_bs * (k + 1))]
        if with_velocity:
            sizes.append(("velocity", 2))
        if with_amplitude:
            sizes.append(("amp", m))
        sizes += [("phase", m), ("c_alloc", k)]
        self.slices: dict[str, slice] = {}
        start = 0
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.dim = start

    def has(self, name: str) -> bool:
        return name in self.slices

    @classmethod
    def for_env(cls, cfg: EnvConfig) -> "ActionLayout":
        return cls(cfg.k, cfg.m, cfg.channel.n_bs, with_velocity=not cfg.fixed_uav,
                   with_amplitude=cfg.ris_mode == "active")


@dataclass(frozen=True)
class JointAction:
    sel_mask: np.ndarray  # (M,) bits
    raw_cont: np.ndarray  # (d,) in [-1, 1]


@dataclass(frozen=True)
class PhysicalAction:
    ris: RisConfig
    bf: BeamformingSet
    velocity: np.ndarray  # (3,), z == 0
    c_alloc: np.ndarray  # (K,)


@dataclass(frozen=True)
class Kinematics:
    proposed_pos: np.ndarray
    velocity: np.ndarray
    prev_velocity: np.ndarray


@dataclass(frozen=True)
class ConstraintFlags:
    sat: tuple[bool, ...]  # index 0 is C1

    @property
    def violations(self) -> int:
        return sum(1 for ok in self.sat if not ok)

    def __getitem__(self, constraint: int) -> bool:
        return self.sat[constraint - 1]


@dataclass
class StepInfo:
    flags: ConstraintFlags
    rates: RateReport
    r_total: float
    p_total: float
    p_uav: float
    p_ris: float
    p_out: float
    ee: float
    uav_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))


def decode_action(raw: JointAction, cfg: EnvConfig, layout: Optional[ActionLayout] = None) -> PhysicalAction:
    """Affine [-1, 1] -> physical map; power budgets are left to the reward penalty."""
    layout = layout or ActionLayout.for_env(cfg)
    x = np.asarray(raw.raw_cont, dtype=float)
    if x.shape != (layout.dim,):
        raise InvalidArgumentError(f"continuous action needs {layout.dim} entries, got {x.shape}")
    if np.any(np.abs(x) > 1.0):
        logger.warning("raw action clamped max_abs=%.4f", float(np.max(np.abs(x))))
        x = np.clip(x, -1.0, 1.0)
    k, m, n = layout.k, layout.m, layout.n_bs

    beam_scale = np.sqrt(cfg.bs_power.pa_eff * cfg.bs_power.p_max)
    beams = x[layout.slices["beams"]].reshape(k + 1, 2, n) * beam_scale
    w = beams[:, 0, :] + 1j * beams[:, 1, :]
    bf = BeamformingSet(w_common=w[0], w_private=w[1:])

    velocity = np.zeros(3)
    if layout.has("velocity"):
        velocity[:2] = x[layout.slices["velocity"]] * cfg.v_max / np.sqrt(2.0)
    if layout.has("amp"):
        amp = (x[layout.slices["amp"]] + 1.0) / 2.0 * cfg.a_max_ris
    else:
        amp = np.ones(m)
    phase = (x[layout.slices["phase"]] + 1.0) * np.pi
    c_alloc = (x[layout.slices["c_alloc"]] + 1.0) / 2.0 * cfg.c_max
    sel = (np.asarray(raw.sel_mask) > 0).astype(int)
    return PhysicalAction(ris=RisConfig(amp=amp, phase=phase, sel=sel), bf=bf, velocity=velocity, c_alloc=c_alloc)


def evaluate_constraints(phys: PhysicalAction, rates: RateReport, p_out: float, kin: Kinematics,
                         cfg: EnvConfig) -> ConstraintFlags:
    tol = FEASIBILITY_TOL
    ris = phys.ris
    qos = np.asarray(cfg.qos)
    q_min, q_max = np.array(cfg.q_min), np.array(cfg.q_max)
    sat = (
        common_rate_ok(phys.c_alloc, rates.r_common),
        bool(np.all(phys.c_alloc + rates.r_private >= qos - tol)),
        phys.bf.transmit_energy() / cfg.bs_power.pa_eff <= cfg.bs_power.p_max + tol,
        p_out <= cfg.ris_power.amp_eff * cfg.ris_power.p_amp_budget + tol,
        bool(np.all((ris.amp >= 0) & (ris.amp <= cfg.a_max_ris + tol))),
        bool(np.all((ris.phase >= 0) & (ris.phase <= 2 * np.pi + tol))),
        bool(np.all((kin.proposed_pos >= q_min - tol) & (kin.proposed_pos <= q_max + tol))),
        True,  # C8: position follows the integrated velocity by construction
        True,  # C9: every episode starts at uav_init
        float(np.linalg.norm(kin.velocity)) <= cfg.v_max + tol,
        float(np.linalg.norm(kin.velocity - kin.prev_velocity)) <= cfg.a_max_uav * cfg.slot_dt + tol,
        int(np.sum(ris.sel)) <= ris.m,
        bool(np.all(np.isin(ris.sel, (0, 1)))),
    )
    return ConstraintFlags(sat=tuple(bool(s) for s in sat))


def reward(ee: float, flags: ConstraintFlags) -> float:
    """EE plus -EE per violated constraint."""
    return ee * (1 - flags.violations)


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    width = hi - lo
    r = np.mod(x - lo, 2 * width, where=width > 0, out=np.zeros_like(x))
    return lo + np.where(r <= width, r, 2 * width - r)


def user_mobility_step(positions: np.ndarray, rng: np.random.Generator, cfg: EnvConfig) -> np.ndarray:
    """Gaussian random walk (per-axis std step_std*tau) reflected at the arena edges; z stays 0."""
    out = positions.copy()
    if cfg.step_std == 0:
        return out
    lo, hi = np.array(cfg.q_min[:2]), np.array(cfg.q_max[:2])
    step = rng.normal(0.0, cfg.step_std * cfg.slot_dt, size=(positions.shape[0], 2))
    out[:, :2] = _reflect(positions[:, :2] + step, lo, hi)
    out[:, 2] = 0.0
    return out


class AarisEnv:
    """Single-threaded environment instance; one per task/worker."""

    def __init__(self, cfg: EnvConfig, seed: Optional[int] = None):
        self.cfg = cfg
        self.layout = ActionLayout.for_env(cfg)
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self._mobility_rng = np.random.default_rng(0)
        self._episodes = 0
        self._slot = 0
        self._done = True
        self.bs_pos = np.array(cfg.channel.bs_pos, dtype=float)
        self.pos_scale = float(max(max(cfg.q_max), 1.0))
        self.channel_scale = float(np.sqrt(cfg.channel.c0))
        self.task: Optional[TaskSpec] = None

    @property
    def m(self) -> int:
        return self.cfg.m

    @property
    def action_dim(self) -> int:
        return self.layout.dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon_slots

    @property
    def state_dim(self) -> int:
        k, m, n, d = self.cfg.k, self.m, self.cfg.channel.n_bs, self.action_dim
        return 3 * k + 1 + 6 + 2 * k + 1 + 2 * m * n + 2 * m * k + m + d + 1

    def geometry(self) -> NetworkGeometry:
        return NetworkGeometry(bs_pos=self.bs_pos, uav_pos=self.uav_pos, uav_vel=self.uav_vel, user_pos=self.user_pos)

    def reset(self, task: TaskSpec, seed: Optional[int] = None) -> np.ndarray:
        users = np.asarray(task.user_positions, dtype=float)
        lo, hi = np.array(self.cfg.q_min[:2]), np.array(self.cfg.q_max[:2])
        if users.shape != (self.cfg.k, 2):
            raise InvalidArgumentError(f"task needs {self.cfg.k} user positions, got shape {users.shape}")
        if np.any(users < lo) or np.any(users > hi):
            raise InvalidArgumentError(f"task {task.task_id} places users outside the arena")
        if seed is not None:
            self.rng = np.random.default_rng(seed)
            self._episodes = 0
        self.task = task
        self._mobility_rng = np.random.default_rng((task.mobility_seed, self._episodes))
        self._episodes += 1

        self.uav_pos = np.array(self.cfg.uav_init, dtype=float)
        self.uav_vel = np.zeros(3)
        self.user_pos = np.column_stack([users, np.zeros(self.cfg.k)])
        self.channels: ChannelRealization = draw_channels(self.geometry(), self.cfg.channel, self.rng)
        self._last_rc = np.zeros(self.cfg.k)
        self._last_rp = np.zeros(self.cfg.k)
        self._prev_sel = np.zeros(self.m)
        self._prev_raw = np.zeros(self.action_dim)
        self._prev_reward = 0.0
        self._slot = 0
        self._done = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        cfg = self.cfg
        g, h_r = self.channels.g / self.channel_scale, self.channels.h_r / self.channel_scale
        per_user = np.column_stack([self._last_rc, self._last_rp, np.asarray(cfg.qos)]) / cfg.rate_scale
        parts = [
            per_user.ravel(),
            [cfg.bs_power.p_max / REFERENCE_P_MAX_BS],
            self.uav_pos / self.pos_scale,
            self.uav_vel / cfg.v_max,
            self.user_pos[:, :2].ravel() / self.pos_scale,
            [cfg.a_max_uav / REFERENCE_A_MAX_UAV],
            g.real.ravel(), g.imag.ravel(),
            h_r.real.ravel(), h_r.imag.ravel(),
            self._prev_sel, self._prev_raw,
            [self._prev_reward],
        ]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def step(self, action: JointAction) -> tuple[np.ndarray, float, bool, StepInfo]:
        return self.step_physical(decode_action(action, self.cfg, self.layout), action)

    def step_physical(self, phys: PhysicalAction, action: Optional[JointAction] = None):
        if self._done:
            raise InvalidStateError("step() called on a finished episode; call reset()")
        cfg = self.cfg
        velocity = np.zeros(3) if cfg.fixed_uav else np.asarray(phys.velocity, dtype=float)

        active = cfg.ris_mode == "active"
        sigma_z2 = cfg.sigma_z2 if active else 0.0
        rates = compute_rates(self.channels.g, self.channels.h_r, phys.ris, phys.bf, phys.c_alloc,
                              sigma_z2, cfg.sigma_k2, cfg.common_sinr_excludes_self)
        p_out = ris_output_power(effective_ris_matrix(phys.ris), self.channels.g, phys.bf, sigma_z2) if active else 0.0
        p_uav = propulsion_power(float(np.linalg.norm(velocity)), cfg.uav_power)
        p_ris = ris_power(phys.ris, p_out, cfg.ris_power)
        p_total = total_power(phys.bf, cfg.bs_power, p_uav, p_ris, cfg.k)
        ee = rates.r_total / p_total

        proposed = self.uav_pos + velocity * cfg.slot_dt
        kin = Kinematics(proposed_pos=proposed, velocity=velocity, prev_velocity=self.uav_vel)
        flags = evaluate_constraints(phys, rates, p_out, kin, cfg)
        r = reward(ee, flags)

        self.uav_pos = np.clip(proposed, cfg.q_min, cfg.q_max)
        self.uav_vel = velocity
        self.user_pos = user_mobility_step(self.user_pos, self._mobility_rng, cfg)
        self.channels = draw_channels(self.geometry(), cfg.channel, self.rng)

        self._last_rc, self._last_rp = rates.r_common, rates.r_private
        self._prev_sel = np.asarray(phys.ris.sel, dtype=float)
        self._prev_raw = (np.clip(action.raw_cont, -1.0, 1.0) if action is not None
                          else np.zeros(self.action_dim))
        self._prev_reward = r
        self._slot += 1
        self._done = self._slot >= cfg.horizon_slots

        info = StepInfo(flags=flags, rates=rates, r_total=rates.r_total, p_total=p_total, p_uav=p_uav,
                        p_ris=p_ris, p_out=p_out, ee=ee, uav_pos=self.uav_pos.copy())
        return self._observe(), r, self._done, info
