"""
Experiment configuration.

Files are layered ``section.key = value`` text. ``include = other.conf``
pulls another file in before the including file's own keys. Values may
carry a unit suffix (``dBm``, ``dB``, ``mW``); everything is converted to
linear watts / linear ratios here so that the simulator never sees dB.
Unspecified fields keep the reference defaults below.
"""

import logging
import math
import os
import re
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

STANDARD_M_VALUES = (9, 16, 25, 36)
STANDARD_N_BS_VALUES = (3, 5, 7, 11)
DESK_ADAPT_EPISODES = 100
BASELINES = ("mmsat", "msat", "passive_ris", "fixed_ris")
SWEEP_AXES = ("M", "P_max_bs", "N_BS", "QoS")

# keys whose dB value is an amplitude ratio rather than a power ratio
AMPLITUDE_DB_KEYS = {"env.a_max_ris"}

_UNIT_RE = re.compile(r"^([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*(dBm|dB|mW)$")


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def db_to_amplitude(db: float) -> float:
    return 10.0 ** (db / 20.0)


class ChannelConfig(BaseModel):
    c0: float = Field(1e-3, gt=0.0)
    d0: float = Field(1.0, gt=0.0)
    alpha_bs_u: float = Field(3.0, ge=0.0)
    alpha_u_k: float = Field(3.0, ge=0.0)
    k_bs_u: float = Field(db_to_linear(3.0), ge=0.0)
    k_u_k: float = Field(db_to_linear(3.0), ge=0.0)
    # 2*pi*f_c*d_RIS/c with half-wavelength element spacing
    zeta_phase: float = math.pi
    mx: int = Field(4, ge=1)
    my: int = Field(4, ge=1)
    n_bs: int = Field(5, ge=1)
    bs_pos: tuple[float, float, float] = (0.0, 0.0, 10.0)
    use_printed_cos_beta: bool = False

    @property
    def m(self) -> int:
        return self.mx * self.my


class UavPowerConfig(BaseModel):
    p_b: float = Field(79.85, gt=0.0)
    p_i: float = Field(88.63, gt=0.0)
    omega: float = Field(300.0, gt=0.0)
    rotor_r: float = Field(0.4, gt=0.0)
    d_ratio: float = Field(0.3, ge=0.0)
    air_density: float = Field(1.225, gt=0.0)
    solidity: float = Field(0.05, gt=0.0)
    disk_area: float = Field(0.503, gt=0.0)
    v_induced: float = Field(4.03, gt=0.0)
    profile_drag: float = Field(0.02, ge=0.0)
    corr: float = Field(0.1, ge=0.0)
    weight: float = Field(20.0, gt=0.0)


class RisPowerConfig(BaseModel):
    p_c: float = Field(dbm_to_watt(-10.0), ge=0.0)
    p_dc: float = Field(dbm_to_watt(-5.0), ge=0.0)
    amp_eff: float = Field(0.8, gt=0.0, le=1.0)
    nu: float = Field(1.25, gt=0.0)
    p_amp_budget: float = Field(dbm_to_watt(10.0), ge=0.0)
    static_power_counts_all: bool = False

    @model_validator(mode="after")
    def _nu_is_inverse_efficiency(self):
        if abs(self.nu * self.amp_eff - 1.0) > 1e-12:
            raise ValueError(f"nu*amp_eff must equal 1 (got {self.nu * self.amp_eff})")
        return self


class BsPowerConfig(BaseModel):
    pa_eff: float = Field(0.8, gt=0.0, le=1.0)
    p_cir_bs: float = Field(1.0, ge=0.0)
    p_cir_user: float = Field(5e-3, ge=0.0)
    p_max: float = Field(dbm_to_watt(25.0), gt=0.0)


class EnvConfig(BaseModel):
    k: int = Field(3, ge=1)
    horizon_slots: int = Field(400, ge=1)
    slot_dt: float = Field(0.1, gt=0.0)
    horizon_s: Optional[float] = None
    q_min: tuple[float, float, float] = (0.0, 0.0, 100.0)
    q_max: tuple[float, float, float] = (150.0, 150.0, 100.0)
    v_max: float = Field(10.0, gt=0.0)
    a_max_uav: float = Field(6.0, gt=0.0)
    uav_init: tuple[float, float, float] = (75.0, 75.0, 100.0)
    qos: list[float] = Field(default_factory=lambda: [2.0])
    a_max_ris: float = Field(db_to_amplitude(20.0), ge=0.0)
    c_max: float = Field(5.0, ge=0.0)
    sigma_z2: float = Field(dbm_to_watt(-80.0), ge=0.0)
    sigma_k2: float = Field(dbm_to_watt(-80.0), gt=0.0)
    step_std: float = Field(1.0, ge=0.0)
    seed: int = 0
    ris_mode: Literal["active", "passive"] = "active"
    fixed_uav: bool = False
    common_sinr_excludes_self: bool = False
    rate_scale: float = Field(10.0, gt=0.0)
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    uav_power: UavPowerConfig = Field(default_factory=UavPowerConfig)
    ris_power: RisPowerConfig = Field(default_factory=RisPowerConfig)
    bs_power: BsPowerConfig = Field(default_factory=BsPowerConfig)

    @model_validator(mode="after")
    def _check_geometry(self):
        if len(self.qos) == 1 and self.k > 1:
            self.qos = self.qos * self.k
        if len(self.qos) != self.k:
            raise ValueError(f"qos needs 1 or k={self.k} entries, got {len(self.qos)}")
        for lo, x, hi in zip(self.q_min, self.uav_init, self.q_max):
            if not lo <= x <= hi:
                raise ValueError(f"uav_init {self.uav_init} outside [{self.q_min}, {self.q_max}]")
        if self.q_min[2] != self.q_max[2] or self.uav_init[2] != self.q_min[2]:
            raise ValueError("UAV altitude must be fixed: q_min, q_max and uav_init need equal z")
        if self.horizon_s is not None and abs(self.horizon_slots * self.slot_dt - self.horizon_s) > 1e-9:
            raise ValueError(f"horizon_slots*slot_dt={self.horizon_slots * self.slot_dt} != horizon_s={self.horizon_s}")
        return self

    @property
    def altitude(self) -> float:
        return self.q_min[2]

    @property
    def m(self) -> int:
        return self.channel.m


class AgentConfig(BaseModel):
    hidden: list[int] = Field(default_factory=lambda: [256, 256])
    gamma: float = Field(0.99, ge=0.0, le=1.0)
    tau: float = Field(0.005, ge=0.0, le=1.0)
    tau_critic: float = Field(0.005, ge=0.0, le=1.0)
    tau_actor: float = Field(0.005, ge=0.0, le=1.0)
    temperature: float = Field(0.2, ge=0.0)
    lr_sac_actor: float = Field(3e-4, gt=0.0)
    lr_sac_critic: float = Field(3e-4, gt=0.0)
    lr_td3_actor: float = Field(3e-4, gt=0.0)
    lr_td3_critic: float = Field(3e-4, gt=0.0)
    policy_delay: int = Field(2, ge=1)
    batch_size: int = Field(256, ge=1)
    buffer_capacity: int = Field(100_000, ge=1)
    smoothing_std: float = Field(0.2, ge=0.0)
    noise_clip: float = Field(0.5, ge=0.0)
    explore_std: float = Field(0.1, ge=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    tanh_correction: bool = True
    literal_td3_actor_loss: bool = False


class MetaConfig(BaseModel):
    n_tasks: int = Field(5, ge=1)
    n_inner: int = Field(1, ge=0)
    inner_lr: float = Field(3e-4, ge=0.0)
    beta_meta: float = Field(1e-4, ge=0.0)
    episodes_train: int = Field(200, ge=0)
    episodes_adapt: int = Field(100, ge=0)


class ExperimentConfig(BaseModel):
    scenario: str = "reference"
    baseline: Literal["mmsat", "msat", "passive_ris", "fixed_ris"] = "mmsat"
    episodes: int = Field(200, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    sweep_axis: Optional[Literal["M", "P_max_bs", "N_BS", "QoS"]] = None
    sweep_values: list[float] = Field(default_factory=list)
    out_dir: str = "runs"
    detail: bool = False
    allow_extra_sweep_values: bool = False
    env: EnvConfig = Field(default_factory=EnvConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    meta: MetaConfig = Field(default_factory=MetaConfig)

    @model_validator(mode="after")
    def _check_standard_sets(self):
        if self.allow_extra_sweep_values:
            return self
        if self.env.m not in STANDARD_M_VALUES:
            raise ValueError(f"M={self.env.m} not in {STANDARD_M_VALUES} (set allow_extra_sweep_values)")
        if self.env.channel.n_bs not in STANDARD_N_BS_VALUES:
            raise ValueError(f"N_BS={self.env.channel.n_bs} not in {STANDARD_N_BS_VALUES} (set allow_extra_sweep_values)")
        allowed = {"M": STANDARD_M_VALUES, "N_BS": STANDARD_N_BS_VALUES}.get(self.sweep_axis or "")
        if allowed is not None:
            bad = [v for v in self.sweep_values if int(v) not in allowed]
            if bad:
                raise ValueError(f"sweep values {bad} not in {allowed} (set allow_extra_sweep_values)")
        return self


# section name in the file -> path inside ExperimentConfig
SECTIONS = {
    "experiment": (),
    "env": ("env",),
    "channel": ("env", "channel"),
    "uav_power": ("env", "uav_power"),
    "ris_power": ("env", "ris_power"),
    "bs_power": ("env", "bs_power"),
    "agent": ("agent",),
    "meta": ("meta",),
}


def parse_value(raw: str, key: str = ""):
    text = raw.strip()
    if "," in text:
        return [parse_value(part, key) for part in text.split(",") if part.strip()]
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    m = _UNIT_RE.match(text)
    if m:
        number, unit = float(m.group(1)), m.group(2)
        if unit == "dBm":
            return dbm_to_watt(number)
        if unit == "mW":
            return number * 1e-3
        return db_to_amplitude(number) if key in AMPLITUDE_DB_KEYS else db_to_linear(number)
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_layered(path: Path, _seen: Optional[set] = None) -> dict[str, object]:
    """Flatten a config file (and its includes) into ``{"section.key": value}``."""
    path = Path(path)
    seen = _seen if _seen is not None else set()
    resolved = path.resolve()
    if resolved in seen:
        raise ConfigError("include", f"include cycle at {path}")
    seen.add(resolved)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError("file", f"cannot read {path}: {e}") from e

    flat: dict[str, object] = {}
    own: dict[str, object] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name}:{lineno}", f"expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "include":
            flat.update(read_layered(path.parent / value, seen))
            continue
        if "." not in key:
            key = f"experiment.{key}"
        own[key] = parse_value(value, key)
    flat.update(own)
    seen.discard(resolved)
    return flat


def _nest(flat: dict[str, object]) -> dict:
    tree: dict = {}
    for dotted, value in flat.items():
        section, _, field = dotted.partition(".")
        if section not in SECTIONS or not field:
            raise ConfigError(dotted, "unknown section")
        node = tree
        for part in SECTIONS[section]:
            node = node.setdefault(part, {})
        if field in ("seeds", "sweep_values", "qos", "hidden") and not isinstance(value, list):
            value = [value]
        node[field] = value
    return tree


def build_config(flat: dict[str, object]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(_nest(flat))
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(p) for p in err["loc"]) or "experiment"
        raise ConfigError(field, err["msg"]) from e


def load_config(path: Optional[str | Path] = None) -> ExperimentConfig:
    """Load a layered config file; a missing path yields the reference defaults."""
    flat = read_layered(Path(path)) if path else {}
    cfg = build_config(flat)
    logger.info("config loaded path=%s scenario=%s baseline=%s K=%d M=%d N_BS=%d",
                path, cfg.scenario, cfg.baseline, cfg.env.k, cfg.env.m, cfg.env.channel.n_bs)
    return cfg


def desk_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """K=2, M=4, N_BS=2, L=50, E=200 (meta-training too); small enough for a laptop core."""
    data = cfg.model_dump()
    data["allow_extra_sweep_values"] = True
    data["episodes"] = 200
    env = data["env"]
    env.update(k=2, horizon_slots=50, horizon_s=None, qos=env["qos"][:1])
    env["channel"].update(mx=2, my=2, n_bs=2)
    meta = data["meta"]
    meta.update(episodes_train=200, episodes_adapt=min(meta["episodes_adapt"], DESK_ADAPT_EPISODES))
    return ExperimentConfig.model_validate(data)


def worker_count() -> int:
    return max(1, int(os.getenv("AARIS_WORKERS", "1")))
