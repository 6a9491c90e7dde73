"""
UAV propulsion, active-RIS and BS power, and the energy-efficiency objective.

Everything is in linear watts; dBm values were converted at config load.
The parasite term uses ``air_density``, which is
unrelated to the steering constant in ``channel``.
"""

from typing import Sequence

import numpy as np

from .config import BsPowerConfig, RisPowerConfig, UavPowerConfig
from .errors import InvalidArgumentError, InvalidStateError
from .rsma import BeamformingSet, RisConfig

UavPowerParams = UavPowerConfig
RisPowerParams = RisPowerConfig
BsPowerParams = BsPowerConfig


def _blade(speed: float, p: UavPowerParams) -> float:
    return p.p_b * (1.0 + 3.0 * speed ** 2 / (p.omega ** 2 * p.rotor_r ** 2))


def _parasite(speed: float, p: UavPowerParams) -> float:
    return 0.5 * p.d_ratio * p.air_density * p.solidity * p.disk_area * speed ** 3


def _induced(speed: float, p: UavPowerParams) -> float:
    x = speed ** 2 / (2.0 * p.v_induced ** 2)
    # sqrt(1 + x^2) - x, written without cancellation
    return p.p_i * np.sqrt(1.0 / (np.sqrt(1.0 + x * x) + x))


def propulsion_power(speed: float, p: UavPowerParams) -> float:
    if speed < 0:
        raise InvalidArgumentError(f"speed must be non-negative, got {speed}")
    return float(_blade(speed, p) + _parasite(speed, p) + _induced(speed, p))


def hover_power(p: UavPowerParams) -> float:
    return p.p_b + p.p_i


def derived_hover_constants(p: UavPowerParams) -> tuple[float, float]:
    """(P_b, P_i) rebuilt from the airframe constants rather than taken from the table."""
    p_b = p.profile_drag / 8.0 * p.air_density * p.solidity * p.disk_area * p.omega ** 3 * p.rotor_r ** 3
    p_i = (1.0 + p.corr) * p.weight ** 1.5 / np.sqrt(2.0 * p.air_density * p.disk_area)
    return float(p_b), float(p_i)


def ris_output_power(f_prime: np.ndarray, g: np.ndarray, bf: BeamformingSet, sigma_z2: float) -> float:
    m = f_prime.shape[0]
    if f_prime.shape != (m, m) or g.shape[0] != m or g.shape[1] != bf.w_common.shape[0]:
        raise InvalidArgumentError(f"dimension mismatch F'={f_prime.shape} G={g.shape} w={bf.w_common.shape}")
    fg = f_prime @ g
    beams = np.vstack([bf.w_private, bf.w_common[None, :]])
    reflected = np.sum(np.abs(beams @ fg.T) ** 2)
    return float(reflected + sigma_z2 * np.sum(np.abs(f_prime) ** 2))


def ris_power(ris: RisConfig, p_out: float, p: RisPowerParams) -> float:
    """Static per-element power for the ON elements (or all M) plus amplifier draw nu*p_out."""
    if p_out < 0:
        raise InvalidArgumentError(f"p_out must be non-negative, got {p_out}")
    n = ris.m if p.static_power_counts_all else ris.n_on
    return n * (p.p_c + p.p_dc) + p.nu * p_out


def total_power(bf: BeamformingSet, p_bs: BsPowerParams, p_uav: float, p_ris: float, k: int) -> float:
    return bf.transmit_energy() / p_bs.pa_eff + p_bs.p_cir_bs + k * p_bs.p_cir_user + p_uav + p_ris


def energy_efficiency(rates: Sequence[float], powers: Sequence[float]) -> float:
    """Mean over slots of R_total(l)/P_total(l) (a mean of ratios, not a ratio of means)."""
    rates = np.asarray(rates, dtype=float)
    powers = np.asarray(powers, dtype=float)
    if rates.shape != powers.shape or rates.size == 0:
        raise InvalidArgumentError(f"need matching non-empty series, got {rates.shape} and {powers.shape}")
    if np.any(powers <= 0):
        raise InvalidStateError("total power must be positive in every slot")
    return float(np.mean(rates / powers))
