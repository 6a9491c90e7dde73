"""
Geometry-dependent Rician channels between the BS, the aerial RIS and the users.

All functions are pure given an explicit ``numpy.random.Generator``; channels
are redrawn independently every slot (block fading). The BS->user direct link
is blocked and therefore never synthesized.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .config import ChannelConfig
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

ChannelParams = ChannelConfig

DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class NetworkGeometry:
    bs_pos: np.ndarray  # (3,)
    uav_pos: np.ndarray  # (3,), z == H
    uav_vel: np.ndarray  # (3,), z == 0
    user_pos: np.ndarray  # (K, 3), z == 0

    @property
    def k(self) -> int:
        return self.user_pos.shape[0]


@dataclass(frozen=True)
class ChannelRealization:
    g: np.ndarray  # (M, N_BS) complex
    h_r: np.ndarray  # (K, M) complex; row k is h_{r,k}


def ula_steering(n: int, phase_arg: float) -> np.ndarray:
    if n < 1:
        raise InvalidArgumentError(f"array size must be >= 1, got {n}")
    return np.exp(-1j * phase_arg * np.arange(n))


def upa_steering(mx: int, my: int, phase_arg: float) -> np.ndarray:
    """Kronecker product of the x- and y-axis ULA responses; entry i*my+j is e^{-j*phase*(i+j)}."""
    if mx < 1 or my < 1:
        raise InvalidArgumentError(f"UPA counts must be >= 1, got mx={mx} my={my}")
    return np.kron(ula_steering(mx, phase_arg), ula_steering(my, phase_arg))


def bs_uav_angles(geom: NetworkGeometry) -> tuple[float, float]:
    """(sin theta, cos eta) from the UAV's absolute horizontal coordinates."""
    x_u, y_u = float(geom.uav_pos[0]), float(geom.uav_pos[1])
    r = np.hypot(x_u, y_u)
    if r < DEGENERATE_TOL:
        logger.warning("degenerate geometry link=bs_uav uav=(%.3g, %.3g)", x_u, y_u)
        return 0.0, 1.0
    return y_u / r, x_u / r


def uav_user_angles(geom: NetworkGeometry, k: int, use_printed_cos_beta: bool = False) -> tuple[float, float]:
    """(sin alpha, cos beta) between the UAV and user k."""
    dx = float(geom.user_pos[k, 0] - geom.uav_pos[0])
    dy = float(geom.user_pos[k, 1] - geom.uav_pos[1])
    dz = float(geom.user_pos[k, 2] - geom.uav_pos[2])
    r_xy = np.hypot(dx, dy)
    if r_xy < DEGENERATE_TOL:
        logger.warning("degenerate geometry link=uav_user user=%d", k)
        return 0.0, 1.0
    sin_alpha = dy / np.hypot(dz, dy)
    cos_beta = (dy if use_printed_cos_beta else dx) / r_xy
    return sin_alpha, cos_beta


def path_gain(distance: float, alpha: float, params: ChannelParams) -> float:
    if distance <= 0:
        raise InvalidArgumentError(f"distance must be positive, got {distance}")
    return params.c0 * (distance / params.d0) ** (-alpha)


def _rician_weights(k_factor: float) -> tuple[float, float]:
    if np.isinf(k_factor):
        return 1.0, 0.0
    return np.sqrt(k_factor / (k_factor + 1.0)), np.sqrt(1.0 / (k_factor + 1.0))


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    # CN(0, 1): real and imaginary parts each N(0, 1/2)
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def draw_bs_uav_channel(geom: NetworkGeometry, params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    sin_theta, cos_eta = bs_uav_angles(geom)
    phase = params.zeta_phase * sin_theta * cos_eta
    g_los = np.outer(upa_steering(params.mx, params.my, phase), ula_steering(params.n_bs, phase))
    w_los, w_nlos = _rician_weights(params.k_bs_u)
    g_nlos = _cn(rng, (params.m, params.n_bs))
    d = float(np.linalg.norm(geom.bs_pos - geom.uav_pos))
    return np.sqrt(path_gain(d, params.alpha_bs_u, params)) * (w_los * g_los + w_nlos * g_nlos)


def draw_uav_user_channel(geom: NetworkGeometry, params: ChannelParams, k: int, rng: np.random.Generator) -> np.ndarray:
    sin_alpha, cos_beta = uav_user_angles(geom, k, params.use_printed_cos_beta)
    # AoD from the RIS carries +j: the conjugate of the UPA response
    h_los = np.conj(upa_steering(params.mx, params.my, params.zeta_phase * sin_alpha * cos_beta))
    w_los, w_nlos = _rician_weights(params.k_u_k)
    h_nlos = _cn(rng, (params.m,))
    d = float(np.linalg.norm(geom.uav_pos - geom.user_pos[k]))
    return np.sqrt(path_gain(d, params.alpha_u_k, params)) * (w_los * h_los + w_nlos * h_nlos)


def draw_channels(geom: NetworkGeometry, params: ChannelParams, rng: np.random.Generator) -> ChannelRealization:
    """One slot's realization: G first, then h_{r,k} in user order (fixed draw order keeps seeds reproducible)."""
    g = draw_bs_uav_channel(geom, params, rng)
    h_r = np.stack([draw_uav_user_channel(geom, params, k, rng) for k in range(geom.k)])
    return ChannelRealization(g=g, h_r=h_r)
