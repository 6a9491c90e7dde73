"""RSMA link budget through the active, element-selected RIS."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

COMMON_RATE_TOL = 1e-12


@dataclass(frozen=True)
class RisConfig:
    amp: np.ndarray  # (M,) in [0, a_max]
    phase: np.ndarray  # (M,) radians in [0, 2*pi]
    sel: np.ndarray  # (M,) bits {0, 1}

    @property
    def m(self) -> int:
        return self.amp.shape[0]

    @property
    def n_on(self) -> int:
        return int(np.sum(self.sel))


@dataclass(frozen=True)
class BeamformingSet:
    w_common: np.ndarray  # (N_BS,) complex
    w_private: np.ndarray  # (K, N_BS) complex

    def transmit_energy(self) -> float:
        """sum_k ||w_k||^2 + ||w_c||^2 (before the PA efficiency)."""
        return float(np.sum(np.abs(self.w_private) ** 2) + np.sum(np.abs(self.w_common) ** 2))


@dataclass(frozen=True)
class RateReport:
    sinr_common: np.ndarray
    sinr_private: np.ndarray
    r_common: np.ndarray
    r_private: np.ndarray
    c_alloc: np.ndarray
    r_total: float


def effective_ris_matrix(ris: RisConfig) -> np.ndarray:
    return np.diag(ris.sel * ris.amp * np.exp(1j * ris.phase))


def effective_user_channel(h_r_k: np.ndarray, f_prime: np.ndarray, g: np.ndarray) -> np.ndarray:
    """h_k such that h_k^H = h_{r,k}^H F' G."""
    m = h_r_k.shape[0]
    if f_prime.shape != (m, m) or g.shape[0] != m:
        raise InvalidArgumentError(f"dimension mismatch h_r={h_r_k.shape} F'={f_prime.shape} G={g.shape}")
    return np.conj(np.conj(h_r_k) @ f_prime @ g)


def _amplified_noise(h_r_k: np.ndarray, f_prime: np.ndarray, sigma_z2: float) -> float:
    return sigma_z2 * float(np.sum(np.abs(np.conj(h_r_k) @ f_prime) ** 2))


def sinr_common(k: int, bf: BeamformingSet, h_k: np.ndarray, h_r_k: np.ndarray, f_prime: np.ndarray,
                sigma_z2: float, sigma_k2: float, excludes_self: bool = False) -> float:
    """Common-stream SINR; interference sums over all K private beams unless ``excludes_self``."""
    signal = abs(np.vdot(h_k, bf.w_common)) ** 2
    interference = np.abs(bf.w_private.conj() @ h_k) ** 2  # |h_k^H w_i|^2 for every i
    if excludes_self:
        interference = np.delete(interference, k)
    return float(signal / (np.sum(interference) + _amplified_noise(h_r_k, f_prime, sigma_z2) + sigma_k2))


def sinr_private(k: int, bf: BeamformingSet, h_k: np.ndarray, h_r_k: np.ndarray, f_prime: np.ndarray,
                 sigma_z2: float, sigma_k2: float) -> float:
    powers = np.abs(bf.w_private.conj() @ h_k) ** 2
    interference = np.sum(powers) - powers[k]
    return float(powers[k] / (interference + _amplified_noise(h_r_k, f_prime, sigma_z2) + sigma_k2))


def rate(sinr: float) -> float:
    if sinr < 0:
        raise InvalidArgumentError(f"SINR must be non-negative, got {sinr}")
    return float(np.log2(1.0 + sinr))


def common_rate_ok(c_alloc: np.ndarray, r_common: np.ndarray) -> bool:
    return bool(np.sum(c_alloc) <= np.min(r_common) + COMMON_RATE_TOL)


def total_rate(report: RateReport) -> float:
    return float(np.sum(report.c_alloc) + np.sum(report.r_private))


def compute_rates(g: np.ndarray, h_r: np.ndarray, ris: RisConfig, bf: BeamformingSet, c_alloc: np.ndarray,
                  sigma_z2: float, sigma_k2: float, excludes_self: bool = False) -> RateReport:
    """Assemble the per-user SINRs and rates for one slot."""
    f_prime = effective_ris_matrix(ris)
    k_users = h_r.shape[0]
    sc, sp = np.empty(k_users), np.empty(k_users)
    for k in range(k_users):
        h_k = effective_user_channel(h_r[k], f_prime, g)
        sc[k] = sinr_common(k, bf, h_k, h_r[k], f_prime, sigma_z2, sigma_k2, excludes_self)
        sp[k] = sinr_private(k, bf, h_k, h_r[k], f_prime, sigma_z2, sigma_k2)
    rc = np.log2(1.0 + sc)
    rp = np.log2(1.0 + sp)
    c_alloc = np.asarray(c_alloc, dtype=float)
    return RateReport(sinr_common=sc, sinr_private=sp, r_common=rc, r_private=rp, c_alloc=c_alloc,
                      r_total=float(np.sum(c_alloc) + np.sum(rp)))
