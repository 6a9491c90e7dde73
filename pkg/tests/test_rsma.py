import math

import numpy as np
import pytest

from aaris.errors import InvalidArgumentError
from aaris.rsma import (
    BeamformingSet,
    RisConfig,
    common_rate_ok,
    compute_rates,
    effective_ris_matrix,
    effective_user_channel,
    rate,
    sinr_common,
    sinr_private,
    total_rate,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def scalar_oracle(g, h_r, amp, phase, sel, w_c, w_p, sigma_z2, sigma_k2):
    """Straight loops over the raw matrices."""
    m, n = g.shape
    k_users = h_r.shape[0]
    sc, sp = [], []
    for k in range(k_users):
        # h_k^H = h_r^H diag(f) G, entry by entry
        hk_h = [sum(np.conj(h_r[k, i]) * sel[i] * amp[i] * np.exp(1j * phase[i]) * g[i, j] for i in range(m))
                for j in range(n)]
        proj = lambda w: sum(hk_h[j] * w[j] for j in range(n))  # noqa: E731
        noise_amp = sigma_z2 * sum(abs(np.conj(h_r[k, i]) * sel[i] * amp[i]) ** 2 for i in range(m))
        privates = [abs(proj(w_p[i])) ** 2 for i in range(k_users)]
        sc.append(abs(proj(w_c)) ** 2 / (sum(privates) + noise_amp + sigma_k2))
        sp.append(privates[k] / (sum(privates) - privates[k] + noise_amp + sigma_k2))
    return np.array(sc), np.array(sp)


def test_rates_match_scalar_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        k, m, n = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 4)
        g, h_r = crandn(rng, m, n), crandn(rng, k, m)
        ris = RisConfig(amp=rng.uniform(0, 10, m), phase=rng.uniform(0, 2 * np.pi, m), sel=rng.integers(0, 2, m))
        bf = BeamformingSet(w_common=crandn(rng, n), w_private=crandn(rng, k, n))
        c_alloc = rng.uniform(0, 1, k)
        sigma_z2, sigma_k2 = rng.uniform(0.01, 1), rng.uniform(0.01, 1)
        report = compute_rates(g, h_r, ris, bf, c_alloc, sigma_z2, sigma_k2)
        sc, sp = scalar_oracle(g, h_r, ris.amp, ris.phase, ris.sel, bf.w_common, bf.w_private, sigma_z2, sigma_k2)
        assert np.allclose(report.sinr_common, sc, rtol=1e-12, atol=1e-12)
        assert np.allclose(report.sinr_private, sp, rtol=1e-12, atol=1e-12)
        expected_total = np.sum(c_alloc) + np.sum(np.log2(1 + sp))
        assert report.r_total == pytest.approx(expected_total, rel=1e-12)
        assert total_rate(report) == pytest.approx(report.r_total, rel=1e-12)


def test_common_sinr_can_exclude_own_private_beam():
    rng = np.random.default_rng(3)
    g, h_r = crandn(rng, 2, 2), crandn(rng, 2, 2)
    ris = RisConfig(amp=np.ones(2), phase=np.zeros(2), sel=np.ones(2, dtype=int))
    bf = BeamformingSet(w_common=crandn(rng, 2), w_private=crandn(rng, 2, 2))
    both = compute_rates(g, h_r, ris, bf, np.zeros(2), 0.0, 1e-3)
    own_removed = compute_rates(g, h_r, ris, bf, np.zeros(2), 0.0, 1e-3, excludes_self=True)
    assert np.all(own_removed.sinr_common > both.sinr_common)
    assert np.allclose(own_removed.sinr_private, both.sinr_private)


def test_all_elements_off_gives_zero_rates():
    rng = np.random.default_rng(4)
    ris = RisConfig(amp=np.full(4, 5.0), phase=np.zeros(4), sel=np.zeros(4, dtype=int))
    bf = BeamformingSet(w_common=crandn(rng, 2), w_private=crandn(rng, 3, 2))
    report = compute_rates(crandn(rng, 4, 2), crandn(rng, 3, 4), ris, bf, np.zeros(3), 1e-3, 1e-3)
    assert np.all(report.r_common == 0) and np.all(report.r_private == 0)
    assert report.r_total == 0


def test_effective_channel():
    h_r = np.array([1.0 + 1j, 2.0])
    g = np.array([[1.0, 0.0], [0.0, 1j]])
    ris = RisConfig(amp=np.array([2.0, 1.0]), phase=np.array([0.0, np.pi / 2]), sel=np.array([1, 1]))
    h = effective_user_channel(h_r, effective_ris_matrix(ris), g)
    # h^H = h_r^H F' G
    expected_h_h = np.conj(h_r) @ np.diag([2.0, 1j]) @ g
    assert np.allclose(np.conj(h), expected_h_h)
    with pytest.raises(InvalidArgumentError):
        effective_user_channel(np.ones(3), np.eye(2), g)


def test_rate():
    assert rate(0.0) == 0.0
    assert rate(1.0) == 1.0
    assert math.isclose(rate(3.0), 2.0)
    with pytest.raises(InvalidArgumentError):
        rate(-0.1)


def test_common_rate_split():
    assert common_rate_ok(np.array([0.5, 0.5]), np.array([1.0, 2.0]))
    assert not common_rate_ok(np.array([0.6, 0.5]), np.array([1.0, 2.0]))


def test_single_user_identity_channel():
    ris = RisConfig(amp=np.ones(1), phase=np.zeros(1), sel=np.ones(1, dtype=int))
    bf = BeamformingSet(w_common=np.ones(1, dtype=complex), w_private=np.ones((1, 1), dtype=complex))
    f_prime = effective_ris_matrix(ris)
    h_r = np.ones(1, dtype=complex)
    h = effective_user_channel(h_r, f_prime, np.ones((1, 1), dtype=complex))
    assert sinr_common(0, bf, h, h_r, f_prime, 0.5, 0.5) == pytest.approx(0.5, rel=1e-12)
    # no other private beams: only amplified noise and receiver noise remain
    assert sinr_private(0, bf, h, h_r, f_prime, 0.5, 0.5) == pytest.approx(1.0, rel=1e-12)
    assert sinr_private(0, bf, h, h_r, f_prime, 0.0, 0.25) == pytest.approx(4.0, rel=1e-12)


def test_stronger_beams_raise_every_sinr():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g, h_r = crandn(rng, 3, 2), crandn(rng, 2, 3)
        ris = RisConfig(amp=rng.uniform(0.5, 2, 3), phase=rng.uniform(0, 2 * np.pi, 3), sel=np.ones(3, dtype=int))
        bf = BeamformingSet(w_common=crandn(rng, 2), w_private=crandn(rng, 2, 2))
        c = rng.uniform(1.1, 3.0)
        louder = BeamformingSet(w_common=c * bf.w_common, w_private=c * bf.w_private)
        base = compute_rates(g, h_r, ris, bf, np.zeros(2), 0.1, 0.1)
        scaled = compute_rates(g, h_r, ris, louder, np.zeros(2), 0.1, 0.1)
        assert np.all(scaled.sinr_common > base.sinr_common)
        assert np.all(scaled.sinr_private > base.sinr_private)


def test_switching_an_element_off_removes_its_contribution():
    rng = np.random.default_rng(6)
    g, h_r = crandn(rng, 4, 3), crandn(rng, 4)
    amp, phase = rng.uniform(0.5, 2, 4), rng.uniform(0, 2 * np.pi, 4)
    on = RisConfig(amp=amp, phase=phase, sel=np.ones(4, dtype=int))
    h_on = effective_user_channel(h_r, effective_ris_matrix(on), g)
    for j in range(4):
        sel = np.ones(4, dtype=int)
        sel[j] = 0
        h_off = effective_user_channel(h_r, effective_ris_matrix(RisConfig(amp=amp, phase=phase, sel=sel)), g)
        contribution = np.conj(np.conj(h_r[j]) * amp[j] * np.exp(1j * phase[j]) * g[j])
        assert np.allclose(h_off, h_on - contribution, atol=1e-12)


def test_common_sinr_bounded_by_noise_free_signal():
    rng = np.random.default_rng(8)
    for _ in range(50):
        g, h_r = crandn(rng, 2, 2), crandn(rng, 3, 2)
        ris = RisConfig(amp=rng.uniform(0, 3, 2), phase=rng.uniform(0, 2 * np.pi, 2), sel=rng.integers(0, 2, 2))
        bf = BeamformingSet(w_common=crandn(rng, 2), w_private=crandn(rng, 3, 2))
        f_prime = effective_ris_matrix(ris)
        sigma_k2 = rng.uniform(0.01, 1)
        for k in range(3):
            h = effective_user_channel(h_r[k], f_prime, g)
            bound = abs(np.vdot(h, bf.w_common)) ** 2 / sigma_k2
            assert sinr_common(k, bf, h, h_r[k], f_prime, rng.uniform(0, 1), sigma_k2) <= bound * (1 + 1e-12)
