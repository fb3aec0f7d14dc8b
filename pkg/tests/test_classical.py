import itertools

import numpy as np
import pytest

from sfim.channel import build_group_model, draw_channel, transmit
from sfim.classical import InfeasibleError, lmmse_estimate, ml_detect, mmse_detect
from sfim.codec import int_to_bits, modulate_group
from sfim.complexity import counting
from sfim.config import SystemConfig
from sfim.detection import NumericError
from sfim.frontend import flatten_groups, gen_measurement

TINY = SystemConfig(users=1, tx_antennas=2, active_tx=1, vd_subcarriers=2, active_sub=1,
                    fd_subcarriers=2, rx_antennas=2)


def make(cfg, seed, snr_db):
    rng = np.random.default_rng(seed)
    A = gen_measurement(3, cfg.Nf, cfg.Nv)
    m = build_group_model(draw_channel(rng, cfg), A, 0, snr_db, None, cfg)
    bits = [rng.integers(0, 2, cfg.bits_per_group).astype(np.uint8) for _ in range(cfg.U)]
    x = flatten_groups([modulate_group(b, cfg) for b in bits], cfg)
    return m, bits, x, transmit(m, x, rng)


def brute_force(y, m, cfg):
    """Independent enumeration: every joint bit pattern, modulated from scratch."""
    nb = cfg.bits_per_group
    best, best_r = None, np.inf
    for combo in itertools.product(range(2 ** nb), repeat=cfg.U):
        syms = [modulate_group(int_to_bits(c, nb), cfg) for c in combo]
        r = np.sum(np.abs(y - m.h_bar @ flatten_groups(syms, cfg)) ** 2)
        if r < best_r:
            best, best_r = combo, r
    return best, best_r


@pytest.mark.parametrize("cfg", [TINY, SystemConfig(users=1, rx_antennas=4)])
def test_ml_matches_enumeration(cfg):
    for seed in range(100 if cfg is TINY else 20):
        m, _, _, y = make(cfg, seed, 3.0)
        res = ml_detect(y, m)
        combo, r = brute_force(y, m, cfg)
        np.testing.assert_array_equal(res.hard_bits[0], int_to_bits(combo[0], cfg.bits_per_group))
        assert res.metric == pytest.approx(r, rel=1e-12)


def test_ml_joint_two_users():
    cfg = TINY.replace(users=2)
    for seed in range(20):
        m, _, _, y = make(cfg, seed, 0.0)
        res = ml_detect(y, m)
        combo, r = brute_force(y, m, cfg)
        for u in range(2):
            np.testing.assert_array_equal(res.hard_bits[u], int_to_bits(combo[u], 3))
        assert res.metric == pytest.approx(r, rel=1e-12)


def test_ml_noiseless_recovery():
    cfg = SystemConfig(users=2, rx_antennas=8, apm_order=2)
    cfg = cfg.replace(vd_subcarriers=4, active_sub=1, fd_subcarriers=2)
    m, bits, x, _ = make(cfg, 0, 10.0)
    res = ml_detect(m.h_bar @ x, m)
    for b, r in zip(bits, res.hard_bits):
        np.testing.assert_array_equal(b, r)
    assert res.metric == pytest.approx(0, abs=1e-20)


def test_ml_infeasible_on_scheme1():
    cfg = SystemConfig()
    m, _, _, y = make(cfg, 0, 10.0)
    with pytest.raises(InfeasibleError):
        ml_detect(y, m)


def test_mmse_matches_normal_equations():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        reg = rng.uniform(0.01, 2)
        direct = np.linalg.solve(h.conj().T @ h + reg * np.eye(8), h.conj().T @ y)
        got = lmmse_estimate(h, y, reg)
        assert np.linalg.norm(got - direct) <= 1e-10 * np.linalg.norm(direct)
        # first-order condition of the regularized least squares
        np.testing.assert_allclose(h.conj().T @ (y - h @ got), reg * got, atol=1e-8)


def test_mmse_limits():
    rng = np.random.default_rng(1)
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    np.testing.assert_allclose(lmmse_estimate(np.eye(6), y, 1e-12), y, atol=1e-10)
    h = rng.standard_normal((6, 6))
    assert np.linalg.norm(lmmse_estimate(h, y, 1e12)) < 1e-10


def test_mmse_detect_uses_prior_variance():
    cfg = SystemConfig(users=2, rx_antennas=8)
    m, bits, x, y = make(cfg, 4, 30.0)
    res = mmse_detect(y, m)
    assert res.info["reg"] == pytest.approx(m.noise_var / 0.25)
    np.testing.assert_allclose(res.x_hat, lmmse_estimate(m.h_bar, y, m.noise_var / 0.25))
    assert len(res.hard_bits) == 2


def test_mmse_ill_conditioned_raises():
    h = np.zeros((4, 4))
    h[0, 0] = 1.0
    with pytest.raises(NumericError):
        lmmse_estimate(h, np.ones(4), 1e-16)


def test_ml_counts_grow_with_search_space():
    with counting() as c1:
        m, _, _, y = make(TINY, 0, 5.0)
        ml_detect(y, m)
    cfg2 = TINY.replace(users=2)
    with counting() as c2:
        m, _, _, y = make(cfg2, 0, 5.0)
        ml_detect(y, m)
    assert 0 < c1.total < c2.total
