import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfim.channel import build_group_model, draw_channel, transmit
from sfim.classical import lmmse_estimate
from sfim.codec import augmented_alphabet, modulate_group, symbol_prior
from sfim.config import SystemConfig
from sfim.detection import NumericError
from sfim.frontend import flatten_groups, gen_measurement
from sfim.mp import (VAR_CEIL, EpState, amp, amp_detect, denoise, ep, ep_detect,
                     factor_log_likelihood, prior_denoise, write_trace)
from sfim.training import gen_batch

ALPH = np.array([0, 1, -1], dtype=complex)
PRIOR = np.array([0.5, 0.25, 0.25])


def dft(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


# ---------------------------------------------------------------- denoiser

def test_denoise_scalar_example():
    w = np.array([0.5 * np.exp(-0.25), 0.25 * np.exp(-0.25), 0.25 * np.exp(-2.25)])
    p = prior_denoise(0.5, 1.0, ALPH, PRIOR)
    np.testing.assert_allclose(p.probs, w / w.sum(), rtol=1e-14)
    mean = (w[1] - w[2]) / w.sum()
    assert p.mean == pytest.approx(mean, rel=1e-14)
    assert p.var == pytest.approx((w[1] + w[2]) / w.sum() - mean ** 2, rel=1e-12)


def test_denoise_singleton_and_limit():
    p = prior_denoise(0.3 + 1j, 2.0, np.array([1j]), np.array([1.0]))
    assert p.mean == 1j and p.var == 0
    p = prior_denoise(-1.0, 1e-9, ALPH, PRIOR)
    np.testing.assert_allclose(p.probs, [0, 0, 1], atol=1e-12)


def test_denoise_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        denoise(np.array([0.1]), np.array([0.0]), ALPH, PRIOR)


def test_denoise_underflow_falls_back_to_nearest():
    probs, mean, var = denoise(np.array([0.9]), np.array([1e-320]), ALPH,
                               np.array([0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(probs[0], [0, 1, 0])
    assert np.all(np.isfinite(probs))


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-6, 1e6))
def test_denoise_invariants(re, im, sigma):
    probs, mean, var = denoise(np.array([re + 1j * im]), np.array([sigma]), ALPH, PRIOR)
    assert abs(probs.sum() - 1) < 1e-9 and np.all(probs >= 0)
    assert mean[0] == pytest.approx(probs[0] @ ALPH)
    assert var[0] >= -1e-12


# ---------------------------------------------------------------- AMP

def amp_scalar_oracle(h, y, s2, v0, iterations):
    """Plain AMP on a matrix with |h_ji|^2 = 1/Phi and unit-norm columns.

    Every observation variance is then the mean of v, so the recursion is
    carried with scalar variances and dense matrix products.
    """
    x = np.zeros(h.shape[1], complex)
    v = np.full(h.shape[1], v0)
    z = y.copy()
    big_v_old = None
    out = []
    for _ in range(iterations):
        big_v = v.mean()
        old = big_v if big_v_old is None else big_v_old
        z = h @ x - big_v * (y - z) / (s2 + old)
        sigma = s2 + big_v
        r = x + h.conj().T @ (y - z)
        p, x, v = denoise(r, np.full(r.shape, sigma), ALPH, PRIOR)
        big_v_old = big_v
        out.append((r, sigma, p))
    return out


def test_amp_unitary_matches_scalar_recursion():
    n = 16
    h = dft(n)
    rng = np.random.default_rng(0)
    x = rng.choice(ALPH, size=n, p=PRIOR)
    s2 = 0.05
    y = h @ x + np.sqrt(s2 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    ref = amp_scalar_oracle(h, y, s2, 0.5, 25)
    trace = []

    def est(r, sigma):
        trace.append((r, sigma))
        return denoise(r, sigma, ALPH, PRIOR)[0]

    out = amp(h, y, s2, ALPH, PRIOR, iterations=25, damping=0.0, estimator=est)
    for (r, sigma), (r0, sig0, _) in zip(trace, ref):
        np.testing.assert_allclose(r, r0, atol=1e-6)
        np.testing.assert_allclose(sigma, sig0, atol=1e-6)
    np.testing.assert_allclose(out.probs, ref[-1][2], atol=1e-6)


def test_amp_first_iteration_is_matched_filter_denoiser():
    n = 8
    h = dft(n)
    rng = np.random.default_rng(1)
    y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    s2 = 0.3
    seen = []
    out = amp(h, y, s2, ALPH, PRIOR, iterations=1, damping=0.0,
              estimator=lambda r, s: seen.append((r, s)) or denoise(r, s, ALPH, PRIOR)[0])
    r, sigma = seen[0]
    np.testing.assert_allclose(r, h.conj().T @ y, atol=1e-12)
    np.testing.assert_allclose(sigma, s2 + 0.5, atol=1e-12)
    np.testing.assert_allclose(out.probs, denoise(h.conj().T @ y, np.full(n, s2 + 0.5),
                                                  ALPH, PRIOR)[0], atol=1e-12)


def test_amp_scalar_degenerate():
    y = np.array([0.7 + 0.1j])
    out = amp(np.ones((1, 1)), y, 0.2, ALPH, PRIOR, iterations=1, damping=0.0)
    np.testing.assert_allclose(out.probs[0], prior_denoise(y[0], 0.2 + 0.5, ALPH, PRIOR).probs)


@pytest.mark.parametrize("damping", [0.0, 0.5])
def test_amp_noiseless_recovery(damping):
    rng = np.random.default_rng(2)
    h = (rng.standard_normal((64, 32)) + 1j * rng.standard_normal((64, 32))) / np.sqrt(64)
    x = rng.choice(ALPH, size=32, p=PRIOR)
    out = amp(h, h @ x, 1e-8, ALPH, PRIOR, iterations=20, damping=damping)
    np.testing.assert_array_equal(ALPH[out.probs.argmax(-1)], x)


def test_amp_batched_matches_single():
    rng = np.random.default_rng(3)
    h = rng.standard_normal((3, 10, 6)) + 1j * rng.standard_normal((3, 10, 6))
    y = rng.standard_normal((3, 10)) + 1j * rng.standard_normal((3, 10))
    s2 = np.array([0.1, 0.5, 2.0])
    batch = amp(h, y, s2, ALPH, PRIOR, iterations=5)
    for b in range(3):
        one = amp(h[b], y[b], s2[b], ALPH, PRIOR, iterations=5)
        np.testing.assert_allclose(batch.probs[b], one.probs, atol=1e-12)


def test_amp_damping_range():
    with pytest.raises(ValueError):
        amp(np.eye(2), np.ones(2), 0.1, ALPH, PRIOR, damping=1.0)


# ---------------------------------------------------------------- EP

def exhaustive_map(h, y, s2):
    hyps = np.array(list(itertools.product(range(3), repeat=h.shape[-1])))
    xs = ALPH[hyps]                                              # (9, 2)
    logp = np.log(PRIOR)[hyps].sum(-1)
    resid = y[:, None, :] - np.einsum("bpw,kw->bkp", h, xs)
    post = logp - np.sum(np.abs(resid) ** 2, axis=-1) / s2      # (B, 9)
    post = np.exp(post - post.max(-1, keepdims=True))
    marg = np.stack([np.stack([post[:, hyps[:, i] == a].sum(-1) for a in range(3)], -1)
                     for i in range(h.shape[-1])], 1)
    return marg.argmax(-1)


def test_ep_matches_exhaustive_map():
    rng = np.random.default_rng(4)
    n = 10_000
    h = (rng.standard_normal((n, 4, 2)) + 1j * rng.standard_normal((n, 4, 2))) / np.sqrt(2)
    x = ALPH[rng.choice(3, size=(n, 2), p=PRIOR)]
    s2 = 2 * 0.5 / 10 ** 1.5      # E|h x|^2 per observation / linear SNR
    y = np.einsum("bpw,bw->bp", h, x) + np.sqrt(s2 / 2) * (
        rng.standard_normal((n, 4)) + 1j * rng.standard_normal((n, 4)))
    out = ep(h, y, np.full(n, s2), ALPH, PRIOR)
    agree = np.all(out.probs.argmax(-1) == exhaustive_map(h, y, s2), axis=-1)
    assert agree.mean() >= 0.99


def test_ep_init_mean_is_mmse():
    rng = np.random.default_rng(5)
    h = rng.standard_normal((12, 8)) + 1j * rng.standard_normal((12, 8))
    y = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    s2 = 0.4
    st_ = EpState(h, y, s2, ALPH, PRIOR)
    cov = np.linalg.inv(st_.gram_scaled + np.diag(st_.V))
    mu = cov @ st_.mf_scaled
    es = 1.0   # per-entry energy of an active symbol
    np.testing.assert_allclose(mu, lmmse_estimate(h, y, s2 / es), atol=1e-10)


def test_ep_always_revert_degrades_to_mmse():
    """With every site update rejected the final cavity pass is the MMSE solution."""
    rng = np.random.default_rng(6)
    h = rng.standard_normal((12, 8)) + 1j * rng.standard_normal((12, 8))
    y = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    s2 = 0.4
    st_ = EpState(h, y, s2, ALPH, PRIOR)
    for _ in range(5):
        m_o, v_o = st_.observe()
        # posterior variance above the cavity variance forces V_new <= 0 everywhere
        st_.update(np.tile([0.0, 0.5, 0.5], (8, 1)), m_o, np.full(8, 1e-3))
    assert st_.reverted == 40
    cov = np.linalg.inv(st_.gram_scaled + np.diag(st_.V))
    np.testing.assert_allclose(cov @ (st_.mf_scaled + st_.eta), lmmse_estimate(h, y, s2),
                               atol=1e-8)


def test_ep_scalar_cavity():
    h, y, s2 = np.ones((1, 1)), np.array([0.3 - 0.2j]), 0.5
    st_ = EpState(h, y, s2, ALPH, PRIOR)
    m_o, v_o = st_.observe()
    s = 1 / (1 / s2 + 1.0)
    mu = s * (y[0] / s2)
    # dividing out the site N(0, 1/V) from N(mu, s) leaves the likelihood N(y, s2)
    assert v_o[0] == pytest.approx(s / (1 - s), rel=1e-12)
    assert v_o[0] == pytest.approx(s2, rel=1e-12)
    assert m_o[0] == pytest.approx(v_o[0] * mu / s, rel=1e-12)
    assert m_o[0] == pytest.approx(y[0], rel=1e-12)


def test_ep_clamp_near_singular():
    st_ = EpState(np.ones((1, 1)), np.array([1.0 + 0j]), 1e20, ALPH, PRIOR)
    # Sigma_ii * V_i = 1 - 1e-15 after scaling the likelihood precision away
    st_.gram_scaled[...] = 1e-15 * st_.V[0]
    m_o, v_o = st_.observe()
    assert v_o[0] == VAR_CEIL
    assert np.all(np.isfinite(m_o))


def test_ep_full_damping_freezes_sites():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    once = ep(h, y, 0.3, ALPH, PRIOR, iterations=1, damping=1.0)
    many = ep(h, y, 0.3, ALPH, PRIOR, iterations=7, damping=1.0)
    np.testing.assert_allclose(once.probs, many.probs, atol=1e-14)


def test_ep_noiseless_recovery():
    rng = np.random.default_rng(8)
    for _ in range(10):
        h = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        x = rng.choice(ALPH, size=8, p=PRIOR)
        out = ep(h, h @ x, 1e-6, ALPH, PRIOR)
        np.testing.assert_array_equal(ALPH[out.probs.argmax(-1)], x)


def test_ep_batched_matches_single():
    rng = np.random.default_rng(9)
    h = rng.standard_normal((3, 10, 6)) + 1j * rng.standard_normal((3, 10, 6))
    y = rng.standard_normal((3, 10)) + 1j * rng.standard_normal((3, 10))
    s2 = np.array([0.1, 0.5, 2.0])
    batch = ep(h, y, s2, ALPH, PRIOR)
    for b in range(3):
        np.testing.assert_allclose(batch.probs[b], ep(h[b], y[b], s2[b], ALPH, PRIOR).probs,
                                   atol=1e-10)


def test_ep_singular_raises():
    st_ = EpState(np.ones((1, 2)), np.ones(1), 1.0, ALPH, PRIOR)
    st_.V[...] = 0.0
    with pytest.raises(NumericError):
        st_.observe()


# ---------------------------------------------------------------- shared invariants

def random_model(rng, snr_db):
    cfg = SystemConfig(users=2, rx_antennas=8)
    A = gen_measurement(0, cfg.Nf, cfg.Nv)
    m = build_group_model(draw_channel(rng, cfg), A, 0, snr_db, None, cfg)
    bits = [rng.integers(0, 2, cfg.bits_per_group).astype(np.uint8) for _ in range(cfg.U)]
    x = flatten_groups([modulate_group(b, cfg) for b in bits], cfg)
    return m, x, transmit(m, x, rng)


def test_variances_positive_and_probs_normalized():
    rng = np.random.default_rng(10)
    n = 10_000
    cfg = SystemConfig(users=2, rx_antennas=8)
    A = gen_measurement(0, cfg.Nf, cfg.Nv)
    batch = gen_batch(cfg, A, rng, n, (0.0, 20.0))
    alph, prior = augmented_alphabet(2), symbol_prior(cfg)
    for runner in (amp, ep):
        seen = []

        def est(r, s):
            seen.append(s)
            p = denoise(r, s, alph, prior)[0]
            assert np.all(np.abs(p.sum(-1) - 1) < 1e-9)
            return p

        out = runner(batch.h, batch.y, batch.noise_var, alph, prior, estimator=est)
        for s in seen:
            assert np.all(np.isfinite(s)) and np.all(s > 0)
        assert np.all(out.var >= 0) and np.all(np.isfinite(out.var))


def test_factor_likelihood_peaks_at_truth():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m, x, _ = random_model(rng, 30.0)
        y = m.h_bar @ x
        best = factor_log_likelihood(y, m.h_bar, x, 1e-3)
        for i in range(x.size):
            for a in m.alphabet:
                if a != x[i]:
                    x2 = x.copy()
                    x2[i] = a
                    assert factor_log_likelihood(y, m.h_bar, x2, 1e-3) < best


def test_detect_wrappers_and_trace(tmp_path):
    rng = np.random.default_rng(12)
    m, x, y = random_model(rng, 25.0)
    for det in (amp_detect, ep_detect):
        res = det(y, m, record=True)
        assert len(res.hard_bits) == 2
        assert len(res.info["trace"]) == 10
        write_trace(res.info["trace"], tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert len(lines) == 11 and lines[0].startswith("iteration")
