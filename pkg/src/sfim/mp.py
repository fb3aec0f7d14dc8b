"""AMP and EP detectors over the augmented discrete alphabet.

The linear stages (:class:`AmpLinearStage`, :class:`EpState`) accept an
optional leading batch dimension: ``h`` of shape (..., Phi, Omega), ``y`` of
shape (..., Phi) and ``noise_var`` scalar or of shape (...). The GNN-aided
detectors reuse them and swap only the per-entry estimator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import EquivalentGroupModel
from .complexity import gram_cost, inverse_cost, tally
from .detection import DetectionResult, NumericError, bits_from_probs, moments

VAR_FLOOR = 1e-10
VAR_CEIL = 1e10
EP_DAMPING = 0.05
# Convex damping of AMP's (x_hat, v_hat); the undamped recursion diverges on
# the compressed SF matrix, whose Nv columns per (user, TA) span only Nf vectors.
AMP_DAMPING = 0.5
DEFAULT_ITERATIONS = 10


# --------------------------------------------------------------------------
# per-entry Bayesian estimator

def denoise(r, sigma, alphabet, prior):
    """Posterior over ``alphabet`` of x given r = x + CN(0, sigma), x ~ prior.

    Works elementwise over any shape of ``r``/``sigma``. Returns
    ``(probs, mean, var)`` with probs of shape r.shape + (A,).
    """
    r = np.asarray(r)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("denoiser variance must be positive")
    with np.errstate(divide="ignore", over="ignore"):
        logprior = np.log(np.asarray(prior, dtype=float))
        s = logprior - np.abs(r[..., None] - alphabet) ** 2 / sigma[..., None]
    top = s.max(axis=-1, keepdims=True)
    bad = ~np.isfinite(top[..., 0])
    if np.any(bad):
        # no usable weight at all: collapse onto the nearest alphabet point
        near = np.argmin(np.abs(r[..., None] - alphabet), axis=-1)
        s = np.where(bad[..., None], np.where(np.arange(len(alphabet)) == near[..., None], 0.0,
                                              -np.inf), s)
        top = s.max(axis=-1, keepdims=True)
    w = np.exp(s - top)
    probs = w / w.sum(axis=-1, keepdims=True)
    mean, var = moments(probs, alphabet)
    return probs, mean, var


@dataclass(frozen=True)
class SymbolPosterior:
    probs: np.ndarray
    mean: complex
    var: float


def prior_denoise(r: complex, sigma: float, alphabet, prior) -> SymbolPosterior:
    probs, mean, var = denoise(np.asarray([r]), np.asarray([sigma]), alphabet, prior)
    return SymbolPosterior(probs[0], complex(mean[0]), float(var[0]))


def factor_log_likelihood(y, h, x, noise_var) -> float:
    """Sum over observation factors of log f_j(y_j | x), dropping constants."""
    e = np.asarray(y) - np.asarray(h) @ np.asarray(x)
    return float(-np.sum(e.real ** 2 + e.imag ** 2) / noise_var)


def _check_finite(name: str, t: int, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite values at iteration {t}")


def _bcast_noise(noise_var, y):
    return np.asarray(noise_var, dtype=float)[..., None] * np.ones(y.shape[-1])


# --------------------------------------------------------------------------
# AMP

class AmpLinearStage:
    """Linear (observation) half of one AMP iteration with its Onsager memory."""

    def __init__(self, h, y, noise_var):
        self.h = np.asarray(h)
        self.y = np.asarray(y)
        self.noise = _bcast_noise(noise_var, self.y)
        self.h2 = self.h.real ** 2 + self.h.imag ** 2
        self.z = self.y.copy()
        self.v_prev = None
        self.t = 0
        phi, omega = self.h.shape[-2:]
        tally("amp_abs2", real_mults=2 * phi * omega)

    def step(self, x_hat, v_hat):
        """Return the decoupled observation ``(r, Sigma)`` for the current estimates."""
        self.t += 1
        h, h2 = self.h, self.h2
        phi, omega = h.shape[-2:]
        v_cur = np.einsum("...pw,...w->...p", h2, v_hat)
        v_old = v_cur if self.v_prev is None else self.v_prev
        hx = np.einsum("...pw,...w->...p", h, x_hat)
        z = hx - v_cur * (self.y - self.z) / (self.noise + v_old)
        w = 1.0 / (self.noise + v_cur)
        sigma = 1.0 / np.einsum("...pw,...p->...w", h2, w)
        sigma = np.clip(sigma, VAR_FLOOR, VAR_CEIL)
        r = x_hat + sigma * np.einsum("...pw,...p->...w", h.conj(), (self.y - z) * w)
        tally("amp_linear", complex_mults=2 * phi * omega,
              real_mults=2 * phi * omega + 3 * phi + omega, complex_real=phi + omega)
        _check_finite("AMP", self.t, r, sigma)
        self.z, self.v_prev = z, v_cur
        return r, sigma


@dataclass
class MpOutput:
    x_hat: np.ndarray
    var: np.ndarray
    probs: np.ndarray
    trace: list = field(default_factory=list)


def amp(h, y, noise_var, alphabet, prior, iterations: int = DEFAULT_ITERATIONS,
        damping: float = AMP_DAMPING, estimator=None, record: bool = False,
        v_init: float | None = None) -> MpOutput:
    """Run AMP; ``estimator(r, Sigma) -> probs`` replaces the Bayesian denoiser.

    ``damping = 0`` gives the plain recursion. ``v_init`` defaults to the
    prior variance of one entry.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("AMP damping must lie in [0, 1)")
    h = np.asarray(h)
    omega = h.shape[-1]
    prior = np.asarray(prior, dtype=float)
    pa_var = float(prior @ np.abs(alphabet) ** 2)
    stage = AmpLinearStage(h, y, noise_var)
    x_hat = np.zeros(h.shape[:-2] + (omega,), dtype=complex)
    v_hat = np.full(h.shape[:-2] + (omega,), pa_var if v_init is None else v_init)
    trace = []
    probs = None
    for t in range(1, iterations + 1):
        r, sigma = stage.step(x_hat, v_hat)
        if estimator is None:
            probs = denoise(r, sigma, alphabet, prior)[0]
        else:
            probs = estimator(r, sigma)
        tally("amp_denoise", complex_real=omega * len(alphabet), real_mults=3 * omega * len(alphabet))
        x_new, v_new = moments(probs, alphabet)
        x_hat = (1 - damping) * x_new + damping * x_hat
        v_hat = np.maximum((1 - damping) * v_new + damping * v_hat, VAR_FLOOR)
        if record:
            resid = np.linalg.norm(stage.y - np.einsum("...pw,...w->...p", h, x_hat))
            trace.append({"iteration": t, "residual": float(resid),
                          "mean_var": float(np.mean(v_hat)), "mean_sigma": float(np.mean(sigma))})
    return MpOutput(x_hat, v_hat, probs, trace)


def amp_detect(y, model: EquivalentGroupModel, iterations: int = DEFAULT_ITERATIONS,
               damping: float = AMP_DAMPING, record: bool = False) -> DetectionResult:
    out = amp(model.h_bar, y, model.noise_var, model.alphabet, model.prior, iterations,
              damping, record=record)
    return DetectionResult(bits_from_probs(out.probs, model), out.x_hat, out.probs,
                           info={"trace": out.trace, "var": out.var})


# --------------------------------------------------------------------------
# EP

class EpState:
    """Gaussian site parameters ``(V, eta)`` and the moment-matching update."""

    def __init__(self, h, y, noise_var, alphabet, prior, damping: float = EP_DAMPING):
        h = np.asarray(h)
        self.alphabet = np.asarray(alphabet)
        self.prior = np.asarray(prior, dtype=float)
        self.damping = damping
        noise = np.asarray(noise_var, dtype=float)
        self.inv_noise = (1.0 / noise)[..., None]
        hh = np.swapaxes(h.conj(), -1, -2)
        phi, omega = h.shape[-2:]
        self.gram_scaled = (hh @ h) * self.inv_noise[..., None]
        self.mf_scaled = np.einsum("...wp,...p->...w", hh, np.asarray(y)) * self.inv_noise
        tally("ep_gram", complex_mults=gram_cost(phi, omega))
        tally("ep_matched_filter", complex_mults=phi * omega)
        es = float(self.prior @ np.abs(self.alphabet) ** 2) / float(self.prior[1:].sum())
        # sites start at the unconditional per-entry precision 1/Es
        self.V = np.full(h.shape[:-2] + (omega,), 1.0 / es)
        self.eta = np.zeros(h.shape[:-2] + (omega,), dtype=complex)
        self.omega = omega
        self.t = 0
        self.reverted = 0

    def observe(self):
        """Cavity (extrinsic) mean and variance ``(m_o, v_o)`` for every entry."""
        self.t += 1
        omega = self.omega
        prec = self.gram_scaled.copy()
        idx = np.arange(omega)
        prec[..., idx, idx] += self.V
        try:
            cov = np.linalg.inv(prec)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"EP covariance inversion failed at iteration {self.t} "
                               f"(condition ~{np.linalg.cond(prec).max():.2e})") from exc
        mu = np.einsum("...wk,...k->...w", cov, self.mf_scaled + self.eta)
        tally("ep_inverse", complex_mults=inverse_cost(omega))
        tally("ep_mean", complex_mults=omega * omega)
        s = np.maximum(np.real(cov[..., idx, idx]), VAR_FLOOR)
        denom = 1.0 - s * self.V
        clamp = denom <= VAR_FLOOR
        v_o = np.where(clamp, VAR_CEIL, s / np.where(clamp, 1.0, denom))
        m_o = np.where(clamp, mu, v_o * (mu / s - self.eta))
        tally("ep_cavity", real_mults=3 * omega, complex_real=2 * omega)
        _check_finite("EP", self.t, m_o, v_o)
        return m_o, v_o

    def update(self, probs, m_o, v_o):
        """Moment-match against ``probs`` and refresh the damped site parameters."""
        m_hat, v = moments(probs, self.alphabet)
        v = np.maximum(v, VAR_FLOOR)
        v_new = 1.0 / v - 1.0 / v_o
        eta_new = m_hat / v - m_o / v_o
        bad = v_new <= 0
        self.reverted += int(np.count_nonzero(bad))
        v_new = np.where(bad, self.V, v_new)
        eta_new = np.where(bad, self.eta, eta_new)
        e = self.damping
        self.V = (1 - e) * v_new + e * self.V
        self.eta = (1 - e) * eta_new + e * self.eta
        tally("ep_update", real_mults=6 * self.omega, complex_real=4 * self.omega)
        return m_hat, v


def ep(h, y, noise_var, alphabet, prior, iterations: int = DEFAULT_ITERATIONS,
       damping: float = EP_DAMPING, estimator=None, record: bool = False) -> MpOutput:
    """Run EP; ``estimator(m_o, v_o) -> probs`` replaces the Bayesian denoiser."""
    state = EpState(h, y, noise_var, alphabet, prior, damping)
    trace = []
    probs = m_hat = v = None
    for t in range(1, iterations + 1):
        m_o, v_o = state.observe()
        if estimator is None:
            probs = denoise(m_o, v_o, state.alphabet, state.prior)[0]
        else:
            probs = estimator(m_o, v_o)
        tally("ep_denoise", complex_real=state.omega * len(alphabet),
              real_mults=3 * state.omega * len(alphabet))
        m_hat, v = state.update(probs, m_o, v_o)
        if record:
            trace.append({"iteration": t, "mean_site_precision": float(np.mean(state.V)),
                          "mean_cavity_var": float(np.mean(v_o)), "mean_var": float(np.mean(v)),
                          "reverted": state.reverted})
    return MpOutput(m_hat, v, probs, trace)


def ep_detect(y, model: EquivalentGroupModel, iterations: int = DEFAULT_ITERATIONS,
              damping: float = EP_DAMPING, record: bool = False) -> DetectionResult:
    out = ep(model.h_bar, y, model.noise_var, model.alphabet, model.prior, iterations, damping,
             record=record)
    return DetectionResult(bits_from_probs(out.probs, model), out.x_hat, out.probs,
                           info={"trace": out.trace, "var": out.var})


def write_trace(trace: list, path) -> None:
    """Dump per-iteration diagnostics as CSV."""
    if not trace:
        raise ValueError("empty trace")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(trace[0]))
        w.writeheader()
        w.writerows(trace)
