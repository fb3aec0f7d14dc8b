"""Exhaustive ML and linear MMSE detection for one subcarrier group."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernels
from .channel import EquivalentGroupModel
from .codec import codebook, int_to_bits
from .complexity import cholesky_cost, gram_cost, tally
from .config import SystemConfig
from .detection import DetectionResult, NumericError, bits_from_estimate

DEFAULT_ML_CAP = 2 ** 24
MAX_CONDITION = 1e14


class InfeasibleError(RuntimeError):
    """The exhaustive search space exceeds the configured cap."""


@lru_cache(maxsize=8)
def _user_codebook(cfg: SystemConfig) -> np.ndarray:
    return codebook(cfg.replace(users=1))


def ml_search_size(cfg: SystemConfig) -> int:
    return (2 ** cfg.bits_per_group) ** cfg.U


def ml_detect(y, model: EquivalentGroupModel, cap: int = DEFAULT_ML_CAP) -> DetectionResult:
    """Joint minimum-distance search over all users' legal codewords."""
    cfg = model.cfg
    size = ml_search_size(cfg)
    if size > cap:
        raise InfeasibleError(
            f"ML search space 2^{cfg.bits_per_group * cfg.U} = {size:.3g} exceeds cap {cap:.3g}")
    cb = _user_codebook(cfg)
    M = cb.shape[0]
    contribs = np.stack([cb @ model.h_bar[:, model.user_slice(u)].T for u in range(cfg.U)])
    tally("ml_codebook", complex_mults=cfg.U * M * cfg.omega_user * model.phi)
    idx, metric = kernels.ml_search(np.asarray(y), contribs)
    # one complex subtraction-free residual per leaf: |.|^2 costs 2 real mults per entry
    tally("ml_search", real_mults=2 * size * model.phi)
    x_hat = np.concatenate([cb[int(k)] for k in idx])
    bits = [int_to_bits(int(k), cfg.bits_per_group) for k in idx]
    return DetectionResult(bits, x_hat, metric=float(metric))


def lmmse_estimate(h_bar, y, reg: float):
    """(H^H H + reg I)^{-1} H^H y by Cholesky factorization."""
    omega = h_bar.shape[1]
    gram = h_bar.conj().T @ h_bar
    rhs = h_bar.conj().T @ y
    tally("mmse_gram", complex_mults=gram_cost(h_bar.shape[0], omega))
    tally("mmse_matched_filter", complex_mults=omega * h_bar.shape[0])
    a = gram + reg * np.eye(omega)
    try:
        factor = cho_factor(a, lower=True)
    except LinAlgError as exc:
        raise NumericError(f"regularized Gram matrix is not positive definite: {exc}") from exc
    d = np.abs(np.diag(factor[0]))
    cond_est = (d.max() / d.min()) ** 2 if d.min() > 0 else np.inf
    if cond_est > MAX_CONDITION:
        raise NumericError(f"regularized Gram matrix too ill-conditioned (~{cond_est:.2e})")
    tally("mmse_cholesky", complex_mults=cholesky_cost(omega))
    tally("mmse_solve", complex_mults=omega * omega)
    return cho_solve(factor, rhs)


def mmse_detect(y, model: EquivalentGroupModel) -> DetectionResult:
    """LMMSE estimate with regularization sigma^2 / E|x_i|^2, then per-user demapping."""
    reg = model.noise_var / model.prior_var
    x_hat = lmmse_estimate(model.h_bar, np.asarray(y), reg)
    return DetectionResult(bits_from_estimate(x_hat, model), x_hat, info={"reg": reg})
