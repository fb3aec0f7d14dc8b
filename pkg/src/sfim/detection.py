"""Common detector output and the soft-output-to-bits step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import EquivalentGroupModel
from .demapper import _LOG_FLOOR, distance_logp, project_legal_logp


class NumericError(ArithmeticError):
    """A linear-algebra or message-passing step produced unusable numbers."""


@dataclass
class DetectionResult:
    hard_bits: list | None
    x_hat: np.ndarray
    probs: np.ndarray | None = None
    metric: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def symbol_decisions(self) -> np.ndarray:
        """Per-entry argmax class (augmented alphabet index)."""
        if self.probs is None:
            raise ValueError("detector produced no posteriors")
        return np.argmax(self.probs, axis=-1)


def bits_from_probs(probs, model: EquivalentGroupModel) -> list | None:
    if model.cfg is None:
        return None
    cfg = model.cfg
    logp = np.log(np.maximum(np.asarray(probs), _LOG_FLOOR))
    bits, _ = project_legal_logp(logp.reshape(cfg.U, cfg.omega_user, -1), cfg)
    return list(bits)


def bits_from_estimate(x_hat, model: EquivalentGroupModel) -> list | None:
    if model.cfg is None:
        return None
    cfg = model.cfg
    logp = distance_logp(np.asarray(x_hat).reshape(cfg.U, cfg.omega_user), model.alphabet)
    bits, _ = project_legal_logp(logp, cfg)
    return list(bits)


def moments(probs, alphabet):
    """Mean and variance of categorical distributions over ``alphabet``."""
    mean = probs @ alphabet
    var = probs @ (np.abs(alphabet) ** 2) - np.abs(mean) ** 2
    return mean, np.maximum(var, 0.0)
