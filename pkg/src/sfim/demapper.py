"""Projection of per-entry soft information onto legal SF patterns, and BER.

For a fixed subcarrier pattern the log-score of a legal assignment is a sum
over subcarriers, and the antenna pattern / symbols of one active subcarrier
only enter that subcarrier's term. Maximizing each active subcarrier's term
independently and then comparing the subcarrier patterns is therefore exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import augmented_alphabet, build_lut, int_to_bits, modulate_group
from .config import SystemConfig

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class _Tables:
    sub_mask: np.ndarray      # (n_sub_patterns, Nv)
    ant_mask: np.ndarray      # (n_ant_patterns, Nt)
    sub_entries: tuple
    ant_entries: tuple


def _tables(cfg: SystemConfig) -> _Tables:
    sl = build_lut(cfg.Nv, cfg.K, cfg.lut_kind)
    al = build_lut(cfg.Nt, cfg.Na, cfg.lut_kind)
    return _Tables(sl.masks().astype(float), al.masks().astype(float), sl.entries, al.entries)


def project_legal_logp(logp, cfg: SystemConfig):
    """Best legal assignment for a batch of user blocks.

    ``logp`` has shape (B, Nt*Nv, L+1) in VD block order (subcarrier-major,
    TA innermost). Returns ``(bits, labels)`` with shapes (B, bits_per_group)
    and (B, Nt*Nv); labels index the augmented alphabet.
    """
    logp = np.asarray(logp, dtype=float)
    B = logp.shape[0]
    t = _tables(cfg)
    lp = logp.reshape(B, cfg.Nv, cfg.Nt, cfg.L + 1)
    zero = lp[..., 0]
    best = lp[..., 1:].max(axis=-1)
    best_q = lp[..., 1:].argmax(axis=-1)
    # score of each antenna pattern on each subcarrier, and of leaving it empty
    ant_score = best @ t.ant_mask.T + zero @ (1.0 - t.ant_mask).T    # (B, Nv, n_ant)
    ant_best = ant_score.argmax(axis=-1)
    ant_val = np.take_along_axis(ant_score, ant_best[..., None], axis=-1)[..., 0]
    empty = zero.sum(axis=-1)
    sub_score = ant_val @ t.sub_mask.T + empty @ (1.0 - t.sub_mask).T  # (B, n_sub)
    sub_best = sub_score.argmax(axis=-1)

    sub_w = build_lut(cfg.Nv, cfg.K, cfg.lut_kind).bit_width
    ant_w = cfg.ant_bits
    bits = np.empty((B, cfg.bits_per_group), dtype=np.uint8)
    labels = np.zeros((B, cfg.Nv, cfg.Nt), dtype=np.int64)
    for b in range(B):
        subs = t.sub_entries[sub_best[b]]
        parts = [int_to_bits(int(sub_best[b]), sub_w)]
        syms = []
        for v in subs:
            g = int(ant_best[b, v - 1])
            parts.append(int_to_bits(g, ant_w))
            for tau in t.ant_entries[g]:
                q = int(best_q[b, v - 1, tau - 1])
                labels[b, v - 1, tau - 1] = q + 1
                syms.append(int_to_bits(q, cfg.sym_bits))
        bits[b] = np.concatenate(parts + syms)
    return bits, labels.reshape(B, -1)


def project_legal(probs, cfg: SystemConfig):
    """Most probable legal pattern for one user's block of categorical posteriors.

    Returns the bit vector and the corresponding :class:`SfGroupSymbol`.
    """
    probs = np.asarray(probs, dtype=float)
    logp = np.log(np.maximum(probs, _LOG_FLOOR))
    bits, _ = project_legal_logp(logp[None], cfg)
    return bits[0], modulate_group(bits[0], cfg)


def distance_logp(x_hat, alphabet, tau: float = 1.0) -> np.ndarray:
    """Log pseudo-posteriors exp(-|x - a|^2 / tau), normalized per entry."""
    x_hat = np.asarray(x_hat)
    s = -np.abs(x_hat[..., None] - alphabet) ** 2 / tau
    return s - np.logaddexp.reduce(s, axis=-1, keepdims=True)


def hard_project(x_hat, cfg: SystemConfig, alphabet=None, tau: float = 1.0):
    """Minimum-distance legal pattern for a point estimate of one user's block."""
    alphabet = augmented_alphabet(cfg.L) if alphabet is None else alphabet
    bits, _ = project_legal_logp(distance_logp(x_hat, alphabet, tau)[None], cfg)
    return bits[0], modulate_group(bits[0], cfg)


def detect_active(probs, cfg: SystemConfig) -> bool:
    """Declare a user's block active when its nonzero mass reaches Na*K/2."""
    probs = np.asarray(probs)
    return float(np.sum(1.0 - probs[:, 0])) >= cfg.Na * cfg.K / 2


@dataclass(frozen=True)
class BerCount:
    errors: int
    bits: int

    @property
    def rate(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")

    def __add__(self, other: "BerCount") -> "BerCount":
        return BerCount(self.errors + other.errors, self.bits + other.bits)


def ber(tx_bits, rx_bits) -> BerCount:
    """Hamming distance over the supplied (active-user) bit streams."""
    if isinstance(tx_bits, np.ndarray) and tx_bits.ndim == 1:
        tx_bits, rx_bits = [tx_bits], [rx_bits]
    if len(tx_bits) != len(rx_bits):
        raise ValueError("number of bit streams differs")
    errors = bits = 0
    for t, r in zip(tx_bits, rx_bits):
        t, r = np.asarray(t), np.asarray(r)
        if t.shape != r.shape:
            raise ValueError(f"bit stream lengths differ: {t.shape} vs {r.shape}")
        errors += int(np.count_nonzero(t != r))
        bits += t.size
    return BerCount(errors, bits)
