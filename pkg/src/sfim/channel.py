"""Rayleigh channel draws and the per-group equivalent linear model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import augmented_alphabet, symbol_prior
from .config import SystemConfig
from .frontend import MeasurementMatrix, expanded_measurement


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray   # (Nr, U, Nc, Nt)
    seed: int | None = None


def draw_channel(seed, cfg: SystemConfig) -> ChannelRealization:
    """i.i.d. CN(0, 1) gains, independent across antennas, users and subcarriers."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (cfg.Nr, cfg.U, cfg.total_subcarriers, cfg.Nt)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return ChannelRealization(h, None if isinstance(seed, np.random.Generator) else seed)


def draw_activity(rng: np.random.Generator, users: int, active: int) -> np.ndarray:
    """Uniformly chosen set of ``active`` users out of ``users``."""
    rho = np.zeros(users, dtype=bool)
    rho[rng.choice(users, size=active, replace=False)] = True
    return rho


def noise_variance(snr_db: float, cfg: SystemConfig, es: float = 1.0) -> float:
    """sigma^2 such that E||H x||^2 / E||w||^2 equals the linear SNR.

    Counts the signal power of all ``U`` users; with user inactivity the
    per-receive-antenna SNR therefore drops by ``Ka/U``.
    """
    return cfg.activity_ratio * cfg.omega * es / (cfg.Nf * 10.0 ** (snr_db / 10.0))


@dataclass
class EquivalentGroupModel:
    """``y = h_bar @ x + w`` for one subcarrier group.

    ``alphabet`` is the augmented per-entry alphabet with the zero symbol
    first; ``prior`` holds its probabilities.
    """

    h_bar: np.ndarray
    noise_var: float
    alphabet: np.ndarray
    prior: np.ndarray
    rho: np.ndarray | None = None
    cfg: SystemConfig | None = None
    es: float = 1.0
    _gram: np.ndarray | None = field(default=None, repr=False)

    @property
    def omega(self) -> int:
        return self.h_bar.shape[1]

    @property
    def phi(self) -> int:
        return self.h_bar.shape[0]

    @property
    def prior_var(self) -> float:
        return float(np.sum(self.prior * np.abs(self.alphabet) ** 2)
                     - np.abs(np.sum(self.prior * self.alphabet)) ** 2)

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.h_bar.conj().T @ self.h_bar
        return self._gram

    def user_slice(self, u: int) -> slice:
        n = self.cfg.omega_user
        return slice(u * n, (u + 1) * n)

    def restrict(self, users) -> "EquivalentGroupModel":
        """Sub-model over the given users' columns only."""
        users = list(users)
        cols = np.concatenate([np.arange(self.omega)[self.user_slice(u)] for u in users]) \
            if users else np.zeros(0, dtype=int)
        cfg = self.cfg.replace(users=max(len(users), 1)) if users else None
        return EquivalentGroupModel(self.h_bar[:, cols], self.noise_var, self.alphabet,
                                    self.prior, np.ones(len(users), dtype=bool), cfg, self.es)

    def with_noise(self, noise_var: float) -> "EquivalentGroupModel":
        return EquivalentGroupModel(self.h_bar, noise_var, self.alphabet, self.prior,
                                    self.rho, self.cfg, self.es, self._gram)


def group_channel_matrix(ch: ChannelRealization, g: int, cfg: SystemConfig) -> np.ndarray:
    """Block-diagonal-per-subcarrier matrix ``H_g`` of shape (Nr*Nf, Nt*Nf*U)."""
    nf, nt = cfg.Nf, cfg.Nt
    hg = ch.h[:, :, g * nf:(g + 1) * nf, :]          # (Nr, U, Nf, Nt)
    H = np.zeros((cfg.Nr, nf, cfg.U, nf, nt), dtype=complex)
    for n in range(nf):
        H[:, n, :, n, :] = hg[:, :, n, :]
    return H.reshape(cfg.Nr * nf, cfg.U * nf * nt)


def build_group_model(ch: ChannelRealization, A: MeasurementMatrix, g: int, snr_db: float,
                      rho, cfg: SystemConfig, es: float = 1.0) -> EquivalentGroupModel:
    """Equivalent model of subcarrier group ``g`` (0-based)."""
    if not 0 <= g < cfg.G:
        raise IndexError(f"group index {g} outside 0..{cfg.G - 1}")
    rho = np.ones(cfg.U, dtype=bool) if rho is None else np.asarray(rho, dtype=bool)
    h_bar = group_channel_matrix(ch, g, cfg) @ expanded_measurement(A, cfg)
    h_bar = h_bar * np.repeat(rho, cfg.omega_user)[None, :]
    return EquivalentGroupModel(h_bar, noise_variance(snr_db, cfg, es),
                                augmented_alphabet(cfg.L), symbol_prior(cfg), rho, cfg, es)


def transmit(model: EquivalentGroupModel, x, noise_seed) -> np.ndarray:
    rng = noise_seed if isinstance(noise_seed, np.random.Generator) \
        else np.random.default_rng(noise_seed)
    x = np.asarray(x)
    phi = model.phi
    w = (rng.standard_normal(phi) + 1j * rng.standard_normal(phi)) * np.sqrt(model.noise_var / 2)
    return model.h_bar @ x + w
