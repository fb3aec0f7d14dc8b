"""Bit <-> sparse space-frequency matrix mapping.

Each user's bits for one subcarrier group are split three ways: subcarrier
indices (b1), per-subcarrier antenna indices (b2) and APM symbols (b3). The
resulting ``Nt x Nv`` matrix has exactly ``Na*K`` nonzeros.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from math import comb, floor, log2

import numpy as np

from .config import ConfigError, SystemConfig

# Cyclic activation pattern of the 4-choose-2 look-up table.
_PAPER_LUTS = {
    (4, 2): ((1, 2), (2, 3), (3, 4), (1, 4)),
}


class DemapError(ValueError):
    """The matrix support is not a legal (b1, b2) pattern."""

    def __init__(self, message, nearest_subs=None, nearest_ants=None):
        super().__init__(message)
        self.nearest_subs = nearest_subs
        self.nearest_ants = nearest_ants


@dataclass(frozen=True)
class IndexLut:
    n: int
    k: int
    entries: tuple
    bit_width: int

    def masks(self) -> np.ndarray:
        """Boolean (len, n) membership table."""
        m = np.zeros((len(self.entries), self.n), dtype=bool)
        for row, combo in enumerate(self.entries):
            m[row, np.asarray(combo) - 1] = True
        return m

    def index_of(self, combo) -> int:
        try:
            return self.entries.index(tuple(combo))
        except ValueError:
            return -1

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "k": self.k, "bit_width": self.bit_width,
                           "entries": [list(e) for e in self.entries]})

    @classmethod
    def from_json(cls, text: str) -> "IndexLut":
        d = json.loads(text)
        return cls(d["n"], d["k"], tuple(tuple(e) for e in d["entries"]), d["bit_width"])


@lru_cache(maxsize=None)
def build_lut(n: int, k: int, kind: str = "lex") -> IndexLut:
    """Power-of-two prefix of the k-subsets of {1..n}.

    ``kind="paper"`` reproduces the cyclic 4-choose-2 table and falls back to
    lexicographic order for every other (n, k).
    """
    if not 1 <= k <= n:
        raise ConfigError(f"invalid index selection ({n}, {k})")
    if kind not in ("lex", "paper"):
        raise ConfigError(f"unknown LUT kind {kind!r}")
    width = int(floor(log2(comb(n, k))))
    if kind == "paper" and (n, k) in _PAPER_LUTS:
        entries = _PAPER_LUTS[(n, k)]
    else:
        entries = tuple(itertools.islice(
            itertools.combinations(range(1, n + 1), k), 2 ** width))
    return IndexLut(n, k, tuple(entries), width)


# --------------------------------------------------------------------------
# APM constellations

def _gray_pam(m_bits: int) -> np.ndarray:
    """PAM levels indexed by Gray-coded label."""
    M = 2 ** m_bits
    levels = np.empty(M)
    for label in range(M):
        # Gray decode: binary position on the amplitude axis
        pos, g = 0, label
        while g:
            pos ^= g
            g >>= 1
        levels[label] = 2 * pos - (M - 1)
    return levels


@lru_cache(maxsize=None)
def constellation(order: int) -> np.ndarray:
    """Unit-energy APM points indexed by their integer bit label (MSB first).

    BPSK maps bit 0 to -1 and bit 1 to +1; higher orders are Gray-mapped square
    QAM with the first half of the label on the in-phase axis.
    """
    if order == 2:
        pts = np.array([-1.0 + 0j, 1.0 + 0j])
    else:
        m = int(log2(order))
        if 2 ** m != order or m % 2:
            raise ConfigError(f"unsupported APM order {order}")
        pam = _gray_pam(m // 2)
        side = 2 ** (m // 2)
        labels = np.arange(order)
        pts = pam[labels // side] + 1j * pam[labels % side]
        pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return pts


def augmented_alphabet(order: int) -> np.ndarray:
    """{0} followed by the APM points; class index 0 is the inactive symbol."""
    return np.concatenate(([0j], constellation(order)))


def symbol_prior(cfg: SystemConfig) -> np.ndarray:
    pa = cfg.activity_ratio
    return np.concatenate(([1.0 - pa], np.full(cfg.L, pa / cfg.L)))


# --------------------------------------------------------------------------
# bit helpers

def bits_to_int(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


@dataclass(frozen=True)
class SfGroupSymbol:
    matrix: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    active_subs: tuple
    active_ants: tuple
    apm_order: int = 2

    @property
    def bits(self) -> np.ndarray:
        return np.concatenate((self.b1, self.b2, self.b3)).astype(np.uint8)

    @property
    def labels(self) -> np.ndarray:
        """Per-entry class index over the augmented alphabet, VD order (subcarrier, TA)."""
        return matrix_labels(self.matrix, self.apm_order)


def split_bits(bits, cfg: SystemConfig):
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size != cfg.bits_per_group:
        raise ValueError(f"expected {cfg.bits_per_group} bits, got {bits.size}")
    n1 = cfg.sub_bits
    n2 = cfg.K * cfg.ant_bits
    return bits[:n1], bits[n1:n1 + n2], bits[n1 + n2:]


def modulate_group(bits, cfg: SystemConfig) -> SfGroupSymbol:
    b1, b2, b3 = split_bits(bits, cfg)
    sub_lut = build_lut(cfg.Nv, cfg.K, cfg.lut_kind)
    ant_lut = build_lut(cfg.Nt, cfg.Na, cfg.lut_kind)
    pts = constellation(cfg.L)
    subs = sub_lut.entries[bits_to_int(b1)]
    w, m = cfg.ant_bits, cfg.sym_bits
    S = np.zeros((cfg.Nt, cfg.Nv), dtype=complex)
    ants = []
    pos = 0
    for k, v in enumerate(subs):
        ant = ant_lut.entries[bits_to_int(b2[k * w:(k + 1) * w])]
        ants.append(ant)
        for tau in ant:
            S[tau - 1, v - 1] = pts[bits_to_int(b3[pos * m:(pos + 1) * m])]
            pos += 1
    return SfGroupSymbol(S, b1, b2, b3, tuple(subs), tuple(ants), cfg.L)


def matrix_labels(S: np.ndarray, order: int) -> np.ndarray:
    """Nearest augmented-alphabet class per entry, flattened subcarrier-major."""
    alpha = augmented_alphabet(order)
    flat = np.asarray(S).T.reshape(-1)
    return np.argmin(np.abs(flat[:, None] - alpha[None, :]), axis=1)


def _nearest_support(S: np.ndarray, cfg: SystemConfig):
    energy = np.abs(S) ** 2
    sub_lut = build_lut(cfg.Nv, cfg.K, cfg.lut_kind)
    ant_lut = build_lut(cfg.Nt, cfg.Na, cfg.lut_kind)
    amask = ant_lut.masks().astype(float)
    per_sub = amask @ energy            # (n_ant_patterns, Nv)
    best_ant = per_sub.argmax(axis=0)
    best_val = per_sub.max(axis=0)
    scores = [sum(best_val[v - 1] for v in subs) for subs in sub_lut.entries]
    subs = sub_lut.entries[int(np.argmax(scores))]
    return subs, tuple(ant_lut.entries[best_ant[v - 1]] for v in subs)


def demap_group_hard(S, cfg: SystemConfig) -> np.ndarray:
    """Inverse of :func:`modulate_group` for a matrix on a legal support."""
    S = np.asarray(S)
    sub_lut = build_lut(cfg.Nv, cfg.K, cfg.lut_kind)
    ant_lut = build_lut(cfg.Nt, cfg.Na, cfg.lut_kind)
    pts = constellation(cfg.L)
    nz = S != 0

    def fail(msg):
        subs, ants = _nearest_support(S, cfg)
        raise DemapError(msg, subs, ants)

    subs = tuple(int(v) + 1 for v in np.flatnonzero(nz.any(axis=0)))
    i1 = sub_lut.index_of(subs)
    if i1 < 0:
        fail(f"subcarrier pattern {subs} is not in the look-up table")
    bits = [int_to_bits(i1, sub_lut.bit_width)]
    syms = []
    for v in subs:
        ants = tuple(int(t) + 1 for t in np.flatnonzero(nz[:, v - 1]))
        i2 = ant_lut.index_of(ants)
        if i2 < 0:
            fail(f"antenna pattern {ants} on subcarrier {v} is not in the look-up table")
        bits.append(int_to_bits(i2, ant_lut.bit_width))
        for tau in ants:
            label = int(np.argmin(np.abs(pts - S[tau - 1, v - 1])))
            syms.append(int_to_bits(label, cfg.sym_bits))
    return np.concatenate(bits + syms).astype(np.uint8)


def achievable_rate(cfg: SystemConfig) -> float:
    """Sum rate in bits/s/Hz over all users and subcarrier groups."""
    return cfg.U * cfg.G * cfg.bits_per_group / (cfg.total_subcarriers + cfg.cp_len)


@lru_cache(maxsize=32)
def codebook(cfg: SystemConfig) -> np.ndarray:
    """All legal per-user VD vectors, shape (2**bits_per_group, Nt*Nv).

    Row index equals the integer value of the bit vector (MSB first).
    """
    nb = cfg.bits_per_group
    if nb > 20:
        raise ConfigError(f"codebook of 2**{nb} entries is too large to tabulate")
    cb = np.empty((2 ** nb, cfg.omega_user), dtype=complex)
    for idx in range(2 ** nb):
        cb[idx] = modulate_group(int_to_bits(idx, nb), cfg).matrix.T.reshape(-1)
    cb.setflags(write=False)
    return cb
