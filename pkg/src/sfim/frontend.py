"""CS measurement matrix, VD->FD compression and canonical vector orderings.

Orderings used everywhere in the package:

* VD vector (length ``Nt*Nv*U``): user-major, then VD subcarrier, TA innermost.
* FD vector (length ``Nt*Nf*U``): user-major, then FD subcarrier, TA innermost.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag

from .codec import SfGroupSymbol
from .config import ConfigError, SystemConfig

MAGIC = b"SFIMAMAT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIQ")


@dataclass(frozen=True)
class MeasurementMatrix:
    a: np.ndarray
    seed: int

    @property
    def shape(self):
        return self.a.shape

    def save(self, path) -> None:
        nf, nv = self.a.shape
        ri = np.empty((nf, nv, 2), dtype="<f8")
        ri[..., 0] = self.a.real
        ri[..., 1] = self.a.imag
        Path(path).write_bytes(_HEADER.pack(MAGIC, FORMAT_VERSION, nf, nv, self.seed) + ri.tobytes())

    @classmethod
    def load(cls, path) -> "MeasurementMatrix":
        raw = Path(path).read_bytes()
        magic, version, nf, nv, seed = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a measurement-matrix file")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != nf * nv * 2:
            raise ValueError(f"{path}: truncated payload")
        ri = body.reshape(nf, nv, 2)
        return cls(ri[..., 0] + 1j * ri[..., 1], seed)


def gen_measurement(seed: int, nf: int, nv: int) -> MeasurementMatrix:
    """Seeded complex Gaussian matrix with unit-norm columns."""
    if nf > nv:
        raise ConfigError(f"measurement matrix must compress: Nf={nf} > Nv={nv}")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((nf, nv)) + 1j * rng.standard_normal((nf, nv))
    a /= np.linalg.norm(a, axis=0, keepdims=True)
    a.setflags(write=False)
    return MeasurementMatrix(a, int(seed))


def compress_row(vd_row, A: MeasurementMatrix) -> np.ndarray:
    return A.a @ np.asarray(vd_row)


def compress_matrix(S, A: MeasurementMatrix) -> np.ndarray:
    """Row-wise compression of an ``Nt x Nv`` SF matrix to ``Nt x Nf``."""
    return np.asarray(S) @ A.a.T


def expanded_measurement(A: MeasurementMatrix, cfg: SystemConfig) -> np.ndarray:
    """Block-diagonal ``(Nt*Nf*U) x (Nt*Nv*U)`` operator acting on VD vectors."""
    if A.a.shape != (cfg.Nf, cfg.Nv):
        raise ConfigError(f"measurement matrix shape {A.a.shape} != ({cfg.Nf}, {cfg.Nv})")
    per_user = np.kron(A.a, np.eye(cfg.Nt))
    return block_diag(*([per_user] * cfg.U))


def flatten_block(S) -> np.ndarray:
    """One user's ``Nt x Nv`` matrix as a VD block (subcarrier-major)."""
    return np.asarray(S).T.reshape(-1)


def unflatten_block(x, nt: int) -> np.ndarray:
    return np.asarray(x).reshape(-1, nt).T.copy()


def flatten_groups(symbols, cfg: SystemConfig) -> np.ndarray:
    if len(symbols) != cfg.U:
        raise ValueError(f"expected {cfg.U} user symbols, got {len(symbols)}")
    return np.concatenate([
        flatten_block(s.matrix if isinstance(s, SfGroupSymbol) else s) for s in symbols
    ])


def unflatten(x, cfg: SystemConfig) -> list:
    x = np.asarray(x)
    if x.size != cfg.omega:
        raise ValueError(f"expected a VD vector of length {cfg.omega}, got {x.size}")
    return [unflatten_block(b, cfg.Nt) for b in x.reshape(cfg.U, -1)]
