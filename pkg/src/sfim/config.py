"""System configuration for one CS-SFIM uplink scheme."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from math import comb, floor, log2


class ConfigError(ValueError):
    """Raised for dimension or modulation parameters that cannot be realized."""


def floor_log2_comb(n: int, k: int) -> int:
    return int(floor(log2(comb(n, k))))


@dataclass(frozen=True)
class SystemConfig:
    users: int = 4
    tx_antennas: int = 4
    active_tx: int = 2
    rx_antennas: int = 16
    vd_subcarriers: int = 4
    fd_subcarriers: int = 2
    active_sub: int = 2
    apm_order: int = 2
    groups: int = 1
    cp_len: int = 0
    active_users: int | None = None
    lut_kind: str = "paper"

    def __post_init__(self):
        if self.active_users is None:
            object.__setattr__(self, "active_users", self.users)
        for name in ("users", "tx_antennas", "rx_antennas", "vd_subcarriers",
                     "fd_subcarriers", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 1 <= self.active_tx <= self.tx_antennas:
            raise ConfigError("need 1 <= active_tx <= tx_antennas")
        if not 1 <= self.active_sub <= self.vd_subcarriers:
            raise ConfigError("need 1 <= active_sub <= vd_subcarriers")
        if self.fd_subcarriers > self.vd_subcarriers:
            raise ConfigError("compression cannot expand: fd_subcarriers > vd_subcarriers")
        L = self.apm_order
        if L < 2 or L & (L - 1):
            raise ConfigError(f"apm_order must be a power of two >= 2, got {L}")
        if L > 2 and int(log2(L)) % 2:
            raise ConfigError(f"only square QAM is supported, got order {L}")
        if self.cp_len < 0:
            raise ConfigError("cp_len must be nonnegative")
        if not 1 <= self.active_users <= self.users:
            raise ConfigError("need 1 <= active_users <= users")
        if self.lut_kind not in ("lex", "paper"):
            raise ConfigError(f"unknown lut_kind {self.lut_kind!r}")
        if self.bits_per_group <= 0:
            raise ConfigError("configuration carries no information bits")

    # Short aliases matching the usual notation.
    U = property(lambda self: self.users)
    Nt = property(lambda self: self.tx_antennas)
    Na = property(lambda self: self.active_tx)
    Nr = property(lambda self: self.rx_antennas)
    Nv = property(lambda self: self.vd_subcarriers)
    Nf = property(lambda self: self.fd_subcarriers)
    K = property(lambda self: self.active_sub)
    L = property(lambda self: self.apm_order)
    G = property(lambda self: self.groups)
    Ka = property(lambda self: self.active_users)

    @property
    def sub_bits(self) -> int:
        return floor_log2_comb(self.Nv, self.K)

    @property
    def ant_bits(self) -> int:
        """Antenna-index bits for one active subcarrier."""
        return floor_log2_comb(self.Nt, self.Na)

    @property
    def sym_bits(self) -> int:
        return int(log2(self.L))

    @property
    def bits_per_group(self) -> int:
        return self.sub_bits + self.K * self.ant_bits + self.Na * self.K * self.sym_bits

    @property
    def total_subcarriers(self) -> int:
        return self.Nf * self.G

    @property
    def omega_user(self) -> int:
        return self.Nt * self.Nv

    @property
    def omega(self) -> int:
        return self.Nt * self.Nv * self.U

    @property
    def phi(self) -> int:
        return self.Nr * self.Nf

    @property
    def activity_ratio(self) -> float:
        """Probability that a VD entry is nonzero."""
        return self.Na * self.K / (self.Nt * self.Nv)

    def replace(self, **changes) -> "SystemConfig":
        if "users" in changes and "active_users" not in changes:
            changes["active_users"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown SystemConfig fields: {sorted(unknown)}")
        return cls(**d)
