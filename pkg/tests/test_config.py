import pytest

from sfim.config import ConfigError, SystemConfig, floor_log2_comb


def test_bits_per_group_formula():
    c = SystemConfig()
    assert (c.sub_bits, c.ant_bits, c.sym_bits) == (2, 2, 1)
    assert c.bits_per_group == 2 + 2 * 2 + 4 * 1 == 10
    assert SystemConfig(apm_order=16).bits_per_group == 2 + 4 + 16
    assert floor_log2_comb(8, 3) == 5       # C(8,3) = 56
    assert (c.omega, c.phi, c.omega_user) == (64, 32, 16)
    assert c.activity_ratio == 0.25


@pytest.mark.parametrize("kw", [
    dict(users=0), dict(active_tx=5), dict(active_sub=0), dict(fd_subcarriers=5),
    dict(apm_order=3), dict(apm_order=8), dict(cp_len=-1), dict(active_users=5),
    dict(lut_kind="gray"),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        SystemConfig(**kw)


def test_dict_roundtrip_and_replace():
    c = SystemConfig(users=3, active_users=2)
    assert SystemConfig.from_dict(c.to_dict()) == c
    assert c.replace(users=2).Ka == 2
    with pytest.raises(ConfigError):
        SystemConfig.from_dict({"users": 2, "bogus": 1})
