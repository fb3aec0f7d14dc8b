import csv
import json

import numpy as np
import pytest

from sfim import cli, sim
from sfim.config import SystemConfig
from sfim.detection import DetectionResult
from sfim.frontend import gen_measurement
from sfim.gnn.checkpoint import save_params
from sfim.gnn.detectors import init_params
from sfim.sim import SchemeError, SchemeSpec

TINY = SystemConfig(users=1, tx_antennas=2, active_tx=1, vd_subcarriers=2, active_sub=1,
                    fd_subcarriers=2, rx_antennas=2)


def spec(**kw):
    base = dict(name="tiny", system=TINY, detectors=["ml", "mmse", "amp", "ep"],
                snr_db=[0.0, 10.0], min_errors=20, max_trials=200, seed=3)
    base.update(kw)
    return SchemeSpec(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_spec_validation():
    with pytest.raises(SchemeError):
        spec(detectors=["sphere"])
    with pytest.raises(SchemeError):
        spec(snr_db=[2.0, 2.0])
    with pytest.raises(SchemeError):
        spec(ka_grid=[2])


def test_packaged_schemes_load():
    names = sim.packaged_schemes()
    assert {"scheme1.yaml", "scheme5.yaml", "scheme1_reduced.yaml"} <= set(names)
    for n in names:
        s = SchemeSpec.load(n[:-5])
        assert s.snr_db == sorted(s.snr_db)
    s1 = SchemeSpec.load("scheme1").system
    assert (s1.U, s1.Nt, s1.Na, s1.Nr, s1.Nv, s1.Nf, s1.K, s1.L) == (4, 4, 2, 16, 4, 2, 2, 2)
    with pytest.raises(SchemeError):
        SchemeSpec.load("no_such_scheme")


def test_spec_yaml_roundtrip(tmp_path):
    import yaml
    s = spec(checkpoints={"amp_gnn": "ck/a.ckpt"})
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(s.to_dict()))
    back = SchemeSpec.load(p)
    assert back.system == s.system and back.snr_db == s.snr_db
    assert back.checkpoints["amp_gnn"] == str(tmp_path / "ck/a.ckpt")


def test_dry_run_writes_header_only(tmp_path):
    sim.run_sweep(spec(max_trials=0), tmp_path)
    text = (tmp_path / "tiny_sweep.csv").read_text().splitlines()
    assert text == [",".join(sim.SWEEP_COLUMNS)]
    manifest = json.loads((tmp_path / "tiny_sweep.manifest.json").read_text())
    assert manifest["spec"]["seed"] == 3 and manifest["outputs"] == ["tiny_sweep.csv"]
    assert "code_version" in manifest


def strip_time(rows):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]


def test_rerun_from_manifest_is_identical(tmp_path):
    cells = sim.run_sweep(spec(), tmp_path / "a")
    for c in cells:
        assert c.errors >= 20 or c.trials == 200
        assert c.stop in ("min_errors", "max_trials")
    again = SchemeSpec.load(tmp_path / "a" / "tiny_sweep.manifest.json")
    sim.run_sweep(again, tmp_path / "b")
    a = read_rows(tmp_path / "a" / "tiny_sweep.csv")
    b = read_rows(tmp_path / "b" / "tiny_sweep.csv")
    assert strip_time(a) == strip_time(b)
    assert len(a) == 8


def test_workers_do_not_change_results(tmp_path):
    s = spec(detectors=["mmse", "amp"])
    one = sim.run_sweep(s, tmp_path / "a", workers=1)
    two = sim.run_sweep(s, tmp_path / "b", workers=2)
    assert [(c.errors, c.bits) for c in one] == [(c.errors, c.bits) for c in two]


def test_missing_checkpoint_and_infeasible_ml_are_recorded(tmp_path):
    s = spec(system=SystemConfig(), detectors=["ml", "amp_gnn"], snr_db=[10.0], max_trials=1)
    cells = sim.run_sweep(s, tmp_path)
    assert [c.stop for c in cells] == ["error", "error"]
    rows = read_rows(tmp_path / "tiny_sweep.csv")
    assert "cap" in rows[0]["note"] and "checkpoint" in rows[1]["note"]


def test_ml_noiseless_point_has_zero_ber():
    c = sim.run_cell(spec(max_trials=50), "ml", 300.0, 0)
    assert c.errors == 0 and c.bits == 50 * TINY.bits_per_group and c.stop == "max_trials"


def test_coin_flip_detector_has_half_ber():
    rng_guess = np.random.default_rng(0)

    def guess(y, model):
        bits = [rng_guess.integers(0, 2, model.cfg.bits_per_group) for _ in range(model.cfg.U)]
        return DetectionResult(bits, np.zeros(model.omega))

    A = gen_measurement(0, TINY.Nf, TINY.Nv)
    total = sim.BerCount(0, 0)
    for t in range(4000):
        total = total + sim.run_trial(guess, TINY, A, 5.0, sim.trial_rng(0, 0, t))
    lo, hi = sim.normal_ci(total.errors, total.bits)
    assert lo < 0.5 < hi


def test_ci_width_shrinks_with_bits():
    w1 = np.subtract(*sim.normal_ci(100, 1000)[::-1])
    w4 = np.subtract(*sim.normal_ci(400, 4000)[::-1])
    assert w1 / w4 == pytest.approx(2.0, rel=1e-12)
    assert sim.normal_ci(0, 10) == (0.0, 0.0)


def test_vary_users_all_active_matches_sweep(tmp_path):
    s = spec(system=TINY.replace(users=2), detectors=["mmse"], snr_db=[5.0], ka_grid=[1, 2],
             vary_snr_db=5.0)
    sweep = sim.run_sweep(s, tmp_path)
    vary = sim.run_varying_users(s, tmp_path)
    assert [c.active_users for c in vary] == [1, 2]
    assert (vary[1].errors, vary[1].bits) == (sweep[0].errors, sweep[0].bits)
    rows = read_rows(tmp_path / "tiny_vary_users.csv")
    assert list(rows[0]) == sim.VARY_COLUMNS


def test_complexity_scaling_and_monotone_in_iterations():
    base = SystemConfig(users=2, rx_antennas=8)
    a1, _ = sim.measure_multiplications("amp", base)
    a2, _ = sim.measure_multiplications("amp", base.replace(rx_antennas=16))
    assert a2 / a1 == pytest.approx(2.0, rel=0.1)
    ratios = []
    for u in (1, 2, 4):
        cfg = SystemConfig(users=u, rx_antennas=512)
        e, _ = sim.measure_multiplications("ep", cfg)
        a, _ = sim.measure_multiplications("amp", cfg)
        ratios.append(e / a)
    # EP/AMP grows roughly in proportion to Omega once Phi dominates the
    # per-iteration Omega^3 inversion
    assert ratios[1] / ratios[0] == pytest.approx(2.0, rel=0.3)
    assert ratios[2] / ratios[1] == pytest.approx(2.0, rel=0.3)
    counts = []
    for T in (1, 2, 5):
        s = SchemeSpec("t", base, ["ep"], [10.0], iterations=T)
        counts.append(sim.measure_multiplications("ep", base, s)[0])
    assert counts == sorted(counts) and counts[0] > 0


def test_count_complexity_report():
    s = SchemeSpec("c", SystemConfig(users=3, rx_antennas=8), ["ml", "mmse", "amp", "gnn_mmse"],
                   [10.0])
    r = sim.count_complexity(s)
    assert r.counts["ml"] is None
    assert all(r.counts[d] > 0 for d in ("mmse", "amp", "gnn_mmse"))
    assert r.orders["amp"] == "O(Omega Phi)"
    assert r.reference["mmse"] == 4.31e6


def test_plot_data_series(tmp_path):
    rows = [
        dict(scheme="s", detector=d, snr_db=x, bits=100, errors=5, ber=0.05, ci_low=0.01,
             ci_high=0.09, wall_time=0, trials=1, stop="min_errors", note="")
        for d in ("mmse", "amp", "ep") for x in (4.0, 0.0, 2.0)]
    rows.append(dict(rows[0], detector="ml", stop="error", bits=0, errors=0))
    p = tmp_path / "r.csv"
    sim._write_csv(p, sim.SWEEP_COLUMNS, rows)
    files = sim.emit_plot_data([p], tmp_path / "plots")
    assert sorted(f.name for f in files) == ["s_vs_snr_amp.csv", "s_vs_snr_ep.csv",
                                             "s_vs_snr_mmse.csv"]
    xs = [float(r["snr_db"]) for r in read_rows(files[0])]
    assert xs == [0.0, 2.0, 4.0]


# ---------------------------------------------------------------- CLI

def write_spec(tmp_path, **kw):
    import yaml
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(spec(**kw).to_dict()))
    return p


def test_cli_sweep_and_plot(tmp_path):
    p = write_spec(tmp_path, detectors=["mmse", "amp"])
    out = tmp_path / "out"
    assert cli.main(["-q", "sweep", "--scheme", str(p), "--out", str(out), "--max-trials", "5",
                     "--min-errors", "1000", "--seed", "9"]) == 0
    rows = read_rows(out / "tiny_sweep.csv")
    assert {r["trials"] for r in rows} == {"5"}
    assert json.loads((out / "tiny_sweep.manifest.json").read_text())["seed"] == 9
    assert cli.main(["-q", "plot-data", str(out / "tiny_sweep.csv"), "--out",
                     str(tmp_path / "pl")]) == 0
    assert len(list((tmp_path / "pl").iterdir())) == 2


def test_cli_vary_users_and_complexity(tmp_path):
    p = write_spec(tmp_path, system=TINY.replace(users=2), detectors=["mmse"])
    out = tmp_path / "out"
    assert cli.main(["-q", "vary-users", "--scheme", str(p), "--out", str(out), "--ka", "1,2",
                     "--snr", "3", "--max-trials", "3"]) == 0
    assert len(read_rows(out / "tiny_vary_users.csv")) == 2
    assert cli.main(["-q", "complexity", "--scheme", str(p), "--out", str(out)]) == 0
    rep = json.loads((out / "tiny_complexity.json").read_text())
    assert rep["counts"]["mmse"] > 0


def test_cli_checkpoint_variant_from_header(tmp_path):
    ck = tmp_path / "anything.ckpt"
    save_params(init_params("gepnet", 0, nu=4, nh1=8, nh2=6), ck)
    p = write_spec(tmp_path, detectors=["gepnet"])
    out = tmp_path / "out"
    assert cli.main(["-q", "sweep", "--scheme", str(p), "--out", str(out), "--max-trials", "2",
                     "--checkpoint", str(ck)]) == 0
    row = read_rows(out / "tiny_sweep.csv")[0]
    assert row["stop"] == "max_trials" and row["trials"] == "2"


def test_cli_train(tmp_path):
    p = write_spec(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["-q", "train", "--scheme", str(p), "--variant", "amp_gnn", "--out", str(out),
                     "--epochs", "1", "--samples", "8", "--batch", "4"]) == 0
    assert (out / "tiny_amp_gnn.ckpt").exists()
    assert len(read_rows(out / "tiny_amp_gnn_train.csv")) == 1


def test_cli_errors_exit_2(tmp_path):
    assert cli.main(["-q", "sweep", "--scheme", str(tmp_path / "missing.yaml")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
