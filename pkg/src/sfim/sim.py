"""Monte-Carlo BER engine, complexity reports and result files."""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import classical, mp
from ._accel import backend
from .channel import build_group_model, draw_activity, draw_channel, transmit
from .codec import modulate_group
from .complexity import counting
from .config import SystemConfig
from .demapper import BerCount, ber
from .frontend import flatten_groups, gen_measurement
from .gnn.checkpoint import load_params
from .gnn.detectors import (GnnDetectorConfig, amp_gnn_detect, gepnet_detect,
                            gnn_mmse_detect)
from .training import DEFAULT_MEASUREMENT_SEED

CLASSICAL = ("ml", "mmse", "amp", "ep")
GNN = ("gnn_mmse", "amp_gnn", "gepnet")
DETECTORS = CLASSICAL + GNN
SWEEP_COLUMNS = ["scheme", "detector", "snr_db", "bits", "errors", "ber", "ci_low", "ci_high",
                 "wall_time", "trials", "stop", "note"]
VARY_COLUMNS = ["scheme", "detector", "active_users"] + SWEEP_COLUMNS[2:]
COMPLEXITY_ORDERS = {
    "ml": "O(2^(U*bits) * Phi)", "mmse": "O(Omega^2 Phi + Omega^3)", "amp": "O(Omega Phi)",
    "ep": "O(Omega^2 Phi)", "gnn_mmse": "O(Omega^2 + Omega^2 F^2)",
    "amp_gnn": "O(Omega Phi + Omega^2 F^2)", "gepnet": "O(Omega^2 Phi + Omega^2 F^2)",
}
# published counts for the 4-user, 4-TA, 16-RA row, kept as reference metadata
REFERENCE_COUNTS = {"mmse": 4.31e6, "amp": 1.12e6, "ep": 2.61e7, "gnn_mmse": 2.13e7,
                    "amp_gnn": 2.75e7, "gepnet": 6.72e7}


class SchemeError(ValueError):
    pass


@dataclass
class SchemeSpec:
    name: str
    system: SystemConfig
    detectors: list
    snr_db: list
    min_errors: int = 200
    max_trials: int = 20000
    seed: int = 1
    measurement_seed: int = DEFAULT_MEASUREMENT_SEED
    checkpoints: dict = field(default_factory=dict)
    iterations: int = 10
    rounds: int = 2
    amp_damping: float = mp.AMP_DAMPING
    ep_damping: float = mp.EP_DAMPING
    ka_grid: list = field(default_factory=list)
    vary_snr_db: float = 5.0
    description: str = ""

    def __post_init__(self):
        unknown = [d for d in self.detectors if d not in DETECTORS]
        if unknown:
            raise SchemeError(f"unknown detectors {unknown}; choose from {DETECTORS}")
        if any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])):
            raise SchemeError("SNR grid must be strictly increasing")
        if self.min_errors < 1 or self.max_trials < 0:
            raise SchemeError("min_errors must be >= 1 and max_trials >= 0")
        if any(not 1 <= k <= self.system.U for k in self.ka_grid):
            raise SchemeError("active-user grid must lie in 1..U")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "SchemeSpec":
        d = dict(d)
        d["system"] = SystemConfig.from_dict(d.get("system", {}))
        d["snr_db"] = [float(s) for s in d.get("snr_db", [])]
        ck = dict(d.get("checkpoints") or {})
        if base_dir is not None:
            ck = {k: str(Path(base_dir, v)) if not os.path.isabs(v) else v for k, v in ck.items()}
        d["checkpoints"] = ck
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SchemeSpec":
        path = Path(path)
        if not path.exists():
            packaged = resources.files("sfim") / "schemes" / f"{path.stem}.yaml"
            if packaged.is_file():
                path = Path(str(packaged))
            else:
                raise SchemeError(f"scheme file {path} not found")
        with open(path) as fh:
            d = yaml.safe_load(fh)
        if "spec" in d and "system" not in d:
            d = d["spec"]   # a run manifest
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = self.system.to_dict()
        return d

    def replace(self, **changes) -> "SchemeSpec":
        d = self.to_dict()
        d.update(changes)
        if isinstance(d["system"], SystemConfig):
            d["system"] = d["system"].to_dict()
        return SchemeSpec.from_dict(d)


def packaged_schemes() -> list:
    return sorted(p.name for p in (resources.files("sfim") / "schemes").iterdir()
                  if p.name.endswith(".yaml"))


# --------------------------------------------------------------------------
# trials

def make_detector(name: str, spec: SchemeSpec):
    """Callable ``(y, model) -> DetectionResult`` for a detector name."""
    T = spec.iterations
    if name == "ml":
        return classical.ml_detect
    if name == "mmse":
        return classical.mmse_detect
    if name == "amp":
        return lambda y, m: mp.amp_detect(y, m, T, spec.amp_damping)
    if name == "ep":
        return lambda y, m: mp.ep_detect(y, m, T, spec.ep_damping)
    path = spec.checkpoints.get(name)
    if not path or not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint for {name} (looked for {path!r})")
    params = load_params(path, variant=name)
    iters = 1 if name == "gnn_mmse" else T
    cfg = GnnDetectorConfig(name, params, iters, spec.rounds,
                            spec.amp_damping if name == "amp_gnn" else None)
    fn = {"gnn_mmse": gnn_mmse_detect, "amp_gnn": amp_gnn_detect, "gepnet": gepnet_detect}[name]
    return lambda y, m: fn(y, m, cfg)


def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    """Per-trial stream, shared by all detectors at the same grid point."""
    return np.random.default_rng(np.random.SeedSequence([seed, point, trial]))


def run_trial(detect, cfg: SystemConfig, A, snr_db: float, rng, active: int | None = None):
    """One frame of G groups; returns the BER count over active users."""
    active = cfg.Ka if active is None else active
    rho = draw_activity(rng, cfg.U, active) if active < cfg.U else np.ones(cfg.U, dtype=bool)
    users = np.flatnonzero(rho)
    ch = draw_channel(rng, cfg)
    total = BerCount(0, 0)
    for g in range(cfg.G):
        tx = [rng.integers(0, 2, cfg.bits_per_group).astype(np.uint8) for _ in range(cfg.U)]
        x = flatten_groups([modulate_group(b, cfg) for b in tx], cfg)
        model = build_group_model(ch, A, g, snr_db, rho, cfg)
        y = transmit(model, x, rng)
        res = detect(y, model.restrict(users))
        total = total + ber([tx[u] for u in users], res.hard_bits)
    return total


def normal_ci(errors: int, bits: int, z: float = 1.959963984540054):
    """Normal-approximation 95% interval for a bit error rate, clipped to [0, 1]."""
    if bits == 0:
        return float("nan"), float("nan")
    p = errors / bits
    half = z * math.sqrt(p * (1 - p) / bits)
    return max(0.0, p - half), min(1.0, p + half)


@dataclass
class CellResult:
    detector: str
    snr_db: float
    bits: int
    errors: int
    trials: int
    wall_time: float
    stop: str
    note: str = ""
    active_users: int | None = None

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")

    @property
    def ci(self):
        return normal_ci(self.errors, self.bits)

    def row(self, scheme: str) -> dict:
        lo, hi = self.ci
        d = {"scheme": scheme, "detector": self.detector, "snr_db": self.snr_db,
             "bits": self.bits, "errors": self.errors, "ber": self.ber, "ci_low": lo,
             "ci_high": hi, "wall_time": round(self.wall_time, 3), "trials": self.trials,
             "stop": self.stop, "note": self.note}
        if self.active_users is not None:
            d["active_users"] = self.active_users
        return d


def run_cell(spec: SchemeSpec, detector: str, snr_db: float, point: int,
             active: int | None = None) -> CellResult:
    t0 = time.perf_counter()
    try:
        detect = make_detector(detector, spec)
        if detector == "ml":
            cfg = spec.system.replace(users=spec.system.Ka if active is None else active)
            if classical.ml_search_size(cfg) > classical.DEFAULT_ML_CAP:
                raise classical.InfeasibleError(
                    f"ML search space 2^{cfg.bits_per_group * cfg.U} exceeds the cap")
    except (FileNotFoundError, classical.InfeasibleError, ValueError) as exc:
        return CellResult(detector, snr_db, 0, 0, 0, time.perf_counter() - t0, "error", str(exc),
                          active)
    cfg = spec.system
    A = gen_measurement(spec.measurement_seed, cfg.Nf, cfg.Nv)
    count = BerCount(0, 0)
    trials = 0
    while trials < spec.max_trials and count.errors < spec.min_errors:
        count = count + run_trial(detect, cfg, A, snr_db, trial_rng(spec.seed, point, trials), active)
        trials += 1
    stop = "min_errors" if count.errors >= spec.min_errors else "max_trials"
    return CellResult(detector, snr_db, count.bits, count.errors, trials,
                      time.perf_counter() - t0, stop, "", active)


def _cell_job(args):
    spec_dict, detector, snr, point, active = args
    return run_cell(SchemeSpec.from_dict(spec_dict), detector, snr, point, active)


def _map_cells(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_cell_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_cell_job, jobs))


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("SFIM_WORKERS", "1") or 1)
    return max(1, workers)


# --------------------------------------------------------------------------
# result files

def code_version() -> str:
    from importlib.metadata import PackageNotFoundError, version
    try:
        v = version("artifact")
    except PackageNotFoundError:
        v = "unknown"
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{v}+{rev}" if rev else v


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


def _write_manifest(path, spec: SchemeSpec, kind: str, files: list):
    manifest = {"kind": kind, "spec": spec.to_dict(), "seed": spec.seed,
                "measurement_seed": spec.measurement_seed, "code_version": code_version(),
                "backend": backend(), "outputs": files}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def run_sweep(spec: SchemeSpec, out_dir, workers: int | None = None) -> list:
    """BER for every (detector, SNR) cell; writes ``<name>_sweep.csv`` and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec.to_dict(), d, s, i, None) for d in spec.detectors
            for i, s in enumerate(spec.snr_db)]
    cells = _map_cells(jobs, resolve_workers(workers))
    csv_path = out / f"{spec.name}_sweep.csv"
    _write_csv(csv_path, SWEEP_COLUMNS, _rows(cells, spec.name))
    _write_manifest(out / f"{spec.name}_sweep.manifest.json", spec, "sweep", [csv_path.name])
    return cells


def _vary_point(spec: SchemeSpec, snr: float, ka: int) -> int:
    """Trial-stream key; all-active points on the sweep grid reuse the sweep's streams."""
    if ka == spec.system.U and snr in spec.snr_db:
        return spec.snr_db.index(snr)
    return 1000 + ka


def _rows(cells, scheme: str) -> list:
    # cells that ran no trials carry no estimate; failed cells stay as a record
    return [c.row(scheme) for c in cells if c.trials > 0 or c.stop == "error"]


def run_varying_users(spec: SchemeSpec, out_dir, ka_grid=None, snr_db=None,
                      workers: int | None = None) -> list:
    """BER versus the number of active users at one SNR."""
    ka_grid = list(ka_grid or spec.ka_grid or range(1, spec.system.U + 1))
    snr = spec.vary_snr_db if snr_db is None else snr_db
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec.to_dict(), d, snr, _vary_point(spec, snr, k), k)
            for d in spec.detectors for k in ka_grid]
    cells = _map_cells(jobs, resolve_workers(workers))
    csv_path = out / f"{spec.name}_vary_users.csv"
    _write_csv(csv_path, VARY_COLUMNS, _rows(cells, spec.name))
    _write_manifest(out / f"{spec.name}_vary_users.manifest.json", spec, "vary-users",
                    [csv_path.name])
    return cells


# --------------------------------------------------------------------------
# complexity

@dataclass
class ComplexityReport:
    omega: int
    phi: int
    iterations: int
    rounds: int
    counts: dict
    by_stage: dict
    orders: dict
    reference: dict

    def to_dict(self) -> dict:
        return asdict(self)


def measure_multiplications(detector: str, cfg: SystemConfig, spec: SchemeSpec | None = None,
                            seed: int = 0, snr_db: float = 10.0, params=None):
    """Real-multiplication count of one detection of one group."""
    spec = spec or SchemeSpec("adhoc", cfg, [detector], [snr_db])
    rng = np.random.default_rng(seed)
    A = gen_measurement(spec.measurement_seed, cfg.Nf, cfg.Nv)
    ch = draw_channel(rng, cfg)
    tx = [rng.integers(0, 2, cfg.bits_per_group).astype(np.uint8) for _ in range(cfg.U)]
    x = flatten_groups([modulate_group(b, cfg) for b in tx], cfg)
    model = build_group_model(ch, A, 0, snr_db, None, cfg)
    y = transmit(model, x, rng)
    if params is not None:
        iters = 1 if detector == "gnn_mmse" else spec.iterations
        gcfg = GnnDetectorConfig(detector, params, iters, spec.rounds)
        fn = {"gnn_mmse": gnn_mmse_detect, "amp_gnn": amp_gnn_detect,
              "gepnet": gepnet_detect}[detector]
        detect = lambda yy, mm: fn(yy, mm, gcfg)  # noqa: E731
    else:
        detect = make_detector(detector, spec)
    with counting() as c:
        detect(y, model)
    return c.total, dict(c.by_stage)


def count_complexity(spec: SchemeSpec, seed: int = 0) -> ComplexityReport:
    """Measured multiplication counts for every detector of ``spec`` that can run.

    GNN detectors without a checkpoint are counted with freshly initialized
    parameters (the count does not depend on the weight values).
    """
    from .gnn.detectors import init_params
    cfg = spec.system
    counts, stages = {}, {}
    for d in spec.detectors:
        params = None
        if d in GNN and not os.path.exists(spec.checkpoints.get(d, "") or ""):
            params = init_params(d, 0, classes=cfg.L + 1)
        if d == "ml" and classical.ml_search_size(cfg) > classical.DEFAULT_ML_CAP:
            counts[d] = None
            continue
        counts[d], stages[d] = measure_multiplications(d, cfg, spec, seed, params=params)
    return ComplexityReport(cfg.omega, cfg.phi, spec.iterations, spec.rounds, counts, stages,
                            {d: COMPLEXITY_ORDERS[d] for d in spec.detectors},
                            {d: REFERENCE_COUNTS.get(d) for d in spec.detectors})


# --------------------------------------------------------------------------
# plot data

def emit_plot_data(csv_paths, out_dir) -> list:
    """One two-column series file per (scheme, detector); failed cells are left out."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series: dict = {}
    for p in csv_paths:
        with open(p, newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("stop") == "error" or not row["bits"] or int(row["bits"]) == 0:
                    continue
                xcol = "active_users" if "active_users" in row else "snr_db"
                key = (row["scheme"], row["detector"], xcol)
                series.setdefault(key, {})[float(row[xcol])] = (
                    float(row["ber"]), float(row["ci_low"]), float(row["ci_high"]))
    written = []
    for (scheme, det, xcol), pts in sorted(series.items()):
        kind = "vs_users" if xcol == "active_users" else "vs_snr"
        path = out / f"{scheme}_{kind}_{det}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([xcol, "ber", "ci_low", "ci_high"])
            for x in sorted(pts):
                w.writerow([x, *pts[x]])
        written.append(path)
    return written
