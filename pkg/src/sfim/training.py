"""Synthetic instance generation, Adam training and validation for the GNN detectors."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import draw_channel, group_channel_matrix, noise_variance
from .codec import augmented_alphabet, modulate_group, symbol_prior
from .config import SystemConfig
from .frontend import MeasurementMatrix, expanded_measurement, flatten_groups, gen_measurement
from .gnn.checkpoint import save_params
from .gnn.core import GnnParams, cross_entropy
from .gnn.detectors import GnnDetectorConfig, init_params, run_variant

DEFAULT_MEASUREMENT_SEED = 20240607


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    variant: str
    system: SystemConfig = field(default_factory=SystemConfig)
    samples_per_epoch: int = 2000
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    snr_range: tuple = (0.0, 10.0)
    user_mix: tuple = ()            # ((users, weight), ...); empty = all users always
    seed: int = 0
    checkpoint: str | None = None
    iterations: int = 10
    rounds: int = 2
    val_samples: int = 256
    measurement_seed: int = DEFAULT_MEASUREMENT_SEED
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.samples_per_epoch < 1:
            raise ValueError("batch size, epochs and samples per epoch must be positive")
        lo, hi = self.snr_range
        if not lo <= hi:
            raise ValueError("SNR range must be nonempty")
        if self.user_mix:
            w = np.array([p for _, p in self.user_mix], dtype=float)
            if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
                raise ValueError("user mixture weights must be nonnegative and sum to 1")
            if any(not 1 <= u <= self.system.U for u, _ in self.user_mix):
                raise ValueError("mixture user counts must lie in 1..U")

    @property
    def lr_period(self) -> int:
        return max(1, math.ceil(self.epochs / 3))

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.lr_period)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = self.system.to_dict()
        d["snr_range"] = list(self.snr_range)
        d["user_mix"] = [list(p) for p in self.user_mix]
        return d


# --------------------------------------------------------------------------
# data

@dataclass
class InstanceBatch:
    h: np.ndarray          # (B, Phi, N)
    y: np.ndarray          # (B, Phi)
    noise_var: np.ndarray  # (B,)
    labels: np.ndarray     # (B, N) augmented-alphabet class per node
    x: np.ndarray          # (B, N)
    bits: list             # per instance, list of per-user bit vectors
    snr_db: np.ndarray
    users: int


def gen_batch(cfg: SystemConfig, A: MeasurementMatrix, rng: np.random.Generator, size: int,
              snr_range, users: int | None = None) -> InstanceBatch:
    """``size`` instances with ``users`` active users (default: all) at uniform SNRs.

    The noise variance is set from the full user count so the per-user SNR
    does not depend on how many users are active.
    """
    users = cfg.U if users is None else users
    sub = cfg.replace(users=users)
    abar = expanded_measurement(A, sub)
    phi, n = sub.phi, sub.omega
    h = np.empty((size, phi, n), dtype=complex)
    y = np.empty((size, phi), dtype=complex)
    x = np.empty((size, n), dtype=complex)
    labels = np.empty((size, n), dtype=np.int64)
    snr = rng.uniform(snr_range[0], snr_range[1], size=size)
    s2 = np.array([noise_variance(s, cfg) for s in snr])
    bits = []
    for k in range(size):
        ch = draw_channel(rng, sub)
        h[k] = group_channel_matrix(ch, 0, sub) @ abar
        ub = [rng.integers(0, 2, sub.bits_per_group).astype(np.uint8) for _ in range(users)]
        syms = [modulate_group(b, sub) for b in ub]
        x[k] = flatten_groups(syms, sub)
        labels[k] = np.concatenate([s.labels for s in syms])
        w = (rng.standard_normal(phi) + 1j * rng.standard_normal(phi)) * np.sqrt(s2[k] / 2)
        y[k] = h[k] @ x[k] + w
        bits.append(ub)
    return InstanceBatch(h, y, s2, labels, x, bits, snr, users)


def gen_instance(cfg: SystemConfig, A: MeasurementMatrix, rng, snr_range=(0.0, 10.0),
                 users: int | None = None) -> InstanceBatch:
    return gen_batch(cfg, A, rng, 1, snr_range, users)


def _sample_users(tcfg: TrainingConfig, rng) -> int:
    if not tcfg.user_mix:
        return tcfg.system.U
    us = [u for u, _ in tcfg.user_mix]
    w = np.array([p for _, p in tcfg.user_mix], dtype=float)
    return int(us[rng.choice(len(us), p=w / w.sum())])


# --------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, params: GnnParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: GnnParams, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.tensors[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# --------------------------------------------------------------------------
# training

def batch_loss(params: GnnParams, det: GnnDetectorConfig, batch: InstanceBatch, alphabet, prior,
               with_grad: bool = True):
    """Cross entropy summed over outer iterations and nodes, averaged over the batch."""
    run = run_variant(det, batch.h, batch.y, batch.noise_var, alphabet, prior, record=with_grad)
    total, dl = 0.0, []
    for probs in run.probs:
        loss, g = cross_entropy(probs, batch.labels)
        total += loss
        dl.append(g)
    grads = run.runner.backward(dl) if with_grad else None
    return total, grads, run


def symbol_error_rate(params, det, batch: InstanceBatch, alphabet, prior) -> float:
    run = run_variant(det, batch.h, batch.y, batch.noise_var, alphabet, prior)
    return float(np.mean(np.argmax(run.probs[-1], axis=-1) != batch.labels))


@dataclass
class TrainingResult:
    params: GnnParams
    log: list


def train(tcfg: TrainingConfig, log_path=None, progress=None) -> TrainingResult:
    """Train one GNN detector variant; returns the final parameters and per-epoch log."""
    cfg = tcfg.system
    A = gen_measurement(tcfg.measurement_seed, cfg.Nf, cfg.Nv)
    alphabet, prior = augmented_alphabet(cfg.L), symbol_prior(cfg)
    params = init_params(tcfg.variant, np.random.default_rng([tcfg.seed, 0]),
                         classes=cfg.L + 1, **tcfg.hyper)
    # GNN-MMSE has no outer loop: one pass over fixed MMSE attributes
    iters = 1 if tcfg.variant == "gnn_mmse" else tcfg.iterations
    det = GnnDetectorConfig(tcfg.variant, params, iters, tcfg.rounds)
    opt = Adam(params)
    val_rng = np.random.default_rng([tcfg.seed, 1])
    val = [gen_batch(cfg, A, val_rng, tcfg.val_samples, tcfg.snr_range, u)
           for u in sorted({u for u, _ in tcfg.user_mix} or {cfg.U})]
    good = params.copy()
    log = []
    batches = max(1, tcfg.samples_per_epoch // tcfg.batch_size)
    for epoch in range(tcfg.epochs):
        lr = tcfg.lr_at(epoch)
        rng = np.random.default_rng([tcfg.seed, 2, epoch])
        losses = []
        for _ in range(batches):
            users = _sample_users(tcfg, rng)
            batch = gen_batch(cfg, A, rng, tcfg.batch_size, tcfg.snr_range, users)
            loss, grads, _ = batch_loss(params, det, batch, alphabet, prior)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                params.tensors.update(good.copy().tensors)
                if tcfg.checkpoint:
                    save_params(params, tcfg.checkpoint, {"epoch": epoch, "diverged": True})
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.step(params, grads, lr)
            losses.append(loss)
        ser = float(np.mean([symbol_error_rate(params, det, v, alphabet, prior) for v in val]))
        good = params.copy()
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "val_ser": ser, "lr": lr}
        log.append(row)
        if tcfg.checkpoint:
            save_params(params, tcfg.checkpoint, {"epoch": epoch, "training": tcfg.to_dict()})
        if log_path:
            write_log(log, log_path)
        if progress:
            progress(row)
    return TrainingResult(params, log)


def write_log(log: list, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "val_ser", "lr"])
        w.writeheader()
        w.writerows(log)
