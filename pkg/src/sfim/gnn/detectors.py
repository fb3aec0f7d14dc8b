"""GNN-aided detectors: GNN-MMSE, AMP-GNN and GEPnet.

Every detector works on a batch (``h`` of shape (B, Phi, N)) so training
and evaluation share one code path. ``estimator`` replaces the network by
any ``(mean, var) -> probs`` map; with the Bayesian denoiser the AMP-GNN and
GEPnet loops reduce exactly to plain AMP and EP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..channel import EquivalentGroupModel
from ..complexity import inverse_cost, tally
from ..detection import DetectionResult, NumericError, bits_from_probs, moments
from ..mp import AMP_DAMPING, VAR_FLOOR, AmpLinearStage, EpState
from .core import GnnParams, GnnRunner, build_graph

VARIANTS = ("gnn_mmse", "amp_gnn", "gepnet")
VARIANT_HYPER = {
    "gnn_mmse": dict(node_dim=7, edge_dim=4, attr_dim=3),
    "amp_gnn": dict(node_dim=4, edge_dim=3, attr_dim=3),
    "gepnet": dict(node_dim=4, edge_dim=3, attr_dim=3),
}
GEPNET_DAMPING = 0.1


@dataclass(frozen=True)
class GnnDetectorConfig:
    variant: str
    params: GnnParams | None = None
    iterations: int = 10
    rounds: int = 2
    damping: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown GNN detector variant {self.variant!r}")
        if self.iterations < 1 or self.rounds < 1:
            raise ValueError("iterations and rounds must be >= 1")
        if self.params is not None and self.params.variant != self.variant:
            raise ValueError(f"parameters were trained for {self.params.variant!r}, "
                             f"not {self.variant!r}")
        if self.params is not None and self.params.hyper["classes"] < 2:
            raise ValueError("readout needs at least two classes")

    @property
    def effective_damping(self) -> float:
        if self.damping is not None:
            return self.damping
        return GEPNET_DAMPING if self.variant == "gepnet" else AMP_DAMPING


def node_attributes(mean, var) -> np.ndarray:
    """[Re m, Im m, log v]; the log keeps clamped cavity variances in the GRU's range."""
    return np.stack([mean.real, mean.imag, np.log(var)], axis=-1)


def init_params(variant: str, seed, **hyper) -> GnnParams:
    return GnnParams.init(seed, variant, **{**VARIANT_HYPER[variant], **hyper})


@dataclass
class GnnRun:
    probs: list                 # per outer iteration, (B, N, A)
    x_hat: np.ndarray
    var: np.ndarray
    runner: GnnRunner | None = None
    trace: list = field(default_factory=list)


def _batched(h, y, noise_var):
    h = np.asarray(h)
    if h.ndim == 2:
        return h[None], np.asarray(y)[None], np.atleast_1d(np.asarray(noise_var, float)), True
    return h, np.asarray(y), np.broadcast_to(np.asarray(noise_var, float), h.shape[:1]), False


def _runner(cfg, graph, record):
    if cfg.params is None:
        raise ValueError(f"{cfg.variant} needs trained parameters or an estimator override")
    return GnnRunner(cfg.params, graph, cfg.rounds, record)


def mmse_posterior(h, y, noise_var):
    """z = (H^H H + s2 I)^-1 H^H y and C = s2 (H^H H + s2 I)^-1 for a batch."""
    hh = np.swapaxes(h.conj(), -1, -2)
    n = h.shape[-1]
    s2 = np.asarray(noise_var, float)[:, None, None]
    a = hh @ h + s2 * np.eye(n)
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError("MMSE matrix inversion failed") from exc
    tally("gnn_mmse_inverse", complex_mults=h.shape[0] * (inverse_cost(n) + h.shape[1] * n * (n + 1) // 2))
    z = np.einsum("bij,bj->bi", inv, np.einsum("bij,bj->bi", hh, y))
    return z, s2 * inv


def run_gnn_mmse(cfg: GnnDetectorConfig, h, y, noise_var, alphabet, prior,
                 record=False, estimator=None) -> GnnRun:
    h, y, s2, _ = _batched(h, y, noise_var)
    z, cov = mmse_posterior(h, y, s2)
    cdiag = np.maximum(np.real(np.einsum("bii->bi", cov)), VAR_FLOOR)
    rho = np.abs(cov) ** 2 / (cdiag[:, :, None] * cdiag[:, None, :])
    attrs = node_attributes(z, cdiag)
    runner = None
    probs_seq = []
    if estimator is None:
        graph = build_graph(y, h, s2, node_extra=attrs, edge_extra=rho[..., None])
        runner = _runner(cfg, graph, record)
    for _ in range(cfg.iterations):
        probs = estimator(z, cdiag) if estimator is not None else runner.step(attrs)
        probs_seq.append(probs)
    x_hat, var = moments(probs_seq[-1], alphabet)
    return GnnRun(probs_seq, x_hat, var, runner)


def run_amp_gnn(cfg: GnnDetectorConfig, h, y, noise_var, alphabet, prior,
                record=False, estimator=None) -> GnnRun:
    h, y, s2, _ = _batched(h, y, noise_var)
    B, _, N = h.shape
    damping = cfg.effective_damping
    stage = AmpLinearStage(h, y, s2)
    x_hat = np.zeros((B, N), dtype=complex)
    v_hat = np.full((B, N), float(np.asarray(prior) @ np.abs(alphabet) ** 2))
    runner = None if estimator is not None else _runner(cfg, build_graph(y, h, s2), record)
    probs_seq, trace = [], []
    for _ in range(cfg.iterations):
        r, sigma = stage.step(x_hat, v_hat)
        if estimator is not None:
            probs = estimator(r, sigma)
        else:
            probs = runner.step(node_attributes(r, sigma))
        probs_seq.append(probs)
        trace.append((r, sigma))
        x_new, v_new = moments(probs, alphabet)
        x_hat = (1 - damping) * x_new + damping * x_hat
        v_hat = np.maximum((1 - damping) * v_new + damping * v_hat, VAR_FLOOR)
    return GnnRun(probs_seq, x_hat, v_hat, runner, trace)


def run_gepnet(cfg: GnnDetectorConfig, h, y, noise_var, alphabet, prior,
               record=False, estimator=None) -> GnnRun:
    h, y, s2, _ = _batched(h, y, noise_var)
    state = EpState(h, y, s2, alphabet, prior, cfg.effective_damping)
    runner = None if estimator is not None else _runner(cfg, build_graph(y, h, s2), record)
    probs_seq, trace = [], []
    m_hat = v = None
    for _ in range(cfg.iterations):
        m_o, v_o = state.observe()
        if estimator is not None:
            probs = estimator(m_o, v_o)
        else:
            probs = runner.step(node_attributes(m_o, v_o))
        probs_seq.append(probs)
        trace.append((m_o, v_o))
        m_hat, v = state.update(probs, m_o, v_o)
    return GnnRun(probs_seq, m_hat, v, runner, trace)


_RUNNERS = {"gnn_mmse": run_gnn_mmse, "amp_gnn": run_amp_gnn, "gepnet": run_gepnet}


def run_variant(cfg: GnnDetectorConfig, h, y, noise_var, alphabet, prior, record=False,
                estimator=None) -> GnnRun:
    return _RUNNERS[cfg.variant](cfg, h, y, noise_var, alphabet, prior, record, estimator)


def _detect(variant, y, model: EquivalentGroupModel, cfg: GnnDetectorConfig, estimator):
    if cfg.variant != variant:
        raise ValueError(f"detector config is for {cfg.variant!r}, not {variant!r}")
    run = run_variant(cfg, model.h_bar, y, model.noise_var, model.alphabet, model.prior,
                      estimator=estimator)
    probs = run.probs[-1][0]
    return DetectionResult(bits_from_probs(probs, model), run.x_hat[0], probs,
                           info={"var": run.var[0]})


def gnn_mmse_detect(y, model, cfg: GnnDetectorConfig, estimator=None) -> DetectionResult:
    return _detect("gnn_mmse", y, model, cfg, estimator)


def amp_gnn_detect(y, model, cfg: GnnDetectorConfig, estimator=None) -> DetectionResult:
    return _detect("amp_gnn", y, model, cfg, estimator)


def gepnet_detect(y, model, cfg: GnnDetectorConfig, estimator=None) -> DetectionResult:
    return _detect("gepnet", y, model, cfg, estimator)
