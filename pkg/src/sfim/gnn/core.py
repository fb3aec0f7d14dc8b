"""Pair-wise MRF graph network: encoder, message rounds with a GRU, readout.

All arrays carry a leading batch axis B and use row vectors (``x @ W``).
Node i receives a message from every j != i computed from
``(u_i, u_j, f_ji)``; messages are summed in ascending j.

The message MLP's first layer is split by input block so the per-pair
pre-activation is ``u_i Wr + u_j Ws + f_ji We + b1``; the last layer is
linear, so the sum over senders can be taken before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..complexity import tally

HYPER_DEFAULTS = dict(nu=8, nh1=64, nh2=32, node_dim=4, edge_dim=3, attr_dim=3, classes=3)
PARAM_VERSION = 1


def _shapes(hp: dict) -> dict:
    nu, h1, h2 = hp["nu"], hp["nh1"], hp["nh2"]
    return {
        "enc_w": (hp["node_dim"], nu), "enc_b": (nu,),
        "msg_w1": (2 * nu + hp["edge_dim"], h1), "msg_b1": (h1,),
        "msg_w2": (h1, h2), "msg_b2": (h2,),
        "msg_w3": (h2, nu), "msg_b3": (nu,),
        "gru_wx": (nu + hp["attr_dim"], 3 * h1), "gru_wh": (h1, 3 * h1), "gru_b": (3 * h1,),
        "out_w": (h1, nu), "out_b": (nu,),
        "ro_w1": (nu, h1), "ro_b1": (h1,),
        "ro_w2": (h1, h2), "ro_b2": (h2,),
        "ro_w3": (h2, hp["classes"]), "ro_b3": (hp["classes"],),
    }


def _glorot(rng, shape):
    lim = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-lim, lim, size=shape)


@dataclass
class GnnParams:
    hyper: dict
    tensors: dict
    variant: str = "generic"
    version: int = PARAM_VERSION

    @classmethod
    def init(cls, seed, variant: str = "generic", **hyper) -> "GnnParams":
        hp = {**HYPER_DEFAULTS, **hyper}
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        tensors = {}
        for name, shape in _shapes(hp).items():
            tensors[name] = _glorot(rng, shape) if len(shape) == 2 else np.zeros(shape)
        return cls(hp, tensors, variant)

    @classmethod
    def zeros(cls, variant: str = "generic", **hyper) -> "GnnParams":
        hp = {**HYPER_DEFAULTS, **hyper}
        return cls(hp, {k: np.zeros(s) for k, s in _shapes(hp).items()}, variant)

    def __post_init__(self):
        expected = _shapes(self.hyper)
        if set(expected) != set(self.tensors):
            raise ValueError(f"tensor names {sorted(self.tensors)} do not match the architecture")
        for k, s in expected.items():
            if self.tensors[k].shape != s:
                raise ValueError(f"tensor {k} has shape {self.tensors[k].shape}, expected {s}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "GnnParams":
        return GnnParams(dict(self.hyper), {k: v.copy() for k, v in self.tensors.items()},
                         self.variant, self.version)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    @property
    def nbytes(self) -> int:
        return sum(v.nbytes for v in self.tensors.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


# --------------------------------------------------------------------------
# graph construction

@dataclass
class GraphInputs:
    node: np.ndarray   # (B, N, node_dim) encoder input
    edge: np.ndarray   # (B, N, N, edge_dim); edge[b, i, j] = f_ji, the feature of j -> i


def build_graph(y, h, noise_var, node_extra=None, edge_extra=None) -> GraphInputs:
    """Encoder inputs [Re y^H h_i, Im y^H h_i, h_i^H h_i, sigma^2] and edge features.

    ``h`` is (B, Phi, N) or (Phi, N). ``node_extra`` (B, N, k) is prepended
    to the node input and ``edge_extra`` (B, N, N, k) appended to the edge
    features.
    """
    h = np.asarray(h)
    if h.ndim == 2:
        h, y = h[None], np.asarray(y)[None]
        noise_var = np.atleast_1d(noise_var)
        node_extra = None if node_extra is None else np.asarray(node_extra)[None]
        edge_extra = None if edge_extra is None else np.asarray(edge_extra)[None]
    y = np.asarray(y)
    B, _, N = h.shape
    s2 = np.broadcast_to(np.asarray(noise_var, dtype=float).reshape(-1), (B,))
    yh = np.einsum("bp,bpn->bn", y.conj(), h)
    gram = np.swapaxes(h.conj(), 1, 2) @ h                      # gram[b, j, i] = h_j^H h_i
    node = np.stack([yh.real, yh.imag, np.real(np.einsum("bnn->bn", gram)),
                     np.broadcast_to(s2[:, None], (B, N))], axis=-1)
    cross = np.swapaxes(gram, 1, 2)                              # cross[b, i, j] = h_j^H h_i
    edge = np.stack([cross.real, cross.imag, np.broadcast_to(s2[:, None, None], (B, N, N))],
                    axis=-1)
    if node_extra is not None:
        node = np.concatenate([node_extra, node], axis=-1)
    if edge_extra is not None:
        edge = np.concatenate([edge, edge_extra], axis=-1)
    return GraphInputs(np.ascontiguousarray(node), np.ascontiguousarray(edge))


# --------------------------------------------------------------------------
# forward / backward

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _aggregate_numpy(a, b, c, w2, b2):
    """Summed edge messages; also returns the first hidden layer and the active mask
    of the second (self-edges masked out), which the backward pass needs."""
    h1 = c + a[:, :, None, :]
    h1 += b[:, None, :, :]
    np.maximum(h1, 0.0, out=h1)
    h2 = h1 @ w2
    h2 += b2
    np.maximum(h2, 0.0, out=h2)
    n = a.shape[1]
    idx = np.arange(n)
    h2[:, idx, idx, :] = 0.0
    return h2.sum(axis=2), h1, h2 > 0


@dataclass
class _RoundCache:
    u: np.ndarray
    g: np.ndarray
    h1: np.ndarray
    h2_on: np.ndarray      # bool mask of active second-layer units
    s: np.ndarray
    x: np.ndarray
    z: np.ndarray
    r: np.ndarray
    n: np.ndarray
    rg: np.ndarray
    g_new: np.ndarray


@dataclass
class _ReadoutCache:
    u: np.ndarray
    a1: np.ndarray
    a2: np.ndarray


@dataclass
class GraphState:
    """Node states of a batch of graphs plus the optional gradient tape."""
    u: np.ndarray
    g: np.ndarray
    attrs: np.ndarray | None = None
    tape: list = field(default_factory=list)


class GnnRunner:
    """Runs outer iterations of ``rounds`` message rounds followed by a readout.

    Hidden states persist between :meth:`step` calls. With ``record=True``
    every intermediate needed by :meth:`backward` is kept.
    """

    def __init__(self, params: GnnParams, graph: GraphInputs, rounds: int, record: bool = False):
        if rounds < 1:
            raise ValueError("at least one message round is required")
        self.p = params
        self.graph = graph
        self.rounds = rounds
        self.record = record
        nu = params.hyper["nu"]
        w1 = params["msg_w1"]
        self._wr, self._ws, self._we = w1[:nu], w1[nu:2 * nu], w1[2 * nu:]
        self.edge_pre = graph.edge @ self._we + params["msg_b1"]   # (B, N, N, H1)
        u0 = graph.node @ params["enc_w"] + params["enc_b"]
        B, N, _ = graph.node.shape
        hp = params.hyper
        tally("gnn_encode", real_mults=B * N * (hp["node_dim"] * hp["nu"]
                                                + N * hp["edge_dim"] * hp["nh1"]))
        self.state = GraphState(u0, np.zeros((B, N, params.hyper["nh1"])))
        self.logits: list = []

    @property
    def n_nodes(self) -> int:
        return self.graph.node.shape[1]

    def _round(self, attrs):
        p, st = self.p, self.state
        u, g = st.u, st.g
        N = u.shape[1]
        H = p.hyper["nh1"]
        a = u @ self._wr
        b = u @ self._ws
        s, h1, h2_on = _aggregate_numpy(a, b, self.edge_pre, p["msg_w2"], p["msg_b2"])
        agg = s @ p["msg_w3"] + (N - 1) * p["msg_b3"]
        x = np.concatenate([agg, attrs], axis=-1)
        xw = x @ p["gru_wx"] + p["gru_b"]
        wh = p["gru_wh"]
        gh = g @ wh[:, :2 * H]
        z = _sigmoid(xw[..., :H] + gh[..., :H])
        r = _sigmoid(xw[..., H:2 * H] + gh[..., H:])
        rg = r * g
        n = np.tanh(xw[..., 2 * H:] + rg @ wh[:, 2 * H:])
        g_new = (1.0 - z) * n + z * g
        u_new = g_new @ p["out_w"] + p["out_b"]
        B, hp = u.shape[0], p.hyper
        tally("gnn_messages", real_mults=B * (2 * N * hp["nu"] * H
                                              + N * (N - 1) * H * hp["nh2"] + N * hp["nh2"] * hp["nu"]))
        tally("gnn_gru", real_mults=B * N * (x.shape[-1] * 3 * H + 3 * H * H + 3 * H + H * hp["nu"]))
        if self.record:
            st.tape.append(_RoundCache(u, g, h1, h2_on, s, x, z, r, n, rg, g_new))
        st.u, st.g = u_new, g_new

    def _readout(self):
        p = self.p
        u = self.state.u
        a1 = np.maximum(u @ p["ro_w1"] + p["ro_b1"], 0.0)
        a2 = np.maximum(a1 @ p["ro_w2"] + p["ro_b2"], 0.0)
        logits = a2 @ p["ro_w3"] + p["ro_b3"]
        hp = p.hyper
        tally("gnn_readout", real_mults=u.shape[0] * u.shape[1] * (
            hp["nu"] * hp["nh1"] + hp["nh1"] * hp["nh2"] + hp["nh2"] * hp["classes"]))
        if self.record:
            self.state.tape.append(_ReadoutCache(u, a1, a2))
        return logits

    def step(self, attrs) -> np.ndarray:
        """One outer iteration with node attributes ``attrs`` (B, N, attr_dim); returns probs."""
        attrs = np.asarray(attrs, dtype=float)
        if attrs.shape[-1] != self.p.hyper["attr_dim"]:
            raise ValueError("attribute dimension does not match the parameters")
        self.state.attrs = attrs
        for _ in range(self.rounds):
            self._round(attrs)
        logits = self._readout()
        self.logits.append(logits)
        return softmax(logits)

    # ---------------------------------------------------------------- backward

    def backward(self, dlogits: list) -> dict:
        """Parameter gradients given d(loss)/d(logits) for every completed step.

        ``dlogits[t]`` may be None when step t does not enter the loss.
        """
        if not self.record or not self.state.tape:
            raise RuntimeError("backward needs a forward pass run with record=True")
        if len(dlogits) != len(self.logits):
            raise ValueError("one logit gradient per outer iteration is required")
        p = self.p
        grads = p.zeros_like()
        nu, H = p.hyper["nu"], p.hyper["nh1"]
        tape = list(self.state.tape)
        u_shape = self.state.u.shape
        du = np.zeros(u_shape)
        dg = np.zeros(self.state.g.shape)
        d_edge_pre = np.zeros_like(self.edge_pre)
        wh = p["gru_wh"]
        for t in range(len(self.logits) - 1, -1, -1):
            ro = tape.pop()
            if dlogits[t] is not None:
                du = du + self._readout_backward(ro, np.asarray(dlogits[t]), grads)
            for _ in range(self.rounds):
                c = tape.pop()
                N = c.u.shape[1]
                # u_new = g_new W_o + b_o
                grads["out_w"] += _outer(c.g_new, du)
                grads["out_b"] += du.sum(axis=(0, 1))
                dgn = dg + du @ p["out_w"].T
                # GRU
                dn = dgn * (1.0 - c.z)
                dz = dgn * (c.g - c.n)
                dg = dgn * c.z
                dan = dn * (1.0 - c.n ** 2)
                grads["gru_wh"][:, 2 * H:] += _outer(c.rg, dan)
                drg = dan @ wh[:, 2 * H:].T
                dr = drg * c.g
                dg = dg + drg * c.r
                daz = dz * c.z * (1.0 - c.z)
                dar = dr * c.r * (1.0 - c.r)
                dzr = np.concatenate([daz, dar], axis=-1)
                dxw = np.concatenate([dzr, dan], axis=-1)
                grads["gru_wx"] += _outer(c.x, dxw)
                grads["gru_b"] += dxw.sum(axis=(0, 1))
                grads["gru_wh"][:, :2 * H] += _outer(c.g, dzr)
                dg = dg + dzr @ wh[:, :2 * H].T
                dx = dxw @ p["gru_wx"].T
                dagg = dx[..., :nu]
                # aggregated message
                grads["msg_w3"] += _outer(c.s, dagg)
                grads["msg_b3"] += (N - 1) * dagg.sum(axis=(0, 1))
                ds = dagg @ p["msg_w3"].T
                dh2 = ds[:, :, None, :] * c.h2_on
                grads["msg_w2"] += _outer(c.h1, dh2)
                grads["msg_b2"] += dh2.sum(axis=(0, 1, 2))
                dpre1 = dh2 @ p["msg_w2"].T
                dpre1 *= c.h1 > 0
                d_edge_pre += dpre1
                da = dpre1.sum(axis=2)
                db = dpre1.sum(axis=1)
                grads["msg_w1"][:nu] += _outer(c.u, da)
                grads["msg_w1"][nu:2 * nu] += _outer(c.u, db)
                du = da @ self._wr.T + db @ self._ws.T
        grads["msg_w1"][2 * nu:] += _outer(self.graph.edge, d_edge_pre)
        grads["msg_b1"] += d_edge_pre.sum(axis=(0, 1, 2))
        grads["enc_w"] += _outer(self.graph.node, du)
        grads["enc_b"] += du.sum(axis=(0, 1))
        return grads

    def _readout_backward(self, c: _ReadoutCache, dl, grads) -> np.ndarray:
        p = self.p
        grads["ro_w3"] += _outer(c.a2, dl)
        grads["ro_b3"] += dl.sum(axis=(0, 1))
        d2 = (dl @ p["ro_w3"].T) * (c.a2 > 0)
        grads["ro_w2"] += _outer(c.a1, d2)
        grads["ro_b2"] += d2.sum(axis=(0, 1))
        d1 = (d2 @ p["ro_w2"].T) * (c.a1 > 0)
        grads["ro_w1"] += _outer(c.u, d1)
        grads["ro_b1"] += d1.sum(axis=(0, 1))
        return d1 @ p["ro_w1"].T


def _outer(inp, dout):
    """Sum over all leading axes of inp^T dout (weight gradient of ``inp @ W``)."""
    return inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])


def cross_entropy(probs, labels):
    """Mean-over-batch, summed-over-nodes cross entropy and its logit gradient."""
    B = probs.shape[0]
    picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    loss = -np.log(np.maximum(picked, 1e-300)).sum() / B
    grad = probs.copy()
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0,
                      axis=-1)
    return float(loss), grad / B


# --------------------------------------------------------------------------
# functional wrappers

def gnn_rounds(params: GnnParams, graph: GraphInputs, attrs, rounds: int) -> GraphState:
    """Encode and run ``rounds`` message rounds once; returns the node states."""
    run = GnnRunner(params, graph, rounds)
    for _ in range(rounds):
        run._round(np.asarray(attrs, dtype=float))
    return run.state


def readout(params: GnnParams, u) -> np.ndarray:
    """Categorical posteriors from node hidden vectors ``u`` (..., nu)."""
    a1 = np.maximum(u @ params["ro_w1"] + params["ro_b1"], 0.0)
    a2 = np.maximum(a1 @ params["ro_w2"] + params["ro_b2"], 0.0)
    return softmax(a2 @ params["ro_w3"] + params["ro_b3"])
