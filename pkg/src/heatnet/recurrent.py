"""Type-specific GRU history encoders and LSTM trajectory decoders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, MaskError


@dataclass
class GruParams:
    w_z: object
    w_r: object
    w_n: object
    u_z: object
    u_r: object
    u_n: object
    b_z: object
    b_r: object
    b_n: object

    @property
    def in_width(self) -> int:
        return self.w_z.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_z.shape[1]


@dataclass
class LstmDecoderParams:
    w_i: object
    w_f: object
    w_o: object
    w_g: object
    u_i: object
    u_f: object
    u_o: object
    u_g: object
    b_i: object
    b_f: object
    b_o: object
    b_g: object
    out_w: object  # [F_d, 2]
    out_b: object  # [2]

    @property
    def in_width(self) -> int:
        return self.w_i.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_i.shape[1]


def _uniform(rng, shape, fan):
    bound = 1.0 / np.sqrt(fan)
    return rng.uniform(-bound, bound, size=shape)


def init_gru(rng: np.random.Generator, in_width: int, hidden: int = 64) -> GruParams:
    w = {f"w_{g}": _uniform(rng, (in_width, hidden), hidden) for g in "zrn"}
    u = {f"u_{g}": _uniform(rng, (hidden, hidden), hidden) for g in "zrn"}
    b = {f"b_{g}": np.zeros(hidden) for g in "zrn"}
    return GruParams(**w, **u, **b)


def init_lstm(rng: np.random.Generator, in_width: int, hidden: int = 128) -> LstmDecoderParams:
    w = {f"w_{g}": _uniform(rng, (in_width, hidden), hidden) for g in "ifog"}
    u = {f"u_{g}": _uniform(rng, (hidden, hidden), hidden) for g in "ifog"}
    b = {f"b_{g}": np.zeros(hidden) for g in "ifog"}
    # forget-gate bias of one keeps early gradients flowing through the cell
    b["b_f"] = np.ones(hidden)
    return LstmDecoderParams(**w, **u, **b, out_w=_uniform(rng, (hidden, 2), hidden), out_b=np.zeros(2))


def gru_rows(sequences, p: GruParams) -> ad.Tensor:
    """Final hidden states [n, F_r] of a batch of sequences [n, T, F_in]."""
    seq = np.asarray(sequences, dtype=np.float64)
    if seq.ndim != 3 or seq.shape[2] != p.in_width:
        raise DimensionError(f"GRU expects [n, T, {p.in_width}] input, got {seq.shape}")
    if seq.shape[1] < 1:
        raise DimensionError("GRU needs at least one time step")
    n = seq.shape[0]
    h = ad.constant(np.zeros((n, p.hidden)))
    for t in range(seq.shape[1]):
        x = ad.constant(seq[:, t, :])
        z = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x, p.w_z), ad.matmul(h, p.u_z)), p.b_z))
        r = ad.sigmoid(ad.add_bias(ad.add(ad.matmul(x, p.w_r), ad.matmul(h, p.u_r)), p.b_r))
        cand = ad.tanh(ad.add_bias(ad.add(ad.matmul(x, p.w_n), ad.matmul(ad.mul(r, h), p.u_n)), p.b_n))
        # h' = (1 - z) * cand + z * h
        h = ad.add(cand, ad.mul(z, ad.sub(h, cand)))
    return h


def gru_encode(history, p: GruParams) -> np.ndarray:
    """Dynamics feature [F_r] of a single [T_h, F_in] history."""
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim != 2:
        raise DimensionError(f"history must be [T, F], got {hist.shape}")
    return gru_rows(hist[None], p).values[0].copy()


def lstm_rows(features, p: LstmDecoderParams, horizon: int, conditioning: str = "repeat") -> ad.Tensor:
    """Decode [n, D] features into [n, 2 * horizon] positions (x1, y1, x2, y2, ...).

    ``conditioning="repeat"`` feeds the feature at every step; ``"first"``
    feeds it at the first step only and zeros afterwards.
    """
    feats = ad.constant(features)
    if feats.values.ndim != 2 or feats.shape[1] != p.in_width:
        raise DimensionError(f"decoder expects [n, {p.in_width}] features, got {feats.shape}")
    if horizon < 1:
        raise DimensionError(f"horizon must be >= 1, got {horizon}")
    if conditioning not in ("repeat", "first"):
        raise ValueError(f"unknown conditioning {conditioning!r}")
    n = feats.shape[0]
    drive = {g: ad.add_bias(ad.matmul(feats, getattr(p, f"w_{g}")), getattr(p, f"b_{g}")) for g in "ifog"}
    bias_only = {g: ad.add_bias(ad.constant(np.zeros((n, p.hidden))), getattr(p, f"b_{g}")) for g in "ifog"} \
        if conditioning == "first" else drive
    h = ad.constant(np.zeros((n, p.hidden)))
    c = ad.constant(np.zeros((n, p.hidden)))
    outs = []
    for step in range(horizon):
        src = drive if step == 0 or conditioning == "repeat" else bias_only
        i = ad.sigmoid(ad.add(src["i"], ad.matmul(h, p.u_i)))
        f = ad.sigmoid(ad.add(src["f"], ad.matmul(h, p.u_f)))
        o = ad.sigmoid(ad.add(src["o"], ad.matmul(h, p.u_o)))
        g = ad.tanh(ad.add(src["g"], ad.matmul(h, p.u_g)))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        outs.append(h)
    hidden = ad.concat(outs, axis=1)  # [n, horizon * F_d]
    stacked = ad.reshape(hidden, (n * horizon, p.hidden))
    pos = ad.add_bias(ad.matmul(stacked, p.out_w), p.out_b)  # rows ordered agent-major
    return ad.reshape(pos, (n, 2 * horizon))


def lstm_decode(feature, p: LstmDecoderParams, horizon: int, conditioning: str = "repeat") -> np.ndarray:
    """Trajectory [horizon, 2] for a single feature vector."""
    feat = np.asarray(feature, dtype=np.float64)
    return lstm_rows(feat[None], p, horizon, conditioning).values.reshape(horizon, 2).copy()


def route_by_type(inputs, type_masks: Sequence, params: Sequence, op: Callable) -> ad.Tensor:
    """Run ``op(rows, params[k])`` on the rows selected by ``type_masks[k]``; keep input row order."""
    masks = np.asarray(type_masks, dtype=bool).reshape(len(params), -1)
    inputs = ad.constant(inputs) if not isinstance(inputs, np.ndarray) else inputs
    n = masks.shape[1]
    hits = masks.sum(axis=0)
    if (hits != 1).any():
        bad = int(np.flatnonzero(hits != 1)[0])
        raise MaskError(f"agent {bad} matches {int(hits[bad])} type masks; exactly one required")
    if n == 0:
        return op(_rows(inputs, np.zeros(0, dtype=np.intp)), params[0])
    parts, order = [], []
    for kind, prm in enumerate(params):
        idx = np.flatnonzero(masks[kind])
        if idx.size:
            parts.append(op(_rows(inputs, idx), prm))
            order.append(idx)
    if len(parts) == 1:
        return parts[0]
    inverse = np.empty(n, dtype=np.intp)
    inverse[np.concatenate(order)] = np.arange(n)
    return ad.take_rows(ad.concat(parts, axis=0), inverse)


def _rows(inputs, idx):
    if isinstance(inputs, np.ndarray):
        return inputs[idx]
    return ad.take_rows(inputs, idx)
