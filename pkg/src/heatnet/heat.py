"""Graph attention layers over typed agents with edge attributes and edge types.

Per layer and per edge j -> i:

    h_k(i)  = h_i M_{type(i)}                      node-type projection
    e_ij    = [attr_ij M_attr || onehot(type_ij) M_type]
    logit   = leaky_relu(a_k . [h_k(i) || e_ij || h_k(j)])
    alpha   = softmax of logits over the edges entering i
    h'_i    = sigmoid(sum_j alpha_ij [attr_ij M_attr || h_k(j)] W_k)

and the K head outputs are concatenated. Parameters can be plain arrays or
tape tensors; all arithmetic goes through :mod:`heatnet.autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .graph import EDGE_ATTR_WIDTH, InteractionGraph


@dataclass
class HeatLayerParams:
    """Weights of one layer.

    ``attention`` holds one column per head over the concatenation
    [h_k(i) || attr proj || type proj || h_k(j)]; ``aggregate`` holds the
    heads' output matrices side by side, head k owning columns
    ``k * out/K : (k + 1) * out/K``.
    """

    node_proj: List  # per node type, [F_h, F_p]
    attr_proj: object  # [F_attr, F_phi]
    type_proj: object  # [n_types**2, F_chi]
    attention: object  # [2 F_p + F_phi + F_chi, K]
    aggregate: object  # [F_phi + F_p, F_out]
    slope: float = 0.2

    @property
    def heads(self) -> int:
        return _shape(self.attention)[1]

    @property
    def in_width(self) -> int:
        return _shape(self.node_proj[0])[0]

    @property
    def out_width(self) -> int:
        return _shape(self.aggregate)[1]

    @property
    def proj_width(self) -> int:
        return _shape(self.node_proj[0])[1]

    def arrays(self) -> dict:
        out = {f"node_proj.{k}": m for k, m in enumerate(self.node_proj)}
        out.update(attr_proj=self.attr_proj, type_proj=self.type_proj,
                   attention=self.attention, aggregate=self.aggregate)
        return out

    def validate(self):
        fp = self.proj_width
        fphi = _shape(self.attr_proj)[1]
        fchi = _shape(self.type_proj)[1]
        if any(_shape(m) != (self.in_width, fp) for m in self.node_proj):
            raise ConfigurationError("node projections must share one shape")
        if _shape(self.attention)[0] != 2 * fp + fphi + fchi:
            raise ConfigurationError(
                f"attention width {_shape(self.attention)[0]} != 2*{fp} + {fphi} + {fchi}"
            )
        if _shape(self.aggregate)[0] != fphi + fp:
            raise ConfigurationError(f"aggregate input width {_shape(self.aggregate)[0]} != {fphi} + {fp}")
        if self.out_width % self.heads:
            raise ConfigurationError(f"output width {self.out_width} not divisible by {self.heads} heads")


def _shape(x):
    return tuple(x.shape)


def init_heat_layer(rng: np.random.Generator, in_width: int, proj_width: int = 32, attr_width: int = 8,
                    type_width: int = 8, out_width: int = 48, heads: int = 3, n_node_types: int = 2,
                    n_edge_types: int = 4, slope: float = 0.2) -> HeatLayerParams:
    if out_width % heads:
        raise ConfigurationError(f"output width {out_width} not divisible by {heads} heads")

    def glorot(n_in, n_out):
        bound = np.sqrt(6.0 / max(n_in + n_out, 1))
        return rng.uniform(-bound, bound, size=(n_in, n_out))

    att_in = 2 * proj_width + attr_width + type_width
    params = HeatLayerParams(
        node_proj=[glorot(in_width, proj_width) for _ in range(n_node_types)],
        attr_proj=glorot(EDGE_ATTR_WIDTH, attr_width),
        type_proj=glorot(n_edge_types, type_width),
        attention=glorot(att_in, heads),
        aggregate=glorot(attr_width + proj_width, out_width),
        slope=slope,
    )
    params.validate()
    return params


def project_nodes(h, node_types, params: HeatLayerParams) -> ad.Tensor:
    """Row i becomes ``h_i M_{type(i)}``; a single matrix applies to every node."""
    h = ad.constant(h)
    node_types = np.asarray(node_types, dtype=np.intp)
    mats = params.node_proj
    if len(mats) == 1:
        return ad.matmul(h, mats[0])
    if node_types.size and (node_types.min() < 0 or node_types.max() >= len(mats)):
        bad = int(node_types[(node_types < 0) | (node_types >= len(mats))][0])
        raise ConfigurationError(f"no projection for node type {bad}; layer has {len(mats)}")
    parts, order = [], []
    for kind, mat in enumerate(mats):
        idx = np.flatnonzero(node_types == kind)
        if idx.size:
            parts.append(ad.matmul(ad.take_rows(h, idx), mat))
            order.append(idx)
    if not parts:
        return ad.matmul(h, mats[0])
    stacked = ad.concat(parts, axis=0)
    inverse = np.empty(len(node_types), dtype=np.intp)
    inverse[np.concatenate(order)] = np.arange(len(node_types))
    return ad.take_rows(stacked, inverse)


def project_edges(graph: InteractionGraph, params: HeatLayerParams):
    """(projected attributes [E, F_phi], projected one-hot types [E, F_chi])."""
    attr = ad.matmul(ad.constant(graph.attrs), params.attr_proj)
    onehot = graph.type_one_hot()
    type_proj = ad.constant(params.type_proj)
    if onehot.shape[1] != type_proj.shape[0]:
        raise ConfigurationError(
            f"graph has {onehot.shape[1]} edge types, layer expects {type_proj.shape[0]}"
        )
    return attr, ad.matmul(ad.constant(onehot), type_proj)


def attention_coefficients(graph: InteractionGraph, projected, edge_attr_proj, edge_type_proj,
                           attention, slope: float = 0.2) -> ad.Tensor:
    """Attention weights [E, K], normalised over each destination's incoming edges."""
    feats = ad.concat(
        [ad.take_rows(projected, graph.dst), edge_attr_proj, edge_type_proj, ad.take_rows(projected, graph.src)],
        axis=1,
    )
    logits = ad.leaky_relu(ad.matmul(feats, attention), slope)
    return ad.segment_softmax(logits, graph.dst, graph.n_nodes)


def aggregate(graph: InteractionGraph, alpha, projected, edge_attr_proj, weight) -> ad.Tensor:
    """``sigmoid(sum_j alpha_ij [attr_ij || h_k(j)] W)`` per head, heads side by side."""
    alpha = ad.constant(alpha)
    weight = ad.constant(weight)
    heads = alpha.shape[1]
    per_head = weight.shape[1] // heads
    messages = ad.matmul(ad.concat([edge_attr_proj, ad.take_rows(projected, graph.src)], axis=1), weight)
    spread = np.kron(np.eye(heads), np.ones((1, per_head)))
    weighted = ad.mul(messages, ad.matmul(alpha, spread))
    return ad.sigmoid(ad.segment_sum(weighted, graph.dst, graph.n_nodes))


def heat_forward(graph: InteractionGraph, h, params: HeatLayerParams) -> ad.Tensor:
    """One multi-head HEAT layer: [n, F_h] -> [n, F_out]."""
    h = ad.constant(h)
    if h.shape[0] != graph.n_nodes:
        raise ConfigurationError(f"{h.shape[0]} feature rows for {graph.n_nodes} nodes")
    if h.shape[1] != params.in_width:
        raise ConfigurationError(f"layer expects {params.in_width}-wide features, got {h.shape[1]}")
    projected = project_nodes(h, graph.node_types, params)
    attr_p, type_p = project_edges(graph, params)
    alpha = attention_coefficients(graph, projected, attr_p, type_p, params.attention, params.slope)
    return aggregate(graph, alpha, projected, attr_p, params.aggregate)


def heat_stack(graph: InteractionGraph, h, layers: Sequence[HeatLayerParams]) -> ad.Tensor:
    """Apply layers in order; each re-projects the raw edge attributes with its own weights."""
    out = ad.constant(h)
    for depth, layer in enumerate(layers):
        if layer.in_width != out.shape[1]:
            raise ConfigurationError(
                f"layer {depth} expects width {layer.in_width}, previous output is {out.shape[1]}"
            )
        out = heat_forward(graph, out, layer)
    return out
