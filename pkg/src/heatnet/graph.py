"""Directed edge-featured heterogeneous interaction graphs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .scene import AGENT_TYPES, VX, VY, X, Y, YAW, SceneSample, wrap_angle

EDGE_ATTR_WIDTH = 6
SELF_ATTR = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Edges run from ``src[e]`` to ``dst[e]``; ``attrs[e]`` is the source seen from the destination's frame."""

    node_types: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    attrs: np.ndarray
    edge_types: np.ndarray
    n_types: int = len(AGENT_TYPES)

    def __post_init__(self):
        for name in ("node_types", "src", "dst", "attrs", "edge_types"):
            arr = np.array(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self) -> int:
        return len(self.node_types)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def neighbors(self, i: int) -> np.ndarray:
        """Source nodes of the edges entering ``i``."""
        return self.src[self.dst == i]

    def in_edges(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.dst == i)

    def type_one_hot(self) -> np.ndarray:
        out = np.zeros((self.n_edges, self.n_types * self.n_types))
        out[np.arange(self.n_edges), self.edge_types] = 1.0
        return out


def edge_attr(src_state, dst_state) -> np.ndarray:
    """Relative position, velocity and heading of ``src`` in the frame of ``dst``.

    Returns (dx, dy, dvx, dvy, cos dyaw, sin dyaw).
    """
    s = np.asarray(src_state, dtype=np.float64)
    d = np.asarray(dst_state, dtype=np.float64)
    c, sn = math.cos(d[YAW]), math.sin(d[YAW])
    dx, dy = s[X] - d[X], s[Y] - d[Y]
    dvx, dvy = s[VX] - d[VX], s[VY] - d[VY]
    dyaw = wrap_angle(s[YAW] - d[YAW])
    return np.array([c * dx + sn * dy, -sn * dx + c * dy, c * dvx + sn * dvy, -sn * dvx + c * dvy,
                     math.cos(dyaw), math.sin(dyaw)])


def build_graph(sample: SceneSample, radius: float = 30.0) -> InteractionGraph:
    """Self-loops plus an edge j -> i for every pair whose current positions lie within ``radius``.

    Edges are ordered by destination, then source.
    """
    return graph_from_states(sample.current, sample.agent_types, radius)


def graph_from_states(current: np.ndarray, agent_types: Sequence[int], radius: float,
                      n_types: int = len(AGENT_TYPES)) -> InteractionGraph:
    current = np.asarray(current, dtype=np.float64).reshape(-1, 5)
    types = np.asarray(agent_types, dtype=np.int64)
    n = len(current)
    src: List[int] = []
    dst: List[int] = []
    attrs: List[np.ndarray] = []
    for i in range(n):
        for j in range(n):
            if i == j:
                src.append(j)
                dst.append(i)
                attrs.append(SELF_ATTR)
                continue
            dist = math.hypot(current[j, X] - current[i, X], current[j, Y] - current[i, Y])
            if dist <= radius:
                src.append(j)
                dst.append(i)
                attrs.append(edge_attr(current[j], current[i]))
    src_a = np.array(src, dtype=np.int64)
    dst_a = np.array(dst, dtype=np.int64)
    return InteractionGraph(
        node_types=types,
        src=src_a,
        dst=dst_a,
        attrs=np.array(attrs).reshape(-1, EDGE_ATTR_WIDTH),
        edge_types=types[src_a] * n_types + types[dst_a] if n else np.zeros(0, dtype=np.int64),
        n_types=n_types,
    )


def merge_graphs(graphs: Sequence[InteractionGraph]) -> tuple:
    """Disjoint union of graphs; returns (graph, node offsets)."""
    offsets = np.cumsum([0] + [g.n_nodes for g in graphs])
    n_types = graphs[0].n_types if graphs else len(AGENT_TYPES)
    merged = InteractionGraph(
        node_types=np.concatenate([g.node_types for g in graphs]) if graphs else np.zeros(0, np.int64),
        src=np.concatenate([g.src + o for g, o in zip(graphs, offsets)]) if graphs else np.zeros(0, np.int64),
        dst=np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]) if graphs else np.zeros(0, np.int64),
        attrs=np.concatenate([g.attrs for g in graphs]) if graphs else np.zeros((0, EDGE_ATTR_WIDTH)),
        edge_types=np.concatenate([g.edge_types for g in graphs]) if graphs else np.zeros(0, np.int64),
        n_types=n_types,
    )
    return merged, offsets


def write_edges_csv(graph: InteractionGraph, path, agent_ids=None) -> None:
    """Debug dump: one row per edge (src, dst, type, attr...)."""
    ids = np.arange(graph.n_nodes) if agent_ids is None else np.asarray(agent_ids)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "type"] + [f"attr{k}" for k in range(graph.attrs.shape[1])])
        for e in range(graph.n_edges):
            w.writerow([int(ids[graph.src[e]]), int(ids[graph.dst[e]]), int(graph.edge_types[e])]
                       + [repr(float(v)) for v in graph.attrs[e]])
