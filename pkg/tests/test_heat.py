import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatnet import autodiff as ad
from heatnet.errors import ConfigurationError
from heatnet.graph import InteractionGraph, graph_from_states
from heatnet.heat import (
    HeatLayerParams, attention_coefficients, heat_forward, heat_stack, init_heat_layer, project_edges,
    project_nodes,
)

from conftest import numeric_grad, rel_error


def random_graph(rng, n=5, radius=25.0, n_types=2):
    states = np.empty((n, 5))
    states[:, :2] = rng.uniform(-20, 20, size=(n, 2))
    states[:, 2:4] = rng.normal(scale=3.0, size=(n, 2))
    states[:, 4] = rng.uniform(-math.pi, math.pi, size=n)
    return graph_from_states(states, rng.integers(0, n_types, size=n), radius, n_types)


def scalar_heat(graph, h, p):
    """Per-edge loop reference built from Python floats only."""
    n, heads = graph.n_nodes, p.attention.shape[1]
    fp = p.node_proj[0].shape[1]
    fphi, fchi = p.attr_proj.shape[1], p.type_proj.shape[1]
    per_head = p.aggregate.shape[1] // heads
    proj = [[sum(h[i][a] * p.node_proj[graph.node_types[i]][a][c] for a in range(len(h[i]))) for c in range(fp)]
            for i in range(n)]
    out = [[0.0] * p.aggregate.shape[1] for _ in range(n)]
    for i in range(n):
        edges = [e for e in range(graph.n_edges) if graph.dst[e] == i]
        feats = {}
        for e in edges:
            attr = [sum(graph.attrs[e][a] * p.attr_proj[a][c] for a in range(6)) for c in range(fphi)]
            typ = [p.type_proj[graph.edge_types[e]][c] for c in range(fchi)]
            feats[e] = (attr, typ, proj[graph.src[e]])
        for k in range(heads):
            logits = {}
            for e in edges:
                attr, typ, pj = feats[e]
                z = sum(x * p.attention[r][k] for r, x in enumerate(proj[i] + attr + typ + pj))
                logits[e] = z if z > 0 else p.slope * z
            top = max(logits.values())
            weights = {e: math.exp(v - top) for e, v in logits.items()}
            total = sum(weights.values())
            for c in range(per_head):
                col = k * per_head + c
                acc = 0.0
                for e in edges:
                    attr, _, pj = feats[e]
                    msg = sum(x * p.aggregate[r][col] for r, x in enumerate(attr + pj))
                    acc += weights[e] / total * msg
                out[i][col] = 1.0 / (1.0 + math.exp(-acc))
    return np.array(out)


def scalar_gat(graph, h, w, a, weight, slope):
    """Textbook GAT with a sigmoid output: alpha from a . [W h_i || W h_j], message (W h_j) W_k."""
    n, heads = graph.n_nodes, a.shape[1]
    fp = w.shape[1]
    per_head = weight.shape[1] // heads
    wh = [[sum(h[i][r] * w[r][c] for r in range(w.shape[0])) for c in range(fp)] for i in range(n)]
    out = np.zeros((n, weight.shape[1]))
    for i in range(n):
        nbrs = [graph.src[e] for e in range(graph.n_edges) if graph.dst[e] == i]
        for k in range(heads):
            raw = []
            for j in nbrs:
                z = sum(wh[i][c] * a[c][k] for c in range(fp)) + sum(wh[j][c] * a[fp + c][k] for c in range(fp))
                raw.append(z if z > 0 else slope * z)
            top = max(raw)
            ex = [math.exp(v - top) for v in raw]
            for c in range(per_head):
                col = k * per_head + c
                acc = sum(e / sum(ex) * sum(wh[j][r] * weight[r][col] for r in range(fp)) for e, j in zip(ex, nbrs))
                out[i, col] = 1.0 / (1.0 + math.exp(-acc))
    return out


@pytest.mark.parametrize("heads", [1, 3])
@pytest.mark.parametrize("seed", range(10))
def test_layer_matches_scalar_oracle(heads, seed):
    rng = np.random.default_rng(seed)
    graph = random_graph(rng)
    h = rng.normal(size=(5, 7))
    p = init_heat_layer(rng, 7, proj_width=4, attr_width=3, type_width=2, out_width=6, heads=heads)
    got = heat_forward(graph, h, p).values
    assert np.max(np.abs(got - scalar_heat(graph, h.tolist(), p))) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_gat_reduction(seed):
    rng = np.random.default_rng(100 + seed)
    graph = random_graph(rng, n_types=1)
    h = rng.normal(size=(5, 6))
    p = init_heat_layer(rng, 6, proj_width=4, attr_width=0, type_width=0, out_width=6, heads=3,
                        n_node_types=1, n_edge_types=1)
    got = heat_forward(graph, h, p).values
    expected = scalar_gat(graph, h.tolist(), p.node_proj[0], p.attention, p.aggregate, p.slope)
    assert np.max(np.abs(got - expected)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000), st.sampled_from([1, 2, 3]))
def test_attention_normalised_and_outputs_in_unit_interval(n, seed, heads):
    rng = np.random.default_rng(seed)
    graph = random_graph(rng, n=n)
    h = rng.normal(scale=2.0, size=(n, 5))
    p = init_heat_layer(rng, 5, proj_width=4, attr_width=3, type_width=3, out_width=2 * heads, heads=heads)
    proj = project_nodes(h, graph.node_types, p)
    attr_p, type_p = project_edges(graph, p)
    alpha = attention_coefficients(graph, proj, attr_p, type_p, p.attention, p.slope).values
    sums = np.zeros((n, heads))
    np.add.at(sums, graph.dst, alpha)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
    out = heat_forward(graph, h, p).values
    assert np.all(out > 0.0) and np.all(out < 1.0)


def test_single_node_uses_only_self_loop():
    rng = np.random.default_rng(7)
    graph = random_graph(rng, n=1)
    p = init_heat_layer(rng, 4, proj_width=3, attr_width=2, type_width=2, out_width=3, heads=3)
    h = rng.normal(size=(1, 4))
    proj = h @ p.node_proj[graph.node_types[0]]
    msg = np.concatenate([np.array([0, 0, 0, 0, 1, 0.0]) @ p.attr_proj, proj[0]]) @ p.aggregate
    np.testing.assert_allclose(heat_forward(graph, h, p).values[0], 1 / (1 + np.exp(-msg)), atol=1e-15)


def test_non_neighbour_does_not_affect_node():
    rng = np.random.default_rng(11)
    graph = random_graph(rng, n=6, radius=15.0)
    p = init_heat_layer(rng, 4, proj_width=3, attr_width=2, type_width=2, out_width=6, heads=3)
    h = rng.normal(size=(6, 4))
    base = heat_forward(graph, h, p).values
    for i in range(6):
        outsiders = [j for j in range(6) if j not in graph.neighbors(i)]
        for j in outsiders:
            h2 = h.copy()
            h2[j] += 5.0
            assert np.array_equal(heat_forward(graph, h2, p).values[i], base[i])


def test_permutation_equivariance():
    rng = np.random.default_rng(12)
    states = rng.uniform(-10, 10, size=(5, 5))
    types = np.array([0, 1, 1, 0, 1])
    p = init_heat_layer(rng, 4, proj_width=3, attr_width=2, type_width=2, out_width=6, heads=3)
    h = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a = heat_forward(graph_from_states(states, types, 100.0), h, p).values
    b = heat_forward(graph_from_states(states[perm], types[perm], 100.0), h[perm], p).values
    assert np.max(np.abs(a[perm] - b)) < 1e-12


def test_stack_checks_widths_and_empty_is_identity():
    rng = np.random.default_rng(2)
    graph = random_graph(rng)
    h = rng.normal(size=(5, 4))
    assert np.array_equal(heat_stack(graph, h, []).values, h)
    l1 = init_heat_layer(rng, 4, out_width=6, heads=3)
    l2 = init_heat_layer(rng, 5, out_width=6, heads=3)
    with pytest.raises(ConfigurationError):
        heat_stack(graph, h, [l1, l2])
    l2 = init_heat_layer(rng, 6, out_width=6, heads=3)
    assert heat_stack(graph, h, [l1, l2]).shape == (5, 6)


def test_configuration_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        init_heat_layer(rng, 4, out_width=7, heads=3)
    p = init_heat_layer(rng, 4, out_width=6, heads=3)
    graph = random_graph(rng)
    with pytest.raises(ConfigurationError):
        heat_forward(graph, rng.normal(size=(5, 3)), p)
    with pytest.raises(ConfigurationError):
        heat_forward(graph, rng.normal(size=(4, 4)), p)
    bad = HeatLayerParams(p.node_proj, p.attr_proj, p.type_proj, p.attention[:-1], p.aggregate)
    with pytest.raises(ConfigurationError):
        bad.validate()
    three = InteractionGraph(np.array([0, 2]), np.array([0, 1]), np.array([0, 1]), np.zeros((2, 6)),
                             np.array([0, 3]), 2)
    with pytest.raises(ConfigurationError):
        project_nodes(np.ones((2, 4)), three.node_types, p)


@pytest.mark.parametrize("field", ["node_proj", "attr_proj", "type_proj", "attention", "aggregate"])
def test_layer_gradients_match_finite_differences(field):
    rng = np.random.default_rng(21)
    graph = random_graph(rng, n=4, radius=40.0)
    p = init_heat_layer(rng, 3, proj_width=3, attr_width=2, type_width=2, out_width=4, heads=2)
    h = rng.normal(size=(4, 3))
    weights = rng.normal(size=(4, 4))

    def build(values):
        kw = dict(node_proj=list(p.node_proj), attr_proj=p.attr_proj, type_proj=p.type_proj,
                  attention=p.attention, aggregate=p.aggregate)
        if field == "node_proj":
            kw["node_proj"] = [values, p.node_proj[1]]
        else:
            kw[field] = values
        return HeatLayerParams(**kw)

    start = p.node_proj[0] if field == "node_proj" else getattr(p, field)

    def value(x):
        return float(ad.sum_all(ad.mul(heat_forward(graph, h, build(x)), weights)).values)

    with ad.Tape() as tape:
        leaf = tape.leaf(start)
        loss = ad.sum_all(ad.mul(heat_forward(graph, h, build(leaf)), weights))
    analytic = ad.backward(loss)[leaf.node].values
    assert rel_error(analytic, numeric_grad(value, start)) < 1e-6
