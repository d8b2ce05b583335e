"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line (run with -s to see them)."""

import dataclasses
import math
import time

import numpy as np
import pytest

from heatnet import gradcheck
from heatnet.heat import attention_coefficients, heat_forward, init_heat_layer, project_edges, project_nodes
from heatnet.maps import MapRaster, load_raster, road_raster, write_raster
from heatnet.metrics import ade, fde, rmse_at
from heatnet.model import ModelConfig, forward, init_params, load_params, save_params
from heatnet.scene import ScenarioConfig, generate_scenes, generate_synthetic, make_sample, read_scenes, \
    rigid_transform_scene, write_scenes
from heatnet.training import TrainConfig, evaluate, split_samples, train

from test_heat import random_graph, scalar_gat, scalar_heat


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def test_gradient_suite(verdict):
    results, seconds = gradcheck.run(seed=0)
    worst = max(r.worst for r in results)
    ok = all(r.passed for r in results) and seconds < 60.0
    detail = f"{len(results)} groups, {sum(r.entries for r in results)} entries, worst {worst:.2e}, {seconds:.1f}s"
    assert verdict(1, ok, detail), gradcheck.report(results)


def test_oracle_equivalence(verdict):
    worst = 0.0
    for heads in (1, 3):
        for seed in range(20):
            rng = np.random.default_rng(1000 * heads + seed)
            graph = random_graph(rng)
            h = rng.normal(size=(5, 7))
            p = init_heat_layer(rng, 7, proj_width=4, attr_width=3, type_width=2, out_width=6, heads=heads)
            got = heat_forward(graph, h, p).values
            worst = max(worst, float(np.max(np.abs(got - scalar_heat(graph, h.tolist(), p)))))
    assert verdict(2, worst < 1e-12, f"40 graphs (K=1,3), max deviation {worst:.1e}")


def test_gat_reduction(verdict):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        graph = random_graph(rng, n_types=1)
        h = rng.normal(size=(5, 6))
        p = init_heat_layer(rng, 6, proj_width=4, attr_width=0, type_width=0, out_width=6, heads=3,
                            n_node_types=1, n_edge_types=1)
        got = heat_forward(graph, h, p).values
        expected = scalar_gat(graph, h.tolist(), p.node_proj[0], p.attention, p.aggregate, p.slope)
        worst = max(worst, float(np.max(np.abs(got - expected))))
    assert verdict(3, worst < 1e-12, f"20 graphs, max deviation {worst:.1e}")


def test_attention_normalisation_and_range(verdict):
    worst_sum, lo, hi = 0.0, 1.0, 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        graph = random_graph(rng, n=n)
        h = rng.normal(scale=2.0, size=(n, 5))
        p = init_heat_layer(rng, 5, proj_width=4, attr_width=3, type_width=3, out_width=6, heads=3)
        alpha = attention_coefficients(graph, project_nodes(h, graph.node_types, p), *project_edges(graph, p),
                                       p.attention, p.slope).values
        sums = np.zeros((n, 3))
        np.add.at(sums, graph.dst, alpha)
        worst_sum = max(worst_sum, float(np.max(np.abs(sums - 1.0))))
        out = heat_forward(graph, h, p).values
        lo, hi = min(lo, float(out.min())), max(hi, float(out.max()))
    ok = worst_sum <= 1e-12 and lo > 0.0 and hi < 1.0
    assert verdict(4, ok, f"max |sum-1| {worst_sum:.1e}, min output {lo:.1e}, max output 1-{1.0 - hi:.1e}")


def test_frame_invariance(verdict):
    cfg = ScenarioConfig(n_scenes=1, n_vehicles=3, n_vru=2, motion="constant_velocity,circular_arc,lane_change")
    scene = generate_scenes(cfg, 5)[0]
    t = cfg.history - 1
    base = make_sample(scene, t, cfg.history, cfg.horizon)
    params = init_params(ModelConfig(variant="HEAT-I-R"), 2)
    ref = forward(base, None, params).trajectories
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        moved = rigid_transform_scene(scene, rng.uniform(-math.pi, math.pi), *rng.uniform(-500, 500, size=2))
        s = dataclasses.replace(make_sample(moved, t, cfg.history, cfg.horizon), map_attrs=base.map_attrs)
        worst = max(worst, float(np.max(np.abs(forward(s, None, params).trajectories - ref))))
    assert verdict(5, worst < 1e-9, f"50 transforms, max change {worst:.1e} m")


def test_permutation_equivariance(verdict):
    cfg = ScenarioConfig(n_scenes=1, n_vehicles=3, n_vru=2, motion="constant_velocity,circular_arc,lane_change")
    s = generate_synthetic(cfg, 8)[0]
    params = init_params(ModelConfig(variant="HEAT-I-R"), 3)
    a = forward(s, None, params)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        perm = rng.permutation(s.n_agents)
        rank = np.cumsum(s.target_mask) - 1
        p = dataclasses.replace(
            s, agent_ids=s.agent_ids[perm], agent_types=s.agent_types[perm], histories=s.histories[perm],
            current=s.current[perm], target_mask=s.target_mask[perm], map_attrs=s.map_attrs[perm],
            futures=s.futures[rank[perm][s.target_mask[perm]]],
        )
        b = forward(p, None, params)
        order = [int(np.flatnonzero(a.agent_ids == i)[0]) for i in b.agent_ids]
        worst = max(worst, float(np.max(np.abs(a.trajectories[order] - b.trajectories))))
    assert verdict(6, worst <= 1e-12, f"10 relabellings, max row deviation {worst:.1e}")


OVERFIT = dict(lr=2e-3, batch_size=5, amsgrad=True)


@pytest.mark.slow
def test_overfit_mixed_scenes(verdict):
    cfg = ScenarioConfig(n_scenes=50, motion="constant_velocity,circular_arc,lane_change")
    samples = generate_synthetic(cfg, 0)
    start = time.perf_counter()
    result = train(samples, TrainConfig(model=ModelConfig(variant="HEAT-I-R"), epochs=500, val_fraction=0.0,
                                        **OVERFIT))
    seconds = time.perf_counter() - start
    score = evaluate(samples, result.params)["ade"]
    ok = score < 0.1 and seconds < 600.0
    assert verdict(7, ok, f"train ADE {score:.4f} m after 500 epochs, {seconds:.0f}s")


ABLATION = dict(epochs=40, lr=2e-3, batch_size=16)


@pytest.mark.slow
def test_ablation_ordering(verdict):
    cfg = ScenarioConfig(n_scenes=500, n_vehicles=1, n_vru=1, motion="yielding")
    train_set, val_set = split_samples(generate_synthetic(cfg, 0), 0.2)
    scores = {}
    for variant in ("R", "GAT", "HEAT", "HEAT-R"):
        result = train(train_set, TrainConfig(model=ModelConfig(variant=variant), val_fraction=0.0, **ABLATION),
                       val_samples=[])
        scores[variant] = evaluate(val_set, result.params)["ade"]
    tol = 1.05
    ok = (scores["HEAT-R"] <= tol * scores["HEAT"] <= tol * tol * scores["GAT"]
          and scores["HEAT-R"] <= 0.9 * scores["R"])
    detail = ", ".join(f"{k} {v:.3f}" for k, v in scores.items())
    assert verdict(8, ok, f"validation ADE: {detail}")


def test_metric_identities(verdict):
    truth = np.zeros((1, 3, 2))
    offset = truth + np.array([0.3, 0.4])
    two = np.zeros((2, 3, 2))
    pair = two.copy()
    pair[0, 1], pair[1, 1] = [3.0, 0.0], [0.0, 4.0]
    hand = np.array([[[1.0, 0], [2, 0], [3, 0]], [[0, 0], [0, 0], [0, 6.0]]])
    checks = [
        ade(offset, truth) == 0.5, fde(offset, truth) == 0.5, rmse_at(offset, truth, 3) == 0.5,
        rmse_at(pair, two, 2) == math.sqrt(12.5),
        ade(hand, two) == 2.0, fde(hand, two) == 4.5,
    ]
    assert verdict(9, all(checks), f"{sum(checks)}/{len(checks)} hand-computed values reproduced exactly")


def test_round_trips(verdict, tmp_path):
    cfg = ScenarioConfig(n_scenes=3, history=6, horizon=4, map_size=16, map_scale=4.0,
                         motion="constant_velocity,circular_arc,lane_change,yielding")
    scenes = generate_scenes(cfg, 4)
    write_scenes(scenes, tmp_path / "a.csv", tmp_path / "maps_a")
    back = read_scenes(tmp_path / "a.csv", tmp_path / "maps_a")
    write_scenes(back, tmp_path / "b.csv", tmp_path / "maps_b")
    csv_ok = back == scenes and (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    raster = road_raster(32, 1.5, [{"kind": "road", "origin": (0.0, 0.0), "heading": 0.4, "half_width": 3.0}],
                         center=(2.5, -7.0))
    write_raster(raster, tmp_path / "r.pgm")
    loaded = load_raster(tmp_path / "r.pgm")
    write_raster(loaded, tmp_path / "s.pgm")
    pgm_ok = (loaded == raster and isinstance(loaded, MapRaster)
              and (tmp_path / "r.pgm").read_bytes() == (tmp_path / "s.pgm").read_bytes()
              and (tmp_path / "r.meta").read_bytes() == (tmp_path / "s.meta").read_bytes())

    small = ModelConfig(variant="HEAT-I-R", history=6, horizon=4, rnn_width=8, proj_width=4, attr_width=3,
                        type_width=3, heat_width=6, map_size=16, cnn_channels=(2, 2, 2), map_width=4, dec_width=8)
    params = init_params(small, 6)
    save_params(params, tmp_path / "p.bin")
    again = load_params(tmp_path / "p.bin")
    save_params(again, tmp_path / "q.bin")
    params_ok = again.equals(params) and (tmp_path / "p.bin").read_bytes() == (tmp_path / "q.bin").read_bytes()

    samples = generate_synthetic(dataclasses.replace(cfg, n_scenes=6), 2)
    tc = TrainConfig(model=small, epochs=2, batch_size=2, val_fraction=0.3, seed=11)
    train(samples, tc, log_path=tmp_path / "x.jsonl")
    train(samples, tc, log_path=tmp_path / "y.jsonl")
    log_ok = (tmp_path / "x.jsonl").read_bytes() == (tmp_path / "y.jsonl").read_bytes()

    parts = {"csv": csv_ok, "pgm+meta": pgm_ok, "params": params_ok, "logs": log_ok}
    assert verdict(10, all(parts.values()), ", ".join(f"{k} {'ok' if v else 'differs'}" for k, v in parts.items()))
