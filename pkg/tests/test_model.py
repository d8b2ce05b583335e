import dataclasses
import json
import math
import struct

import numpy as np
import pytest

from heatnet import maps, model
from heatnet.errors import CompatibilityError, ConfigurationError
from heatnet.graph import build_graph
from heatnet.heat import heat_stack
from heatnet.maps import encode_map, gate_select
from heatnet.model import (
    ModelConfig, PredictionSet, forward, forward_batch, forward_tensors, history_features, init_params,
    load_params, loss, loss_and_grads, save_params, scaled_graph, scaled_map_attrs, structure,
)
from heatnet.recurrent import gru_encode, lstm_decode
from heatnet.scene import (
    AgentTrack, Scene, ScenarioConfig, VEHICLE, VRU, constant_velocity_states, generate_scenes, make_sample,
    rigid_transform_scene,
)


def small(variant="HEAT-I-R", **kw):
    base = dict(variant=variant, history=6, horizon=4, rnn_width=8, proj_width=4, attr_width=3, type_width=3,
                heads=3, heat_width=6, heat_layers=2, map_size=16, cnn_channels=(2, 3, 2), map_width=5,
                dec_width=7)
    base.update(kw)
    return ModelConfig(**base)


def scenario(**kw):
    base = dict(history=6, horizon=4, n_vehicles=2, n_vru=1, map_size=16, map_scale=4.0,
                motion=("constant_velocity", "circular_arc", "lane_change"), n_scenes=1)
    base.update(kw)
    return ScenarioConfig(**base)


def sample_for(seed=0, **kw):
    cfg = scenario(**kw)
    scene = generate_scenes(cfg, seed)[0]
    return make_sample(scene, cfg.history - 1, cfg.history, cfg.horizon)


def test_decoder_width_chains():
    for variant, width in [("R", 8), ("GAT", 6), ("GAT-R", 14), ("HEAT", 6), ("HEAT-R", 14), ("HEAT-I-R", 19)]:
        cfg = small(variant)
        assert cfg.decoder_width == width
        params = init_params(cfg, 0)
        assert params.arrays["lstm.vehicle.w_i"].shape == (width, 7)


def test_gat_variant_has_single_node_type_and_no_edge_projection():
    params = init_params(small("GAT"), 0)
    assert "heat.0.node_proj.1" not in params.arrays
    assert params.arrays["heat.0.attr_proj"].shape == (6, 0)
    assert params.arrays["heat.0.type_proj"].shape == (4, 0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(variant="LSTM")
    with pytest.raises(ConfigurationError):
        ModelConfig(heat_width=47)
    with pytest.raises(ConfigurationError):
        ModelConfig(conditioning="every")


def test_zero_decoder_gives_zero_trajectories():
    params = init_params(small("R"), 0)
    for kind in ("vehicle", "pedestrian_bicycle"):
        params.arrays[f"lstm.{kind}.out_w"][:] = 0.0
        params.arrays[f"lstm.{kind}.out_b"][:] = 0.0
    pred = forward(sample_for(), None, params)
    assert pred.trajectories.shape == (3, 4, 2)
    assert not pred.trajectories.any()


def test_single_agent_scene():
    s = sample_for(n_vehicles=1, n_vru=0)
    graph = build_graph(s)
    assert graph.n_edges == 1
    pred = forward(s, graph, init_params(small(), 1))
    assert pred.trajectories.shape == (1, 4, 2) and np.isfinite(pred.trajectories).all()


def test_matches_channel_by_channel_composition():
    cfg = small()
    params = init_params(cfg, 2)
    net = structure(params)
    s = sample_for(3)
    feats = history_features(s.histories, cfg)
    r = np.stack([gru_encode(feats[i], net.gru[s.agent_types[i]]) for i in range(s.n_agents)])
    g = heat_stack(scaled_graph(build_graph(s, cfg.radius), cfg), r, net.heat).values
    mfeat = encode_map(s.map, net.cnn)
    attrs = scaled_map_attrs(s.map_attrs, cfg)
    m = np.stack([gate_select(mfeat, attrs[i], net.gate) for i in range(s.n_agents)])
    expected = np.stack([
        cfg.pos_scale * lstm_decode(np.concatenate([r[i], g[i], m[i]]), net.lstm[s.agent_types[i]], cfg.horizon)
        for i in s.targets
    ])
    got = forward(s, None, params).trajectories
    assert np.max(np.abs(got - expected)) < 1e-12


def test_gate_zero_reduces_to_heat_r():
    full = init_params(small("HEAT-I-R"), 4)
    reduced_cfg = small("HEAT-R")
    keep = reduced_cfg.decoder_width
    arrays = {}
    for name in init_params(reduced_cfg, 0).arrays:
        arr = full.arrays[name]
        if name.startswith("lstm.") and name.split(".")[-1].startswith("w_"):
            arr = arr[:keep]
        arrays[name] = arr.copy()
    reduced = model.ModelParams(reduced_cfg, arrays)
    s = sample_for(5)
    g = build_graph(s)
    a = forward_tensors([s], [g], full, overrides={"map": np.zeros((s.n_agents, 5))}).values
    b = forward_tensors([s], [g], reduced).values
    assert np.max(np.abs(a - b)) <= 1e-14


def test_interaction_zero_reduces_to_r():
    full = init_params(small("HEAT-R"), 6)
    reduced_cfg = small("R")
    arrays = {}
    for name in init_params(reduced_cfg, 0).arrays:
        arr = full.arrays[name]
        if name.startswith("lstm.") and name.split(".")[-1].startswith("w_"):
            arr = arr[: reduced_cfg.decoder_width]
        arrays[name] = arr.copy()
    reduced = model.ModelParams(reduced_cfg, arrays)
    s = sample_for(7)
    g = build_graph(s)
    a = forward_tensors([s], [g], full, overrides={"interaction": np.zeros((s.n_agents, 6))}).values
    b = forward_tensors([s], [g], reduced).values
    assert np.max(np.abs(a - b)) <= 1e-14


def test_removing_non_neighbour_leaves_prediction_unchanged():
    times = np.arange(10) * 0.1
    near_a = AgentTrack(0, VEHICLE, 0, constant_velocity_states((0, 0), 0.0, 5.0, times))
    near_b = AgentTrack(1, VRU, 0, constant_velocity_states((3, 4), 1.0, 1.0, times))
    far = AgentTrack(2, VEHICLE, 0, constant_velocity_states((0, 20), 0.0, 5.0, times))
    cfg = small("HEAT-R", heat_layers=1, radius=10.0)
    params = init_params(cfg, 8)
    with_far = make_sample(Scene("x", (near_a, near_b, far)), 5, 6, 4)
    without = make_sample(Scene("x", (near_a, near_b)), 5, 6, 4)
    a = forward(with_far, None, params).trajectories
    b = forward(without, None, params).trajectories
    assert np.max(np.abs(a[:2] - b)) < 1e-12


def test_se2_invariance_with_map_held_fixed():
    cfg = small()
    params = init_params(cfg, 9)
    sc = scenario()
    scene = generate_scenes(sc, 11)[0]
    base = make_sample(scene, sc.history - 1, sc.history, sc.horizon)
    ref = forward(base, None, params).trajectories
    rng = np.random.default_rng(0)
    for _ in range(5):
        moved = rigid_transform_scene(scene, rng.uniform(-math.pi, math.pi), *rng.uniform(-200, 200, size=2))
        s = make_sample(moved, sc.history - 1, sc.history, sc.horizon)
        s = dataclasses.replace(s, map_attrs=base.map_attrs)
        assert np.max(np.abs(forward(s, None, params).trajectories - ref)) < 1e-9


def test_agent_relabelling_permutes_rows():
    cfg = small()
    params = init_params(cfg, 10)
    s = sample_for(12, n_vehicles=3, n_vru=2)
    perm = np.array([3, 0, 4, 2, 1])
    t_rank = np.cumsum(s.target_mask) - 1
    p = dataclasses.replace(
        s, agent_ids=s.agent_ids[perm], agent_types=s.agent_types[perm], histories=s.histories[perm],
        current=s.current[perm], target_mask=s.target_mask[perm], map_attrs=s.map_attrs[perm],
        futures=s.futures[t_rank[perm][s.target_mask[perm]]],
    )
    a = forward(s, None, params)
    b = forward(p, None, params)
    order = [int(np.flatnonzero(a.agent_ids == i)[0]) for i in b.agent_ids]
    assert np.max(np.abs(a.trajectories[order] - b.trajectories)) < 1e-12


def test_batched_forward_equals_individual_passes():
    cfg = small()
    params = init_params(cfg, 13)
    samples = [sample_for(k) for k in range(3)]
    batch = forward_batch(samples, params)
    for s, b in zip(samples, batch):
        single = forward(s, None, params)
        assert np.max(np.abs(single.trajectories - b.trajectories)) < 1e-12
        np.testing.assert_array_equal(single.agent_ids, b.agent_ids)


def test_map_encoded_once_per_scene(monkeypatch):
    calls = []
    original = maps.encode_maps

    def counting(pixels, *args, **kw):
        calls.append(np.shape(pixels)[0])
        return original(pixels, *args, **kw)

    monkeypatch.setattr(maps, "encode_maps", counting)
    params = init_params(small(), 14)
    forward(sample_for(15, n_vehicles=3, n_vru=1), None, params)
    assert calls == [1]
    calls.clear()
    forward_batch([sample_for(k) for k in range(4)], params)
    assert calls == [4]


def test_map_channel_requires_raster():
    s = dataclasses.replace(sample_for(), map=None)
    with pytest.raises(ConfigurationError):
        forward(s, None, init_params(small(), 0))


def test_history_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        forward(sample_for(history=5), None, init_params(small(), 0))


def test_global_trajectories_invert_frame():
    s = sample_for(16)
    pred = forward(s, None, init_params(small(), 16))
    glob = pred.global_trajectories()
    for k, anchor in enumerate(pred.anchors):
        c, sn = math.cos(anchor[4]), math.sin(anchor[4])
        for step in range(4):
            x, y = pred.trajectories[k, step]
            assert glob[k, step, 0] == pytest.approx(anchor[0] + c * x - sn * y, abs=1e-12)
            assert glob[k, step, 1] == pytest.approx(anchor[1] + sn * x + c * y, abs=1e-12)


def test_loss_examples():
    traj = np.random.default_rng(0).normal(size=(2, 3, 2))
    pred = PredictionSet("a", np.array([0, 1]), traj, np.zeros((2, 5)))
    assert loss(pred, traj) == 0.0
    shifted = traj.copy()
    shifted[..., 0] += 1.0
    assert loss(pred, shifted) == pytest.approx(1.0, abs=1e-15)
    other = np.random.default_rng(1).normal(size=(2, 3, 2))
    acc = 0.0
    for v in (traj - other).reshape(-1):
        acc += v * v
    assert abs(loss(pred, other) - acc / 6) < 1e-12
    with pytest.raises(ConfigurationError):
        loss(pred, other[:1])


def test_gradients_cover_every_parameter():
    params = init_params(small(), 17)
    value, grads = loss_and_grads([sample_for(18)], params)
    assert value > 0 and set(grads) == set(params.arrays)
    assert all(grads[k].shape == params.arrays[k].shape for k in grads)
    assert all(np.any(grads[k] != 0) for k in grads)


def test_params_round_trip(tmp_path):
    params = init_params(small(), 19)
    path = tmp_path / "p.bin"
    save_params(params, path)
    back = load_params(path)
    assert back.equals(params)
    assert load_params(path, expect=small(), variant="HEAT-I-R").equals(params)


def test_truncated_and_foreign_files(tmp_path):
    params = init_params(small(), 20)
    path = tmp_path / "p.bin"
    save_params(params, path)
    blob = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(blob[:-8])
    with pytest.raises(CompatibilityError):
        load_params(tmp_path / "short.bin")
    (tmp_path / "junk.bin").write_bytes(b"not a parameter file")
    with pytest.raises(CompatibilityError):
        load_params(tmp_path / "junk.bin")
    with pytest.raises(CompatibilityError):
        load_params(path, expect=small(horizon=5))


def test_variant_mismatch_on_load(tmp_path):
    path = tmp_path / "heat.bin"
    save_params(init_params(small("HEAT"), 0), path)
    with pytest.raises(CompatibilityError):
        load_params(path, variant="HEAT-I-R")
    with pytest.raises(CompatibilityError):
        load_params(path, expect=small("HEAT-I-R"))
    # header claims HEAT-I-R but the arrays are HEAT's
    blob = path.read_bytes()
    (hlen,) = struct.unpack_from("<I", blob, 12)
    header = json.loads(blob[16 : 16 + hlen])
    header["config"]["variant"] = "HEAT-I-R"
    text = json.dumps(header).encode()
    (tmp_path / "forged.bin").write_bytes(blob[:12] + struct.pack("<I", len(text)) + text + blob[16 + hlen :])
    with pytest.raises(CompatibilityError, match="layout"):
        load_params(tmp_path / "forged.bin")
