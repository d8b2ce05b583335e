"""End-to-end finite-difference check of every parameter group on a micro-instance."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .graph import build_graph
from .model import ModelConfig, ModelParams, forward_tensors, init_params, loss_and_grads, mse, stacked_truth
from .scene import ScenarioConfig, SceneSample, generate_synthetic

THRESHOLD = 1e-5


def micro_config(variant: str = "HEAT-I-R") -> ModelConfig:
    return ModelConfig(
        variant=variant, history=5, horizon=3, radius=100.0, rnn_width=6, proj_width=4, attr_width=3,
        type_width=3, heads=3, heat_width=6, heat_layers=2, map_size=16, cnn_channels=(2, 2, 2),
        map_width=4, dec_width=5,
    )


def micro_instance(seed: int = 0) -> SceneSample:
    """Four agents (two of each type), T_h = 5, T_f = 3, 16x16 map."""
    cfg = ScenarioConfig(history=5, horizon=3, n_vehicles=2, n_vru=2, n_scenes=1, map_size=16, map_scale=4.0,
                         motion=("constant_velocity", "circular_arc", "lane_change"), radius=100.0)
    return generate_synthetic(cfg, seed)[0]


@dataclass
class GroupResult:
    group: str
    entries: int
    worst: float

    @property
    def passed(self) -> bool:
        return self.worst < THRESHOLD


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check(params: Optional[ModelParams] = None, sample: Optional[SceneSample] = None, step: float = 1e-4,
          max_entries: Optional[int] = None, seed: int = 0) -> List[GroupResult]:
    """Compare tape gradients with central differences; one result per parameter group.

    ``max_entries`` caps the entries probed per array (chosen by a seeded draw).
    """
    params = params if params is not None else init_params(micro_config(), seed)
    sample = sample if sample is not None else micro_instance(seed)
    graph = build_graph(sample, params.config.radius)
    truth = stacked_truth([sample])
    _, grads = loss_and_grads([sample], params, [graph])
    rng = np.random.default_rng(seed)
    probe = params.copy()

    def value() -> float:
        return float(mse(forward_tensors([sample], [graph], probe), truth).values)

    worst: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    for name, arr in params.arrays.items():
        group = params.group(name)
        flat = probe.arrays[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        g = grads[name].reshape(-1)
        for k in idx:
            old = flat[k]
            f = []
            for offset in (2, 1, -1, -2):
                flat[k] = old + offset * step
                f.append(value())
            flat[k] = old
            # five-point stencil: truncation O(step^4), rounding noise well below the threshold
            numeric = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * step)
            err = relative_error(g[k], numeric)
            worst[group] = max(worst.get(group, 0.0), err)
        counts[group] = counts.get(group, 0) + len(idx)
    return [GroupResult(gname, counts[gname], worst[gname]) for gname in params.groups()]


def report(results: List[GroupResult]) -> str:
    lines = [f"{r.group:<24} {r.entries:>6} {r.worst:.3e} {'ok' if r.passed else 'FAIL'}" for r in results]
    overall = all(r.passed for r in results)
    lines.append(f"{'overall':<24} {sum(r.entries for r in results):>6} "
                 f"{max(r.worst for r in results):.3e} {'ok' if overall else 'FAIL'}")
    return "\n".join(lines)


def run(seed: int = 0, max_entries: Optional[int] = None) -> tuple:
    start = time.perf_counter()
    results = check(seed=seed, max_entries=max_entries)
    return results, time.perf_counter() - start
