"""Mini-batch Adam training, evaluation and the per-epoch JSON-lines log."""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .errors import ConfigurationError, TrainingError
from .graph import build_graph
from .model import ModelConfig, ModelParams, PredictionSet, forward_batch, init_params, loss_and_grads
from .scene import SceneSample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.2
    clip_norm: Optional[float] = None
    amsgrad: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1 or self.eps <= 0 or self.threads < 1:
            raise ConfigurationError("learning rate, epochs, batch size, epsilon and threads must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("moment decays must lie in [0, 1)")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")


class Adam:
    """Adam with bias correction; ``amsgrad`` divides by the running maximum of the second moment."""

    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, amsgrad=False):
        self.lr, self.beta1, self.beta2, self.eps, self.amsgrad = lr, beta1, beta2, eps, amsgrad
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v_max = {k: np.zeros_like(v) for k, v in params.arrays.items()} if amsgrad else None
        self.t = 0

    def step(self, params: ModelParams, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.amsgrad:
                np.maximum(self.v_max[name], v / c2, out=self.v_max[name])
                scale = self.v_max[name]
            else:
                scale = v / c2
            params.arrays[name] = params.arrays[name] - self.lr * (m / c1) / (np.sqrt(scale) + self.eps)


def is_validation(scene_id: str, val_fraction: float) -> bool:
    return zlib.crc32(scene_id.encode("utf-8")) % 1000 < round(1000 * val_fraction)


def split_samples(samples: Sequence[SceneSample], val_fraction: float = 0.2) -> Tuple[list, list]:
    """Deterministic split by a hash of the scene id, so every tick of a scene lands on one side."""
    train, val = [], []
    for s in samples:
        (val if is_validation(s.scene_id, val_fraction) else train).append(s)
    return train, val


def predict(samples: Sequence[SceneSample], params: ModelParams, batch_size: int = 64,
            threads: int = 1) -> List[PredictionSet]:
    samples = [s for s in samples]
    batches = [samples[i : i + batch_size] for i in range(0, len(samples), batch_size)]
    run = lambda b: forward_batch(b, params)
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(b) for b in batches]
    return [p for r in results for p in r]


def evaluate(samples: Sequence[SceneSample], params: ModelParams, batch_size: int = 64,
             threads: int = 1, steps_per_second: int = 10) -> dict:
    """ADE, FDE and per-second RMSE over every target of ``samples``."""
    samples = [s for s in samples if s.target_mask.any()]
    preds = predict(samples, params, batch_size, threads)
    truth = np.concatenate([s.futures for s in samples]) if samples else np.zeros((0, 1, 2))
    out = {"variant": params.config.variant}
    out.update(metrics.summarize(preds, truth, steps_per_second))
    return out


@dataclass
class TrainResult:
    params: ModelParams
    log: List[dict]


def train(samples: Sequence[SceneSample], config: TrainConfig = TrainConfig(),
          params: Optional[ModelParams] = None, val_samples: Optional[Sequence[SceneSample]] = None,
          log_path=None) -> TrainResult:
    """Train ``config.model`` on ``samples``.

    Without ``val_samples`` the set is split by scene-id hash using ``config.val_fraction``.
    """
    samples = [s for s in samples if s.target_mask.any()]
    if not samples:
        raise ConfigurationError("training needs at least one sample with a target")
    if val_samples is None:
        train_set, val_set = split_samples(samples, config.val_fraction)
        if not train_set:
            train_set, val_set = samples, []
    else:
        train_set, val_set = samples, [s for s in val_samples if s.target_mask.any()]
    params = params.copy() if params is not None else init_params(config.model, config.seed)
    mc = params.config
    graphs = [build_graph(s, mc.radius) for s in train_set]
    optimizer = Adam(params, config.lr, config.beta1, config.beta2, config.eps, config.amsgrad)
    shuffle = np.random.default_rng([config.seed, 1])
    records = []
    sink = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle.permutation(len(train_set))
            total, weight = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                value, grads = loss_and_grads([train_set[i] for i in idx], params, [graphs[i] for i in idx])
                if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingError("loss diverged (non-finite value or gradient)", epoch)
                if config.clip_norm is not None:
                    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                    if norm > config.clip_norm:
                        grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
                optimizer.step(params, grads)
                total += value * len(idx)
                weight += len(idx)
            record = {"epoch": epoch, "train_loss": total / weight, "val_ade": None, "val_fde": None}
            if val_set:
                m = evaluate(val_set, params, threads=config.threads)
                record["val_ade"], record["val_fde"] = m["ade"], m["fde"]
            records.append(record)
            log.info("epoch %d loss %.6g val_ade %s", epoch, record["train_loss"], record["val_ade"])
            if sink is not None:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return TrainResult(params, records)


def read_log(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
