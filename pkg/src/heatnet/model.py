"""The three-channel predictor: dynamics (GRU), interaction (HEAT/GAT) and gated map features."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import heat, maps, recurrent
from .errors import CompatibilityError, ConfigurationError
from .graph import InteractionGraph, build_graph, merge_graphs
from .scene import AGENT_TYPES, SceneSample, to_global

VARIANTS = ("R", "GAT", "GAT-R", "HEAT", "HEAT-R", "HEAT-I-R")
HISTORY_FEATURES = 6


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "HEAT-I-R"
    history: int = 10
    horizon: int = 30
    radius: float = 30.0
    rnn_width: int = 64
    proj_width: int = 32
    attr_width: int = 8
    type_width: int = 8
    heads: int = 3
    heat_width: int = 48
    heat_layers: int = 2
    map_size: int = 64
    cnn_channels: Tuple[int, ...] = (4, 8, 8)
    map_width: int = 32
    dec_width: int = 128
    slope: float = 0.2
    conditioning: str = "repeat"
    # fixed input/output scaling in metres and metres per second
    pos_scale: float = 10.0
    vel_scale: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "cnn_channels", tuple(int(c) for c in self.cnn_channels))
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.heat_width % self.heads:
            raise ConfigurationError(f"heat_width {self.heat_width} not divisible by {self.heads} heads")
        if self.history < 1 or self.horizon < 1:
            raise ConfigurationError("history and horizon must be positive")
        if self.conditioning not in ("repeat", "first"):
            raise ConfigurationError(f"unknown decoder conditioning {self.conditioning!r}")

    @property
    def uses_dynamics(self) -> bool:
        return self.variant in ("R", "GAT-R", "HEAT-R", "HEAT-I-R")

    @property
    def uses_interaction(self) -> bool:
        return self.variant != "R"

    @property
    def uses_map(self) -> bool:
        return self.variant == "HEAT-I-R"

    @property
    def is_gat(self) -> bool:
        return self.variant.startswith("GAT")

    @property
    def decoder_width(self) -> int:
        return (self.rnn_width * self.uses_dynamics + self.heat_width * self.uses_interaction
                + self.map_width * self.uses_map)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def group(self, name: str) -> str:
        parts = name.split(".")
        return ".".join(parts[:2]) if parts[0] in ("gru", "lstm", "heat") else parts[0]

    def groups(self) -> List[str]:
        seen = []
        for name in self.arrays:
            g = self.group(name)
            if g not in seen:
                seen.append(g)
        return seen

    def size(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def equals(self, other: "ModelParams") -> bool:
        return (
            self.config == other.config
            and list(self.arrays) == list(other.arrays)
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
        )


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    arrays: Dict[str, np.ndarray] = {}

    def put(prefix, obj):
        for f in fields(obj):
            arrays[f"{prefix}.{f.name}"] = np.asarray(getattr(obj, f.name), dtype=np.float64)

    for kind in AGENT_TYPES:
        put(f"gru.{kind}", recurrent.init_gru(rng, HISTORY_FEATURES, config.rnn_width))
    if config.uses_interaction:
        width = config.rnn_width
        n_types = 1 if config.is_gat else len(AGENT_TYPES)
        for layer in range(config.heat_layers):
            lp = heat.init_heat_layer(
                rng, width, config.proj_width,
                0 if config.is_gat else config.attr_width,
                0 if config.is_gat else config.type_width,
                config.heat_width, config.heads, n_types, len(AGENT_TYPES) ** 2, config.slope,
            )
            for name, arr in lp.arrays().items():
                arrays[f"heat.{layer}.{name}"] = arr
            width = config.heat_width
    if config.uses_map:
        cnn = maps.init_cnn(rng, config.map_size, config.cnn_channels, config.map_width)
        for k, (kern, bias) in enumerate(zip(cnn.kernels, cnn.biases)):
            arrays[f"cnn.kernel.{k}"] = kern
            arrays[f"cnn.bias.{k}"] = bias
        arrays["cnn.head_w"] = cnn.head_w
        arrays["cnn.head_b"] = cnn.head_b
        bound = np.sqrt(6.0 / (2 * config.map_width + 6))
        arrays["gate.weight"] = rng.uniform(-bound, bound, size=(config.map_width + 6, config.map_width))
        arrays["gate.bias"] = np.zeros(config.map_width)
    for kind in AGENT_TYPES:
        put(f"lstm.{kind}", recurrent.init_lstm(rng, config.decoder_width, config.dec_width))
    return ModelParams(config, arrays)


@dataclass
class Network:
    """Structured view of a parameter set; leaves may be arrays or tape tensors."""

    gru: List[recurrent.GruParams]
    heat: List[heat.HeatLayerParams]
    cnn: Optional[maps.CnnParams]
    gate: Optional[maps.GateParams]
    lstm: List[recurrent.LstmDecoderParams]


def structure(params: ModelParams, values: Optional[Dict[str, object]] = None) -> Network:
    cfg = params.config
    v = values if values is not None else params.arrays

    def grab(cls, prefix):
        return cls(**{f.name: v[f"{prefix}.{f.name}"] for f in fields(cls)})

    gru = [grab(recurrent.GruParams, f"gru.{k}") for k in AGENT_TYPES]
    lstm = [grab(recurrent.LstmDecoderParams, f"lstm.{k}") for k in AGENT_TYPES]
    layers = []
    if cfg.uses_interaction:
        n_types = 1 if cfg.is_gat else len(AGENT_TYPES)
        for layer in range(cfg.heat_layers):
            p = f"heat.{layer}"
            layers.append(heat.HeatLayerParams(
                node_proj=[v[f"{p}.node_proj.{k}"] for k in range(n_types)],
                attr_proj=v[f"{p}.attr_proj"], type_proj=v[f"{p}.type_proj"],
                attention=v[f"{p}.attention"], aggregate=v[f"{p}.aggregate"], slope=cfg.slope,
            ))
    cnn = gate = None
    if cfg.uses_map:
        n = len(cfg.cnn_channels)
        cnn = maps.CnnParams([v[f"cnn.kernel.{k}"] for k in range(n)], [v[f"cnn.bias.{k}"] for k in range(n)],
                             v["cnn.head_w"], v["cnn.head_b"])
        gate = maps.GateParams(v["gate.weight"], v["gate.bias"])
    return Network(gru, layers, cnn, gate, lstm)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Per-target trajectories [m, T_f, 2] in each target's exclusive frame."""

    scene_id: str
    agent_ids: np.ndarray
    trajectories: np.ndarray
    anchors: np.ndarray  # [m, 5] global states at the decision tick

    def global_trajectories(self) -> np.ndarray:
        return np.stack([to_global(tr, a) for tr, a in zip(self.trajectories, self.anchors)]) \
            if len(self.trajectories) else np.zeros((0,) + self.trajectories.shape[1:])


# ---------------------------------------------------------------------------
# forward


def history_features(histories: np.ndarray, config: ModelConfig) -> np.ndarray:
    """[n, T, 5] local states -> [n, T, 6] scaled (x, y, vx, vy, cos yaw, sin yaw)."""
    h = np.asarray(histories, dtype=np.float64)
    out = np.empty(h.shape[:-1] + (HISTORY_FEATURES,))
    out[..., 0:2] = h[..., 0:2] / config.pos_scale
    out[..., 2:4] = h[..., 2:4] / config.vel_scale
    out[..., 4] = np.cos(h[..., 4])
    out[..., 5] = np.sin(h[..., 4])
    return out


def scaled_graph(graph: InteractionGraph, config: ModelConfig) -> InteractionGraph:
    attrs = np.array(graph.attrs)
    attrs[:, 0:2] /= config.pos_scale
    attrs[:, 2:4] /= config.vel_scale
    return replace(graph, attrs=attrs)


def scaled_map_attrs(attrs: np.ndarray, config: ModelConfig) -> np.ndarray:
    out = np.array(attrs, dtype=np.float64)
    out[:, 2:4] /= config.vel_scale
    return out


@dataclass
class Channels:
    """Intermediate per-agent features of one batched forward pass (all agents, batch order)."""

    dynamics: Optional[ad.Tensor]
    interaction: Optional[ad.Tensor]
    map_selected: Optional[ad.Tensor]
    map_features: Optional[ad.Tensor]


def forward_tensors(samples: Sequence[SceneSample], graphs: Sequence[InteractionGraph], params: ModelParams,
                    values: Optional[Dict[str, object]] = None, channels_out: Optional[list] = None,
                    overrides: Optional[Dict[str, np.ndarray]] = None) -> ad.Tensor:
    """Batched forward: predicted local positions [M, 2 * T_f] for all targets of all samples, in order.

    ``values`` substitutes tape tensors for the parameter arrays.
    ``overrides`` maps "interaction" or "map" to fixed feature rows (all agents, batch order)
    that replace the computed channel.
    """
    cfg = params.config
    net = structure(params, values)
    overrides = overrides or {}
    if not samples:
        raise ConfigurationError("forward needs at least one sample")
    for s in samples:
        if s.history_len != cfg.history:
            raise ConfigurationError(f"sample history {s.history_len} != model history {cfg.history}")
    types = np.concatenate([s.agent_types for s in samples])
    masks = [types == k for k in range(len(AGENT_TYPES))]
    feats = history_features(np.concatenate([s.histories for s in samples]), cfg)

    dyn = recurrent.route_by_type(feats, masks, net.gru, recurrent.gru_rows)
    parts = []
    if cfg.uses_dynamics:
        parts.append(dyn)
    inter = None
    if cfg.uses_interaction:
        merged, _ = merge_graphs([scaled_graph(g, cfg) for g in graphs])
        if merged.n_nodes != dyn.shape[0]:
            raise ConfigurationError("graphs do not match the samples' agents")
        inter = heat.heat_stack(merged, dyn, net.heat)
        if "interaction" in overrides:
            inter = ad.constant(overrides["interaction"])
        parts.append(inter)
    selected = map_feats = None
    if cfg.uses_map:
        if "map" in overrides:
            selected = ad.constant(overrides["map"])
        else:
            if any(s.map is None for s in samples):
                raise ConfigurationError("the map channel needs a raster for every sample")
            if any(s.map.size != cfg.map_size for s in samples):
                raise ConfigurationError(f"map rasters must be {cfg.map_size}x{cfg.map_size}")
            rasters = np.stack([s.map.pixels for s in samples])
            map_feats = maps.encode_maps(rasters, net.cnn.kernels, net.cnn.biases, net.cnn.head_w,
                                         net.cnn.head_b, cfg.slope)
            owner = np.concatenate([np.full(s.n_agents, k) for k, s in enumerate(samples)])
            attrs = scaled_map_attrs(np.concatenate([s.map_attrs for s in samples]), cfg)
            selected = maps.gate_rows(ad.take_rows(map_feats, owner), attrs, net.gate.weight, net.gate.bias)
        parts.append(selected)
    if channels_out is not None:
        channels_out.append(Channels(dyn, inter, selected, map_feats))
    joint = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
    if joint.shape[1] != cfg.decoder_width:
        raise ConfigurationError(f"decoder expects {cfg.decoder_width} features, got {joint.shape[1]}")

    targets = np.concatenate([np.flatnonzero(s.target_mask) + off
                              for s, off in zip(samples, np.cumsum([0] + [s.n_agents for s in samples]))])
    target_types = types[targets]
    tmasks = [target_types == k for k in range(len(AGENT_TYPES))]
    decode = lambda rows, p: recurrent.lstm_rows(rows, p, cfg.horizon, cfg.conditioning)
    raw = recurrent.route_by_type(ad.take_rows(joint, targets), tmasks, net.lstm, decode)
    return ad.mul(raw, cfg.pos_scale)


def _split(samples: Sequence[SceneSample], flat: np.ndarray, horizon: int) -> List[PredictionSet]:
    out, pos = [], 0
    for s in samples:
        m = int(s.target_mask.sum())
        traj = flat[pos : pos + m].reshape(m, horizon, 2)
        out.append(PredictionSet(s.scene_id, s.agent_ids[s.target_mask].copy(), traj,
                                 s.current[s.target_mask].copy()))
        pos += m
    return out


def forward_batch(samples: Sequence[SceneSample], params: ModelParams,
                  graphs: Optional[Sequence[InteractionGraph]] = None) -> List[PredictionSet]:
    graphs = graphs if graphs is not None else [build_graph(s, params.config.radius) for s in samples]
    flat = forward_tensors(samples, graphs, params).values
    return _split(samples, flat, params.config.horizon)


def forward(sample: SceneSample, graph: Optional[InteractionGraph], params: ModelParams) -> PredictionSet:
    """Predict every target of one sample in a single pass."""
    return forward_batch([sample], params, [graph] if graph is not None else None)[0]


# ---------------------------------------------------------------------------
# loss and gradients


def stacked_truth(samples: Sequence[SceneSample]) -> np.ndarray:
    return np.concatenate([s.futures.reshape(s.futures.shape[0], -1) for s in samples])


def mse(pred, truth) -> ad.Tensor:
    """Squared displacement averaged over targets and steps, for flat [M, 2 * T_f] rows."""
    pred = ad.constant(pred)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"prediction {pred.shape} and truth {truth.shape} differ")
    # x and y are summed, so the mean over all entries is scaled by two
    return ad.mul(ad.mean_all(ad.square(ad.sub(pred, truth))), 2.0)


def loss(pred: Sequence[PredictionSet] | PredictionSet, truth) -> float:
    """Squared displacement (x and y summed) averaged over targets and steps."""
    if isinstance(pred, PredictionSet):
        pred = [pred]
        truth = [truth]
    p = np.concatenate([ps.trajectories for ps in pred]) if pred else np.zeros((0, 1, 2))
    t = np.concatenate([np.asarray(tr, dtype=np.float64) for tr in truth]) if truth else np.zeros((0, 1, 2))
    if p.shape != t.shape:
        raise ConfigurationError(f"target count/horizon mismatch: {p.shape} vs {t.shape}")
    return float(np.mean(np.sum((p - t) ** 2, axis=-1)))


def loss_and_grads(samples: Sequence[SceneSample], params: ModelParams,
                   graphs: Optional[Sequence[InteractionGraph]] = None) -> Tuple[float, Dict[str, np.ndarray]]:
    graphs = graphs if graphs is not None else [build_graph(s, params.config.radius) for s in samples]
    with ad.Tape() as tape:
        leaves = {name: tape.leaf(arr) for name, arr in params.arrays.items()}
        pred = forward_tensors(samples, graphs, params, leaves)
        value = mse(pred, stacked_truth(samples))
    grads = ad.backward(value)
    return float(value.values), {name: grads[t.node].values for name, t in leaves.items()}


# ---------------------------------------------------------------------------
# persistence

MAGIC = b"HEATNET\x00"
FORMAT_VERSION = 1


def save_params(params: ModelParams, path) -> None:
    """Versioned header (JSON: config, names, shapes) followed by little-endian float64 values."""
    header = json.dumps({
        "config": params.config.to_dict(),
        "params": [[name, list(arr.shape)] for name, arr in params.arrays.items()],
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for arr in params.arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path, expect: Optional[ModelConfig] = None, variant: Optional[str] = None) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CompatibilityError(f"{path}: not a parameter file")
    version, hlen = struct.unpack_from("<II", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CompatibilityError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        layout = [(name, tuple(shape)) for name, shape in header["params"]]
    except (ValueError, KeyError, TypeError, ConfigurationError) as exc:
        raise CompatibilityError(f"{path}: unreadable header ({exc})") from None
    body = blob[start + hlen :]
    total = sum(int(np.prod(shape)) for _, shape in layout)
    if len(body) != 8 * total:
        raise CompatibilityError(f"{path}: expected {8 * total} value bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    arrays, pos = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        arrays[name] = values[pos : pos + n].reshape(shape).copy()
        pos += n
    params = ModelParams(config, arrays)
    reference = init_params(config, 0)
    if [(k, a.shape) for k, a in reference.arrays.items()] != [(k, a.shape) for k, a in arrays.items()]:
        raise CompatibilityError(f"{path}: parameter layout does not match variant {config.variant}")
    if variant is not None and config.variant != variant:
        raise CompatibilityError(f"{path}: holds variant {config.variant}, expected {variant}")
    if expect is not None and expect != config:
        diff = [f.name for f in fields(ModelConfig) if getattr(expect, f.name) != getattr(config, f.name)]
        raise CompatibilityError(f"{path}: configuration differs in {', '.join(diff)}")
    return params
