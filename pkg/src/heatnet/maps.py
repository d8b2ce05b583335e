"""Rasterized scene maps, the convolutional map encoder, and the per-agent map gate."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, FormatError, MetadataError


@dataclass(frozen=True, eq=False)
class MapRaster:
    """Square grayscale top view. Row 0 is the north (max-y) edge."""

    pixels: np.ndarray
    scale: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise FormatError(f"raster must be 2-D, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise FormatError("raster intensities must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def half_extent(self) -> float:
        return self.pixels.shape[1] * self.scale / 2.0

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """World x, y of every pixel centre, each [H, W]."""
        h, w = self.pixels.shape
        cols = (np.arange(w) + 0.5 - w / 2.0) * self.scale + self.center[0]
        rows = (h / 2.0 - np.arange(h) - 0.5) * self.scale + self.center[1]
        return np.meshgrid(cols, rows)

    def __eq__(self, other):
        if not isinstance(other, MapRaster):
            return NotImplemented
        return (
            self.scale == other.scale
            and self.center == other.center
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# PGM + sidecar I/O


def _meta_path(path) -> str:
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".meta"


def write_raster(raster: MapRaster, path) -> None:
    """Write a binary PGM (P5, maxval 255) plus its ``.meta`` sidecar."""
    h, w = raster.pixels.shape
    data = np.round(raster.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        fh.write(f"{raster.scale!r}\n{raster.center[0]!r}\n{raster.center[1]!r}\n")


def _pgm_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def load_raster(path) -> MapRaster:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (bad magic {buf[:2]!r})")
    (_, w, h, maxval), offset = _pgm_tokens(buf, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: max value must be 255, got {maxval}")
    body = buf[offset:]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w) / 255.0

    meta = _meta_path(path)
    if not os.path.exists(meta):
        raise MetadataError(f"missing map sidecar {meta}")
    with open(meta, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3:
        raise MetadataError(f"{meta}: expected three lines, found {len(lines)}")
    try:
        scale, cx, cy = (float(v) for v in lines[:3])
    except ValueError as exc:
        raise MetadataError(f"{meta}: expected scale, center-x, center-y lines") from exc
    return MapRaster(pixels, scale, (cx, cy))


# ---------------------------------------------------------------------------
# encoder


@dataclass
class CnnParams:
    """Three stride-2 3x3 convolutions followed by a flatten + linear head."""

    kernels: List[np.ndarray]
    biases: List[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def out_width(self) -> int:
        return self.head_w.shape[1]


def cnn_output_side(size: int, layers: int = 3) -> int:
    for _ in range(layers):
        size = (size + 2 - 3) // 2 + 1
    return size


def init_cnn(rng: np.random.Generator, size: int, channels: Sequence[int] = (4, 8, 8), out_width: int = 32) -> CnnParams:
    kernels, biases, c_in = [], [], 1
    for c_out in channels:
        bound = np.sqrt(6.0 / (c_in * 9 + c_out * 9))
        kernels.append(rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)))
        # a small positive bias keeps blank map regions off the leaky-ReLU kink
        biases.append(np.full(c_out, 0.01))
        c_in = c_out
    side = cnn_output_side(size, len(channels))
    flat = c_in * side * side
    bound = np.sqrt(6.0 / (flat + out_width))
    return CnnParams(kernels, biases, rng.uniform(-bound, bound, size=(flat, out_width)), np.zeros(out_width))


def encode_maps(pixels, kernels, biases, head_w, head_b, slope: float = 0.2) -> ad.Tensor:
    """Encode a batch of rasters [B, H, W] to features [B, F_map].

    Arguments may be plain arrays or tape tensors.
    """
    px = ad.constant(pixels)
    b = px.shape[0]
    x = ad.reshape(px, (b, 1) + px.shape[1:])
    for k, bias in zip(kernels, biases):
        x = ad.leaky_relu(ad.conv2d(x, k, bias, stride=2, pad=1), slope)
    flat = ad.reshape(x, (b, int(np.prod(x.shape[1:]))))
    w = ad.constant(head_w)
    if flat.shape[1] != w.shape[0]:
        raise ConfigurationError(
            f"raster of side {px.shape[1]} flattens to {flat.shape[1]} features; head expects {w.shape[0]}"
        )
    return ad.add_bias(ad.matmul(flat, w), head_b)


def encode_map(raster: MapRaster, params: CnnParams, slope: float = 0.2) -> np.ndarray:
    """Map feature vector of one raster."""
    expected = cnn_output_side(raster.size, len(params.kernels))
    if params.head_w.shape[0] != params.kernels[-1].shape[0] * expected * expected:
        raise ConfigurationError(f"encoder was built for a different raster size than {raster.pixels.shape}")
    out = encode_maps(raster.pixels[None], params.kernels, params.biases, params.head_w, params.head_b, slope)
    return out.values[0].copy()


# ---------------------------------------------------------------------------
# gate


@dataclass
class GateParams:
    weight: np.ndarray  # [F_map + 6, F_map]
    bias: np.ndarray  # [F_map]


def gate_rows(map_features, agent_attrs, weight, bias) -> ad.Tensor:
    """Batched gate: rows of ``map_features`` [n, F] gated by ``agent_attrs`` [n, 6]."""
    mf = ad.constant(map_features)
    z = ad.sigmoid(ad.add_bias(ad.matmul(ad.concat([mf, agent_attrs], axis=1), weight), bias))
    return ad.mul(z, mf)


def gate_select(map_feature, agent_attr, params: GateParams) -> np.ndarray:
    """Selected map feature ``sigmoid(W [M || s] + b) * M`` for one agent."""
    mf = np.asarray(map_feature, dtype=np.float64)[None]
    s = np.asarray(agent_attr, dtype=np.float64)[None]
    if params.weight.shape != (mf.shape[1] + s.shape[1], mf.shape[1]):
        raise ConfigurationError(f"gate weight {params.weight.shape} does not fit map width {mf.shape[1]}")
    return gate_rows(mf, s, params.weight, params.bias).values[0].copy()


# ---------------------------------------------------------------------------
# synthetic rasters


def _band(xs, ys, origin, heading, half_width):
    ux, uy = np.cos(heading), np.sin(heading)
    lateral = -(xs - origin[0]) * uy + (ys - origin[1]) * ux
    return np.abs(lateral) <= half_width


def road_raster(size: int, scale: float, features: Sequence[dict], center=(0.0, 0.0)) -> MapRaster:
    """Draw straight roads, rings and crosswalks into a fresh raster.

    Each feature is a dict with ``kind`` in {"road", "ring", "crosswalk"}.
    Intensities are multiples of 1/255 so PGM round trips are exact.
    """
    blank = MapRaster(np.zeros((size, size)), scale, center)
    xs, ys = blank.pixel_centers()
    img = np.zeros((size, size))
    for f in features:
        if f["kind"] == "road":
            img = np.where(_band(xs, ys, f["origin"], f["heading"], f["half_width"]), np.maximum(img, 200), img)
        elif f["kind"] == "ring":
            r = np.hypot(xs - f["center"][0], ys - f["center"][1])
            img = np.where(np.abs(r - f["radius"]) <= f["half_width"], np.maximum(img, 255), img)
        elif f["kind"] == "crosswalk":
            img = np.where(_band(xs, ys, f["origin"], f["heading"], 1.5), np.maximum(img, 120), img)
        else:
            raise ConfigurationError(f"unknown map feature {f['kind']!r}")
    return MapRaster(img / 255.0, scale, center)
