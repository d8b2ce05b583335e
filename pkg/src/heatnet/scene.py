"""Scene records, exclusive coordinate frames, scene CSV I/O and synthetic scenarios."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ParseError, SchemaError, TruncationError
from .maps import MapRaster, load_raster, road_raster

VEHICLE, VRU = 0, 1
AGENT_TYPES = ("vehicle", "pedestrian_bicycle")
CSV_TYPE_CODES = {"vehicle": VEHICLE, "vru": VRU}
CSV_COLUMNS = ("scene_id", "tick_index", "agent_id", "agent_type", "x", "y", "vx", "vy", "yaw")
MOTIONS = ("constant_velocity", "circular_arc", "lane_change", "yielding")

# rows of a state array
X, Y, VX, VY, YAW = range(5)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.remainder(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    vx: float
    vy: float
    yaw: float

    def __post_init__(self):
        vals = (self.x, self.y, self.vx, self.vy, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite agent state {vals}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.yaw])


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """States of one agent on consecutive ticks starting at ``start``; rows are (x, y, vx, vy, yaw)."""

    agent_id: int
    agent_type: int
    start: int
    states: np.ndarray

    def __post_init__(self):
        st = np.array(self.states, dtype=np.float64).reshape(-1, 5)
        if not np.isfinite(st).all():
            raise ValueError(f"agent {self.agent_id}: non-finite states")
        st.flags.writeable = False
        object.__setattr__(self, "states", st)
        if self.agent_type not in (VEHICLE, VRU):
            raise SchemaError(f"agent {self.agent_id}: unknown type {self.agent_type}")

    @property
    def end(self) -> int:
        """Last tick index covered (inclusive)."""
        return self.start + len(self.states) - 1

    def at(self, tick: int) -> np.ndarray:
        return self.states[tick - self.start]

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.agent_type == other.agent_type
            and self.start == other.start
            and np.array_equal(self.states, other.states)
        )


@dataclass(frozen=True)
class Scene:
    scene_id: str
    tracks: Tuple[AgentTrack, ...]
    map: Optional[MapRaster] = None
    # generator-side kinematic parameters per agent id; never serialised
    motion: Dict[int, dict] = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class ScenarioConfig:
    tick: float = 0.1
    history: int = 10
    horizon: int = 30
    radius: float = 30.0
    n_vehicles: int = 3
    n_vru: int = 1
    motion: Tuple[str, ...] = ("constant_velocity",)
    n_scenes: int = 10
    map_size: int = 64
    map_scale: float = 1.0

    def __post_init__(self):
        if isinstance(self.motion, str):
            object.__setattr__(self, "motion", tuple(m.strip() for m in self.motion.split(",")))
        if self.history < 2:
            raise ConfigurationError(f"history must be >= 2 steps, got {self.history}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1 step, got {self.horizon}")
        if not self.radius > 0:
            raise ConfigurationError(f"radius must be positive, got {self.radius}")
        if not self.tick > 0:
            raise ConfigurationError(f"tick must be positive, got {self.tick}")
        if self.n_vehicles < 0 or self.n_vru < 0 or self.n_vehicles + self.n_vru < 1:
            raise ConfigurationError("need at least one agent per scene")
        if self.n_scenes < 0 or self.map_size < 8 or not self.map_scale > 0:
            raise ConfigurationError("invalid scene count or map geometry")
        bad = [m for m in self.motion if m not in MOTIONS]
        if bad or not self.motion:
            raise ConfigurationError(f"unknown motion pattern(s) {bad}; choose from {MOTIONS}")


@dataclass(frozen=True, eq=False)
class SceneSample:
    """Everything the model sees for one scene at one decision tick.

    ``histories`` are [n, T_h, 5] local states, ``current`` the [n, 5] global
    states at the decision tick, ``futures`` the [m, T_f, 2] local positions of
    the m targets (in agent order).
    """

    scene_id: str
    tick: int
    agent_ids: np.ndarray
    agent_types: np.ndarray
    histories: np.ndarray
    current: np.ndarray
    futures: np.ndarray
    target_mask: np.ndarray
    map: Optional[MapRaster]
    map_attrs: np.ndarray

    def __post_init__(self):
        for name in ("agent_ids", "agent_types", "histories", "current", "futures", "target_mask", "map_attrs"):
            arr = np.array(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = len(self.agent_ids)
        if self.target_mask.shape != (n,) or self.agent_types.shape != (n,):
            raise SchemaError("mask lengths must equal the agent count")
        if self.futures.shape[0] != int(self.target_mask.sum()):
            raise SchemaError("one future per target required")

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def vehicle_mask(self) -> np.ndarray:
        return self.agent_types == VEHICLE

    @property
    def pedestrian_mask(self) -> np.ndarray:
        return self.agent_types == VRU

    @property
    def targets(self) -> np.ndarray:
        return np.flatnonzero(self.target_mask)

    @property
    def history_len(self) -> int:
        return self.histories.shape[1]

    @property
    def horizon(self) -> int:
        return self.futures.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SceneSample):
            return NotImplemented
        arrays = ("agent_ids", "agent_types", "histories", "current", "futures", "target_mask", "map_attrs")
        return (
            self.scene_id == other.scene_id
            and self.tick == other.tick
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.map == other.map
        )


# ---------------------------------------------------------------------------
# frames


def to_local(states: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Express global states [..., 5] in the frame anchored at ``anchor`` (x, y, ..., yaw)."""
    states = np.asarray(states, dtype=np.float64)
    c, s = math.cos(anchor[YAW]), math.sin(anchor[YAW])
    dx = states[..., X] - anchor[X]
    dy = states[..., Y] - anchor[Y]
    out = np.empty(states.shape)
    out[..., X] = c * dx + s * dy
    out[..., Y] = -s * dx + c * dy
    out[..., VX] = c * states[..., VX] + s * states[..., VY]
    out[..., VY] = -s * states[..., VX] + c * states[..., VY]
    out[..., YAW] = wrap_angle(states[..., YAW] - anchor[YAW])
    return out


def to_global(points: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Map local 2-D positions [..., 2] back to the global frame."""
    points = np.asarray(points, dtype=np.float64)
    c, s = math.cos(anchor[YAW]), math.sin(anchor[YAW])
    out = np.empty(points.shape)
    out[..., 0] = anchor[X] + c * points[..., 0] - s * points[..., 1]
    out[..., 1] = anchor[Y] + s * points[..., 0] + c * points[..., 1]
    return out


def to_exclusive_frame(track: AgentTrack, t: int, history: int) -> Tuple[np.ndarray, np.ndarray]:
    """Local history [history, 5] ending at tick ``t`` and the global state at ``t``.

    The frame origin is the agent's position at ``t`` and +x points along its
    recorded yaw at ``t``.
    """
    first = t - history + 1
    if first < track.start or t > track.end:
        raise TruncationError(
            f"agent {track.agent_id} covers ticks {track.start}..{track.end}, "
            f"needs {first}..{t}"
        )
    window = track.states[first - track.start : t - track.start + 1]
    anchor = track.at(t)
    return to_local(window, anchor), anchor.copy()


def rigid_transform_states(states: np.ndarray, angle: float, tx: float, ty: float) -> np.ndarray:
    """Rotate global states by ``angle`` about the origin, then translate."""
    c, s = math.cos(angle), math.sin(angle)
    st = np.asarray(states, dtype=np.float64)
    out = np.empty(st.shape)
    out[..., X] = c * st[..., X] - s * st[..., Y] + tx
    out[..., Y] = s * st[..., X] + c * st[..., Y] + ty
    out[..., VX] = c * st[..., VX] - s * st[..., VY]
    out[..., VY] = s * st[..., VX] + c * st[..., VY]
    out[..., YAW] = wrap_angle(st[..., YAW] + angle)
    return out


def rigid_transform_scene(scene: Scene, angle: float, tx: float, ty: float) -> Scene:
    """Apply one SE(2) transform to every track; the map is left as is."""
    tracks = tuple(
        AgentTrack(tr.agent_id, tr.agent_type, tr.start, rigid_transform_states(tr.states, angle, tx, ty))
        for tr in scene.tracks
    )
    return replace(scene, tracks=tracks, motion={})


def vehicle_to_map_attr(state, center=(0.0, 0.0), half_extent: float = 1.0) -> np.ndarray:
    """(dx, dy, vx, vy, cos yaw, sin yaw) with dx, dy relative to the map centre over its half extent."""
    st = np.asarray(state, dtype=np.float64)
    out = np.empty(st.shape[:-1] + (6,))
    out[..., 0] = (st[..., X] - center[0]) / half_extent
    out[..., 1] = (st[..., Y] - center[1]) / half_extent
    out[..., 2] = st[..., VX]
    out[..., 3] = st[..., VY]
    out[..., 4] = np.cos(st[..., YAW])
    out[..., 5] = np.sin(st[..., YAW])
    return out


def map_attr_to_state(attr, center=(0.0, 0.0), half_extent: float = 1.0) -> np.ndarray:
    a = np.asarray(attr, dtype=np.float64)
    out = np.empty(a.shape[:-1] + (5,))
    out[..., X] = a[..., 0] * half_extent + center[0]
    out[..., Y] = a[..., 1] * half_extent + center[1]
    out[..., VX] = a[..., 2]
    out[..., VY] = a[..., 3]
    out[..., YAW] = np.arctan2(a[..., 5], a[..., 4])
    return out


# ---------------------------------------------------------------------------
# samples


def decision_ticks(scene: Scene, history: int, horizon: int) -> List[int]:
    """Ticks at which at least one agent has full history and future."""
    ticks = set()
    for tr in scene.tracks:
        ticks.update(range(tr.start + history - 1, tr.end - horizon + 1))
    return sorted(ticks)


def make_sample(scene: Scene, t: int, history: int, horizon: int) -> SceneSample:
    """Assemble the sample at decision tick ``t``.

    Agents observed at ``t`` and ``t - 1`` take part; short histories are
    front-padded with their earliest state. Targets need the full history
    and ``horizon`` future ticks.
    """
    ids, types, hists, current, futures, targets = [], [], [], [], [], []
    for tr in sorted(scene.tracks, key=lambda tr: tr.agent_id):
        if tr.start > t - 1 or tr.end < t:
            continue
        first = max(tr.start, t - history + 1)
        window = tr.states[first - tr.start : t - tr.start + 1]
        if len(window) < history:
            window = np.concatenate([np.repeat(window[:1], history - len(window), axis=0), window])
        anchor = tr.at(t)
        ids.append(tr.agent_id)
        types.append(tr.agent_type)
        hists.append(to_local(window, anchor))
        current.append(anchor)
        is_target = tr.start <= t - history + 1 and tr.end >= t + horizon
        targets.append(is_target)
        if is_target:
            fut = tr.states[t + 1 - tr.start : t + horizon + 1 - tr.start]
            futures.append(to_local(fut, anchor)[:, :2])
    current = np.array(current).reshape(-1, 5)
    if scene.map is not None:
        attrs = vehicle_to_map_attr(current, scene.map.center, scene.map.half_extent)
    else:
        attrs = vehicle_to_map_attr(current)
    return SceneSample(
        scene_id=scene.scene_id,
        tick=t,
        agent_ids=np.array(ids, dtype=np.int64),
        agent_types=np.array(types, dtype=np.int64),
        histories=np.array(hists).reshape(-1, history, 5),
        current=current,
        futures=np.array(futures).reshape(-1, horizon, 2),
        target_mask=np.array(targets, dtype=bool),
        map=scene.map,
        map_attrs=attrs,
    )


def scene_samples(scenes: Iterable[Scene], history: int, horizon: int) -> List[SceneSample]:
    out = []
    for sc in scenes:
        for t in decision_ticks(sc, history, horizon):
            out.append(make_sample(sc, t, history, horizon))
    return out


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def write_scenes(scenes: Sequence[Scene], path, maps_dir=None) -> None:
    """Write tracks as scene CSV; rasters go to ``maps_dir/<scene_id>.pgm`` (default: ``maps/`` beside the CSV)."""
    rows = []
    for sc in scenes:
        for tr in sc.tracks:
            code = "vehicle" if tr.agent_type == VEHICLE else "vru"
            for k, st in enumerate(tr.states):
                rows.append((sc.scene_id, tr.start + k, tr.agent_id, code, st))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for sid, tick, aid, code, st in rows:
            w.writerow([sid, tick, aid, code] + [_fmt(v) for v in st])
    if any(sc.map is not None for sc in scenes):
        from .maps import write_raster

        maps_dir = maps_dir or os.path.join(os.path.dirname(os.path.abspath(path)), "maps")
        os.makedirs(maps_dir, exist_ok=True)
        for sc in scenes:
            if sc.map is not None:
                write_raster(sc.map, os.path.join(maps_dir, f"{sc.scene_id}.pgm"))


def read_scenes(path, maps_dir=None) -> List[Scene]:
    """Parse a scene CSV into scenes of tracks (ordered by first appearance)."""
    rows: Dict[str, Dict[int, list]] = {}
    kinds: Dict[Tuple[str, int], int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise ParseError(f"expected header {','.join(CSV_COLUMNS)}", line=1)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", line=lineno)
        sid = row[0].strip()
        try:
            tick, aid = int(row[1]), int(row[2])
            vals = [float(v) for v in row[4:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        code = row[3].strip()
        if code not in CSV_TYPE_CODES:
            raise ParseError(f"unknown agent_type {code!r}", line=lineno)
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite state value", line=lineno)
        if kinds.setdefault((sid, aid), CSV_TYPE_CODES[code]) != CSV_TYPE_CODES[code]:
            raise SchemaError(f"scene {sid}: agent {aid} changes type at line {lineno}")
        rows.setdefault(sid, {}).setdefault(aid, []).append((tick, vals, lineno))

    base = maps_dir or os.path.join(os.path.dirname(os.path.abspath(path)), "maps")
    scenes = []
    for sid, agents in rows.items():
        tracks = []
        for aid, entries in agents.items():
            entries.sort(key=lambda e: e[0])
            ticks = [e[0] for e in entries]
            if any(b - a != 1 for a, b in zip(ticks, ticks[1:])):
                bad = next(e[2] for e, nxt in zip(entries, entries[1:]) if nxt[0] - e[0] != 1)
                raise SchemaError(f"scene {sid}: agent {aid} has an inconsistent tick sequence near line {bad}")
            tracks.append(AgentTrack(aid, kinds[(sid, aid)], ticks[0], np.array([e[1] for e in entries])))
        map_path = os.path.join(base, f"{sid}.pgm")
        raster = load_raster(map_path) if os.path.exists(map_path) else None
        scenes.append(Scene(sid, tuple(sorted(tracks, key=lambda tr: tr.agent_id)), raster))
    return scenes


def load_scenes(path, config: ScenarioConfig = ScenarioConfig(), maps_dir=None) -> List[SceneSample]:
    """One sample per (scene id, decision tick) found in a scene CSV."""
    return scene_samples(read_scenes(path, maps_dir), config.history, config.horizon)


# ---------------------------------------------------------------------------
# synthetic scenarios


def _speed(rng, agent_type):
    return rng.uniform(3.0, 12.0) if agent_type == VEHICLE else rng.uniform(0.5, 2.5)


def constant_velocity_states(origin, heading, speed, times) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    st = np.empty((len(times), 5))
    st[:, X] = origin[0] + speed * c * times
    st[:, Y] = origin[1] + speed * s * times
    st[:, VX] = speed * c
    st[:, VY] = speed * s
    st[:, YAW] = wrap_angle(heading)
    return st


def arc_states(center, radius, theta0, omega, times) -> np.ndarray:
    theta = theta0 + omega * times
    st = np.empty((len(times), 5))
    st[:, X] = center[0] + radius * np.cos(theta)
    st[:, Y] = center[1] + radius * np.sin(theta)
    st[:, VX] = -radius * omega * np.sin(theta)
    st[:, VY] = radius * omega * np.cos(theta)
    st[:, YAW] = wrap_angle(theta + math.copysign(math.pi / 2, omega))
    return st


def lane_change_states(origin, heading, speed, offset, t_mid, tau, times) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    sig = 1.0 / (1.0 + np.exp(-(times - t_mid) / tau))
    lat = offset * sig
    lat_rate = offset * sig * (1.0 - sig) / tau
    st = np.empty((len(times), 5))
    st[:, X] = origin[0] + speed * times * c - lat * s
    st[:, Y] = origin[1] + speed * times * s + lat * c
    st[:, VX] = speed * c - lat_rate * s
    st[:, VY] = speed * s + lat_rate * c
    st[:, YAW] = np.arctan2(st[:, VY], st[:, VX])
    return st


def yielding_profile(speed, stop_dist, times, t_now, clear_time, accel=2.0):
    """Arc length travelled and speed when braking to stop ``stop_dist`` ahead, then resuming.

    Before ``t_now`` the agent cruises at ``speed``. It brakes uniformly to a
    halt after ``stop_dist`` metres, waits until ``clear_time`` and then
    accelerates back to ``speed`` at ``accel``.
    """
    decel = speed * speed / (2.0 * stop_dist)
    t_stop = t_now + speed / decel
    t_go = max(t_stop, clear_time)
    t_cruise = t_go + speed / accel
    arc = np.empty(len(times))
    vel = np.empty(len(times))
    for k, t in enumerate(times):
        if t <= t_now:
            arc[k], vel[k] = speed * (t - t_now), speed
        elif t <= t_stop:
            d = t - t_now
            arc[k], vel[k] = speed * d - 0.5 * decel * d * d, speed - decel * d
        elif t <= t_go:
            arc[k], vel[k] = stop_dist, 0.0
        elif t <= t_cruise:
            d = t - t_go
            arc[k], vel[k] = stop_dist + 0.5 * accel * d * d, accel * d
        else:
            d = t - t_cruise
            arc[k], vel[k] = stop_dist + speed * speed / (2 * accel) + speed * d, speed
    return arc, vel


def _yield_pair(rng, ring, times, t_now):
    """A ring vehicle and the pedestrian crossing its path; the vehicle yields iff the crossing is still ahead of it."""
    center, radius = ring
    speed = rng.uniform(6.0, 10.0)
    theta_now = rng.uniform(-math.pi, math.pi)
    gap = rng.uniform(10.0, 18.0)
    theta_c = theta_now + gap / radius
    walk_speed = rng.uniform(1.0, 2.0)
    inward = rng.random() < 0.5
    # crossing position relative to the conflict point along the walk direction at t_now
    progress = rng.uniform(-5.0, 5.0)
    conflict = (center[0] + radius * math.cos(theta_c), center[1] + radius * math.sin(theta_c))
    heading = theta_c + (math.pi if inward else 0.0)
    ped_origin = (
        conflict[0] + progress * math.cos(heading) - walk_speed * t_now * math.cos(heading),
        conflict[1] + progress * math.sin(heading) - walk_speed * t_now * math.sin(heading),
    )
    ped = constant_velocity_states(ped_origin, heading, walk_speed, times)

    yields = progress < 1.0
    if yields:
        clear_time = t_now + (2.5 - progress) / walk_speed
        arc, vel = yielding_profile(speed, gap - 4.0, times, t_now, clear_time)
    else:
        arc, vel = speed * (times - t_now), np.full(len(times), speed)
    theta = theta_now + arc / radius
    veh = np.empty((len(times), 5))
    veh[:, X] = center[0] + radius * np.cos(theta)
    veh[:, Y] = center[1] + radius * np.sin(theta)
    veh[:, VX] = -vel * np.sin(theta)
    veh[:, VY] = vel * np.cos(theta)
    veh[:, YAW] = wrap_angle(theta + math.pi / 2)
    meta = {"pattern": "yielding", "yields": yields, "center": center, "radius": radius}
    return veh, ped, meta, {"pattern": "crossing", "heading": heading, "speed": walk_speed}, heading, conflict


def generate_scenes(config: ScenarioConfig, seed: int) -> List[Scene]:
    """Deterministic synthetic scenes of ``history + horizon`` ticks each.

    Vehicles draw a motion pattern from ``config.motion``; ``yielding``
    vehicles are paired with a crossing pedestrian/bicycle when one is
    available. Remaining pedestrians/bicycles walk straight.
    """
    rng = np.random.default_rng(seed)
    total = config.history + config.horizon
    times = np.arange(total) * config.tick
    t_now = (config.history - 1) * config.tick
    extent = config.map_size * config.map_scale / 2.0
    scenes = []
    for index in range(config.n_scenes):
        tracks, motion, features = [], {}, []
        ring = ((0.0, 0.0), rng.uniform(12.0, 18.0))
        ring_drawn = False
        free_vru = config.n_vru
        aid = 0

        def add(agent_type, states, meta):
            nonlocal aid
            tracks.append(AgentTrack(aid, agent_type, 0, states))
            motion[aid] = meta
            aid += 1

        for _ in range(config.n_vehicles):
            pattern = config.motion[rng.integers(len(config.motion))]
            if pattern == "yielding":
                if not ring_drawn:
                    features.append({"kind": "ring", "center": ring[0], "radius": ring[1], "half_width": 3.5})
                    ring_drawn = True
                if free_vru > 0:
                    veh, ped, vmeta, pmeta, heading, conflict = _yield_pair(rng, ring, times, t_now)
                    add(VEHICLE, veh, vmeta)
                    add(VRU, ped, pmeta)
                    free_vru -= 1
                    features.append({"kind": "crosswalk", "origin": conflict, "heading": heading})
                else:
                    # nobody left to yield to: cruise the ring
                    speed = rng.uniform(6.0, 10.0)
                    theta0 = rng.uniform(-math.pi, math.pi)
                    omega = speed / ring[1]
                    add(VEHICLE, arc_states(ring[0], ring[1], theta0, omega, times),
                        {"pattern": "circular_arc", "center": ring[0], "radius": ring[1], "omega": omega})
                continue
            states, meta, feat = _single_agent(rng, VEHICLE, pattern, times, t_now, extent)
            add(VEHICLE, states, meta)
            features.append(feat)
        for _ in range(free_vru):
            pattern = config.motion[rng.integers(len(config.motion))]
            if pattern == "yielding":
                pattern = "constant_velocity"
            states, meta, feat = _single_agent(rng, VRU, pattern, times, t_now, extent)
            add(VRU, states, meta)
            features.append(feat)
        raster = road_raster(config.map_size, config.map_scale, features)
        scenes.append(Scene(f"s{index:05d}", tuple(tracks), raster, motion))
    return scenes


def _single_agent(rng, agent_type, pattern, times, t_now, extent):
    speed = _speed(rng, agent_type)
    span = 0.4 * extent
    if pattern == "constant_velocity":
        heading = rng.uniform(-math.pi, math.pi)
        here = rng.uniform(-span, span, size=2)
        origin = (here[0] - speed * t_now * math.cos(heading), here[1] - speed * t_now * math.sin(heading))
        meta = {"pattern": pattern, "origin": origin, "heading": heading, "speed": speed}
        road = {"kind": "road", "origin": origin, "heading": heading, "half_width": 2.0}
        return constant_velocity_states(origin, heading, speed, times), meta, road
    if pattern == "circular_arc":
        radius = rng.uniform(8.0, 25.0) if agent_type == VEHICLE else rng.uniform(3.0, 8.0)
        center = tuple(rng.uniform(-0.2 * extent, 0.2 * extent, size=2))
        omega = math.copysign(speed / radius, rng.uniform(-1, 1))
        theta0 = rng.uniform(-math.pi, math.pi)
        meta = {"pattern": pattern, "center": center, "radius": radius, "omega": omega}
        ring = {"kind": "ring", "center": center, "radius": radius, "half_width": 2.0}
        return arc_states(center, radius, theta0, omega, times), meta, ring
    if pattern == "lane_change":
        heading = rng.uniform(-math.pi, math.pi)
        here = rng.uniform(-span, span, size=2)
        origin = (here[0] - speed * t_now * math.cos(heading), here[1] - speed * t_now * math.sin(heading))
        offset = 3.5 * (1.0 if rng.random() < 0.5 else -1.0)
        t_mid = rng.uniform(0.0, times[-1])
        tau = 0.5
        meta = {"pattern": pattern, "origin": origin, "heading": heading, "speed": speed,
                "offset": offset, "t_mid": t_mid, "tau": tau}
        road = {"kind": "road", "origin": origin, "heading": heading, "half_width": 5.25}
        return lane_change_states(origin, heading, speed, offset, t_mid, tau, times), meta, road
    raise ConfigurationError(f"unknown motion pattern {pattern!r}")


def generate_synthetic(config: ScenarioConfig, seed: int) -> List[SceneSample]:
    return scene_samples(generate_scenes(config, seed), config.history, config.horizon)
