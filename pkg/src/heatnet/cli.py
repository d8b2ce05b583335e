"""Command-line entry point: gen | train | eval | predict | gradcheck."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import gradcheck, metrics
from .errors import ConfigurationError, HeatNetError
from .model import VARIANTS, ModelConfig, load_params, save_params
from .scene import MOTIONS, ScenarioConfig, generate_scenes, load_scenes, write_scenes
from .training import TrainConfig, evaluate, predict, train

log = logging.getLogger("heatnet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    variant: str = "HEAT-I-R"
    radius: float = 30.0
    history: int = 10
    horizon: int = 30
    threads: int = 1
    out: Optional[str] = None
    data: Optional[str] = None
    maps: Optional[str] = None
    params: Optional[str] = None
    log: Optional[str] = None
    figure: Optional[str] = None
    scene: Optional[str] = None
    scenes: int = 10
    vehicles: int = 3
    vru: int = 1
    motion: str = "constant_velocity"
    tick: float = 0.1
    map_size: int = 64
    map_scale: float = 1.0
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16
    val_fraction: float = 0.2
    clip_norm: Optional[float] = None
    amsgrad: bool = False
    max_entries: Optional[int] = None

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(tick=self.tick, history=self.history, horizon=self.horizon, radius=self.radius,
                              n_vehicles=self.vehicles, n_vru=self.vru, motion=self.motion, n_scenes=self.scenes,
                              map_size=self.map_size, map_scale=self.map_scale)

    def model(self) -> ModelConfig:
        return ModelConfig(variant=self.variant, history=self.history, horizon=self.horizon, radius=self.radius,
                           map_size=self.map_size)

    def training(self) -> TrainConfig:
        return TrainConfig(model=self.model(), lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed, val_fraction=self.val_fraction, clip_norm=self.clip_norm,
                           amsgrad=self.amsgrad, threads=self.threads)


PATH_KEYS = ("out", "data", "maps", "params", "log", "figure")
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    if raw.strip().lower() in ("", "none") and "Optional" in str(kind):
        return None
    if "bool" in str(kind):
        flag = raw.strip().lower()
        if flag not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{key}: expected true or false, got {raw!r}")
        return flag in ("true", "1", "yes")
    try:
        if "int" in str(kind):
            return int(raw)
        if "float" in str(kind):
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: expected a number, got {raw!r}") from None
    return raw.strip()


def read_config_file(path) -> Dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment; dashes in keys count as underscores."""
    values: Dict[str, object] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def resolve(args: argparse.Namespace) -> RunConfig:
    """Built-in defaults, then the config file, then explicit flags; paths made absolute."""
    merged: Dict[str, object] = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in _TYPES:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged.get("variant", "HEAT-I-R") not in VARIANTS:
        raise UsageError(f"unknown variant {merged['variant']!r}; choose from {', '.join(VARIANTS)}")
    for key in PATH_KEYS:
        if merged.get(key) is not None:
            merged[key] = str(Path(str(merged[key])).expanduser().resolve())
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="key=value file; flags override it")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--variant", help="|".join(VARIANTS))
    shared.add_argument("--radius", type=float, metavar="METERS")
    shared.add_argument("--history", type=int, metavar="STEPS")
    shared.add_argument("--horizon", type=int, metavar="STEPS")
    shared.add_argument("--threads", type=int, metavar="N")
    shared.add_argument("--out", metavar="PATH")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", metavar="CSV", help="scene CSV")
    data.add_argument("--maps", metavar="DIR", help="raster directory (default: maps/ beside the CSV)")
    data.add_argument("--map-size", dest="map_size", type=int)

    parser = argparse.ArgumentParser(prog="heatnet", description="Multi-agent trajectory prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[shared], help="write a synthetic scene CSV and map rasters")
    gen.add_argument("--scenes", type=int)
    gen.add_argument("--vehicles", type=int)
    gen.add_argument("--vru", type=int)
    gen.add_argument("--motion", help=",".join(MOTIONS))
    gen.add_argument("--tick", type=float)
    gen.add_argument("--map-size", dest="map_size", type=int)
    gen.add_argument("--map-scale", dest="map_scale", type=float)

    tr = sub.add_parser("train", parents=[shared, data], help="train a variant, write parameters and a log")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--val-fraction", dest="val_fraction", type=float)
    tr.add_argument("--clip-norm", dest="clip_norm", type=float)
    tr.add_argument("--amsgrad", action="store_true", default=None,
                    help="normalise by the running maximum of the second moment")
    tr.add_argument("--log", metavar="PATH", help="JSON-lines log (default: <out>.log.jsonl)")

    ev = sub.add_parser("eval", parents=[shared, data], help="ADE, FDE and RMSE per second as JSON")
    ev.add_argument("--params", metavar="PATH", required=False)

    pr = sub.add_parser("predict", parents=[shared, data], help="predicted trajectories as CSV")
    pr.add_argument("--params", metavar="PATH")
    pr.add_argument("--scene", help="only this scene id")
    pr.add_argument("--figure", metavar="PNG", help="also render the predictions (needs matplotlib)")

    gc = sub.add_parser("gradcheck", parents=[shared], help="finite-difference check of every parameter group")
    gc.add_argument("--max-entries", dest="max_entries", type=int, help="cap probed entries per array")
    return parser


# ---------------------------------------------------------------------------
# commands


def _require(path: Optional[str], what: str) -> str:
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.exists(path):
        raise UsageError(f"{what} file not found: {path}")
    return path


def cmd_gen(cfg: RunConfig) -> int:
    out = Path(cfg.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    scenes = generate_scenes(cfg.scenario(), cfg.seed)
    csv_path = out / "scenes.csv"
    write_scenes(scenes, csv_path, out / "maps")
    log.info("wrote %d scenes to %s", len(scenes), csv_path)
    print(csv_path)
    return EXIT_OK


def _samples(cfg: RunConfig, history: int, horizon: int):
    path = _require(cfg.data, "data")
    scenario = ScenarioConfig(history=history, horizon=horizon, radius=cfg.radius)
    samples = load_scenes(path, scenario, cfg.maps)
    if cfg.scene is not None:
        samples = [s for s in samples if s.scene_id == cfg.scene]
    if not samples:
        raise ConfigurationError(f"no usable samples in {path}")
    return samples


def cmd_train(cfg: RunConfig) -> int:
    samples = _samples(cfg, cfg.history, cfg.horizon)
    out = cfg.out or str(Path("params.bin").resolve())
    log_path = cfg.log or out + ".log.jsonl"
    result = train(samples, cfg.training(), log_path=log_path)
    save_params(result.params, out)
    last = result.log[-1] if result.log else {}
    print(json.dumps({"params": out, "log": log_path, **last}))
    return EXIT_OK


def _load(cfg: RunConfig, args: argparse.Namespace):
    params = load_params(_require(cfg.params, "params"))
    mc = params.config
    # explicitly chosen settings must agree with the stored model
    for key in ("variant", "history", "horizon"):
        wanted = getattr(args, key, None)
        if wanted is not None and wanted != getattr(mc, key):
            raise UsageError(f"--{key} {wanted} does not match the parameter file ({getattr(mc, key)})")
    return params


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = _load(cfg, args)
    samples = _samples(cfg, params.config.history, params.config.horizon)
    report = evaluate(samples, params, threads=cfg.threads, steps_per_second=max(1, round(1.0 / cfg.tick)))
    text = json.dumps(report)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


PREDICTION_COLUMNS = ("scene_id", "agent_id", "step", "x_local", "y_local", "x_global", "y_global")


def prediction_rows(preds) -> List[list]:
    rows = []
    for ps in preds:
        glob = ps.global_trajectories()
        for a, aid in enumerate(ps.agent_ids):
            for k in range(ps.trajectories.shape[1]):
                rows.append([ps.scene_id, int(aid), k + 1] + [repr(float(v)) for v in
                            (*ps.trajectories[a, k], *glob[a, k])])
    return rows


def cmd_predict(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = _load(cfg, args)
    samples = _samples(cfg, params.config.history, params.config.horizon)
    preds = predict(samples, params, threads=cfg.threads)
    sink = open(cfg.out, "w", encoding="utf-8", newline="") if cfg.out else sys.stdout
    try:
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        w.writerows(prediction_rows(preds))
    finally:
        if sink is not sys.stdout:
            sink.close()
    if cfg.figure:
        from .plotting import render_predictions

        render_predictions(samples, preds, cfg.figure)
        log.info("figure written to %s", cfg.figure)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    results, seconds = gradcheck.run(cfg.seed, cfg.max_entries)
    print(gradcheck.report(results))
    print(f"elapsed {seconds:.1f}s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = getattr(logging, os.environ.get("HEATNET_LOG", "error").upper(), logging.ERROR)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        if cfg.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "predict":
            return cmd_predict(cfg, args)
        return cmd_gradcheck(cfg)
    except (UsageError, ConfigurationError) as exc:
        print(f"heatnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HeatNetError, OSError) as exc:
        print(f"heatnet: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
