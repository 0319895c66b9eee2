"""Episode orchestration: run the full pipeline over a maze + trajectory,
collect metric reports, and write a deterministic artifact bundle."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bvu, memory, metrics, place, world
from .errors import ConfigError, EmptyGroundTruth, StepFailure
from .geometry import (
    ActionLimits,
    Egomotion,
    NoiseModel,
    Pose,
    compose_pose,
    perturb_egomotion,
)

SCHEMA_VERSION = 1
ENV_SEED = "ESM_SEED"


@dataclass
class LoopConfig:
    enabled: bool = False
    matcher: str = "embedding"  # embedding | pixelwise | random
    encoder_params: str | None = None
    alpha: float = 0.05
    close_radius: float = 16.0
    recency_window: int = 64
    correction: bool = False
    cooldown: int | None = None  # defaults to recency_window
    gt_eps_pos: float = 0.3
    match_slack: int = 2


@dataclass
class RunConfig:
    maze: str = ""
    trajectory: str = ""
    seed: int = 0
    lam: float = bvu.DEFAULT_LAMBDA
    eval_interval: int = 32
    backend: str = "egocentric"
    memory_size: int = memory.DEFAULT_MEMORY_SIZE
    sensor: world.SensorConfig = field(default_factory=world.SensorConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    limits: ActionLimits = field(default_factory=ActionLimits)
    loop: LoopConfig = field(default_factory=LoopConfig)
    out_dir: str | None = None

    def __post_init__(self):
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must be in [0, 1]")
        if self.backend not in memory.BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")


def load_config(path) -> RunConfig:
    """Load and validate a schema-1 JSON run config.

    Relative file paths resolve against the config file's directory; the
    ESM_SEED environment variable overrides the configured seed.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {doc.get('schema')!r}")

    base = path.parent

    def resolve(p):
        return str((base / p).resolve()) if p else p

    sensor_doc = doc.get("sensor", {})
    sensor = world.SensorConfig(
        fov=math.radians(sensor_doc.get("fov_deg", 90.0)),
        n_rays=int(sensor_doc.get("n_rays", 64)),
        max_range=float(sensor_doc.get("max_range", 3.84)),
        flip_prob=float(sensor_doc.get("flip_prob", 0.0)),
    )
    noise_doc = doc.get("noise", {})
    seed = int(doc.get("seed", 0))
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"bad {ENV_SEED} value {env_seed!r}") from exc
    noise = NoiseModel(
        relative_level=float(noise_doc.get("level", 0.0)),
        seed=int(noise_doc["seed"]) if noise_doc.get("seed") is not None else seed,
    )
    limits_doc = doc.get("limits", {})
    limits = ActionLimits(
        rot_limit=math.radians(limits_doc.get("rot_limit_deg", 10.0)),
        trans_limit=float(limits_doc.get("trans_limit", 0.1)),
        step_period=float(limits_doc.get("step_period", 0.25)),
    )
    loop_doc = doc.get("loop", {})
    loop = LoopConfig(
        enabled=bool(loop_doc.get("enabled", False)),
        matcher=str(loop_doc.get("matcher", "embedding")),
        encoder_params=resolve(loop_doc.get("encoder_params")),
        alpha=float(loop_doc.get("alpha", 0.05)),
        close_radius=float(loop_doc.get("close_radius", 16.0)),
        recency_window=int(loop_doc.get("recency_window", 64)),
        correction=bool(loop_doc.get("correction", False)),
        cooldown=loop_doc.get("cooldown"),
        gt_eps_pos=float(loop_doc.get("gt_eps_pos", 0.3)),
        match_slack=int(loop_doc.get("match_slack", 2)),
    )
    if loop.matcher not in ("embedding", "pixelwise", "random"):
        raise ConfigError(f"unknown matcher {loop.matcher!r}")
    if loop.enabled and loop.matcher == "embedding" and not loop.encoder_params:
        raise ConfigError("loop.matcher=embedding requires loop.encoder_params")

    cfg = RunConfig(
        maze=resolve(doc.get("maze", "")),
        trajectory=resolve(doc.get("trajectory", "")),
        seed=seed,
        lam=float(doc.get("lambda", bvu.DEFAULT_LAMBDA)),
        eval_interval=int(doc.get("eval_interval", 32)),
        backend=str(doc.get("backend", "egocentric")),
        memory_size=int(doc.get("memory_size", memory.DEFAULT_MEMORY_SIZE)),
        sensor=sensor,
        noise=noise,
        limits=limits,
        loop=loop,
        out_dir=resolve(doc.get("out_dir")) if doc.get("out_dir") else None,
    )
    for label, p in (("maze", cfg.maze), ("trajectory", cfg.trajectory)):
        if not p or not Path(p).is_file():
            raise ConfigError(f"{label} file not found: {p!r}")
    if loop.enabled and loop.matcher == "embedding" and not Path(loop.encoder_params).is_file():
        raise ConfigError(f"encoder params file not found: {loop.encoder_params!r}")
    return cfg


@dataclass
class EpisodeResult:
    config: RunConfig
    true_poses: list[Pose]
    est_poses: list[Pose]
    local_maps: list[np.ndarray]
    views: list[np.ndarray]
    embeddings: list[np.ndarray]
    local_reports: list[metrics.MetricsReport]
    global_reports: list[metrics.MetricsReport]
    detections: list[tuple[int, int, float]]
    closures: list[memory.LoopClosureEvent]
    corrections: list[int]  # steps at which a correction was applied
    gt_pairs: list[tuple[int, int]]
    memory: memory.GlobalMemory
    gt_global: np.ndarray
    global_image: np.ndarray
    global_meta: dict


def _make_embedder(cfg: RunConfig, rng: np.random.Generator):
    """Per-step place descriptor according to the configured matcher."""
    matcher = cfg.loop.matcher
    if matcher == "embedding" and cfg.loop.encoder_params:
        params = place.load_params(cfg.loop.encoder_params)
        return lambda view: place.encode_place(params, view)
    if matcher == "embedding":
        # loop closure disabled and no encoder given: ledger still gets a
        # descriptor so the write-head protocol is exercised
        matcher = "pixelwise"
    if matcher == "pixelwise":
        # raw view as the descriptor: MSE over it is exactly the
        # pixel-wise comparison baseline
        return lambda view: view.ravel().astype(float)
    return lambda view: rng.standard_normal(place.EMBED_DIM)


def _world_gt_grid(free_cells: set, maze: world.MazeMap, mem: memory.GlobalMemory) -> np.ndarray:
    """Observed-free region rasterized onto the memory plane (origin frame)."""
    grid = np.zeros((mem.size, mem.size))
    if not free_cells:
        return grid
    origin = mem.origin
    idx = np.arange(mem.size) - mem.center
    rr, cc = np.meshgrid(idx, idx, indexing="ij")
    f = rr.ravel() * mem.cell_size
    s = cc.ravel() * mem.cell_size
    c0, s0 = math.cos(origin.theta), math.sin(origin.theta)
    wx = origin.x + c0 * f - s0 * s
    wy = origin.y + s0 * f + c0 * s
    rows = np.floor(wy / maze.cell_size).astype(int)
    cols = np.floor(wx / maze.cell_size).astype(int)
    hit = np.fromiter(
        ((r, c) in free_cells for r, c in zip(rows.tolist(), cols.tolist())),
        dtype=bool,
        count=mem.size * mem.size,
    )
    return hit.astype(float).reshape(mem.size, mem.size)


def run_episode(cfg: RunConfig) -> EpisodeResult:
    maze = world.parse_maze(Path(cfg.maze).read_text())
    traj = world.load_trajectory(
        Path(cfg.trajectory).read_text(), cfg.limits, maze, name=Path(cfg.trajectory).stem
    )

    mem = memory.GlobalMemory(
        size=cfg.memory_size, backend=cfg.backend, origin=maze.start,
        cell_size=cfg.sensor.view_cell_size,
    )
    result = EpisodeResult(
        config=cfg, true_poses=[], est_poses=[], local_maps=[], views=[],
        embeddings=[], local_reports=[], global_reports=[], detections=[],
        closures=[], corrections=[], gt_pairs=[], memory=mem,
        gt_global=np.zeros((mem.size, mem.size)),
        global_image=np.zeros((mem.size, mem.size)),
        global_meta={},
    )
    if len(traj) == 0:
        return result

    rng_noise = cfg.noise.rng()
    rng_matcher = np.random.default_rng(cfg.seed + 1)
    rng_corrupt = np.random.default_rng(cfg.seed + 2)
    embedder = _make_embedder(cfg, rng_matcher)

    n = cfg.sensor.view_cells
    local = np.zeros((n, n))
    seen_free: set = set()
    seen_wall: set = set()
    last_correction = -(10**9)

    def process_step(t, e_meas):
        nonlocal local, last_correction
        if t == 0:
            e_meas = Egomotion()
            result.true_poses.append(maze.start)
            result.est_poses.append(maze.start)
        else:
            result.true_poses.append(compose_pose(result.true_poses[-1], traj.steps[t - 1]))
            result.est_poses.append(compose_pose(result.est_poses[-1], e_meas))
        true_pose = result.true_poses[-1]

        view = world.observe_local(maze, true_pose, cfg.sensor)
        if cfg.sensor.flip_prob > 0:
            view = world.corrupt_view(view, cfg.sensor.flip_prob, rng_corrupt)
        result.views.append(view)
        f_cells, w_cells = world.observed_cell_sets(maze, view, true_pose, cfg.sensor)
        seen_free.update(f_cells)
        seen_wall.update(w_cells)

        local = bvu.bvu_step(local, e_meas, view, cfg.lam, cfg.sensor.view_cell_size)
        result.local_maps.append(local)
        if t > 0:
            memory.memory_warp(result.memory, e_meas)
        memory.write_local(result.memory, local)

        emb = embedder(view)
        result.embeddings.append(emb)
        if cfg.loop.enabled:
            cand = memory.detect_loop_closure(
                result.memory, emb, t, None,
                close_radius=cfg.loop.close_radius,
                recency_window=cfg.loop.recency_window,
            )
            memory.write_place(result.memory, emb, t)
            if cand is not None:
                result.detections.append((cand.t_now, cand.t_matched, cand.embed_dist))
                if cand.embed_dist <= cfg.loop.alpha:
                    result.closures.append(cand)
                    cooldown = cfg.loop.cooldown
                    if cooldown is None:
                        cooldown = cfg.loop.recency_window
                    if cfg.loop.correction and t - last_correction > cooldown:
                        corrected, rebuilt = memory.correct_drift(
                            result.est_poses, cand, result.local_maps,
                            result.memory, result.embeddings,
                        )
                        result.est_poses = corrected
                        result.memory = rebuilt
                        result.corrections.append(t)
                        last_correction = t
        else:
            memory.write_place(result.memory, emb, t)

    def emit_checkpoint(t):
        # window read vs ground truth accumulated through t, both in the
        # egocentric frame of the true pose, over the observed region
        frame = result.true_poses[t]
        gt = world.region_to_local(maze, seen_free, frame, cfg.sensor)
        mask = world.region_to_local(maze, seen_free | seen_wall, frame, cfg.sensor) > 0
        if mask.any():
            pred01 = metrics.normalize_belief(memory.read_local(result.memory))
            result.local_reports.append(
                metrics.metrics_report(pred01, gt, t=t, area_tag="local", mask=mask)
            )
        img, meta = memory.render_global(result.memory, result.est_poses)
        gt_grid = _world_gt_grid(seen_free, maze, result.memory)
        result.global_reports.append(
            metrics.metrics_report(
                metrics.normalize_belief(img), gt_grid, t=t, area_tag="global"
            )
        )
        result.gt_global = gt_grid
        result.global_image = img
        result.global_meta = meta

    total = len(traj)
    for t in range(total + 1):
        try:
            if t == 0:
                process_step(0, None)
            else:
                e_true = traj.steps[t - 1]
                e_meas = (
                    perturb_egomotion(e_true, cfg.noise, rng_noise, cfg.limits)
                    if cfg.noise.relative_level > 0
                    else e_true
                )
                process_step(t, e_meas)
            if t > 0 and (t % cfg.eval_interval == 0 or t == total):
                emit_checkpoint(t)
        except Exception as exc:  # noqa: BLE001 - annotate with step index
            if isinstance(exc, StepFailure):
                raise
            raise StepFailure(t, exc) from exc

    positions = np.array([[p.x, p.y] for p in result.true_poses])
    result.gt_pairs = metrics.gt_loop_pairs(
        positions, cfg.loop.gt_eps_pos, cfg.loop.recency_window
    )
    return result


def episode_pr_curve(result: EpisodeResult) -> metrics.PRCurve:
    if not result.gt_pairs:
        raise EmptyGroundTruth("trajectory has no revisits")
    return metrics.pr_curve(
        result.detections, result.gt_pairs, match_slack=result.config.loop.match_slack
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_bundle(result: EpisodeResult, out_dir) -> Path:
    """Write the full artifact bundle; deterministic for a fixed config+seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config

    _write_csv(
        out / "pose_log.csv",
        ["t", "true_x", "true_y", "true_theta", "est_x", "est_y", "est_theta"],
        [
            [t, repr(tp.x), repr(tp.y), repr(tp.theta), repr(ep.x), repr(ep.y), repr(ep.theta)]
            for t, (tp, ep) in enumerate(zip(result.true_poses, result.est_poses))
        ],
    )
    _write_csv(
        out / "metrics.csv",
        ["scope", "t", "area_tag", "mse", "correlation", "mutual_information", "degenerate"],
        [
            ["local", r.t, r.area_tag, repr(r.mse), repr(r.correlation),
             repr(r.mutual_information), int(r.degenerate)]
            for r in result.local_reports
        ]
        + [
            ["global", r.t, r.area_tag, repr(r.mse), repr(r.correlation),
             repr(r.mutual_information), int(r.degenerate)]
            for r in result.global_reports
        ],
    )
    _write_csv(
        out / "detections.csv",
        ["t_now", "t_matched", "embed_dist"],
        [[t, tm, repr(d)] for t, tm, d in result.detections],
    )
    _write_csv(
        out / "closures.csv",
        ["t_now", "t_matched", "embed_dist", "cell_dist", "corrected"],
        [
            [ev.t_now, ev.t_matched, repr(ev.embed_dist), repr(ev.cell_dist),
             int(ev.t_now in result.corrections)]
            for ev in result.closures
        ],
    )
    _write_csv(out / "gt_closures.csv", ["t", "t_matched"], [[t, tm] for t, tm in result.gt_pairs])

    mem = result.memory
    _write_csv(
        out / "places.csv",
        ["t", "row", "col", "embedding_index"],
        [
            [rec.t, repr(float(rec.coord[0])), repr(float(rec.coord[1])), i]
            for i, rec in enumerate(mem.places)
        ],
    )
    if mem.places:
        np.save(out / "place_embeddings.npy", np.stack([r.embedding for r in mem.places]))

    (out / "global_map.pgm").write_bytes(bvu.map_to_pgm_bytes(result.global_image))
    (out / "global_map_meta.json").write_text(
        json.dumps(result.global_meta, sort_keys=True, indent=2) + "\n"
    )
    np.save(out / "global_belief.npy", result.global_image)
    np.save(out / "gt_global.npy", result.gt_global)
    if result.local_maps:
        (out / "local_map_final.pgm").write_bytes(bvu.map_to_pgm_bytes(result.local_maps[-1]))
        (out / "local_map_final.csv").write_text(bvu.map_to_csv(result.local_maps[-1]))

    summary = {
        "schema": SCHEMA_VERSION,
        "seed": cfg.seed,
        "steps": max(0, len(result.true_poses) - 1),
        "backend": cfg.backend,
        "noise_level": cfg.noise.relative_level,
        "n_detections": len(result.detections),
        "n_closures": len(result.closures),
        "n_corrections": len(result.corrections),
        "n_gt_pairs": len(result.gt_pairs),
        "final_local": _report_dict(result.local_reports[-1]) if result.local_reports else None,
        "final_global": _report_dict(result.global_reports[-1]) if result.global_reports else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return out


def _report_dict(r: metrics.MetricsReport) -> dict:
    return {
        "t": r.t,
        "mse": r.mse,
        "correlation": r.correlation,
        "mutual_information": r.mutual_information,
        "degenerate": r.degenerate,
    }
