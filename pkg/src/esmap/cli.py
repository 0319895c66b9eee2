"""Command-line interface.

Exit codes: 0 on success, 2 for configuration problems, 3 for runtime
failures (with the failing step index on stderr when available).
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import bvu, episode, metrics, place, world
from .errors import (
    CollisionOnRollout,
    ConfigError,
    EmptyGroundTruth,
    EsmError,
    InvalidMaze,
    LimitExceeded,
    ParseError,
    StepFailure,
)

_CONFIG_ERRORS = (ConfigError, ParseError, InvalidMaze, LimitExceeded, CollisionOnRollout, FileNotFoundError)


def _fail(exc, code):
    if isinstance(exc, StepFailure):
        click.echo(f"error at step {exc.step_index}: {exc.cause}", err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Egocentric spatial-memory mapping engine."""


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out-dir", type=click.Path(file_okay=False), default=None)
def run(config, out_dir):
    """Run an episode and write its artifact bundle."""
    try:
        cfg = episode.load_config(config)
    except _CONFIG_ERRORS as exc:
        _fail(exc, 2)
    out = out_dir or cfg.out_dir
    if not out:
        click.echo("error: no output directory (config out_dir or -o)", err=True)
        sys.exit(2)
    try:
        result = episode.run_episode(cfg)
        bundle = episode.write_bundle(result, out)
    except (StepFailure, EsmError, OSError) as exc:
        _fail(exc, 3)
    click.echo(f"wrote {bundle}")


@main.command("eval")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def eval_cmd(run_dir):
    """Recompute global-map metrics from a run's stored artifacts."""
    run_dir = Path(run_dir)
    try:
        pred = np.load(run_dir / "global_belief.npy")
        gt = np.load(run_dir / "gt_global.npy")
    except (OSError, ValueError) as exc:
        _fail(exc, 2)
    try:
        report = metrics.metrics_report(metrics.normalize_belief(pred), gt, area_tag="global")
    except EsmError as exc:
        _fail(exc, 3)
    click.echo(json.dumps(episode._report_dict(report), sort_keys=True, indent=2))


@main.command("train-pu")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
def train_pu(config, **_):
    """Train the place encoder on a noise-free rollout and save its params."""
    path = Path(config)
    try:
        doc = json.loads(path.read_text())
        if doc.get("schema") != episode.SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema {doc.get('schema')!r}")
        base = path.parent
        maze = world.parse_maze((base / doc["maze"]).read_text())
        sensor_doc = doc.get("sensor", {})
        sensor = world.SensorConfig(
            fov=math.radians(sensor_doc.get("fov_deg", 90.0)),
            n_rays=int(sensor_doc.get("n_rays", 64)),
            max_range=float(sensor_doc.get("max_range", 3.84)),
        )
        limits_doc = doc.get("limits", {})
        limits = world.ActionLimits(
            rot_limit=math.radians(limits_doc.get("rot_limit_deg", 10.0)),
            trans_limit=float(limits_doc.get("trans_limit", 0.1)),
        )
        traj = world.load_trajectory((base / doc["trajectory"]).read_text(), limits, maze)
        mining = doc.get("mining", {})
        train_doc = doc.get("train", {})
        out_params = base / doc["out_params"]
    except (KeyError, ValueError, OSError, EsmError) as exc:
        _fail(exc, 2)

    try:
        poses = world.rollout_poses(maze.start, traj)
        views = [world.observe_local(maze, p, sensor) for p in poses]
        encoder = place.PlaceEncoder(
            lr=float(train_doc.get("lr", 0.002)),
            momentum=float(train_doc.get("momentum", 0.5)),
            optimizer=str(train_doc.get("optimizer", "adam")),
            loss_form=str(train_doc.get("loss_form", "corrected")),
            batch_size=int(train_doc.get("batch_size", 16)),
            epochs=int(train_doc.get("epochs", 20)),
            seed=int(train_doc.get("seed", 0)),
            eps_pos=float(mining.get("eps_pos", 0.5)),
            eps_neg=float(mining.get("eps_neg", 1.0)),
            gap=int(mining.get("gap", 8)),
            n_triplets=mining.get("n_triplets"),
        )
        encoder.fit(views, poses)
        encoder.save(out_params)
        curve_path = doc.get("out_loss_curve")
        if curve_path:
            with open(base / curve_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "mean_loss"])
                w.writerows([i, repr(v)] for i, v in enumerate(encoder.loss_curve_))
    except (EsmError, OSError) as exc:
        _fail(exc, 3)
    click.echo(f"saved encoder params to {out_params} "
               f"(final loss {encoder.loss_curve_[-1]:.4f})")


@main.command("pr")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def pr_cmd(run_dir):
    """Compute the loop-closure precision-recall curve for a finished run."""
    run_dir = Path(run_dir)
    try:
        detections = []
        with open(run_dir / "detections.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                detections.append((int(row["t_now"]), int(row["t_matched"]), float(row["embed_dist"])))
        gt_pairs = []
        with open(run_dir / "gt_closures.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                gt_pairs.append((int(row["t"]), int(row["t_matched"])))
    except (OSError, KeyError, ValueError) as exc:
        _fail(exc, 2)
    try:
        curve = metrics.pr_curve(detections, gt_pairs)
    except EmptyGroundTruth as exc:
        _fail(exc, 3)
    with open(run_dir / "pr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "precision", "recall"])
        w.writerows([repr(a), repr(p), repr(r)] for a, p, r in curve.points)
    click.echo(f"auc={curve.auc:.4f} points={len(curve.points)} "
               f"no_detections={curve.no_detections}")


@main.command("render")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def render_cmd(run_dir):
    """Re-export the world-frame global map image with trajectory overlays."""
    run_dir = Path(run_dir)
    try:
        belief = np.load(run_dir / "global_belief.npy")
        meta = json.loads((run_dir / "global_map_meta.json").read_text())
        poses = []
        with open(run_dir / "pose_log.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                poses.append(row)
    except (OSError, ValueError) as exc:
        _fail(exc, 2)
    (run_dir / "render.pgm").write_bytes(bvu.map_to_pgm_bytes(belief))
    # overlay: estimated trajectory in grid-cell coordinates
    cell = float(meta.get("cell_size", 0.24))
    size = int(meta.get("size", belief.shape[0]))
    org = meta.get("origin", {"x": 0.0, "y": 0.0, "theta": 0.0})
    c0, s0 = math.cos(org["theta"]), math.sin(org["theta"])
    with open(run_dir / "render_overlay.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "row", "col"])
        for row in poses:
            dx = float(row["est_x"]) - org["x"]
            dy = float(row["est_y"]) - org["y"]
            f = c0 * dx + s0 * dy
            s = -s0 * dx + c0 * dy
            w.writerow([row["t"], repr(size // 2 + f / cell), repr(size // 2 + s / cell)])
    click.echo(f"wrote {run_dir / 'render.pgm'} and overlay")


if __name__ == "__main__":
    main()
