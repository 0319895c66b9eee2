import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from esmap import cli, episode, world
from esmap.errors import ConfigError, StepFailure
from esmap.geometry import NoiseModel

from conftest import FIXTURES


def _write_config(path, **overrides):
    doc = {
        "schema": 1,
        "maze": str(FIXTURES / "corridor.maze"),
        "trajectory": str(FIXTURES / "corridor_32.csv"),
        "seed": 0,
        "eval_interval": 8,
        "backend": "egocentric",
        "memory_size": 96,
        "sensor": {"fov_deg": 360, "n_rays": 64, "max_range": 3.84},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


def _quick_cfg(**kw):
    defaults = dict(
        maze=str(FIXTURES / "corridor.maze"),
        trajectory=str(FIXTURES / "corridor_32.csv"),
        seed=0,
        eval_interval=8,
        backend="egocentric",
        memory_size=96,
        sensor=world.SensorConfig(fov=2 * math.pi, n_rays=64, max_range=3.84),
    )
    defaults.update(kw)
    return episode.RunConfig(**defaults)


# ---------------------------------------------------------------- config

def test_load_config_resolves_relative_paths(tmp_path):
    (tmp_path / "maze.maze").write_text((FIXTURES / "corridor.maze").read_text())
    (tmp_path / "traj.csv").write_text((FIXTURES / "corridor_32.csv").read_text())
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "schema": 1, "maze": "maze.maze", "trajectory": "traj.csv",
    }))
    cfg = episode.load_config(cfg_path)
    assert cfg.maze == str(tmp_path / "maze.maze")


def test_load_config_rejects_bad_schema(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema": 2}))
    with pytest.raises(ConfigError):
        episode.load_config(p)


def test_load_config_rejects_unknown_matcher(tmp_path):
    p = _write_config(tmp_path / "c.json", loop={"enabled": True, "matcher": "sift"})
    with pytest.raises(ConfigError):
        episode.load_config(p)


def test_load_config_embedding_needs_params(tmp_path):
    p = _write_config(tmp_path / "c.json", loop={"enabled": True, "matcher": "embedding"})
    with pytest.raises(ConfigError):
        episode.load_config(p)


def test_load_config_missing_files(tmp_path):
    p = _write_config(tmp_path / "c.json", maze="nope.maze")
    with pytest.raises(ConfigError):
        episode.load_config(p)


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    p = _write_config(tmp_path / "c.json", seed=5)
    monkeypatch.setenv(episode.ENV_SEED, "17")
    assert episode.load_config(p).seed == 17
    monkeypatch.setenv(episode.ENV_SEED, "bogus")
    with pytest.raises(ConfigError):
        episode.load_config(p)


def test_run_config_validation():
    with pytest.raises(ConfigError):
        _quick_cfg(eval_interval=0)
    with pytest.raises(ConfigError):
        _quick_cfg(lam=1.5)
    with pytest.raises(ConfigError):
        _quick_cfg(backend="cloud")


# ---------------------------------------------------------------- episodes

def test_run_episode_basic_shape():
    res = episode.run_episode(_quick_cfg())
    assert len(res.true_poses) == 33
    assert len(res.local_maps) == 33
    # checkpoints at t = 8, 16, 24, 32
    assert [r.t for r in res.local_reports] == [8, 16, 24, 32]
    assert [r.t for r in res.global_reports] == [8, 16, 24, 32]
    assert all(r.area_tag == "local" for r in res.local_reports)


def test_run_episode_noise_free_pose_tracking_is_exact():
    res = episode.run_episode(_quick_cfg())
    for tp, ep in zip(res.true_poses, res.est_poses):
        assert tp == ep


def test_run_episode_noise_perturbs_estimates():
    res = episode.run_episode(_quick_cfg(noise=NoiseModel(relative_level=0.15, seed=3)))
    drift = [math.hypot(t.x - e.x, t.y - e.y)
             for t, e in zip(res.true_poses, res.est_poses)]
    assert drift[0] == 0.0
    assert drift[-1] > 0.0
    # true poses are unaffected by measurement noise
    clean = episode.run_episode(_quick_cfg())
    assert res.true_poses == clean.true_poses


def test_run_episode_zero_steps(tmp_path):
    traj = tmp_path / "empty.csv"
    traj.write_text("# dtheta_deg, heading_deg, distance_m\n")
    res = episode.run_episode(_quick_cfg(trajectory=str(traj)))
    assert res.true_poses == []
    assert res.local_reports == []


def test_run_episode_wraps_step_failures(monkeypatch):
    calls = {"n": 0}
    orig = world.observe_local

    def boom(*args, **kw):
        if calls["n"] == 3:
            raise RuntimeError("sensor died")
        calls["n"] += 1
        return orig(*args, **kw)

    monkeypatch.setattr(world, "observe_local", boom)
    with pytest.raises(StepFailure) as exc:
        episode.run_episode(_quick_cfg())
    assert exc.value.step_index == 3


def test_loop_detection_records_candidates():
    cfg = _quick_cfg(
        loop=episode.LoopConfig(enabled=True, matcher="pixelwise", alpha=0.0,
                                close_radius=8.0, recency_window=8),
    )
    res = episode.run_episode(cfg)
    assert res.detections
    for t_now, t_matched, dist in res.detections:
        assert t_now - t_matched > 8
        assert dist >= 0.0


def test_episode_pr_curve_needs_revisits():
    res = episode.run_episode(_quick_cfg(
        trajectory=str(FIXTURES / "lshape_32.csv"),
        maze=str(FIXTURES / "lshape.maze"),
    ))
    res.gt_pairs = []
    with pytest.raises(Exception):
        episode.episode_pr_curve(res)


# ---------------------------------------------------------------- bundle

def test_write_bundle_contents(tmp_path):
    cfg = _quick_cfg(loop=episode.LoopConfig(enabled=True, matcher="pixelwise",
                                             alpha=0.05, close_radius=8.0,
                                             recency_window=8))
    res = episode.run_episode(cfg)
    out = episode.write_bundle(res, tmp_path / "run")
    names = {p.name for p in out.iterdir()}
    assert {"pose_log.csv", "metrics.csv", "detections.csv", "closures.csv",
            "gt_closures.csv", "places.csv", "global_map.pgm",
            "global_map_meta.json", "global_belief.npy", "gt_global.npy",
            "summary.json"} <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 32
    assert summary["schema"] == 1
    belief = np.load(out / "global_belief.npy")
    assert belief.shape == (96, 96)


# ---------------------------------------------------------------- CLI

def test_cli_run_eval_pr_render(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(tmp_path / "run.json",
                             loop={"enabled": True, "matcher": "pixelwise",
                                   "alpha": 0.05, "close_radius": 8,
                                   "recency_window": 8})
    out_dir = tmp_path / "out"
    r = runner.invoke(cli.main, ["run", str(cfg_path), "-o", str(out_dir)])
    assert r.exit_code == 0, r.output
    assert (out_dir / "summary.json").exists()

    r = runner.invoke(cli.main, ["eval", str(out_dir)])
    assert r.exit_code == 0, r.output
    report = json.loads(r.output)
    assert set(report) >= {"mse", "correlation", "mutual_information"}

    r = runner.invoke(cli.main, ["pr", str(out_dir)])
    assert r.exit_code == 0, r.output
    assert "auc=" in r.output
    assert (out_dir / "pr.csv").exists()

    r = runner.invoke(cli.main, ["render", str(out_dir)])
    assert r.exit_code == 0, r.output
    assert (out_dir / "render.pgm").exists()
    assert (out_dir / "render_overlay.csv").exists()


def test_cli_config_error_exits_2(tmp_path):
    runner = CliRunner()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 99}))
    r = runner.invoke(cli.main, ["run", str(bad), "-o", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert "error" in r.output or r.exception


def test_cli_runtime_error_exits_3(tmp_path):
    runner = CliRunner()
    # collision surfaces while running the episode
    traj = tmp_path / "crash.csv"
    traj.write_text("\n".join(["0, -90, 0.1"] * 4))
    cfg_path = _write_config(tmp_path / "run.json", trajectory=str(traj))
    r = runner.invoke(cli.main, ["run", str(cfg_path), "-o", str(tmp_path / "o")])
    assert r.exit_code == 3


def test_cli_no_output_dir_exits_2(tmp_path):
    runner = CliRunner()
    cfg_path = _write_config(tmp_path / "run.json")
    r = runner.invoke(cli.main, ["run", str(cfg_path)])
    assert r.exit_code == 2


def test_cli_train_pu_writes_params(tmp_path):
    runner = CliRunner()
    cfg = {
        "schema": 1,
        "maze": str(FIXTURES / "cross.maze"),
        "trajectory": str(FIXTURES / "cross_32.csv"),
        "sensor": {"fov_deg": 360, "n_rays": 64, "max_range": 3.84},
        "mining": {"eps_pos": 0.2, "eps_neg": 0.6, "gap": 4},
        "train": {"epochs": 2, "batch_size": 8, "seed": 0},
        "out_params": "encoder.json",
        "out_loss_curve": "loss.csv",
    }
    p = tmp_path / "train.json"
    p.write_text(json.dumps(cfg))
    r = runner.invoke(cli.main, ["train-pu", str(p)])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "encoder.json").exists()
    assert (tmp_path / "loss.csv").read_text().startswith("epoch,mean_loss")
