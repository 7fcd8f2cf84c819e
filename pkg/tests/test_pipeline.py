import os

import numpy as np
import pytest

from mvsweep.harness import formats
from mvsweep.harness.cli import main as cli_main
from mvsweep.harness.config import PipelineConfig, save_config
from mvsweep.harness.pipeline import (
    holdout_novel_indices,
    load_scene,
    run_pipeline,
)
from mvsweep.scenegen import generate_scene, make_trajectory, raycast
from mvsweep.harness.boxes import Box3D


def write_scene(tmp_path, seed=5, n_boxes=1, n_views=4, image_size=(128, 96)):
    scene_dir = tmp_path / f"scene_{seed}"
    os.makedirs(scene_dir, exist_ok=True)
    scene = generate_scene(seed=seed, n_boxes=n_boxes)
    views = make_trajectory(scene, n_views, seed=seed, image_size=image_size)
    formats.save_scene(scene_dir / "scene.txt", scene)
    formats.save_cameras(scene_dir / "cameras.txt", views)
    formats.save_boxes(
        scene_dir / "boxes.txt", [Box3D.from_corners(b.lo, b.hi) for b in scene.boxes]
    )
    for i, v in enumerate(views):
        gt = raycast(scene, v)
        formats.save_ppm(scene_dir / f"view_{i:03d}.ppm", gt.image)
        formats.save_raster(scene_dir / f"depth_{i:03d}.mvsr", gt.depth)
    return scene_dir


def small_config(**kw):
    defaults = dict(
        grid_dims=(16, 16, 8),
        grid_pitch=(0.4, 0.4, 0.4),
        grid_origin=(-3.2, -3.2, 0.0),
        min_component=2,
    )
    defaults.update(kw)
    return PipelineConfig(**defaults)


class TestHoldout:
    def test_interior_evenly_spaced(self):
        assert holdout_novel_indices(10, 2) == [3, 7]
        assert holdout_novel_indices(5, 2) == [2, 3]

    def test_rejects_excessive_holdout(self):
        with pytest.raises(ValueError):
            holdout_novel_indices(3, 2)


class TestLoadScene:
    def test_missing_camera_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="cameras.txt"):
            load_scene(tmp_path)

    def test_missing_image_named(self, tmp_path):
        scene_dir = write_scene(tmp_path)
        os.remove(scene_dir / "view_002.ppm")
        with pytest.raises(FileNotFoundError, match="view_002.ppm"):
            load_scene(scene_dir)

    def test_size_mismatch_reported(self, tmp_path):
        scene_dir = write_scene(tmp_path)
        formats.save_ppm(scene_dir / "view_001.ppm", np.zeros((32, 32, 3)))
        with pytest.raises(ValueError, match="view_001.ppm"):
            load_scene(scene_dir)

    def test_loads_everything(self, tmp_path):
        scene_dir = write_scene(tmp_path, n_boxes=2)
        data = load_scene(scene_dir)
        assert len(data.views) == 4
        assert len(data.images) == 4
        assert data.gt_depths is not None and len(data.gt_depths) == 4
        assert len(data.gt_boxes) == 2
        assert data.spec is not None


class TestRunPipeline:
    def test_produces_artifacts_and_metrics(self, tmp_path):
        scene_dir = write_scene(tmp_path, n_boxes=1, n_views=4)
        out = tmp_path / "out"
        result = run_pipeline(scene_dir, small_config(), out_dir=out)
        assert len(result.prob_volumes) == 4
        for probs in result.prob_volumes:
            np.testing.assert_allclose(probs.sum(axis=2), 1.0, atol=1e-6)
        for i in range(4):
            assert (out / f"prob_{i:03d}.mvsr").exists()
            assert (out / f"depth_{i:03d}.mvsr").exists()
        assert (out / "volume.mvsv").exists()
        assert (out / "boxes.txt").exists()
        assert (out / "metrics.txt").exists()
        metrics = formats.load_metrics(out / "metrics.txt")
        assert "depth_rmse_view0" in metrics
        assert "depth_rmse_mean" in metrics
        assert "box0_best_iou" in metrics

    def test_byte_identical_reruns(self, tmp_path):
        scene_dir = write_scene(tmp_path, n_boxes=1, n_views=3)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        run_pipeline(scene_dir, small_config(), out_dir=out_a)
        run_pipeline(scene_dir, small_config(), out_dir=out_b)
        names = sorted(os.listdir(out_a))
        assert names == sorted(os.listdir(out_b))
        for name in names:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_ten_view_scene_defaults(self, tmp_path):
        # Ten views, default plane/grid configuration: the metrics report
        # carries one depth RMSE entry per view and at least one box comes
        # out of the extractor.
        scene_dir = write_scene(tmp_path, seed=31, n_boxes=2, n_views=10, image_size=(160, 120))
        result = run_pipeline(scene_dir, PipelineConfig())
        rmse_keys = [k for k in result.metrics if k.startswith("depth_rmse_view")]
        assert len(rmse_keys) == 10
        assert result.metrics["n_boxes"] >= 1

    def test_topk_ablation_rmse_trend(self, tmp_path):
        # k only affects the volume stage; regressed depth is identical, so
        # the k=3 mean RMSE is trivially <= the k=1 mean RMSE.
        scene_dir = write_scene(tmp_path, seed=8, n_boxes=0, n_views=3)
        r3 = run_pipeline(scene_dir, small_config(top_k=3))
        r1 = run_pipeline(scene_dir, small_config(top_k=1))
        assert r3.metrics["depth_rmse_mean"] <= r1.metrics["depth_rmse_mean"] + 1e-12

    def test_refine_mode_artifacts(self, tmp_path):
        scene_dir = write_scene(tmp_path, n_boxes=0, n_views=5, image_size=(64, 48))
        out = tmp_path / "out"
        config = small_config(refine_steps=2, refine_novel_views=2)
        result = run_pipeline(scene_dir, config, out_dir=out, refine=True)
        assert result.refined_views
        assert result.loss_trace is not None
        assert all(
            result.loss_trace[i + 1] <= result.loss_trace[i]
            for i in range(len(result.loss_trace) - 1)
        )
        assert (out / "splats.mvsg").exists()
        assert (out / "loss_trace.txt").exists()
        # held-out novel views produce no depth raster
        novel = holdout_novel_indices(5, 2)
        for i in range(5):
            assert (out / f"depth_{i:03d}.mvsr").exists() == (i not in novel)


class TestCli:
    def test_scene_gen_run_eval_render(self, tmp_path):
        scene_dir = tmp_path / "scene"
        out_dir = tmp_path / "results"
        cfg_path = tmp_path / "config.txt"
        save_config(cfg_path, small_config())
        assert cli_main([
            "--seed", "5", "--out", str(scene_dir), "scene-gen", "--boxes", "1", "--views", "3",
        ]) == 0
        assert (scene_dir / "cameras.txt").exists()
        assert (scene_dir / "view_002.ppm").exists()
        assert (scene_dir / "depth_002.mvsr").exists()
        assert (scene_dir / "scene.txt").exists()

        assert cli_main([
            "--config", str(cfg_path), "--out", str(out_dir), "run", "--scene", str(scene_dir),
        ]) == 0
        assert (out_dir / "metrics.txt").exists()

        metrics_path = tmp_path / "metrics_eval.txt"
        assert cli_main([
            "--config", str(cfg_path), "--out", str(metrics_path),
            "eval", "--scene", str(scene_dir), "--results", str(out_dir),
        ]) == 0
        metrics = formats.load_metrics(metrics_path)
        assert "depth_rmse_view0" in metrics

    def test_render_subcommand(self, tmp_path):
        scene_dir = tmp_path / "scene"
        out_dir = tmp_path / "refined"
        render_dir = tmp_path / "render"
        cfg = small_config(refine_steps=1, refine_novel_views=1)
        cfg_path = tmp_path / "config.txt"
        save_config(cfg_path, cfg)
        cli_main(["--seed", "7", "--out", str(scene_dir), "scene-gen", "--boxes", "0", "--views", "4"])
        cli_main(["--config", str(cfg_path), "--out", str(out_dir), "refine", "--scene", str(scene_dir)])
        assert (out_dir / "splats.mvsg").exists()
        assert cli_main([
            "--out", str(render_dir), "render",
            "--splats", str(out_dir / "splats.mvsg"),
            "--cameras", str(scene_dir / "cameras.txt"),
            "--view", "1",
        ]) == 0
        assert (render_dir / "render_001.ppm").exists()
        img = formats.load_ppm(render_dir / "render_001.ppm")
        assert img.shape[2] == 3 and img.max() > 0

    def test_threads_flag_validated(self, tmp_path):
        with pytest.raises(SystemExit):
            cli_main(["--threads", "0", "--out", str(tmp_path), "scene-gen"])
