import numpy as np
import pytest

import onlinehoi as oh
from onlinehoi import convert


def motion_items(rng, n, T=12, D=3, P=4):
    return [
        convert.MotionItem(actor=rng.normal(size=(T, D)), reactor=rng.normal(size=(T, D)),
                           object_pose=rng.normal(size=(T, P)), geometry=rng.normal(size=(20, 3)), label=i % 2)
        for i in range(n)
    ]


def generation_config(root, **data):
    return {
        "name": "converted", "seeds": [0], "S": 2, "L_cap": 2,
        "training": {"steps": 3, "batch": 2, "checkpoint_every": 0},
        "diffusion": {"steps": 4},
        "network": {"model_dim": 8, "depth": 1, "state_dim": 4, "heads": 2},
        "data": {"train": 4, "val": 2, "test": 2, "n_classes": 2, **data},
        "eval": {"classifier_steps": 3, "div_pairs": 1},
        "paths": {"data": str(root)},
    }


def test_generation_dataset_trains(tmp_path):
    rng = np.random.default_rng(0)
    convert.write_generation_dataset(tmp_path / "d", motion_items(rng, 4), motion_items(rng, 2), motion_items(rng, 2))
    cfg = generation_config(tmp_path / "d", pose_dim=3, object_pose_dim=4, geometry_points=8)
    run = oh.train(cfg, 0, tmp_path / "run")
    report = oh.evaluate(cfg, 0, run["checkpoint"])
    assert np.isfinite(report["metrics"]["MSE"])


def test_generation_dataset_width_mismatch(tmp_path):
    rng = np.random.default_rng(1)
    convert.write_generation_dataset(tmp_path / "d", motion_items(rng, 4), motion_items(rng, 2), motion_items(rng, 2))
    with pytest.raises(oh.ConfigError, match="pose_dim"):
        oh.train(generation_config(tmp_path / "d"), 0, tmp_path / "run")


def test_perception_dataset_trains(tmp_path):
    rng = np.random.default_rng(2)

    def clip(T=10, n=12):
        pts = [rng.normal(size=(n, 3)) * 0.3 for _ in range(T)]
        return convert.Clip(points=pts, normals=[convert.estimate_normals(p, k=5) for p in pts],
                            labels=[t * 3 // T for t in range(T)])

    convert.write_perception_dataset(tmp_path / "d", [clip() for _ in range(3)], [clip(), clip()], [clip(), clip()])
    cfg = {
        "name": "converted_pcd", "task": "perception", "seeds": [0], "S": 2, "L_cap": 2,
        "training": {"steps": 2, "batch": 1, "checkpoint_every": 0},
        "network": {"model_dim": 8, "depth": 1, "state_dim": 4, "heads": 2},
        "data": {"train": 3, "val": 2, "test": 2, "n_classes": 3, "n_pts": 12},
        "paths": {"data": str(tmp_path / "d")},
    }
    run = oh.train(cfg, 0, tmp_path / "run")
    report = oh.evaluate(cfg, 0, run["checkpoint"])
    assert 0.0 <= report["metrics"]["Acc"] <= 100.0


def test_estimated_normals_are_unit_and_orthogonal_to_a_plane():
    rng = np.random.default_rng(3)
    pts = np.c_[rng.normal(size=(50, 2)), np.zeros(50)]
    n = convert.estimate_normals(pts)
    np.testing.assert_allclose(np.abs(n[:, 2]), 1.0, atol=1e-9)


def test_core4d_mapping_shapes():
    rng = np.random.default_rng(4)
    item = convert.core4d_item(rng.normal(size=(7, 5, 3)), rng.normal(size=(7, 5, 3)), rng.normal(size=(7, 3)),
                               rng.normal(size=(7, 3)), rng.normal(size=(100, 3)), label=2, n_geometry=30)
    assert item.actor.shape == (7, 15) and item.object_pose.shape == (7, 6) and item.geometry.shape == (30, 3)
