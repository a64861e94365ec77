import numpy as np
import pytest

import onlinehoi as oh


def test_scan_matches_kernel():
    rng = np.random.default_rng(0)
    A = -np.diag(rng.uniform(0.2, 1.5, 4))
    B = rng.normal(size=4)
    C = rng.normal(size=4)
    xs = rng.normal(size=40)
    ys = np.array(oh.ssm_scan(xs, A, B, C, [0.3]))
    conv = np.array(oh.ssm_kernel_apply(xs, oh.ssm_kernel(A, B, C, 0.3, len(xs))))
    assert np.max(np.abs(ys - conv)) <= 1e-10 * max(1.0, np.max(np.abs(ys)))


def test_scan_rejects_bad_timescale():
    with pytest.raises(oh.InvalidParameter):
        oh.ssm_scan([1.0], -np.eye(1), np.ones(1), np.ones(1), [-0.5])


def test_short_term_memory_fifo():
    ms = oh.ShortTermMemory(3)
    assert ms.push(np.array([1.0, 0.0])) is None
    np.testing.assert_array_equal(ms.buffer(), np.tile([1.0, 0.0], (3, 1)))
    for v in (2.0, 3.0, 4.0):
        ms.push(np.array([v, 0.0]))
    evicted = ms.push(np.array([5.0, 0.0]))
    np.testing.assert_array_equal(evicted, [2.0, 0.0])
    np.testing.assert_array_equal(ms.buffer()[:, 0], [3.0, 4.0, 5.0])


def test_consolidation_merges_most_similar_pair():
    frames = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    values, counts = oh.ml_consolidate(frames, 3)
    np.testing.assert_array_equal(values, [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert counts == [2, 1, 1]


def test_schedule_and_forward_process():
    sched = oh.make_schedule(100, "linear")
    assert sched.steps == 100
    assert np.all(np.diff(sched.alpha_bars) < 0)
    x0 = np.ones((2, 3))
    noise = np.zeros((2, 3))
    np.testing.assert_allclose(oh.q_sample(x0, 50, noise, sched), np.sqrt(sched.alpha_bar(50)) * x0)


def test_metric_examples():
    assert oh.edit_score([0, 0, 1, 1, 2, 2], [0, 0, 0, 1, 1, 1]) == pytest.approx(66.67, abs=0.005)
    gt = [1] * 5 + [0] * 5
    pred = [0, 0, 0, 1, 1] + [0] * 5
    assert oh.f1_at_k(pred, gt, 0.5, [0]) == 0.0
    assert oh.f1_at_k(pred, gt, 0.25, [0]) == 100.0
    x = np.random.default_rng(1).normal(size=(40, 5))
    d = np.arange(5.0)
    assert oh.fid(x, x + d) == pytest.approx(float(d @ d), abs=1e-8)


def test_config_validation():
    cfg = oh.parse_config({"task": "generation"})
    assert cfg["task"] == "generation"
    with pytest.raises(oh.ConfigError):
        oh.parse_config({"memroy": "off"})


TINY = {
    "name": "py_smoke",
    "seeds": [0],
    "S": 4,
    "L_cap": 4,
    "training": {"steps": 4, "batch": 2, "checkpoint_every": 0},
    "diffusion": {"steps": 5},
    "network": {"model_dim": 8, "depth": 1, "state_dim": 4, "heads": 2},
    "data": {"train": 6, "val": 2, "test": 4, "T_seq": 16, "cue_delay": 4},
    "eval": {"classifier_steps": 5, "div_pairs": 2},
}


def test_train_and_evaluate_are_reproducible(tmp_path):
    a = oh.train(TINY, 0, tmp_path / "a")
    b = oh.train(TINY, 0, tmp_path / "b")
    assert a["losses"] == b["losses"]
    assert len(a["losses"]) == 4
    ra = oh.evaluate(TINY, 0, a["checkpoint"])
    rb = oh.evaluate(TINY, 0, b["checkpoint"])
    assert ra["metrics"] == rb["metrics"]
    assert ra["config_hash"] == oh.config_hash(TINY)
    assert ra["guard"]["violations"] == 0
