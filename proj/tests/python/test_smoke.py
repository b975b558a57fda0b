import math

import numpy as np
import pytest

import integral_action as ia


def test_default_config_sections():
    cfg = ia.default_config()
    for key in ("codec", "sampling", "streams", "integrator", "model", "synth", "train"):
        assert key in cfg
    assert cfg["integrator"]["lambda"] == 1.5
    assert ia.normalize_config({"integrator": {"lambda": 5.0}})["integrator"]["lambda"] == 5.0
    with pytest.raises(Exception):
        ia.normalize_config({"integrator": {"gate_source": "elbow"}})


def test_encode_pose_clip_peak_and_shape():
    k = 13
    kp = np.full((2, 1, k, 3), np.nan, dtype=np.float32)
    kp[:, 0, 0] = (5.0, 7.0, 1.0)
    kp[:, 0, 1] = (6.0, 7.0, 1.0)
    clip = ia.encode_pose_clip(kp, np.ones((2, 1), dtype=np.float32))
    assert clip.shape == (2, 13 + 2 * 12, 16, 16)
    assert clip[0, 0, 7, 5] == pytest.approx(1.0)
    assert clip[0, 0, 7, 6] == pytest.approx(math.exp(-2.0), rel=1e-5)


def test_low_score_persons_are_dropped():
    kp = np.zeros((1, 1, 13, 3), dtype=np.float32)
    kp[..., 2] = 1.0
    clip = ia.encode_pose_clip(kp, np.full((1, 1), 0.05, dtype=np.float32))
    assert not clip.any()


def test_temporal_shift_matches_index_mapping():
    t, c = 4, 16
    x = np.random.default_rng(0).standard_normal((t, c, 2, 2))
    y = ia.temporal_shift(x, t)
    n = c // 8
    assert np.array_equal(y[1:, :n], x[:-1, :n])
    assert not y[0, :n].any()
    assert np.array_equal(y[:-1, n : 2 * n], x[1:, n : 2 * n])
    assert not y[-1, n : 2 * n].any()
    assert np.array_equal(y[:, 2 * n :], x[:, 2 * n :])


def test_integrate_and_regularizer():
    rng = np.random.default_rng(1)
    a, p = rng.standard_normal((3, 8)), rng.standard_normal((3, 8))
    g = rng.uniform(0.01, 0.99, (3, 8))
    np.testing.assert_allclose(ia.integrate(a, p, g), g * a + (1 - g) * p, rtol=1e-12)
    assert ia.gate_regularizer(np.full((2, 4), 0.5)) == pytest.approx(math.log(2.0), abs=1e-9)


def test_generate_video_is_deterministic():
    v1 = ia.generate_video(2, 3, 42)
    v2 = ia.generate_video(2, 3, 42)
    for x, y in zip(v1, v2):
        assert np.array_equal(x, y, equal_nan=True)
    app, kp, scores = v1
    assert app.shape[1:] == (3, 64, 64)
    assert kp.shape[2:] == (13, 3)
    assert ia.deranged_context(7, 8) == 0


def test_metrics_helpers():
    probs = [[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]]
    assert ia.top_k_accuracy(probs, [0, 1], 1) == pytest.approx(50.0)
    assert ia.top_k_accuracy(probs, [0, 1], 2) == pytest.approx(100.0)
    assert ia.oracle_selection(probs, [[0.1, 0.8, 0.1], [0.1, 0.8, 0.1]], [0, 1]) == pytest.approx(100.0)
