import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vadosd.model import (
    HeadConfig,
    ModelCheckpoint,
    ModelConfig,
    ModelInput,
    Segmenter,
    TcnConfig,
    binarize_2class,
    count_parameters,
    merge_joint,
    task_targets,
)


def _small(task="joint", path="logmel", hidden=16, **kw):
    return ModelConfig(path, TcnConfig(hidden_channels=hidden, dropout=0.0), HeadConfig(task), **kw)


def _expected_params(H, F, C, extra=0):
    block = H * H * 3 + H + 2 * H + H + H * H + H
    return H * F + H + 15 * block + C * H + C + extra


@pytest.mark.parametrize("task,C", [("vad", 2), ("osd", 2), ("joint", 3)])
def test_parameter_counts(task, C):
    assert count_parameters(ModelConfig("logmel", head=HeadConfig(task))) == _expected_params(128, 64, C)
    assert count_parameters(ModelConfig("sacc", head=HeadConfig(task), num_channels=4)) == _expected_params(128, 64, C, 2 * 256 * 257)
    emb = ModelConfig("embedding", head=HeadConfig(task), embedding_dim=768, embedding_out_dim=64)
    assert count_parameters(emb) == _expected_params(128, 64, C, 200 * 99 + 64 * 768)


def test_joint_and_dedicated_differ_only_in_head():
    H = 128
    assert count_parameters(ModelConfig(head=HeadConfig("joint"))) - count_parameters(ModelConfig(head=HeadConfig("vad"))) == H + 1


def test_receptive_field():
    assert TcnConfig().receptive_field == 187


def test_output_shapes_and_simplex():
    x = np.random.default_rng(0).standard_normal((3, 200, 64)).astype(np.float32)
    for task, C in [("vad", 2), ("joint", 3)]:
        p, w = Segmenter(_small(task)).posteriors(ModelInput(x))
        assert p.shape == (3, 200, C) and w is None
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-5)


def test_sacc_path_shapes():
    cfg = _small(path="sacc", num_channels=3)
    mag = np.random.default_rng(1).uniform(0, 1, (2, 50, 3, 257)).astype(np.float32)
    p, w = Segmenter(cfg).posteriors(ModelInput(mag, np.zeros((2, 64)), np.ones((2, 64))))
    assert p.shape == (2, 50, 3) and w.shape == (2, 50, 3)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-5)


def test_zero_head_gives_uniform():
    m = Segmenter(_small())
    m.head_w.data[:] = 0
    p, _ = m.posteriors(ModelInput(np.random.default_rng(2).standard_normal((1, 40, 64))))
    np.testing.assert_allclose(p, 1 / 3, atol=1e-6)


def test_wrong_feature_dimension_rejected():
    with pytest.raises(ValueError):
        Segmenter(_small()).posteriors(ModelInput(np.zeros((1, 10, 40))))


def test_receptive_field_perturbation():
    m = Segmenter(_small(hidden=8), dtype=np.float64)
    x = np.random.default_rng(3).standard_normal((1, 400, 64))
    t0 = 200
    y = x.copy()
    y[0, t0] += 5.0
    a, _ = m.posteriors(ModelInput(x))
    b, _ = m.posteriors(ModelInput(y))
    changed = np.flatnonzero(np.abs(a - b).max(axis=-1)[0] > 0)
    half = (TcnConfig().receptive_field - 1) // 2
    assert changed.min() >= t0 - half and changed.max() <= t0 + half
    assert changed.min() == t0 - half and changed.max() == t0 + half


def test_shift_equivariance_away_from_edges():
    m = Segmenter(_small(hidden=8), dtype=np.float64)
    x = np.random.default_rng(4).standard_normal((1, 600, 64))
    a, _ = m.posteriors(ModelInput(x[:, :500]))
    b, _ = m.posteriors(ModelInput(x[:, 50:550]))
    np.testing.assert_allclose(a[0, 200:300], b[0, 150:250], atol=1e-10)


def test_merge_joint_examples():
    p = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7], [0.4, 0.4, 0.2], [0.2, 0.4, 0.4]])
    vad, osd = merge_joint(p)
    assert vad.tolist() == [0, 1, 1, 0, 1]
    assert osd.tolist() == [0, 0, 1, 0, 0]


def test_merge_joint_simplex_grid():
    grid = np.linspace(0, 1, 21)
    pts = np.array([(a, b, 1 - a - b) for a, b in itertools.product(grid, grid) if a + b <= 1 + 1e-12])
    pts = np.clip(pts, 0, 1)
    vad, osd = merge_joint(pts)
    assert np.all(osd <= vad)
    for p, v, o in zip(pts, vad, osd):
        c = int(np.argmax(p))
        assert v == (c >= 1) and o == (c == 2)


@given(st.integers(0, 10_000))
def test_merge_invariant_to_monotone_transform(seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(3), 30)
    a = merge_joint(p)
    b = merge_joint(np.log(p) * 3 + 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_binarize():
    assert binarize_2class(np.array([[0.5, 0.5], [0.7, 0.3], [0.1, 0.9]]), 0.5).tolist() == [1, 0, 1]
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            binarize_2class(np.ones(3), bad)


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_binarize_monotone_in_threshold(t, dt):
    p = np.random.default_rng(0).uniform(size=100)
    assert np.all(binarize_2class(p, t + dt) <= binarize_2class(p, t))


def test_task_targets():
    c = np.array([0, 1, 2, 3])
    assert task_targets(c, "vad").tolist() == [0, 1, 1, 1]
    assert task_targets(c, "osd").tolist() == [0, 0, 1, 1]
    assert task_targets(c, "joint").tolist() == [0, 1, 2, 2]


def test_checkpoint_reproduces_posteriors(tmp_path):
    m = Segmenter(_small(path="sacc", num_channels=2))
    ModelCheckpoint.from_model(m, {"note": "x"}).save(tmp_path / "m.ckpt")
    ck = ModelCheckpoint.load(tmp_path / "m.ckpt")
    assert ck.metadata == {"note": "x"} and ck.config == m.cfg
    batch = ModelInput(np.random.default_rng(5).uniform(0, 1, (1, 30, 2, 257)), np.zeros((1, 64)), np.ones((1, 64)))
    np.testing.assert_array_equal(ck.build().posteriors(batch)[0], m.posteriors(batch)[0])


def test_config_validation():
    with pytest.raises(ValueError):
        TcnConfig(repeats=2)
    with pytest.raises(ValueError):
        TcnConfig(kernel_size=4)
    with pytest.raises(ValueError):
        HeadConfig("diarize")
    with pytest.raises(ValueError):
        ModelConfig("mfcc")
    assert ModelConfig.from_dict(_small().to_dict()) == _small()
