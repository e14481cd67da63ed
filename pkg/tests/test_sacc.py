import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vadosd.sacc import Sacc, SaccConfig, combine, export_weights, read_weights_csv, write_weights_csv


def _sacc(seed=0, gain=1.0):
    return Sacc(SaccConfig(init_gain=gain), np.random.default_rng(seed), dtype=np.float64)


def test_single_channel_is_identity():
    mag = np.random.default_rng(0).uniform(0, 1, (1, 5, 257))
    combined, w = combine(mag, _sacc())
    assert np.all(w == 1.0)
    np.testing.assert_allclose(combined, mag[0])


def test_duplicate_channels_split_evenly():
    m = np.random.default_rng(1).uniform(0, 1, (1, 6, 257))
    _, w = combine(np.concatenate([m, m]), _sacc(3))
    np.testing.assert_allclose(w, 0.5, atol=1e-12)


@given(st.integers(0, 1000))
def test_simplex_and_convex_hull(seed):
    rng = np.random.default_rng(seed)
    mag = rng.uniform(0, 3, (4, 7, 257))
    s = _sacc(seed % 7, gain=float(rng.uniform(0.1, 3)))
    combined, w = combine(mag, s)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(w >= 0)
    assert np.all(combined <= mag.max(axis=0) + 1e-9) and np.all(combined >= mag.min(axis=0) - 1e-9)
    # naive recomputation of the defining equation
    tok = np.log(mag + 1e-4)
    q = s.query.data @ tok.mean(axis=0).T
    for t in range(7):
        scores = np.array([(s.key.data @ tok[m, t]) @ q[:, t] for m in range(4)]) / 16.0
        e = np.exp(scores - scores.max())
        np.testing.assert_allclose(w[t], e / e.sum(), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(combined[t], (w[t][:, None] * mag[:, t]).sum(axis=0), rtol=1e-9)


def test_permutation_equivariance():
    rng = np.random.default_rng(2)
    mag = rng.uniform(0, 1, (4, 5, 257))
    s = _sacc(4)
    perm = np.array([2, 0, 3, 1])
    c1, w1 = combine(mag, s)
    c2, w2 = combine(mag[perm], s)
    np.testing.assert_allclose(w2, w1[:, perm], atol=1e-12)
    np.testing.assert_allclose(c2, c1, atol=1e-12)


def test_rejects_bad_input():
    s = _sacc()
    with pytest.raises(ValueError):
        s(np.full((1, 2, 2, 257), np.nan))
    with pytest.raises(ValueError):
        s(-np.ones((1, 2, 2, 257)))
    with pytest.raises(ValueError):
        s(np.ones((1, 2, 2, 10)))
    with pytest.raises(ValueError):
        SaccConfig(num_heads=2)


def test_export_weights():
    np.testing.assert_allclose(export_weights(np.array([[0.25, 0.75]]), "max"), [[1 / 3, 1.0]])
    w = np.random.default_rng(3).dirichlet(np.ones(3), 5)
    np.testing.assert_array_equal(export_weights(w), w)
    np.testing.assert_array_equal(export_weights(np.full((4, 4), 0.25), "max"), 1.0)
    with pytest.raises(ValueError):
        export_weights(w, "sum")


def test_weights_csv_roundtrip(tmp_path):
    w = np.random.default_rng(4).dirichlet(np.ones(4), 10)
    write_weights_csv(tmp_path / "w.csv", w, "rec7", "max")
    meta, back = read_weights_csv(tmp_path / "w.csv")
    assert meta == {"recording_id": "rec7", "normalization": "max"}
    np.testing.assert_allclose(back, w / w.max(), rtol=1e-5)
