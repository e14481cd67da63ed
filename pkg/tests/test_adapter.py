import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import interp_oracle
from vadosd.adapter import (
    Aligner,
    EmbeddingFile,
    EmbeddingFileError,
    align,
    dumps_embeddings,
    interpolation_matrix,
    load_embeddings,
    loads_embeddings,
    pad_rows,
    surrogate_embeddings,
    write_embeddings,
)
from vadosd.corpus_io import AudioClip


def test_embedding_file_roundtrip_768(tmp_path):
    m = np.random.default_rng(0).standard_normal((150, 768)).astype(np.float32)
    write_embeddings(tmp_path / "a.emb", EmbeddingFile("rec1", m))
    back = load_embeddings(tmp_path / "a.emb")
    assert back.recording_id == "rec1" and back.dim == 768
    np.testing.assert_array_equal(back.matrix, m)


def test_embedding_file_errors():
    raw = dumps_embeddings(EmbeddingFile("r", np.ones((4, 3), np.float32)))
    with pytest.raises(EmbeddingFileError):
        loads_embeddings(raw[:-4])
    with pytest.raises(EmbeddingFileError):
        loads_embeddings(b"XXXXXXXX" + raw[8:])
    with pytest.raises(EmbeddingFileError):
        loads_embeddings(raw[:12])
    bad = dumps_embeddings(EmbeddingFile("r", np.full((4, 3), np.nan, np.float32)))
    with pytest.raises(EmbeddingFileError, match="non-finite"):
        loads_embeddings(bad)


def test_surrogate_row_count():
    clip = AudioClip("r", np.zeros((1, 32000), np.float32))
    assert surrogate_embeddings(clip).matrix.shape == (99, 64)


@given(arrays(np.float64, st.tuples(st.just(99), st.integers(1, 8)), elements=st.floats(-100, 100)))
def test_aligner_matches_interp_oracle(rows):
    out = align(rows, Aligner(rows.shape[1], dtype=np.float64))
    np.testing.assert_allclose(out, interp_oracle(rows), atol=1e-6 * (1 + np.abs(rows).max()))


def test_constant_rows_stay_constant():
    rows = np.tile(np.arange(5.0), (99, 1))
    np.testing.assert_allclose(align(rows, Aligner(5, dtype=np.float64)), np.tile(np.arange(5.0), (200, 1)))


def test_alignment_is_linear():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, 99, 4))
    al = Aligner(4, dtype=np.float64)
    np.testing.assert_allclose(align(2 * a - 3 * b, al), 2 * align(a, al) - 3 * align(b, al), atol=1e-10)


def test_interpolation_rows_are_convex():
    A = interpolation_matrix()
    assert A.shape == (200, 99)
    np.testing.assert_allclose(A.sum(axis=1), 1.0)
    assert np.all(A >= 0)


def test_row_limits():
    with pytest.raises(ValueError):
        pad_rows(np.zeros((100, 3)))
    rows, mask = pad_rows(np.ones((90, 3)))
    assert rows.shape == (99, 3) and mask.sum() == 90 and not rows[90:].any()


def test_projection_changes_dimension():
    al = Aligner(6, out_dim=3, dtype=np.float64)
    assert align(np.ones((99, 6)), al).shape == (200, 3)
