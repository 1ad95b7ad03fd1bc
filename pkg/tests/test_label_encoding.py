import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_vectors
from semlabel.errors import EncodingError, FetchError
from semlabel.graph_data import synthetic_vocabulary
from semlabel.label_encoding import (EmbeddingEndpointConfig, EncodingKind, EncodingTable,
                                     LabelVocabulary, compact, cosine_similarity, decode_nearest,
                                     decode_nearest_batch, fetch_embeddings, load_embedding_table,
                                     one_hot_table, synth_hierarchical_table, building_vocabulary)

AB = LabelVocabulary(("A", "B"))
finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def test_vocabulary_rejects_duplicates():
    with pytest.raises(EncodingError):
        LabelVocabulary(("Wall", "Wall"))


def test_vocabulary_groups_must_be_dense():
    with pytest.raises(EncodingError):
        LabelVocabulary(("a", "b"), (0, 2))


def test_building_vocabulary():
    vocab = building_vocabulary()
    assert len(vocab) == 42
    assert vocab.labels[0] == "Core wall"
    assert vocab.labels[41] == "Haunch"
    assert vocab.labels[17] == "Transfer column"


def test_one_hot_rows():
    vocab = LabelVocabulary(("Wall", "Column", "Slab"))
    table = one_hot_table(vocab)
    assert table.vectors[vocab.index("Column")].tolist() == [0.0, 1.0, 0.0]
    assert table.kind is EncodingKind.ONE_HOT


def test_one_hot_building_vocab_is_42_dim():
    table = one_hot_table(building_vocabulary())
    assert table.dim == 42
    for i in range(42):
        for j in range(i + 1, 42):
            assert cosine_similarity(table.vectors[i], table.vectors[j]) == 0.0


def test_one_hot_rejects_empty_vocabulary():
    with pytest.raises(EncodingError):
        one_hot_table(LabelVocabulary(()))


def test_load_table_orders_by_vocabulary():
    table = load_embedding_table(b'{"B": [0, 1], "A": [1, 0]}', AB)
    assert table.vectors.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert table.kind is EncodingKind.LOADED


@pytest.mark.parametrize("doc, code", [
    ({"A": [1, 0]}, "missing_label"),
    ({"A": [0, 0], "B": [0, 1]}, "zero_vector"),
    ({"A": [1, 0], "B": [0, 1, 2]}, "length_mismatch"),
    ({"A": [1, "x"], "B": [0, 1]}, "malformed_json"),
])
def test_load_table_errors(doc, code):
    with pytest.raises(EncodingError) as err:
        load_embedding_table(json.dumps(doc), AB)
    assert err.value.code == code


def test_table_json_round_trip():
    vocab = synthetic_vocabulary(3, 4)
    table = synth_hierarchical_table(vocab, 40, seed=5)
    back = load_embedding_table(table.to_json(vocab), vocab)
    assert np.array_equal(back.vectors, table.vectors)


def test_compact_hand_example():
    table = EncodingTable(np.array([[3.0, 4.0, 0.0, 0.0]]), EncodingKind.LOADED)
    out = compact(table, 2)
    np.testing.assert_allclose(out.vectors, [[0.6, 0.8]], atol=1e-15)
    assert out.kind is EncodingKind.COMPACTED


def test_compact_full_dim_is_identity_on_unit_rows():
    vocab = synthetic_vocabulary(6, 7)
    table = synth_hierarchical_table(vocab, 128, seed=1)
    out = compact(table, table.dim)
    assert np.max(np.abs(out.vectors - table.vectors)) <= 1e-12


def test_compact_4096_to_1024():
    rng = np.random.default_rng(0)
    table = EncodingTable(rng.standard_normal((42, 4096)), EncodingKind.FETCHED)
    out = compact(table, 1024)
    assert out.dim == 1024
    assert np.max(np.abs(np.linalg.norm(out.vectors, axis=1) - 1.0)) <= 1e-12


@pytest.mark.parametrize("target", [0, 5])
def test_compact_rejects_out_of_range(target):
    table = EncodingTable(np.eye(4), EncodingKind.ONE_HOT)
    with pytest.raises(EncodingError):
        compact(table, target)


def test_compact_rejects_zero_prefix():
    table = EncodingTable(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), EncodingKind.LOADED)
    with pytest.raises(EncodingError) as err:
        compact(table, 2)
    assert err.value.code == "zero_vector"


def test_synth_hierarchical_determinism_and_norms():
    vocab = synthetic_vocabulary(6, 7)
    a = synth_hierarchical_table(vocab, 256, seed=7)
    b = synth_hierarchical_table(vocab, 256, seed=7)
    assert np.array_equal(a.vectors, b.vectors)
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0, atol=1e-12)


def test_synth_hierarchical_cosines():
    vocab = synthetic_vocabulary(6, 7)
    table = synth_hierarchical_table(vocab, 256, seed=3, within_group_cos=0.8)
    groups = np.asarray(vocab.generic_group)
    gram = table.unit_rows() @ table.unit_rows().T
    iu = np.triu_indices(len(vocab), 1)
    same = groups[iu[0]] == groups[iu[1]]
    assert np.all((gram[iu][same] >= 0.7) & (gram[iu][same] <= 0.9))
    assert np.all(np.abs(gram[iu][~same]) < 0.1)


def test_synth_hierarchical_errors():
    with pytest.raises(EncodingError):
        synth_hierarchical_table(synthetic_vocabulary(6, 7), 47, seed=0)
    with pytest.raises(EncodingError):
        synth_hierarchical_table(LabelVocabulary(("a", "b")), 16, seed=0)


@pytest.mark.parametrize("a, b, expected", [
    ([1, 2, 3], [1, 2, 3], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 0], [-1, 0], -1.0),
])
def test_cosine_similarity(a, b, expected):
    assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-15)


def test_cosine_similarity_errors():
    with pytest.raises(EncodingError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(EncodingError):
        cosine_similarity([1, 0, 0], [1, 0])


def test_decode_hand_example():
    table = EncodingTable(np.array([[1.0, 0.0], [0.6, 0.8]]), EncodingKind.LOADED)
    # cos to A = 0.8, cos to B = 0.48 + 0.48 = 0.96
    assert decode_nearest([0.8, 0.6], table) == 1


def test_decode_tie_goes_to_lowest_index():
    assert decode_nearest([0.5, 0.5], one_hot_table(AB)) == 0


def test_decode_errors():
    table = one_hot_table(AB)
    with pytest.raises(EncodingError):
        decode_nearest([0.0, 0.0], table)
    with pytest.raises(EncodingError):
        decode_nearest([1.0, 0.0, 0.0], table)


@pytest.mark.parametrize("make", [
    lambda v: one_hot_table(v),
    lambda v: synth_hierarchical_table(v, 128, seed=2),
    lambda v: compact(synth_hierarchical_table(v, 128, seed=2), 64),
])
def test_decode_each_row_returns_its_label(make):
    vocab = synthetic_vocabulary(6, 7)
    table = make(vocab)
    assert [decode_nearest(row, table) for row in table.vectors] == list(range(42))
    assert decode_nearest_batch(table.vectors, table).tolist() == list(range(42))


@settings(max_examples=50, deadline=None)
@given(vec=arrays(np.float64, 8, elements=finite), scale=st.floats(1e-3, 1e3))
def test_decode_is_scale_invariant(vec, scale):
    if not np.any(vec != 0):
        return
    table = synth_hierarchical_table(synthetic_vocabulary(2, 3), 8, seed=0)
    assert decode_nearest(scale * vec, table) == decode_nearest(vec, table)


@settings(max_examples=100, deadline=None)
@given(vec=arrays(np.float64, 5, elements=st.floats(0, 10)))
def test_decode_one_hot_matches_argmax(vec):
    if not np.any(vec > 0):
        return
    table = one_hot_table(LabelVocabulary(tuple("abcde")))
    # brute force: first index attaining the maximum component
    best = max(range(5), key=lambda i: (vec[i], -i))
    assert decode_nearest(vec, table) == best


# --- fetching ---------------------------------------------------------------

def test_fetch_batches_and_reorders(mock_server, tmp_path):
    vocab = synthetic_vocabulary(6, 7)
    vectors = random_vectors(vocab.labels, 12)
    srv = mock_server(vectors)
    cfg = EmbeddingEndpointConfig(srv.url, "text-embedding-3-small", auth_token="tok", batch_size=16)
    table = fetch_embeddings(cfg, vocab, persist_path=tmp_path / "emb.json")

    assert [len(r["body"]["input"]) for r in srv.requests] == [16, 16, 10]
    assert all(r["auth"] == "Bearer tok" for r in srv.requests)
    assert all(r["body"]["model"] == "text-embedding-3-small" for r in srv.requests)
    assert table.kind is EncodingKind.FETCHED
    assert np.array_equal(table.vectors, np.array([vectors[lab] for lab in vocab.labels]))
    persisted = load_embedding_table((tmp_path / "emb.json").read_bytes(), vocab)
    assert np.array_equal(persisted.vectors, table.vectors)


def test_fetch_reports_dimension(mock_server):
    vocab = synthetic_vocabulary(1, 3)
    srv = mock_server(random_vectors(vocab.labels, 1536))
    table = fetch_embeddings(EmbeddingEndpointConfig(srv.url, "m"), vocab)
    assert table.dim == 1536


def test_fetch_prompt_template(mock_server):
    vocab = LabelVocabulary(("Core wall",))
    srv = mock_server({"BIM subtype: Core wall": [1.0, 2.0]})
    cfg = EmbeddingEndpointConfig(srv.url, "m", prompt_template="BIM subtype: {label}")
    assert fetch_embeddings(cfg, vocab).vectors.tolist() == [[1.0, 2.0]]


def test_fetch_count_mismatch(mock_server):
    vocab = synthetic_vocabulary(6, 7)
    srv = mock_server(random_vectors(vocab.labels, 4), drop_last=True)
    with pytest.raises(FetchError) as err:
        fetch_embeddings(EmbeddingEndpointConfig(srv.url, "m", batch_size=42), vocab)
    assert err.value.code == "count_mismatch"


def test_fetch_http_error(mock_server):
    vocab = synthetic_vocabulary(1, 2)
    srv = mock_server(random_vectors(vocab.labels, 4), status=500)
    with pytest.raises(FetchError) as err:
        fetch_embeddings(EmbeddingEndpointConfig(srv.url, "m"), vocab)
    assert err.value.code == "http_status"


def test_fetch_nan_vector(mock_server):
    vocab = LabelVocabulary(("a",))
    srv = mock_server({"a": [1.0, float("nan")]})
    with pytest.raises(FetchError):
        fetch_embeddings(EmbeddingEndpointConfig(srv.url, "m"), vocab)


def test_fetch_network_failure():
    cfg = EmbeddingEndpointConfig("http://127.0.0.1:9", "m", timeout=2.0)
    with pytest.raises(FetchError) as err:
        fetch_embeddings(cfg, LabelVocabulary(("a",)))
    assert err.value.code == "network"
