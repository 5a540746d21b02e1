import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_text
from dbtagger.embeddings import (
    EmbeddingFormatError,
    EmbeddingTable,
    char_ngrams,
    embed_query,
    embed_token,
    fnv1a,
    load_embeddings,
    save_embeddings,
)


def test_load_two_line_file():
    table = load_embeddings("cat 1 0 0\ndog 0 1 0\n")
    assert len(table) == 2 and table.dimension == 3
    assert np.array_equal(table.vectors["cat"], [1.0, 0.0, 0.0])


def test_mixed_dimensions_rejected():
    with pytest.raises(EmbeddingFormatError, match="line 2"):
        load_embeddings("cat 1 0 0\ndog 0 1 0 5\n")


def test_empty_file_rejected():
    with pytest.raises(EmbeddingFormatError, match="no vectors"):
        load_embeddings("")


def test_count_dim_header_and_subword_line():
    table = load_embeddings("#subword B=1024 seed=7\n2 3\ncat 1 0 0\ndog 0 1 0\n")
    assert table.dimension == 3
    assert table.bucket_count == 1024 and table.subword_seed == 7


def test_300_dim_subset_fixture():
    table = load_embeddings(fixture_text("emb300_subset.vec"), expected_dim=300)
    assert table.dimension == 300
    assert "movie" in table


def test_exact_match_is_bitwise(fixture_embeddings):
    stored = fixture_embeddings.vectors["movie"]
    assert embed_token(fixture_embeddings, "movie") is stored


def test_lowercase_fallback():
    table = load_embeddings("movie 1 2 3\n")
    assert np.array_equal(embed_token(table, "Movie"), [1.0, 2.0, 3.0])


def test_oov_is_deterministic_mean_of_ngram_buckets():
    table = load_embeddings("#subword B=512 seed=3\nmovie 1 2 3\n")
    token = "Zorble"
    got = embed_token(table, token)
    assert np.array_equal(got, embed_token(table, token))

    # independent recomputation: enumerate padded n-grams by hand
    padded = "<" + token + ">"
    grams = [
        padded[i : i + n]
        for n in range(3, 7)
        for i in range(len(padded) - n + 1)
    ]
    assert grams == char_ngrams(token)
    total = np.zeros(3)
    for gram in grams:
        h = 2166136261
        for byte in gram.encode("utf-8"):
            h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
        bucket = h % 512
        total += np.random.default_rng([3, bucket]).uniform(-1 / 3, 1 / 3, 3)
    assert np.allclose(got, total / len(grams), rtol=0, atol=0)


def test_fnv1a_reference_value():
    # FNV-1a of empty input is the offset basis
    assert fnv1a(b"") == 2166136261


def test_embed_query_rows():
    table = load_embeddings("a 1 0\nb 0 1\n")
    X = embed_query(table, ["a"])
    assert X.shape == (1, 2) and np.array_equal(X, [[1.0, 0.0]])
    X2 = embed_query(table, ["a", "b", "a"])
    assert X2.shape == (3, 2)
    assert np.array_equal(X2[::-1], embed_query(table, ["a", "b", "a"][::-1]))


def test_embed_query_table1_shape(fixture_embeddings, table1_query):
    X = embed_query(fixture_embeddings, table1_query.words)
    assert X.shape == (10, fixture_embeddings.dimension)


def test_embed_query_table1_at_300_dims(table1_query):
    # tokens missing from the 300-dim subset fall through to subwords,
    # so the full query still embeds to a 10 x 300 matrix
    table = load_embeddings(fixture_text("emb300_subset.vec"))
    X = embed_query(table, table1_query.words)
    assert X.shape == (10, 300)
    assert np.all(np.isfinite(X))


def test_empty_token_rejected(fixture_embeddings):
    with pytest.raises(ValueError):
        embed_token(fixture_embeddings, "")


@settings(max_examples=60, deadline=None)
@given(token=st.text(alphabet=st.characters(min_codepoint=33, max_codepoint=0x2FF), min_size=1, max_size=12))
def test_oov_vectors_always_finite(token):
    table = EmbeddingTable(4, {}, bucket_count=64, subword_seed=5)
    vec = embed_token(table, token)
    assert vec.shape == (4,)
    assert np.all(np.isfinite(vec))


def test_save_load_roundtrip(fixture_embeddings):
    again = load_embeddings(save_embeddings(fixture_embeddings))
    assert again.dimension == fixture_embeddings.dimension
    assert again.bucket_count == fixture_embeddings.bucket_count
    assert again.subword_seed == fixture_embeddings.subword_seed
    assert set(again.vectors) == set(fixture_embeddings.vectors)
    for token, vec in fixture_embeddings.vectors.items():
        assert np.array_equal(again.vectors[token], vec)
