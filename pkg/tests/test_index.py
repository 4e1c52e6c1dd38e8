"""Two-layer index: k-means, build, query pipeline, merge, persistence."""
import os
from dataclasses import replace
from unittest import mock

import numpy as np
import pytest

from lider.index import (
    FORMAT_VERSION,
    IndexFormatError,
    LiderParams,
    build_index,
    key_bits_for,
    kmeans,
    load_index,
    merge_topk,
    query,
    replace_params,
    save_index,
    with_probes,
)
from lider.vectorstore import (
    ScoredHit,
    VectorCollection,
    exact_topk,
    generate_synthetic,
    normalize,
)


@pytest.fixture(scope="module")
def built():
    col = generate_synthetic(2000, 32, 10, 0.05, seed=3)
    params = LiderParams(n_clusters=8, n_probes=4, n_arrays=4, kmeans_iters=10, seed=2)
    return col, params, build_index(col, params)


class TestKmeans:
    def test_identical_points_single_cluster(self):
        col = generate_synthetic(50, 16, 1, 0.0, seed=5)
        clustering = kmeans(col, 1, iters=5, seed=0)
        np.testing.assert_allclose(clustering.centroids[0], col.matrix[0], atol=1e-6)
        assert clustering.sizes.tolist() == [50]

    def test_c_equals_n_is_bijective(self, rng):
        m = rng.standard_normal((30, 8)).astype(np.float32)
        col = normalize(VectorCollection(dim=8, matrix=m))
        clustering = kmeans(col, 30, iters=5, seed=1)
        assert sorted(clustering.assignment.tolist()) == list(range(30))

    def test_recovers_separated_blobs(self, rng):
        centers = np.eye(3, 24, dtype=np.float64)
        labels = rng.integers(0, 3, size=900)
        pts = centers[labels] + 0.05 * rng.standard_normal((900, 24))
        col = normalize(VectorCollection(dim=24, matrix=pts.astype(np.float32)))
        clustering = kmeans(col, 3, iters=20, seed=4)
        # map each found cluster to its majority generating label
        agree = 0
        for j in range(3):
            members = clustering.members(j)
            majority = np.bincount(labels[members]).argmax()
            agree += int((labels[members] == majority).sum())
        assert agree >= 0.99 * 900

    def test_no_empty_clusters(self, built):
        _, _, idx = built
        assert (idx.clustering.sizes > 0).all()

    def test_c_above_n_rejected(self):
        col = generate_synthetic(5, 8, 1, 0.1, seed=0)
        with pytest.raises(ValueError):
            kmeans(col, 6, iters=3, seed=0)

    def test_deterministic(self):
        col = generate_synthetic(500, 16, 5, 0.1, seed=8)
        a = kmeans(col, 5, iters=10, seed=3)
        b = kmeans(col, 5, iters=10, seed=3)
        assert a.centroids.tobytes() == b.centroids.tobytes()
        assert np.array_equal(a.assignment, b.assignment)


class TestBuildIndex:
    def test_single_cluster_collapse(self):
        col = generate_synthetic(300, 16, 3, 0.1, seed=6)
        params = LiderParams(n_clusters=1, n_probes=1, n_arrays=2, kmeans_iters=5, seed=1)
        idx = build_index(col, params)
        assert len(idx.in_cluster) == 1
        assert len(idx.in_cluster[0]) == 300
        hits = query(idx, col.matrix[3], 5).hits
        assert hits[0].id == 3

    def test_sizes_sum_and_key_bits(self, built):
        col, params, idx = built
        assert int(idx.clustering.sizes.sum()) == len(col)
        for j, model in enumerate(idx.in_cluster):
            assert model.params.key_bits == key_bits_for(int(idx.clustering.sizes[j]))

    def test_unnormalized_rejected(self, rng):
        col = VectorCollection(dim=8, matrix=rng.standard_normal((50, 8)).astype(np.float32))
        with pytest.raises(ValueError, match="normalized"):
            build_index(col, LiderParams(n_clusters=2, n_probes=1, kmeans_iters=2))

    def test_build_deterministic_bytes(self, tmp_path):
        col = generate_synthetic(1000, 16, 5, 0.1, seed=8)
        params = LiderParams(n_clusters=4, n_probes=2, n_arrays=2, kmeans_iters=5, seed=9)
        pa, pb = tmp_path / "a.idx", tmp_path / "b.idx"
        save_index(build_index(col, params), pa)
        save_index(build_index(col, params), pb)
        assert pa.read_bytes() == pb.read_bytes()


class TestQuery:
    def test_exhaustive_self_match(self, built):
        col, params, idx = built
        maxsz = int(idx.clustering.sizes.max())
        exhaustive = replace_params(
            idx, replace(params, n_probes=params.n_clusters, expansion_factor=maxsz)
        )
        hits = query(exhaustive, col.matrix[11], 3).hits
        assert hits[0].id == 11 and hits[0].score == pytest.approx(1.0)

    def test_exhaustive_equals_flat(self, built):
        col, params, idx = built
        maxsz = int(idx.clustering.sizes.max())
        exhaustive = replace_params(
            idx, replace(params, n_probes=params.n_clusters, expansion_factor=maxsz)
        )
        q = col.matrix[77]
        hits = query(exhaustive, q, 50).hits
        oracle = exact_topk(col, q, 50)
        assert hits == oracle

    def test_more_probes_improve_recall(self, built):
        col, params, idx = built
        queries = generate_synthetic(25, 32, 10, 0.05, seed=33).matrix
        recalls = []
        for c0 in (1, 4):
            got = [
                set(h.id for h in query(with_probes(idx, c0), q, 50).hits) for q in queries
            ]
            oracle = [set(h.id for h in exact_topk(col, q, 50)) for q in queries]
            recalls.append(np.mean([len(g & o) / 50 for g, o in zip(got, oracle)]))
        assert recalls[1] > recalls[0]

    def test_hits_belong_to_selected_clusters(self, built):
        col, _, idx = built
        from lider.core_model import search_core

        q = col.matrix[500]
        selected = {h.id for h in search_core(idx.centroids_retriever, q, idx.params.n_probes)}
        for hit in query(idx, q, 20).hits:
            assert int(idx.clustering.assignment[hit.id]) in selected

    def test_hit_count_capped_by_selected_members(self, built):
        col, _, idx = built
        one = with_probes(idx, 1)
        q = col.matrix[0]
        from lider.core_model import search_core

        cluster = search_core(idx.centroids_retriever, q, 1)[0].id
        size = int(idx.clustering.sizes[cluster])
        result = query(one, q, size + 500)
        assert len(result.hits) == size

    def test_k_exceeding_n_returns_n(self, built):
        col, params, idx = built
        exhaustive = replace_params(
            idx,
            replace(
                params,
                n_probes=params.n_clusters,
                expansion_factor=int(idx.clustering.sizes.max()),
            ),
        )
        assert len(query(exhaustive, col.matrix[1], 5000).hits) == len(col)

    def test_parallel_equals_sequential(self, built):
        col, _, idx = built
        q = col.matrix[250]
        with mock.patch.dict(os.environ, {"LIDER_WORKERS": "4"}):
            parallel = query(idx, q, 20).hits
        with mock.patch.dict(os.environ, {"LIDER_WORKERS": "1"}):
            sequential = query(idx, q, 20).hits
        assert parallel == sequential

    def test_dimension_mismatch(self, built):
        _, _, idx = built
        with pytest.raises(ValueError, match="mismatch"):
            query(idx, np.ones(7), 3)


class TestMergeTopk:
    def test_single_list_passthrough(self):
        hits = [ScoredHit(i, 1.0 - i / 10) for i in range(5)]
        assert merge_topk([hits], 3) == hits[:3]

    def test_k_one_takes_max_head(self):
        lists = [
            [ScoredHit(1, 0.5)],
            [ScoredHit(2, 0.9)],
            [ScoredHit(3, 0.7)],
        ]
        assert merge_topk(lists, 1) == [ScoredHit(2, 0.9)]

    def test_matches_concatenate_sort_oracle(self, rng):
        for _ in range(50):
            lists = []
            for _ in range(int(rng.integers(1, 21))):
                n = int(rng.integers(0, 30))
                scores = np.sort(rng.random(n).astype(np.float32))[::-1]
                ids = rng.integers(0, 10_000, size=n)
                lists.append([ScoredHit(int(i), float(s)) for i, s in zip(ids, scores)])
            merged = merge_topk(lists, 100)
            flat = sorted((h for hits in lists for h in hits), key=lambda h: (-h.score, h.id))
            assert merged == flat[:100]

    def test_tie_order(self):
        lists = [[ScoredHit(7, 0.5)], [ScoredHit(3, 0.5)]]
        assert [h.id for h in merge_topk(lists, 2)] == [3, 7]


class TestPersistence:
    def test_round_trip_identical_queries(self, built, tmp_path):
        col, _, idx = built
        path = tmp_path / "idx.bin"
        save_index(idx, path)
        loaded = load_index(path, col)
        queries = generate_synthetic(100, 32, 10, 0.05, seed=5).matrix
        for q in queries:
            assert query(idx, q, 10).hits == query(loaded, q, 10).hits

    def test_corrupted_byte_fails_checksum(self, built, tmp_path):
        col, _, idx = built
        path = tmp_path / "idx.bin"
        save_index(idx, path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x40
        path.write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError, match="checksum"):
            load_index(path, col)

    def test_higher_version_rejected(self, built, tmp_path):
        col, _, idx = built
        path = tmp_path / "idx.bin"
        save_index(idx, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError, match="version"):
            load_index(path, col)

    def test_bad_magic_rejected(self, built, tmp_path):
        col, _, idx = built
        path = tmp_path / "idx.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(IndexFormatError, match="magic"):
            load_index(path, col)

    def test_digest_mismatch_rejected(self, built, tmp_path):
        col, _, idx = built
        path = tmp_path / "idx.bin"
        save_index(idx, path)
        other = generate_synthetic(2000, 32, 10, 0.05, seed=99)
        with pytest.raises(IndexFormatError, match="digest"):
            load_index(path, other)

    def test_truncated_file_names_section(self, built, tmp_path):
        col, _, idx = built
        path = tmp_path / "idx.bin"
        save_index(idx, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 30])
        with pytest.raises(IndexFormatError, match="truncated"):
            load_index(path, col)
