import numpy as np
import pytest

from heatcf.aggregator import AggregatorConfig, init_weights
from heatcf.dataset import from_user_lists
from heatcf.embeddings import EmbeddingMatrix, InitSpec, init_matrix
from heatcf.evaluator import EmptyTestSetError, MetricsReport, evaluate, metrics_json, topk_items
from heatcf.trainer import TrainingConfig
from helpers import brute_force_metrics, full_sort_topk


def matrix(rows):
    return EmbeddingMatrix(np.array(rows, dtype=np.float32))


class TestTopK:
    T3 = matrix([[1, 0], [0, 1], [-1, 0]])

    def test_hand_ranked(self):
        top = topk_items(np.array([1.0, 0.0]), self.T3, [], 2, "cosine")
        assert list(top) == [0, 1]

    def test_exclusion(self):
        top = topk_items(np.array([1.0, 0.0]), self.T3, [0], 2, "cosine")
        assert list(top) == [1, 2]

    def test_fewer_candidates_than_k(self):
        top = topk_items(np.array([1.0, 0.0]), self.T3, [0], 10, "cosine")
        assert list(top) == [1, 2]

    def test_ties_break_to_lower_id(self):
        T = matrix([[1, 0], [1, 0], [1, 0], [0.5, 0.5]])
        top = topk_items(np.array([1.0, 0.0]), T, [], 3, "cosine")
        assert list(top) == [0, 1, 2]

    def test_matches_full_sort_oracle(self, rng):
        for trial in range(10):
            T = EmbeddingMatrix(rng.standard_normal((200, 8)).astype(np.float32))
            u = rng.standard_normal(8)
            exclude = np.unique(rng.integers(0, 200, size=30))
            for sim in ("cosine", "dot"):
                got = topk_items(u, T, exclude, 10, sim)
                scores = (
                    (T.values.astype(np.float64) @ u) /
                    (np.linalg.norm(T.values.astype(np.float64), axis=1) * np.linalg.norm(u))
                    if sim == "cosine" else T.values.astype(np.float64) @ u
                )
                assert list(got) == full_sort_topk(scores, exclude, 10)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            topk_items(np.array([1.0, 0.0]), self.T3, [], 0)


def plain_cfg(similarity="cosine"):
    return TrainingConfig(emb_dim=2, num_negatives=1, learning_rate=0.1,
                          num_threads=1, similarity=similarity)


class TestEvaluate:
    def test_perfect_rank(self):
        S = matrix([[1, 0]])
        T = matrix([[1, 0.01], [0, 1], [-1, 0]])
        train = from_user_lists({}, num_users=1, num_items=3)
        test = from_user_lists({0: [0]}, num_users=1, num_items=3)
        m = evaluate(S, T, train, test, plain_cfg(), k=1)
        assert m.recall_at_k == 1.0
        assert m.ndcg_at_k == 1.0

    def test_half_coverage(self):
        S = matrix([[1, 0]])
        # item 0 close to the user, item 1 orthogonal and outside top-1
        T = matrix([[1, 0.01], [0, 1], [0.9, 0.1]])
        train = from_user_lists({}, num_users=1, num_items=3)
        test = from_user_lists({0: [0, 1]}, num_users=1, num_items=3)
        m = evaluate(S, T, train, test, plain_cfg(), k=2)
        assert m.recall_at_k == pytest.approx(0.5)

    def test_users_without_test_items_excluded(self):
        S = matrix([[1, 0], [0, 1]])
        T = matrix([[1, 0], [0, 1]])
        train = from_user_lists({}, num_users=2, num_items=2)
        test = from_user_lists({0: [0]}, num_users=2, num_items=2)
        m = evaluate(S, T, train, test, plain_cfg(), k=1)
        assert m.users_evaluated == 1

    def test_empty_test_set_error(self):
        S = matrix([[1, 0]])
        T = matrix([[1, 0]])
        train = from_user_lists({0: [0]}, num_users=1, num_items=1)
        test = from_user_lists({}, num_users=1, num_items=1)
        with pytest.raises(EmptyTestSetError):
            evaluate(S, T, train, test, plain_cfg(), k=1)

    def test_training_positives_never_ranked(self, rng):
        S = EmbeddingMatrix(rng.standard_normal((6, 4)).astype(np.float32))
        T = EmbeddingMatrix(rng.standard_normal((40, 4)).astype(np.float32))
        train = from_user_lists({u: rng.integers(0, 40, 10) for u in range(6)},
                                num_users=6, num_items=40)
        test = from_user_lists(
            {u: np.setdiff1d(rng.integers(0, 40, 5), train.slice(u))[:2] for u in range(6)},
            num_users=6, num_items=40,
        )
        for u in range(6):
            top = topk_items(S.values[u], T, train.slice(u), 20, "cosine")
            assert not set(int(i) for i in top) & set(int(i) for i in train.slice(u))

    def test_five_user_instance_matches_brute_force(self, rng):
        S = EmbeddingMatrix(rng.standard_normal((5, 6)).astype(np.float32))
        T = EmbeddingMatrix(rng.standard_normal((80, 6)).astype(np.float32))
        train = from_user_lists({u: rng.integers(0, 80, 15) for u in range(5)},
                                num_users=5, num_items=80)
        test = from_user_lists(
            {u: np.setdiff1d(np.unique(rng.integers(0, 80, 8)), train.slice(u)) for u in range(5)},
            num_users=5, num_items=80,
        )
        for sim in ("cosine", "dot"):
            m = evaluate(S, T, train, test, plain_cfg(sim), k=10)
            recall, ndcg, users = brute_force_metrics(S, T, train, test, 10, sim)
            assert m.recall_at_k == pytest.approx(recall, abs=1e-12)
            assert m.ndcg_at_k == pytest.approx(ndcg, abs=1e-12)
            assert m.users_evaluated == users

    def test_metrics_in_unit_interval(self, rng):
        for _ in range(5):
            nu, ni = int(rng.integers(2, 10)), int(rng.integers(20, 60))
            S = EmbeddingMatrix(rng.standard_normal((nu, 4)).astype(np.float32))
            T = EmbeddingMatrix(rng.standard_normal((ni, 4)).astype(np.float32))
            train = from_user_lists({u: rng.integers(0, ni, 5) for u in range(nu)},
                                    num_users=nu, num_items=ni)
            test = from_user_lists({0: [int(rng.integers(0, ni))]},
                                   num_users=nu, num_items=ni)
            m = evaluate(S, T, train, test, plain_cfg(), k=7)
            assert 0.0 <= m.recall_at_k <= 1.0
            assert 0.0 <= m.ndcg_at_k <= 1.0

    def test_better_rank_never_lowers_ndcg(self):
        # user aligned with x-axis; move the single test item closer in angle
        train = from_user_lists({}, num_users=1, num_items=6)
        test = from_user_lists({0: [5]}, num_users=1, num_items=6)
        S = matrix([[1, 0]])
        ndcgs = []
        for angle in (0.9, 0.6, 0.3, 0.1):  # radians away from the user
            rows = [[np.cos(a), np.sin(a)] for a in (0.2, 0.35, 0.5, 0.65, 0.8)]
            rows.append([np.cos(angle), np.sin(angle)])
            T = matrix(rows)
            ndcgs.append(evaluate(S, T, train, test, plain_cfg(), k=4).ndcg_at_k)
        assert all(b >= a for a, b in zip(ndcgs, ndcgs[1:]))

    def test_aggregated_query_vector_used(self, rng):
        # with gamma=0 and identity weights the query is the history mean
        nu, ni, k = 3, 30, 4
        S = EmbeddingMatrix(rng.standard_normal((nu, k)).astype(np.float32))
        T = EmbeddingMatrix(rng.standard_normal((ni, k)).astype(np.float32))
        train = from_user_lists({u: np.arange(u, u + 5) for u in range(nu)},
                                num_users=nu, num_items=ni)
        test = from_user_lists({u: [int(ni - 1 - u)] for u in range(nu)},
                               num_users=nu, num_items=ni)
        cfg = TrainingConfig(
            emb_dim=k, num_negatives=1, learning_rate=0.1, num_threads=1,
            aggregator=AggregatorConfig(enabled=True, gamma=0.0, max_history=100),
        )
        w = np.eye(k, dtype=np.float32)
        m = evaluate(S, T, train, test, cfg, weights=w, k=5)
        pooled = np.stack([
            T.values[train.slice(u)].astype(np.float64).mean(axis=0) for u in range(nu)
        ])
        recall, ndcg, users = brute_force_metrics(S, T, train, test, 5, "cosine",
                                                  user_vectors=pooled)
        assert m.recall_at_k == pytest.approx(recall, abs=1e-12)
        assert m.ndcg_at_k == pytest.approx(ndcg, abs=1e-12)

    def test_metrics_json_schema(self):
        import json

        line = metrics_json(3, MetricsReport(0.5, 0.25, 20, 11))
        obj = json.loads(line)
        assert obj == {"epoch": 3, "recall@20": 0.5, "ndcg@20": 0.25, "users": 11}
