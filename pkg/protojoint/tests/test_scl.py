import math

import numpy as np
import pytest

from protojoint import scl
from protojoint.diffcore import DiffGraph, check_gradients
from protojoint.exceptions import ConfigError, ShapeError
from protojoint.scl import ContrastiveBatch


def nested_loop_loss(queries, query_labels, support, support_labels, tau):
    total = 0.0
    for q, y in zip(queries, query_labels):
        logits = [float(np.dot(q, s)) / tau for s in support]
        log_z = math.log(sum(math.exp(v) for v in logits))
        positives = [j for j, other in enumerate(support_labels) if other == y]
        if positives:
            total += -sum(logits[j] - log_z for j in positives) / len(positives)
    return total / len(query_labels)


@pytest.fixture(params=range(100))
def random_batch(request):
    rng = np.random.default_rng(request.param)
    n_query, n_support, dim = rng.integers(1, 7), rng.integers(1, 9), rng.integers(1, 6)
    return ContrastiveBatch(
        query_vecs=rng.standard_normal((n_query, dim)),
        query_labels=[str(label) for label in rng.choice(list("abc"), n_query)],
        support_vecs=rng.standard_normal((n_support, dim)),
        support_labels=[str(label) for label in rng.choice(list("abcd"), n_support)],
        tau=float(rng.uniform(0.1, 1.0)),
    )


class TestIntentLoss:
    def test_one_positive_one_negative(self):
        batch = ContrastiveBatch([[1.0, 0.0]], ["a"], [[1.0, 0.0], [1.0, 0.0]], ["a", "b"])
        loss, skipped = scl.ic_scl_loss(batch)

        assert loss == pytest.approx(math.log(2))
        assert skipped == 0

    @pytest.mark.parametrize("size", [1, 3, 8])
    def test_all_positive_uniform(self, size):
        batch = ContrastiveBatch([[0.5, 0.5]], ["a"], [[1.0, 1.0]] * size, ["a"] * size)
        loss, _ = scl.ic_scl_loss(batch)

        assert loss == pytest.approx(math.log(size), abs=1e-12)

    def test_closer_positive_lowers_loss(self):
        def loss_at(similarity):
            batch = ContrastiveBatch([[1.0, 0.0]], ["a"], [[similarity, 0.0], [0.0, 1.0]], ["a", "b"], tau=0.5)
            return scl.ic_scl_loss(batch)[0]

        losses = [loss_at(s) for s in (-1.0, 0.0, 0.5, 1.0, 2.0)]
        assert losses == sorted(losses, reverse=True)

    def test_query_without_positive_still_counts(self):
        support = [[1.0, 0.0], [0.0, 1.0]]
        single = ContrastiveBatch([[1.0, 0.0]], ["a"], support, ["a", "b"])
        padded = ContrastiveBatch([[1.0, 0.0], [3.0, 3.0]], ["a", "z"], support, ["a", "b"])

        loss, skipped = scl.ic_scl_loss(padded)

        assert loss == pytest.approx(scl.ic_scl_loss(single)[0] / 2)
        assert skipped == 1

    def test_matches_nested_loops(self, random_batch):
        loss, _ = scl.ic_scl_loss(random_batch)
        expected = nested_loop_loss(
            random_batch.query_vecs,
            random_batch.query_labels,
            random_batch.support_vecs,
            random_batch.support_labels,
            random_batch.tau,
        )
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_duplicate_support_items_count_twice(self):
        query = [[0.3, -0.2]]
        support = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        batch = ContrastiveBatch(query, ["a"], support, ["a", "a", "b"], tau=0.4)

        expected = nested_loop_loss(np.array(query), ["a"], np.array(support), ["a", "a", "b"], 0.4)
        assert scl.ic_scl_loss(batch)[0] == pytest.approx(expected, abs=1e-12)

    def test_support_order_does_not_matter(self, random_batch):
        order = np.random.default_rng(0).permutation(len(random_batch.support_labels))
        shuffled = ContrastiveBatch(
            random_batch.query_vecs,
            random_batch.query_labels,
            random_batch.support_vecs[order],
            [random_batch.support_labels[j] for j in order],
            random_batch.tau,
        )
        assert scl.ic_scl_loss(shuffled)[0] == pytest.approx(scl.ic_scl_loss(random_batch)[0], abs=1e-12)

    def test_temperature_scaling(self, random_batch):
        scaled = ContrastiveBatch(
            random_batch.query_vecs * 3.0,
            random_batch.query_labels,
            random_batch.support_vecs,
            random_batch.support_labels,
            random_batch.tau * 3.0,
        )
        assert scl.ic_scl_loss(scaled)[0] == pytest.approx(scl.ic_scl_loss(random_batch)[0], abs=1e-9)

    def test_normalized_vectors(self):
        batch = ContrastiveBatch([[5.0, 0.0]], ["a"], [[2.0, 0.0], [0.0, 7.0]], ["a", "b"], tau=1.0)
        loss, _ = scl.ic_scl_loss(batch, normalize=True)

        assert loss == pytest.approx(-math.log(math.e / (math.e + 1.0)))


class TestSlotLoss:
    def test_outside_tokens_are_skipped(self):
        batch = ContrastiveBatch([[1.0], [2.0]], ["O", "O"], [[1.0]], ["O"])
        assert scl.sf_scl_loss(batch) == (0.0, 2)

    def test_one_positive_one_negative(self):
        batch = ContrastiveBatch(
            [[1.0, 0.0], [4.0, 4.0]],
            ["B-city", "O"],
            [[1.0, 0.0], [1.0, 0.0], [9.0, 9.0]],
            ["B-city", "B-date", "O"],
        )
        loss, skipped = scl.sf_scl_loss(batch)

        assert loss == pytest.approx(math.log(2))
        assert skipped == 1

    def test_graph_form_reports_outside_tokens(self):
        graph = DiffGraph()
        tokens = graph.constant(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))

        result = scl.sf_scl(graph, tokens, [(0, "B-x"), (1, "O")], [(2, "B-x"), (3, "O")], tau=1.0)

        assert graph.scalar(result.loss) == pytest.approx(0.0)
        assert result.skipped == 1
        assert result.queries == 1


class TestDecomposition:
    def test_reconstructs_direct_loss(self, random_batch):
        assert scl.scl_decomposition_check(random_batch).error < 1e-9

    def test_without_negatives(self):
        rng = np.random.default_rng(8)
        batch = ContrastiveBatch(rng.standard_normal((3, 2)), ["a"] * 3, rng.standard_normal((4, 2)), ["a"] * 4)
        check = scl.scl_decomposition_check(batch)

        assert check.error < 1e-9
        assert check.direct >= 0.0


class TestGradients:
    @pytest.mark.parametrize("normalize", [False, True])
    def test_contrastive_loss(self, normalize):
        rng = np.random.default_rng(12)
        graph = DiffGraph()
        queries = graph.parameter("queries", 0.3 * rng.standard_normal((3, 4)))
        support = graph.parameter("support", 0.3 * rng.standard_normal((5, 4)))

        result = scl.contrastive_loss(
            graph, queries, support, ["a", "b", "a"], ["a", "b", "b", "a", "c"], tau=0.5, normalize=normalize
        )

        assert check_gradients(graph, result.loss) < 1e-4


class TestValidation:
    @pytest.mark.parametrize("tau", [0.0, -0.1])
    def test_non_positive_tau(self, tau):
        with pytest.raises(ConfigError, match="tau"):
            ContrastiveBatch([[1.0]], ["a"], [[1.0]], ["a"], tau=tau)

    def test_label_count_mismatch(self):
        with pytest.raises(ShapeError):
            ContrastiveBatch([[1.0], [2.0]], ["a"], [[1.0]], ["a"])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ContrastiveBatch([[1.0, 2.0]], ["a"], [[1.0]], ["a"])
