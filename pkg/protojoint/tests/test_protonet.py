import math

import numpy as np
import pytest

from protojoint import protonet
from protojoint.diffcore import DiffGraph, check_gradients
from protojoint.exceptions import EpisodeError
from protojoint.protonet import EpisodeLayout

CLASS_SET = ("A", "B")
SLOT_LABEL_SET = ("O", "B-x")


@pytest.fixture
def layout() -> EpisodeLayout:
    """Three support utterances then two queries; the last query token has an unseen label."""
    return EpisodeLayout(
        spans=[(0, 2), (2, 3), (3, 4), (4, 6), (6, 8)],
        intents=["A", "B", "A", "A", "B"],
        slots=[("O", "B-x"), ("O",), ("B-x",), ("O", "B-x"), ("O", "B-y")],
        n_support=3,
    )


@pytest.fixture(params=range(10))
def embeddings(request):
    rng = np.random.default_rng(request.param)
    return 0.5 * rng.standard_normal((5, 3)), 0.5 * rng.standard_normal((8, 3))


def log_softmax_neg_dist(x, prototypes):
    logits = -((x[:, None, :] - prototypes[None, :, :]) ** 2).sum(-1)
    top = logits.max(axis=1, keepdims=True)
    return logits - top - np.log(np.exp(logits - top).sum(axis=1, keepdims=True))


class TestPosterior:
    def test_hand_value(self):
        posterior = protonet.intent_posterior([0.0, 0.0], {"near": [1.0, 0.0], "far": [0.0, 2.0]})

        expected = math.exp(-1) / (math.exp(-1) + math.exp(-4))
        assert posterior["near"] == pytest.approx(expected, abs=1e-6)
        assert posterior["near"] == pytest.approx(0.95257, abs=1e-5)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        prototypes = {f"c{i}": rng.standard_normal(4) for i in range(6)}

        posterior = protonet.slot_posterior(rng.standard_normal(4), prototypes)

        assert sum(posterior.values()) == pytest.approx(1.0, abs=1e-9)

    def test_equidistant_prototypes(self):
        posterior = protonet.intent_posterior([0.0, 0.0], {"a": [1.0, 0.0], "b": [0.0, -1.0]})
        assert posterior == pytest.approx({"a": 0.5, "b": 0.5})

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        point = rng.standard_normal(3)
        prototypes = {f"c{i}": rng.standard_normal(3) for i in range(4)}
        shift = rng.standard_normal(3) * 10

        moved = protonet.intent_posterior(point + shift, {c: p + shift for c, p in prototypes.items()})
        original = protonet.intent_posterior(point, prototypes)

        for c in prototypes:
            assert moved[c] == pytest.approx(original[c], abs=1e-9)

    def test_no_prototypes(self):
        with pytest.raises(EpisodeError):
            protonet.intent_posterior([0.0], {})


class TestPrototypes:
    def test_singleton_class(self):
        protos = protonet.mean_prototypes(np.array([[1.0, 2.0]]), ["a"])
        np.testing.assert_allclose(protos["a"], [1.0, 2.0])

    def test_mean_of_two(self):
        protos = protonet.mean_prototypes(np.array([[1.0, 0.0], [0.0, 1.0]]), ["a", "a"])
        np.testing.assert_allclose(protos["a"], [0.5, 0.5])

    def test_duplicated_support(self):
        vectors = np.array([[1.0, 3.0], [2.0, -1.0], [0.0, 0.5]])
        labels = ["a", "a", "b"]

        once = protonet.mean_prototypes(vectors, labels)
        twice = protonet.mean_prototypes(np.concatenate([vectors, vectors]), labels * 2)

        for label in once:
            np.testing.assert_allclose(twice[label], once[label])

    def test_labels_in_first_seen_order(self):
        protos = protonet.mean_prototypes(np.eye(3), ["b", "a", "b"])
        assert list(protos) == ["b", "a"]

    def test_class_without_support(self):
        graph = DiffGraph()
        with pytest.raises(EpisodeError):
            protonet.intent_prototypes(graph, graph.constant(np.eye(2)), [[0], []])

    def test_window_prototypes_outside_first(self):
        rows = [np.array([[1.0], [3.0]]), np.array([[5.0]])]
        protos = protonet.window_prototypes(rows, [("B-x", "O"), ("O",)], window=0)

        assert list(protos) == ["O", "B-x"]
        np.testing.assert_allclose(protos["O"], [4.0])
        np.testing.assert_allclose(protos["B-x"], [1.0])


class TestWindow:
    def test_zero_window_is_identity(self):
        np.testing.assert_array_equal(protonet.window_matrix([(0, 3)], 0), np.eye(3))

    def test_middle_token_sees_every_row(self):
        matrix = protonet.window_matrix([(0, 3)], 1)
        np.testing.assert_allclose(matrix[1], [1 / 3, 1 / 3, 1 / 3])

    def test_edge_token_is_clipped(self):
        matrix = protonet.window_matrix([(0, 3)], 1)
        np.testing.assert_allclose(matrix[0], [0.5, 0.5, 0.0])
        np.testing.assert_allclose(matrix[2], [0.0, 0.5, 0.5])

    def test_fixed_norm(self):
        matrix = protonet.window_matrix([(0, 3)], 1, norm="fixed")
        np.testing.assert_allclose(matrix[0], [1 / 3, 1 / 3, 0.0])

    def test_does_not_cross_utterances(self):
        matrix = protonet.window_matrix([(0, 2), (2, 4)], 2)

        assert matrix[:2, 2:].sum() == 0.0
        assert matrix[2:, :2].sum() == 0.0

    def test_negative_window(self):
        with pytest.raises(ValueError, match="window"):
            protonet.window_matrix([(0, 1)], -1)


class TestLosses:
    def test_uniform_posterior_gives_log_n(self, layout):
        graph = DiffGraph()
        sentence = graph.constant(np.ones((5, 3)))
        h_slot = graph.constant(np.ones((8, 3)))

        posteriors = protonet.episode_posteriors(graph, sentence, h_slot, layout, CLASS_SET, SLOT_LABEL_SET)
        result = protonet.pn_losses(graph, posteriors, layout, CLASS_SET)

        assert graph.scalar(result.ic_loss) == pytest.approx(math.log(2))

    def test_matches_direct_computation(self, layout, embeddings):
        sentence, h_slot = embeddings
        graph = DiffGraph()

        posteriors = protonet.episode_posteriors(
            graph, graph.constant(sentence), graph.constant(h_slot), layout, CLASS_SET, SLOT_LABEL_SET, window=0
        )
        result = protonet.pn_losses(graph, posteriors, layout, CLASS_SET)

        intent_protos = np.stack([(sentence[0] + sentence[2]) / 2, sentence[1]])
        intent_logp = log_softmax_neg_dist(sentence[3:], intent_protos)
        expected_ic = -(intent_logp[0, 0] + intent_logp[1, 1]) / 2

        slot_protos = np.stack([(h_slot[0] + h_slot[2]) / 2, (h_slot[1] + h_slot[3]) / 2])
        slot_logp = log_softmax_neg_dist(h_slot[4:7], slot_protos)
        expected_sf = -(slot_logp[0, 0] + slot_logp[1, 1] + slot_logp[2, 0]) / 2

        assert graph.scalar(result.ic_loss) == pytest.approx(expected_ic, abs=1e-10)
        assert graph.scalar(result.sf_loss) == pytest.approx(expected_sf, abs=1e-10)
        assert result.unscorable_tokens == 1
        assert posteriors.slot_labels == SLOT_LABEL_SET

    def test_label_without_support_tokens_gets_no_prototype(self, layout, embeddings):
        sentence, h_slot = embeddings
        graph = DiffGraph()

        posteriors = protonet.episode_posteriors(
            graph, graph.constant(sentence), graph.constant(h_slot), layout, CLASS_SET, ("O", "B-x", "B-z")
        )

        assert posteriors.slot_labels == ("O", "B-x")
        assert graph.value(posteriors.slot_log_probs).shape == (4, 2)

    @pytest.mark.parametrize("window", [0, 1])
    def test_gradients(self, layout, embeddings, window):
        sentence, h_slot = embeddings
        graph = DiffGraph()
        s = graph.parameter("sentence", sentence)
        h = graph.parameter("h_slot", h_slot)

        posteriors = protonet.episode_posteriors(graph, s, h, layout, CLASS_SET, SLOT_LABEL_SET, window=window)
        result = protonet.pn_losses(graph, posteriors, layout, CLASS_SET)

        assert check_gradients(graph, graph.add(result.ic_loss, result.sf_loss)) < 1e-4


def random_episode(rng):
    """Random layout with supports first; query slot labels may be missing from the support."""
    class_set = ("A", "B", "C", "D")[: rng.integers(2, 5)]
    support = [c for c in class_set for _ in range(rng.integers(1, 4))]
    query = [c for c in class_set for _ in range(rng.integers(1, 3))]

    spans, slots, start = [], [], 0
    for _ in support + query:
        length = int(rng.integers(1, 5))
        spans.append((start, start + length))
        slots.append(tuple(str(label) for label in rng.choice(["O", "B-x", "I-x", "B-y"], length)))
        start += length

    layout = EpisodeLayout(spans, support + query, slots, len(support))
    seen = sorted({label for u in layout.support for label in slots[u] if label != "O"})
    return layout, class_set, ("O", *seen)


def nested_loop_losses(layout, class_set, slot_label_set, sentence, h_slot, window):
    def log_posterior(x, prototypes):
        logits = [-sum((a - b) ** 2 for a, b in zip(x, p)) for p in prototypes]
        top = max(logits)
        log_z = top + math.log(sum(math.exp(v - top) for v in logits))
        return [v - log_z for v in logits]

    def mean(rows):
        return [sum(column) / len(rows) for column in zip(*rows)]

    windowed = {}
    for start, end in layout.spans:
        for t in range(start, end):
            windowed[t] = mean([h_slot[r] for r in range(max(start, t - window), min(end, t + window + 1))])

    queries = list(layout.query)
    intent_protos = [mean([sentence[u] for u in layout.support if layout.intents[u] == c]) for c in class_set]
    ic = 0.0
    for u in queries:
        ic -= log_posterior(sentence[u], intent_protos)[class_set.index(layout.intents[u])]

    slot_rows = {label: [] for label in slot_label_set}
    for row, label in layout.tokens_of(layout.support):
        if label in slot_rows:
            slot_rows[label].append(windowed[row])
    labels = [label for label in slot_label_set if slot_rows[label]]
    slot_protos = [mean(slot_rows[label]) for label in labels]

    sf, unscorable = 0.0, 0
    for row, label in layout.tokens_of(queries):
        if label not in labels:
            unscorable += 1
            continue
        sf -= log_posterior(windowed[row], slot_protos)[labels.index(label)]

    return ic / len(queries), sf / len(queries), unscorable


class TestRandomEpisodes:
    @pytest.mark.parametrize("seed", range(100))
    def test_losses_match_nested_loops(self, seed):
        rng = np.random.default_rng(seed)
        layout, class_set, slot_label_set = random_episode(rng)
        sentence = rng.standard_normal((len(layout.spans), 3))
        h_slot = rng.standard_normal((layout.token_count, 3))
        window = int(rng.integers(0, 3))
        graph = DiffGraph()

        posteriors = protonet.episode_posteriors(
            graph, graph.constant(sentence), graph.constant(h_slot), layout, class_set, slot_label_set, window=window
        )
        result = protonet.pn_losses(graph, posteriors, layout, class_set)
        ic, sf, unscorable = nested_loop_losses(layout, class_set, slot_label_set, sentence, h_slot, window)

        assert graph.scalar(result.ic_loss) == pytest.approx(ic, abs=1e-9)
        assert graph.scalar(result.sf_loss) == pytest.approx(sf, abs=1e-9)
        assert result.unscorable_tokens == unscorable
