import json

import pytest

from protojoint import corpus
from protojoint.exceptions import CorpusError, SplitError
from protojoint.sources import ListCorpusSource
from protojoint.tests.conftest import make_utterance


def _write(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return str(path)


class TestLoadCorpus:
    def test_minimal_record(self, tmp_path):
        path = _write(
            tmp_path / "c.jsonl",
            [{"tokens": ["book", "a", "flight"], "intent": "BookFlight", "slots": ["O", "O", "O"]}],
        )

        result = corpus.load_corpus(path)

        assert len(result) == 1
        assert result.intent_inventory == ("BookFlight",)
        assert result.slot_inventory == ("O",)

    def test_length_mismatch(self, tmp_path):
        path = _write(tmp_path / "c.jsonl", [{"tokens": ["a", "b", "c"], "intent": "X", "slots": ["O", "O"]}])

        with pytest.raises(CorpusError, match="length mismatch at line 1"):
            corpus.load_corpus(path)

    def test_inside_without_begin(self, tmp_path):
        path = _write(tmp_path / "c.jsonl", [{"tokens": ["a", "b"], "intent": "X", "slots": ["I-city", "O"]}])

        with pytest.raises(CorpusError, match="I- without preceding B- at position 0"):
            corpus.load_corpus(path)

    def test_inside_of_another_type(self):
        with pytest.raises(CorpusError, match="at position 1"):
            corpus.validate_slots(["B-city", "I-country"])

    def test_missing_key(self, tmp_path):
        path = _write(tmp_path / "c.jsonl", [{"tokens": ["a"], "intent": "X"}])

        with pytest.raises(CorpusError, match="missing slots"):
            corpus.load_corpus(path)

    def test_duplicate_ids(self, simple_records):
        records = [{**r, "id": 1} for r in simple_records]

        with pytest.raises(CorpusError, match="duplicate utterance ids"):
            corpus.read_corpus(ListCorpusSource(records))

    def test_ids_default_to_line_order(self, simple_records):
        result = corpus.read_corpus(ListCorpusSource(simple_records))
        assert [u.uid for u in result.utterances] == [0, 1, 2]

    def test_inventories_are_sorted(self, simple_records):
        result = corpus.read_corpus(ListCorpusSource(simple_records))

        assert result.intent_inventory == ("BookFlight", "PlayMusic")
        assert result.slot_inventory == ("B-city", "B-genre", "I-city", "O")

    def test_write_then_load(self, tmp_path, simple_records):
        original = corpus.read_corpus(ListCorpusSource(simple_records))
        path = str(tmp_path / "out.jsonl")

        assert corpus.write_corpus(original, path) == 3
        assert corpus.load_corpus(path) == original

    def test_description_sidecar(self, tmp_path, simple_records):
        path = _write(tmp_path / "c.jsonl", simple_records)
        sidecar = tmp_path / "descriptions.json"
        sidecar.write_text(json.dumps({"genre": "music style", "BookFlight": "reserve a plane seat"}))

        result = corpus.load_corpus(path, str(sidecar))

        assert result.describe("B-genre") == ("begin", "music", "style")
        assert result.describe("BookFlight") == ("reserve", "a", "plane", "seat")

    def test_bad_sidecar(self, tmp_path, simple_records):
        path = _write(tmp_path / "c.jsonl", simple_records)
        sidecar = tmp_path / "descriptions.json"
        sidecar.write_text(json.dumps({"genre": 3}))

        with pytest.raises(CorpusError, match="must map labels to strings"):
            corpus.load_corpus(path, str(sidecar))


class TestDescriptions:
    @pytest.mark.parametrize(
        ("name", "expected"),
        [
            ("BookFlight", ("book", "flight")),
            ("fromloc.city_name", ("fromloc", "city", "name")),
            ("GetWeather", ("get", "weather")),
            ("ATISFlight", ("atis", "flight")),
        ],
    )
    def test_label_names(self, name, expected):
        assert corpus.split_label_name(name) == expected

    def test_every_inventory_label_is_described(self, simple_records):
        result = corpus.read_corpus(ListCorpusSource(simple_records))

        assert result.describe("O") == ("outside",)
        assert result.describe("I-city") == ("inside", "city")
        assert all(result.descriptions[label] for label in (*result.intent_inventory, *result.slot_inventory))


class TestPrefixSlotLabels:
    def test_prefixes_with_intent(self):
        source = corpus.Corpus.build([corpus.Utterance(("paris",), "BookFlight", ("B-city",))])

        result = corpus.prefix_slot_labels(source)

        assert result.utterances[0].slots == ("B-BookFlight.city",)
        assert result.describe("B-BookFlight.city") == ("begin", "book", "flight", "city")

    def test_outside_unchanged(self):
        source = corpus.Corpus.build([corpus.Utterance(("hi", "there"), "Greet", ("O", "O"))])
        assert corpus.prefix_slot_labels(source).utterances[0].slots == ("O", "O")

    def test_shared_slot_type_splits(self):
        source = corpus.Corpus.build([make_utterance("BookFlight", 0), make_utterance("GetWeather", 1)])

        result = corpus.prefix_slot_labels(source)

        assert result.slot_inventory == ("B-BookFlight.city", "B-GetWeather.city", "O")

    def test_second_application_rejected(self):
        source = corpus.Corpus.build([make_utterance("BookFlight", 0)])

        with pytest.raises(CorpusError, match="already prefixed"):
            corpus.prefix_slot_labels(corpus.prefix_slot_labels(source))


class TestSplitByIntent:
    def test_no_dev_split(self, corpus_factory):
        result = corpus.split_by_intent(corpus_factory([10] * 7), (0.7, 0.0, 0.3), seed=1)

        assert len(result.train.intent_inventory) in (4, 5)
        assert len(result.test.intent_inventory) >= 3
        assert len(result.dev) == 0

    def test_everything_in_train(self, corpus_factory):
        result = corpus.split_by_intent(corpus_factory([4, 5, 6]), (1.0, 0.0, 0.0), seed=0)
        assert result.train.intent_inventory == ("Intent0", "Intent1", "Intent2")

    def test_same_seed_same_split(self, corpus_factory):
        source = corpus_factory([3, 8, 5, 12, 7, 9, 4, 6, 10])

        first = corpus.split_by_intent(source, (0.6, 0.2, 0.2), seed=5)
        second = corpus.split_by_intent(source, (0.6, 0.2, 0.2), seed=5)

        assert first == second

    def test_partition_is_disjoint_and_complete(self, corpus_factory):
        source = corpus_factory([3, 8, 5, 12, 7, 9, 4, 6, 10, 2])

        result = corpus.split_by_intent(source, (0.7, 0.15, 0.15), seed=2)
        parts = [set(part.intent_inventory) for part in result.parts().values()]

        assert sum(len(p) for p in parts) == len(source.intent_inventory)
        assert set.union(*parts) == set(source.intent_inventory)
        assert all(len(p) >= 3 for p in parts)

    def test_singleton_classes_dropped(self, corpus_factory, caplog):
        result = corpus.split_by_intent(corpus_factory([1, 4, 4, 4]), (1.0, 0.0, 0.0), seed=0)

        assert "Intent0" not in result.train.intent_inventory
        assert "Dropping 1 intent classes" in caplog.text

    def test_infeasible(self, corpus_factory):
        with pytest.raises(SplitError, match="infeasible split"):
            corpus.split_by_intent(corpus_factory([5] * 5), (0.6, 0.2, 0.2), seed=0)

    @pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.5, 0.6, -0.1), (0.5, 0.2, 0.2)])
    def test_bad_fractions(self, corpus_factory, fractions):
        with pytest.raises(SplitError):
            corpus.split_by_intent(corpus_factory([5] * 9), fractions, seed=0)


class TestSplitSet:
    def test_overlap_rejected(self, corpus_factory):
        source = corpus_factory([3, 3, 3])

        with pytest.raises(SplitError, match="shared between splits"):
            corpus.SplitSet(source, source.subset(()), source.subset(["Intent0"]))

    def test_save_and_load(self, tmp_path, corpus_factory):
        source = corpus.prefix_slot_labels(corpus_factory([4, 5, 6, 7, 8, 9]))
        split = corpus.split_by_intent(source, (0.5, 0.0, 0.5), seed=3)

        paths = corpus.save_split(split, str(tmp_path), seed=3, fractions=(0.5, 0.0, 0.5))
        loaded = corpus.load_split(str(tmp_path))

        assert set(paths) == {"train", "dev", "test", "descriptions", "split"}
        assert loaded.train.utterances == split.train.utterances
        assert loaded.test.intent_inventory == split.test.intent_inventory
        assert loaded.train.prefixed
        assert len(loaded.dev) == 0

    def test_load_requires_metadata(self, tmp_path):
        with pytest.raises(SplitError, match="missing split.json"):
            corpus.load_split(str(tmp_path))


class TestSummary:
    def test_counts(self, simple_records):
        summary = corpus.read_corpus(ListCorpusSource(simple_records)).summary()

        assert list(summary.columns) == ["intent", "utterances", "tokens", "spans"]
        row = summary.set_index("intent").loc["BookFlight"]
        assert (row["utterances"], row["tokens"], row["spans"]) == (2, 9, 1)
