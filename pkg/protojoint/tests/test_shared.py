import pytest

from protojoint import shared


@pytest.mark.parametrize("name", shared.__all__)
def test_public_name_resolves(name):
    assert getattr(shared, name) is not None


def test_all_exporters_listed():
    assert {exporter.name for exporter in shared.ALL_EXPORTERS} == {"csv", "tsv", "json", "ndjson", "yaml", "markdown"}


def test_quick_start(corpus_factory):
    split = corpus_factory([6, 6, 6, 6])
    episode = shared.sample_episode(split, shared.SamplerConfig(u_max=8))
    model = shared.Model.create(split, shared.default_config(d_w=4, d_h=3))

    predictions = shared.predict(model, episode, split.describe)

    assert len(predictions) == len(episode.query_utterances())
