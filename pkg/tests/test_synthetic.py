import dataclasses

import pytest

from conftest import FIXTURE_HP
from delicate.common import NIL
from delicate.evaluation import ed_accuracy, nil_recall
from delicate.index import EmbeddingMatrix
from delicate.kb import build_class_closure, build_lookup
from delicate.linker import PipelineConfig, link_batch, retrieve
from delicate.synthetic import fixture_mentions, make_fixture
from delicate.training import train_reranker, tune_nil_threshold


def test_shape(fixture):
    assert len(fixture.entities) == 50
    ev = fixture_mentions(fixture.eval_docs)
    assert len(ev) == 40 and sum(m.gold == NIL for m in ev) == 10
    dev, test = fixture_mentions(fixture.dev_docs), fixture_mentions(fixture.test_docs)
    assert {m.key for m in dev}.isdisjoint(m.key for m in test)
    assert {m.key for m in dev} | {m.key for m in test} == {m.key for m in ev}


def test_gold_always_retrieved(fixture, resources):
    provider, matrix, store = resources
    config = PipelineConfig(provider, matrix, store, None, FIXTURE_HP.block_size)
    for m in fixture_mentions(fixture.train_docs + fixture.eval_docs):
        if m.gold != NIL:
            assert m.gold in {c.qid for c in retrieve(m, config)[0]}, m


def test_deterministic():
    a, b = make_fixture(3), make_fixture(3)
    assert a.entities == b.entities and a.eval_docs == b.eval_docs and a.train_docs == b.train_docs


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_other_seeds_reach_fixture_targets(seed):
    fx = make_fixture(seed)
    closure = build_class_closure(fx.edges)
    store = build_lookup(fx.entities, closure, fx.type_facts, fx.date_facts)
    config = PipelineConfig(fx.provider, EmbeddingMatrix(*fx.entity_vectors()), store, None, FIXTURE_HP.block_size)
    model, _ = train_reranker(fixture_mentions(fx.train_docs), config, FIXTURE_HP)
    config = dataclasses.replace(config, model=model)
    threshold, _ = tune_nil_threshold(fixture_mentions(fx.dev_docs), config)
    test = fixture_mentions(fx.test_docs)
    preds = link_batch(test, dataclasses.replace(config, nil_threshold=threshold))
    assert ed_accuracy(preds, test).micro_accuracy >= 0.95
    assert nil_recall(preds, test) >= 0.9
