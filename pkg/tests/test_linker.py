import dataclasses
import json
import warnings

import pytest

from delicate.common import NIL
from delicate.corpus import Mention
from delicate.gbt import GbtModel, Leaf, Split
from delicate.index import EmbeddingMatrix, HashEmbeddingProvider
from delicate.kb import CandidateTuple, EntityRecord, LookupStore
from delicate.linker import (
    BatchLinkError,
    HallucinationWarning,
    LinkError,
    PipelineConfig,
    ResponseParseError,
    build_prompt,
    decide,
    link,
    link_batch,
    parse_llm_response,
    prompt_record,
    read_predictions,
    write_predictions,
)
from delicate.synthetic import fixture_mentions

TYPE_MATCH = 7


def small_pipeline(nil_threshold=0.4):
    """Ten entities labelled Amendola; only entity 3 is a dated person."""
    provider = HashEmbeddingProvider(dim=16, seed=1)
    records = [
        EntityRecord(i, f"Amendola {i}", f"Q{500 + i}", "Amendola",
                     "PER" if i == 3 else "ORG", 1880 if i == 3 else None)
        for i in range(10)
    ]
    index = EmbeddingMatrix(range(10), [provider.embed_text("Amendola") for _ in range(10)])
    # type_match <= 0.5 goes left (p ~ 0.02), else right (p ~ 0.98)
    model = GbtModel([Split(TYPE_MATCH, 0.5, 1.0, Leaf(-4.0), Leaf(4.0))], 1.0, 0.0)
    return PipelineConfig(provider, index, LookupStore.from_records(records), model, 10, nil_threshold)


MENTION = Mention("d1", 10, 18, "Amendola", "PER", 1925, "Nel 1925", "parlò", gold="Q503")


class TestDecision:
    def test_gold_wins(self):
        pred = link(MENTION, small_pipeline())
        assert pred.decision == "Q503"
        assert pred.ranked[0][0] == "Q503"
        assert pred.score == pytest.approx(pred.ranked[0][1])

    def test_all_below_threshold(self):
        m = dataclasses.replace(MENTION, etype="LOC")
        pred = link(m, small_pipeline())
        assert (pred.decision, pred.score) == (NIL, 0.0)

    def test_zero_threshold_never_nil(self):
        m = dataclasses.replace(MENTION, etype="LOC")
        pred = link(m, small_pipeline(nil_threshold=0.0))
        assert pred.decision != NIL
        # equal probabilities: the lower entity id wins
        assert pred.decision == "Q500"

    def test_decide_empty(self):
        assert decide([], 0.0) == (NIL, 0.0)

    def test_fixture_gold_beats_distractors(self, fixture, trained):
        config, _ = trained
        mentions = [m for m in fixture_mentions(fixture.test_docs) if m.gold != NIL]
        right = sum(link(m, config).decision == m.gold for m in mentions)
        assert right >= 0.9 * len(mentions)

    def test_threshold_monotone(self, fixture, trained):
        config, _ = trained
        mentions = fixture_mentions(fixture.eval_docs)
        counts = []
        for t in [i / 20 for i in range(21)]:
            cfg = dataclasses.replace(config, nil_threshold=t)
            counts.append(sum(p.decision == NIL for p in link_batch(mentions, cfg)))
        assert counts == sorted(counts)
        assert counts[0] == 0


class TestBatch:
    def test_empty(self):
        assert link_batch([], small_pipeline()) == []

    def test_equals_single_calls(self):
        config = small_pipeline()
        other = dataclasses.replace(MENTION, start=30, end=38, etype="ORG")
        assert link_batch([MENTION, other], config) == [link(MENTION, config), link(other, config)]

    def test_threads_agree(self, fixture, trained, tmp_path):
        config, _ = trained
        mentions = fixture_mentions(fixture.train_docs)[:100]
        one = link_batch(mentions, config, threads=1)
        eight = link_batch(mentions, config, threads=8)
        write_predictions(tmp_path / "a.jsonl", one)
        write_predictions(tmp_path / "b.jsonl", eight)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert read_predictions(tmp_path / "a.jsonl") == one

    def test_failures_collected(self):
        config = small_pipeline()
        bad = dataclasses.replace(config, lookup=LookupStore.from_records([]))
        with pytest.raises(BatchLinkError) as err:
            link_batch([MENTION, MENTION], bad, threads=2)
        assert err.value.predictions == [None, None]
        assert all(isinstance(e, LinkError) and e.stage == "lookup" for e in err.value.errors)


def candidates():
    return [
        (CandidateTuple(EntityRecord(1, "Giorgio Amendola", "Q778445", "Giorgio Amendola", "PER", 1907), 0.4), 0.9),
        (CandidateTuple(EntityRecord(2, "Amendola [ENT]", "Q1", "Amendola", None, None), 0.8), 0.5),
    ]


class TestPrompt:
    def test_two_tags_date_and_json(self):
        text = "Nel 1925 Amendola parlò. Il tag [ENT] compare anche qui."
        m = dataclasses.replace(MENTION, start=9, end=17)
        system, user = build_prompt(m, candidates(), 1925, text)
        assert user.count("[ENT]") == 2
        assert "[ENT]Amendola[ENT]" in user
        assert "1925" in user
        rows = json.loads(user.split("\n\nCandidates: ", 1)[1])
        assert [r["wikidata_id"] for r in rows] == ["Q778445", "Q1"]
        assert rows[1]["date"] is None and rows[1]["type"] is None
        assert "JSON" in system and "[ENT]" in system

    def test_context_fallback(self):
        _, user = build_prompt(MENTION, candidates(), 1925)
        assert "Nel 1925 [ENT]Amendola[ENT] parlò" in user

    def test_deterministic(self):
        assert build_prompt(MENTION, candidates(), 1925) == build_prompt(MENTION, candidates(), 1925)

    def test_needs_candidates(self):
        with pytest.raises(ValueError):
            build_prompt(MENTION, [], 1925)

    def test_prompt_record(self):
        rec = prompt_record(MENTION, small_pipeline())
        assert rec["user"].count("[ENT]") == 2
        assert rec["candidates"] == [f"Q{500 + i}" for i in range(10)]


class TestParse:
    QIDS = ["Q778445", "Q1"]

    def test_valid_pick(self):
        text = '{"wikipedia_title": "Giorgio Amendola", "wikidata_id": "Q778445"}'
        assert parse_llm_response(text, self.QIDS) == "Q778445"

    def test_pick_inside_prose(self):
        text = 'Sure. ```json\n{"wikipedia_title": "X", "wikidata_id": "Q1"}\n``` done'
        assert parse_llm_response(text, [c for c, _ in candidates()]) == "Q1"

    def test_empty_object(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert parse_llm_response("{}", self.QIDS) == NIL

    def test_out_of_list(self):
        with pytest.warns(HallucinationWarning):
            assert parse_llm_response('{"wikidata_id": "Q42"}', self.QIDS) == NIL

    def test_prose(self):
        with pytest.raises(ResponseParseError):
            parse_llm_response("I think it is Giorgio Amendola.", self.QIDS)
