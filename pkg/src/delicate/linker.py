"""End-to-end linking: embed, retrieve, look up, featurize, re-rank, threshold.

Also hosts the LLM adjudication protocol: prompts are built here and answers
parsed back, while the model itself runs out of process.
"""

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from delicate.common import NIL, is_qid
from delicate.corpus import mention_key
from delicate.features import feature_matrix, featurize_block
from delicate.index import dot_score, embed, knn

logger = logging.getLogger(__name__)

ENT_TAG = "[ENT]"

TYPE_WORDS = {"PER": "person", "LOC": "location", "ORG": "organization", "WORK": "work"}

SYSTEM_PROMPT = (
    "You resolve named-entity references in historical and literary documents to Wikidata.\n"
    "The user gives you a passage with one reference wrapped in [ENT] tags and a short list "
    "of candidate entities; pick the candidate the reference denotes, if any.\n"
    "Answer with a single JSON object and nothing else. Never answer with code."
)

# The user prompt must carry exactly two ENT tags (the ones around the mention),
# so the instructions refer to the mention without spelling the tag.
USER_TEMPLATE = (
    "The passage below was published in {document_date}.\n\n"
    "Choose the Wikidata entity that the tagged reference in the passage denotes. Only "
    "entities from the candidate list may be chosen; use the type and date of each "
    "candidate to judge whether it fits the passage.\n\n"
    "Reply with a JSON object of this shape, copying both values from the chosen candidate:\n"
    '{{"wikipedia_title": "", "wikidata_id": ""}}\n\n'
    "If no candidate fits, reply with an empty JSON object: {{}}\n\n"
    "Passage: {annotated_text}\n\n"
    "Candidates: {candidates_in_json}"
)


class LinkError(RuntimeError):
    """A pipeline stage failed for one mention."""

    def __init__(self, stage, mention_key, cause):
        super().__init__(f"[{stage}] {mention_key}: {cause}")
        self.stage = stage
        self.mention_key = mention_key
        self.cause = cause


class BatchLinkError(RuntimeError):
    """Some mentions of a batch failed; ``predictions`` holds None at their positions."""

    def __init__(self, predictions, errors):
        super().__init__(f"{len(errors)} of {len(predictions)} mentions failed to link")
        self.predictions = predictions
        self.errors = errors


class ResponseParseError(ValueError):
    pass


class HallucinationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    provider: object
    index: object
    lookup: object
    model: object
    block_size: int = 50
    nil_threshold: float = 0.4

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not 0.0 <= self.nil_threshold <= 1.0:
            raise ValueError("nil_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class LinkPrediction:
    mention_key: str
    doc_id: str
    start: int
    end: int
    etype: str
    decision: str
    score: float
    ranked: tuple = ()

    def to_json(self):
        return {
            "doc_id": self.doc_id,
            "start": self.start,
            "end": self.end,
            "type": self.etype,
            "decision": self.decision,
            "score": self.score,
            "ranked": [[q, p] for q, p in self.ranked],
        }


def retrieve(mention, config):
    """Candidate tuples for ``mention`` in retrieval order."""
    try:
        y_m = embed(config.provider, mention)
    except Exception as exc:
        raise LinkError("embed", mention.key, exc) from exc
    try:
        hits = knn(config.index, y_m, config.block_size)
    except Exception as exc:
        raise LinkError("retrieve", mention.key, exc) from exc
    try:
        return [config.lookup.lookup(eid, l2) for eid, l2 in hits], y_m
    except Exception as exc:
        raise LinkError("lookup", mention.key, exc) from exc


def rerank(mention, candidates, model):
    """``[(candidate, p), ...]`` sorted by descending p, ties by lower entity id."""
    try:
        fvs = featurize_block(mention, candidates)
    except Exception as exc:
        raise LinkError("features", mention.key, exc) from exc
    try:
        probs = model.predict_proba(feature_matrix(fvs))
    except Exception as exc:
        raise LinkError("rerank", mention.key, exc) from exc
    scored = [(c, float(p)) for c, p in zip(candidates, probs)]
    scored.sort(key=lambda cp: (-cp[1], cp[0].entity_id))
    return scored


def decide(scored, nil_threshold):
    if scored and scored[0][1] >= nil_threshold:
        return scored[0][0].qid, scored[0][1]
    return NIL, 0.0


def link(mention, config):
    candidates, _ = retrieve(mention, config)
    scored = rerank(mention, candidates, config.model) if candidates else []
    decision, score = decide(scored, config.nil_threshold)
    return LinkPrediction(
        mention_key=mention.key,
        doc_id=mention.doc_id,
        start=mention.start,
        end=mention.end,
        etype=mention.etype,
        decision=decision,
        score=score,
        ranked=tuple((c.qid, p) for c, p in scored),
    )


def link_batch(mentions, config, threads=1):
    """Link every mention, preserving order.

    Failures are collected; if any occur a :class:`BatchLinkError` is raised
    after the whole batch has run.
    """
    mentions = list(mentions)

    def run(m):
        try:
            return link(m, config), None
        except LinkError as exc:
            return None, exc

    if threads > 1 and len(mentions) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, mentions))
    else:
        results = [run(m) for m in mentions]
    predictions = [p for p, _ in results]
    errors = [e for _, e in results if e is not None]
    if errors:
        raise BatchLinkError(predictions, errors)
    return predictions


def _clean(text):
    return text.replace(ENT_TAG, "(ENT)") if text else text


def annotate_text(mention, text=None):
    if text is not None:
        before, surface, after = text[:mention.start], text[mention.start:mention.end], text[mention.end:]
    else:
        before = mention.left_context + (" " if mention.left_context else "")
        surface = mention.surface
        after = (" " if mention.right_context else "") + mention.right_context
    return f"{_clean(before)}{ENT_TAG}{_clean(surface)}{ENT_TAG}{_clean(after)}"


def candidates_json(candidates):
    """``candidates`` is a list of ``(CandidateTuple, similarity score)``."""
    rows = []
    for cand, score in candidates:
        e = cand.entity
        rows.append({
            "wikipedia_title": _clean(e.wikipedia_title),
            "wikidata_id": e.qid,
            "type": TYPE_WORDS.get(e.etype),
            "date": e.date,
            "score": float(score),
        })
    return json.dumps(rows, ensure_ascii=False, indent=2)


def build_prompt(mention, candidates, doc_date, text=None):
    """Return ``(system, user)`` prompts for one mention and its candidates."""
    if not candidates:
        raise ValueError("cannot build a prompt without candidates")
    user = USER_TEMPLATE.format(
        document_date=doc_date,
        annotated_text=annotate_text(mention, text),
        candidates_in_json=candidates_json(candidates),
    )
    return SYSTEM_PROMPT, user


def prompt_record(mention, config, text=None):
    """Prompt dump entry for offline LLM execution."""
    candidates, y_m = retrieve(mention, config)
    if not candidates:
        raise LinkError("retrieve", mention.key, "empty candidate block")
    scored = [(c, dot_score(y_m, config.index.vector(c.entity_id))) for c in candidates]
    system, user = build_prompt(mention, scored, mention.date, text)
    return {
        "mention_key": mention.key,
        "doc_id": mention.doc_id,
        "start": mention.start,
        "end": mention.end,
        "type": mention.etype,
        "system": system,
        "user": user,
        "candidates": [c.qid for c in candidates],
    }


def _first_json_object(text):
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos >= 0:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        pos = text.find("{", pos + 1)
    raise ResponseParseError(f"no JSON object in response: {text[:80]!r}")


def parse_llm_response(text, candidates):
    """QID chosen by the LLM, or NIL.

    Answers naming an entity outside ``candidates`` are treated as NIL.
    Raises :class:`ResponseParseError` when no JSON object can be found.
    """
    obj = _first_json_object(text)
    if not obj:
        return NIL
    allowed = {c if isinstance(c, str) else c.qid for c in candidates}
    qid = obj.get("wikidata_id")
    qid = qid.strip() if isinstance(qid, str) else qid
    if not is_qid(qid):
        warnings.warn(f"response has no usable wikidata_id: {obj!r}", HallucinationWarning, stacklevel=2)
        return NIL
    if qid not in allowed:
        warnings.warn(f"response picked {qid}, which is not a candidate", HallucinationWarning, stacklevel=2)
        return NIL
    return qid


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_predictions(path, predictions):
    write_jsonl(path, (p.to_json() for p in predictions))


def read_predictions(path):
    preds = []
    for obj in read_jsonl(path):
        preds.append(
            LinkPrediction(
                mention_key=mention_key(obj["doc_id"], obj["start"], obj["end"]),
                doc_id=obj["doc_id"],
                start=obj["start"],
                end=obj["end"],
                etype=obj.get("type"),
                decision=obj["decision"],
                score=obj.get("score", 0.0),
                ranked=tuple((q, p) for q, p in obj.get("ranked", [])),
            )
        )
    return preds
