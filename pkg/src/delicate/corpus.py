"""Annotated corpora: loading, type normalization, stratified splits, mentions."""

import json
import math
import random
import re
import warnings
from dataclasses import dataclass, field, replace

from delicate.common import ENTITY_TYPES, NIL, is_qid, parse_year

SPLIT_NAMES = ("train", "dev", "test")
MIN_STRATUM_DOCS = 3

# Fine-grained MHERCL-ITA types grouped under the four coarse types.
MHERCL_TYPE_MAP = {
    "PER": ("person",),
    "ORG": (
        "family", "organization", "school", "government-organization",
        "university", "newspaper", "magazine",
    ),
    "LOC": (
        "city", "country", "country region", "continent", "location",
        "mountain", "road", "lake", "island", "building", "worship-place",
        "facility", "theater",
    ),
    "WORK": (
        "book", "work-of-art", "publication", "music", "music key", "award",
        "event", "festival", "court decision", "war", "conference", "law",
    ),
}
_FINE_TO_COARSE = {
    fine.casefold(): coarse
    for coarse, fines in MHERCL_TYPE_MAP.items()
    for fine in fines
}

_TOKEN_RE = re.compile(r"\S+")


class DatasetError(ValueError):
    """The dataset file cannot be parsed."""


class ValidationError(ValueError):
    """A document or annotation violates the corpus invariants."""


class UnmappedTypeError(KeyError):
    """A fine-grained type has no coarse equivalent."""

    def __init__(self, fine):
        super().__init__(fine)
        self.fine = fine

    def __str__(self):
        return f"unmapped entity type: {self.fine!r}"


class DegenerateSplitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Annotation:
    start: int
    end: int
    surface: str
    etype: str
    gold: str | None = None


@dataclass(frozen=True)
class Document:
    id: str
    date: int
    text: str
    annotations: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class Mention:
    doc_id: str
    start: int
    end: int
    surface: str
    etype: str
    date: int
    left_context: str = ""
    right_context: str = ""
    gold: str | None = None

    @property
    def key(self):
        return mention_key(self.doc_id, self.start, self.end)


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    documents: list


def mention_key(doc_id, start, end):
    return f"{doc_id}:{start}-{end}"


def load_dataset(path, format="eneide"):
    """Read a dataset file into a list of validated documents.

    MHERCL files keep their fine-grained types; run :func:`translate_types`
    to map them onto the ENEIDE types.
    """
    if format not in ("eneide", "mhercl"):
        raise ValueError(f"unknown dataset format: {format!r}")
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_documents(payload, format=format)


def parse_documents(payload, format="eneide"):
    if not isinstance(payload, dict) or not isinstance(payload.get("documents"), list):
        raise ValidationError('expected an object with a "documents" list')
    docs = []
    seen = set()
    for i, obj in enumerate(payload["documents"]):
        doc = _parse_document(obj, i, format)
        if doc.id in seen:
            raise ValidationError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        docs.append(doc)
    return docs


def _parse_document(obj, index, format):
    where = f"document #{index}"
    try:
        doc_id = str(obj["id"])
        text = obj["text"]
        date = parse_year(obj["date"])
        raw_anns = obj.get("annotations", [])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{where}: missing or invalid field {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    where = f"document {doc_id!r}"
    if not isinstance(text, str):
        raise ValidationError(f"{where}: text must be a string")
    if date <= 0:
        raise ValidationError(f"{where}: date must be a positive year, got {date}")

    anns = []
    for j, a in enumerate(raw_anns):
        try:
            ann = Annotation(
                start=int(a["start"]),
                end=int(a["end"]),
                surface=a["surface"],
                etype=a["type"],
                gold=a.get("gold"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{where}, annotation #{j}: invalid field {exc}") from exc
        _validate_annotation(ann, text, f"{where}, annotation #{j}", format)
        anns.append(ann)

    anns.sort(key=lambda a: (a.start, a.end))
    for prev, cur in zip(anns, anns[1:]):
        if cur.start < prev.end:
            raise ValidationError(
                f"{where}: annotations {prev.surface!r}@{prev.start} and "
                f"{cur.surface!r}@{cur.start} overlap"
            )
    return Document(id=doc_id, date=date, text=text, annotations=tuple(anns))


def _validate_annotation(ann, text, where, format):
    if not 0 <= ann.start < ann.end <= len(text):
        raise ValidationError(
            f"{where}: offsets [{ann.start}, {ann.end}) outside text of length {len(text)}"
        )
    if text[ann.start:ann.end] != ann.surface:
        raise ValidationError(
            f"{where}: surface {ann.surface!r} does not match "
            f"text[{ann.start}:{ann.end}] = {text[ann.start:ann.end]!r}"
        )
    if not isinstance(ann.etype, str) or not ann.etype:
        raise ValidationError(f"{where}: missing entity type")
    if format == "eneide" and ann.etype not in ENTITY_TYPES:
        raise ValidationError(f"{where}: unknown entity type {ann.etype!r}")
    if ann.gold is not None and ann.gold != NIL and not is_qid(ann.gold):
        raise ValidationError(f"{where}: gold {ann.gold!r} is neither a QID nor {NIL}")


def documents_to_json(docs):
    return {
        "documents": [
            {
                "id": d.id,
                "date": d.date,
                "text": d.text,
                "annotations": [
                    {
                        "start": a.start,
                        "end": a.end,
                        "surface": a.surface,
                        "type": a.etype,
                        **({"gold": a.gold} if a.gold is not None else {}),
                    }
                    for a in d.annotations
                ],
            }
            for d in docs
        ]
    }


def dump_dataset(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(documents_to_json(docs), fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def map_type(fine):
    """Map an MHERCL-ITA fine-grained type to PER, LOC, ORG or WORK."""
    try:
        return _FINE_TO_COARSE[fine.strip().casefold()]
    except (KeyError, AttributeError):
        raise UnmappedTypeError(fine) from None


def translate_types(docs):
    return [
        replace(d, annotations=tuple(replace(a, etype=map_type(a.etype)) for a in d.annotations))
        for d in docs
    ]


def _largest_remainder(n, ratios):
    quotas = [n * r for r in ratios]
    # guard against 0.15 * 100 == 15.000000000000002 style noise
    floors = [math.floor(q + 1e-9) for q in quotas]
    remainders = [q - f for q, f in zip(quotas, floors)]
    order = sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))
    for i in order[: n - sum(floors)]:
        floors[i] += 1
    return floors


def _decade_strata(docs):
    buckets = {}
    for d in docs:
        buckets.setdefault(d.date // 10, []).append(d)
    merged = False
    while len(buckets) > 1:
        small = [k for k, v in buckets.items() if len(v) < MIN_STRATUM_DOCS]
        if not small:
            break
        src = min(small, key=lambda k: (len(buckets[k]), k))
        dst = min((k for k in buckets if k != src), key=lambda k: (abs(k - src), k))
        buckets[dst].extend(buckets.pop(src))
        merged = True
    return [buckets[k] for k in sorted(buckets)], merged


def stratified_split(docs, ratios=(0.70, 0.15, 0.15), seed=0):
    """Partition documents into train/dev/test, stratified by decade.

    Decades holding fewer than three documents are folded into the nearest
    decade. Split sizes inside each stratum follow the largest-remainder
    rule. Returns three :class:`DatasetSplit` objects.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    if not docs:
        raise ValueError("cannot split an empty document list")
    ordered = sorted(docs, key=lambda d: d.id)
    strata, merged = _decade_strata(ordered)
    if merged or any(len(s) < len(SPLIT_NAMES) for s in strata):
        warnings.warn(
            "some chronological strata were too small and have been merged",
            DegenerateSplitWarning,
            stacklevel=2,
        )
    rng = random.Random(seed)
    parts = ([], [], [])
    for stratum in strata:
        stratum = list(stratum)
        rng.shuffle(stratum)
        sizes = _largest_remainder(len(stratum), ratios)
        pos = 0
        for part, size in zip(parts, sizes):
            part.extend(stratum[pos:pos + size])
            pos += size
    return tuple(DatasetSplit(name, docs) for name, docs in zip(SPLIT_NAMES, parts))


def _context(text, window, side):
    if window <= 0:
        return ""
    tokens = list(_TOKEN_RE.finditer(text))
    if not tokens:
        return ""
    picked = tokens[-window:] if side == "left" else tokens[:window]
    return text[picked[0].start():picked[-1].end()]


def extract_mentions(docs, window=32):
    """One :class:`Mention` per annotation with up to ``window`` tokens of context per side."""
    if window < 0:
        raise ValueError("window must be >= 0")
    mentions = []
    for d in docs:
        for a in d.annotations:
            mentions.append(
                Mention(
                    doc_id=d.id,
                    start=a.start,
                    end=a.end,
                    surface=a.surface,
                    etype=a.etype,
                    date=d.date,
                    left_context=_context(d.text[:a.start], window, "left"),
                    right_context=_context(d.text[a.end:], window, "right"),
                    gold=a.gold,
                )
            )
    return mentions
