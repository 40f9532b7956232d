"""Knowledge-base side of the pipeline.

Wikidata classes are folded into the four coarse entity types by walking
``P279`` (subclass of) edges down from a handful of root classes; each
entity gets one type and one date, and the result is frozen into a
single-file lookup store keyed by the integer id used in the vector index.
"""

import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass

from delicate.common import ENTITY_TYPES, is_qid, parse_year

logger = logging.getLogger(__name__)

DEFAULT_ROOTS = {
    "PER": ["Q215627", "Q95074", "Q97498056"],
    "ORG": ["Q895526", "Q16334295", "Q14623646"],
    "LOC": ["Q3895768", "Q27096213", "Q58416391"],
    "WORK": ["Q17537576", "Q15621286"],
}

TIME_PROPERTIES = frozenset({
    "P569",    # date of birth
    "P571",    # inception
    "P1619",   # date of official opening
    "P1191",   # date of first performance
    "P10135",  # recording date
    "P577",    # publication date
    "P575",    # time of discovery or invention
    "P1317",   # floruit
    "P7124",   # date of the first one
    "P10673",  # debut date
    "P9448",   # introduced on
    "P6949",   # announcement date
    "P729",    # service entry
    "P2031",   # work period (start)
    "P585",    # point in time
})

STORE_FORMAT = "delicate-lookup"
STORE_VERSION = 1


class ConfigurationError(ValueError):
    pass


class IngestionError(ValueError):
    pass


class MissingEntityError(KeyError):
    """Raised when the index returns an id the lookup store does not know."""

    def __init__(self, entity_id):
        super().__init__(entity_id)
        self.entity_id = entity_id

    def __str__(self):
        return f"entity {self.entity_id} is in the index but not in the lookup store"


@dataclass(frozen=True)
class EntityRecord:
    entity_id: int
    wikipedia_title: str
    qid: str
    label: str
    etype: str | None = None
    date: int | None = None

    def to_json(self):
        return {
            "entity_id": self.entity_id,
            "wikipedia_title": self.wikipedia_title,
            "qid": self.qid,
            "label": self.label,
            "etype": self.etype,
            "date": self.date,
        }


@dataclass(frozen=True)
class CandidateTuple:
    entity: EntityRecord
    l2: float

    @property
    def entity_id(self):
        return self.entity.entity_id

    @property
    def qid(self):
        return self.entity.qid


class ClassClosure:
    """Read-only mapping from Wikidata class QID to coarse entity type."""

    def __init__(self, mapping):
        self._mapping = dict(mapping)

    def get(self, qid, default=None):
        return self._mapping.get(qid, default)

    def __getitem__(self, qid):
        return self._mapping[qid]

    def __contains__(self, qid):
        return qid in self._mapping

    def __len__(self):
        return len(self._mapping)

    def items(self):
        return self._mapping.items()

    def __eq__(self, other):
        return isinstance(other, ClassClosure) and self._mapping == other._mapping

    def __repr__(self):
        return f"ClassClosure({len(self._mapping)} classes)"


def build_class_closure(edges, roots=None):
    """Map every class below a type's roots to that type.

    ``edges`` are ``(child, parent)`` subclass pairs and may contain cycles.
    Classes reachable from the roots of two or more types are dropped.
    """
    if roots is None:
        roots = DEFAULT_ROOTS
    for etype, qids in roots.items():
        if etype not in ENTITY_TYPES:
            raise ConfigurationError(f"unknown entity type in roots: {etype!r}")
        for q in qids:
            if not is_qid(q):
                raise ConfigurationError(f"root {q!r} for {etype} is not a Wikidata QID")

    children = {}
    known = set()
    for child, parent in edges:
        children.setdefault(parent, []).append(child)
        known.add(child)
        known.add(parent)

    reached = {}
    for etype, qids in roots.items():
        missing = [q for q in qids if q not in known]
        if missing and known:
            logger.warning("roots for %s absent from the class graph: %s", etype, ", ".join(missing))
        seen = set(qids)
        queue = deque(qids)
        while queue:
            cls = queue.popleft()
            for sub in children.get(cls, ()):
                if sub not in seen:
                    seen.add(sub)
                    queue.append(sub)
        for cls in seen:
            reached.setdefault(cls, set()).add(etype)

    return ClassClosure({cls: next(iter(ts)) for cls, ts in reached.items() if len(ts) == 1})


def select_date(facts):
    """Earliest year among time-related facts; None if there is none."""
    years = [parse_year(year) for prop, year in facts if prop in TIME_PROPERTIES]
    return min(years) if years else None


def _entity_type(entity_id, classes, closure):
    types = [closure.get(c) for c in classes]
    types = [t for t in types if t is not None]
    if not types:
        return None
    if len(set(types)) > 1:
        logger.warning(
            "entity %s has classes of several types %s; keeping %s",
            entity_id, sorted(set(types)), types[0],
        )
    return types[0]


def build_lookup(entities, closure, type_facts=None, date_facts=None):
    """Assemble an in-memory :class:`LookupStore` from the KB dumps.

    ``entities`` yields dicts with ``entity_id``, ``wikipedia_title``, ``qid``
    and ``label``; ``type_facts`` maps entity id to its class QIDs and
    ``date_facts`` maps entity id to ``(property, year)`` pairs.
    """
    type_facts = type_facts or {}
    date_facts = date_facts or {}
    records = {}
    for ent in entities:
        try:
            eid = int(ent["entity_id"])
            qid = ent["qid"]
            label = ent["label"]
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"bad entity row {ent!r}: {exc}") from exc
        if eid in records:
            raise IngestionError(f"duplicate entity_id {eid}")
        if not is_qid(qid):
            raise IngestionError(f"entity {eid}: {qid!r} is not a QID")
        if not isinstance(label, str) or not label:
            raise IngestionError(f"entity {eid}: missing label")
        date = select_date(date_facts.get(eid, ()))
        if date is not None and not -10000 < date < 3000:
            raise IngestionError(f"entity {eid}: implausible year {date}")
        records[eid] = EntityRecord(
            entity_id=eid,
            wikipedia_title=ent.get("wikipedia_title") or label,
            qid=qid,
            label=label,
            etype=_entity_type(eid, type_facts.get(eid, ()), closure),
            date=date,
        )
    return LookupStore.from_records(records.values())


class LookupStore:
    """Sorted key-value table held as bytes, with an in-memory offset index.

    Layout: one JSON header line, then one ``<entity_id>\\t<json>`` line per
    entity in ascending id order. Records are decoded on demand.
    """

    def __init__(self, data):
        self._data = bytes(data)
        self._offsets = {}
        header_end = self._data.find(b"\n")
        if header_end < 0:
            raise IngestionError("lookup store has no header")
        try:
            header = json.loads(self._data[:header_end])
        except json.JSONDecodeError as exc:
            raise IngestionError(f"corrupt lookup header: {exc}") from exc
        if header.get("format") != STORE_FORMAT or header.get("version") != STORE_VERSION:
            raise IngestionError(f"unsupported lookup store header {header!r}")
        pos = header_end + 1
        while pos < len(self._data):
            tab = self._data.index(b"\t", pos)
            nl = self._data.find(b"\n", tab)
            nl = len(self._data) if nl < 0 else nl
            self._offsets[int(self._data[pos:tab])] = (tab + 1, nl)
            pos = nl + 1
        if len(self._offsets) != header.get("count"):
            raise IngestionError(
                f"lookup store declares {header.get('count')} records, found {len(self._offsets)}"
            )

    @classmethod
    def from_records(cls, records):
        records = sorted(records, key=lambda r: r.entity_id)
        header = {"format": STORE_FORMAT, "version": STORE_VERSION, "count": len(records)}
        lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
        for r in records:
            body = json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
            lines.append(f"{r.entity_id}\t{body}")
        return cls(("\n".join(lines) + "\n").encode("utf-8"))

    @classmethod
    def open(cls, path):
        with open(path, "rb") as fh:
            return cls(fh.read())

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self._data)

    def digest(self):
        return hashlib.sha256(self._data).hexdigest()

    def __len__(self):
        return len(self._offsets)

    def __contains__(self, entity_id):
        return entity_id in self._offsets

    def ids(self):
        return sorted(self._offsets)

    def record(self, entity_id):
        try:
            start, end = self._offsets[int(entity_id)]
        except KeyError:
            raise MissingEntityError(entity_id) from None
        obj = json.loads(self._data[start:end])
        return EntityRecord(**obj)

    def lookup(self, entity_id, l2):
        return CandidateTuple(entity=self.record(entity_id), l2=float(l2))

    def records(self):
        for eid in self.ids():
            yield self.record(eid)


def read_entity_dump(path):
    return list(_read_jsonl(path))


def read_class_edges(path):
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise IngestionError(f"{path}:{lineno}: expected child<TAB>parent")
            edges.append((parts[0].strip(), parts[1].strip()))
    return edges


def read_type_facts(path):
    return {int(obj["entity_id"]): list(obj.get("classes", [])) for obj in _read_jsonl(path)}


def read_date_facts(path):
    return {
        int(obj["entity_id"]): [(prop, year) for prop, year in obj.get("facts", [])]
        for obj in _read_jsonl(path)
    }


def read_roots(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc.msg}") from exc
