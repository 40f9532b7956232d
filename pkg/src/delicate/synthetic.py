"""Synthetic KB and corpus where type, date and string evidence identify the gold entity.

Each of ten surname families holds five entities: two people with different
given names, and a location, an organization and a work that all share the
bare surname as label. Mentions are generated so that the gold candidate is
the one with an identical label, a matching type and a non-negative time
delta; NIL mentions break at least one of these.
"""

import json
import os
import random
from dataclasses import dataclass

from delicate.corpus import Annotation, Document, dump_dataset, extract_mentions
from delicate.index import HashEmbeddingProvider, write_embeddings

SURNAMES = (
    "Amendola", "Moro", "Leopardi", "Manzoni", "Mazzini",
    "Carducci", "Pascoli", "Verga", "Foscolo", "Gramsci",
)
GIVEN = (
    "Giovanni", "Giorgio", "Aldo", "Giacomo", "Alessandro", "Giuseppe",
    "Giosuè", "Giovanna", "Ugo", "Antonio", "Carlo", "Luigi", "Paolo",
    "Pietro", "Francesco", "Maria", "Teresa", "Silvio", "Enrico", "Vittorio",
)
UNKNOWN_PEOPLE = (
    "Bartolomeo Zanetti", "Ottavio Ferrucci", "Clelia Santangelo", "Ruggero Bellandi",
    "Ippolito Cardano", "Ersilia Montauti", "Gaspare Lodovisi", "Ilario Spadoni",
    "Lucrezia Ventimiglia", "Fulgenzio Arrighi",
)
TEMPLATES = (
    "Nel {year} si discuteva ancora di {surface} nei circoli letterari.",
    "La lettera cita {surface} come esempio da seguire.",
    "Secondo il cronista, {surface} era allora sulla bocca di tutti.",
    "Si veda quanto scritto su {surface} nelle pagine precedenti.",
    "Il discorso del {year} torna su {surface} con parole severe.",
)

TYPE_CLASS = {"PER": "Q5", "LOC": "Q515", "ORG": "Q43229", "WORK": "Q7725634"}
TYPE_DATE_PROP = {"PER": "P569", "LOC": "P571", "ORG": "P571", "WORK": "P577"}
CLASS_EDGES = (
    ("Q5", "Q215627"),
    ("Q515", "Q486972"),
    ("Q486972", "Q27096213"),
    ("Q27096213", "Q58416391"),
    ("Q58416391", "Q27096213"),  # deliberate cycle
    ("Q43229", "Q16334295"),
    ("Q7725634", "Q17537576"),
    ("Q17537576", "Q15621286"),
    ("Q95074", "Q215627"),
    ("Q97498056", "Q95074"),
    ("Q895526", "Q16334295"),
    ("Q14623646", "Q43229"),
    ("Q3895768", "Q58416391"),
    ("Q999001", "Q215627"),      # class under both PER and ORG roots
    ("Q999001", "Q16334295"),
)


@dataclass
class Fixture:
    entities: list      # entity dump rows
    type_facts: dict
    date_facts: dict
    edges: list
    train_docs: list
    eval_docs: list
    dev_docs: list
    test_docs: list
    provider: HashEmbeddingProvider

    def entity_vectors(self):
        ids = [e["entity_id"] for e in self.entities]
        vecs = [self.provider.embed_text(e["label"]) for e in self.entities]
        return ids, vecs


def _build_kb(rng):
    entities, type_facts, date_facts, families = [], {}, {}, []
    given = list(GIVEN)
    rng.shuffle(given)
    for f, surname in enumerate(SURNAMES):
        y_a = rng.randint(1780, 1870)
        fam = {
            "surname": surname,
            "A": (f"{given[(2 * f) % len(given)]} {surname}", "PER", y_a),
            "B": (f"{given[(2 * f + 1) % len(given)]} {surname}", "PER", y_a + rng.randint(65, 90)),
            "C": (surname, "LOC", rng.randint(900, 1400)),
            "D": (surname, "ORG", rng.randint(1880, 1950)),
            "E": (surname, "WORK", rng.randint(1800, 1940)),
            "ids": {},
        }
        for slot in "ABCDE":
            label, etype, year = fam[slot]
            eid = len(entities)
            qid = f"Q{100000 + eid}"
            title = label if slot in "AB" else f"{label} ({etype.lower()})"
            entities.append({"entity_id": eid, "wikipedia_title": title, "qid": qid, "label": label})
            type_facts[eid] = [TYPE_CLASS[etype]]
            facts = [[TYPE_DATE_PROP[etype], year]]
            if etype == "PER":
                facts.append(["P570", year + 70])  # date of death, not a time property
            else:
                facts.append(["P585", year + rng.randint(1, 200)])
            date_facts[eid] = facts
            fam["ids"][slot] = (eid, qid)
        families.append(fam)
    return entities, type_facts, date_facts, families


def _linkable(fam, slot, rng):
    label, etype, year = fam[slot]
    lo, hi = {"A": (25, 60), "B": (25, 60), "C": (300, 600), "D": (5, 40), "E": (5, 80)}[slot]
    return label, etype, year + rng.randint(lo, hi), fam["ids"][slot][1]


def _nil(fam, kind, rng, f):
    surname = fam["surname"]
    if kind == "unknown_given":
        taken = {fam["A"][0].split()[0], fam["B"][0].split()[0]}
        name = next(g for g in GIVEN[f % len(GIVEN):] + GIVEN if g not in taken)
        return f"{name} {surname}", "PER", rng.randint(1850, 1970), "NIL"
    if kind == "bare_person":
        return surname, "PER", rng.randint(1850, 1970), "NIL"
    if kind == "early_org":
        return surname, "ORG", fam["D"][2] - rng.randint(40, 90), "NIL"
    return UNKNOWN_PEOPLE[f % len(UNKNOWN_PEOPLE)], "PER", rng.randint(1820, 1970), "NIL"


def _document(doc_id, surface, etype, year, gold, rng):
    template = rng.choice(TEMPLATES)
    head, tail = template.split("{surface}")
    head = head.format(year=year)
    tail = tail.format(year=year)
    text = head + surface + tail
    ann = Annotation(len(head), len(head) + len(surface), surface, etype, gold)
    return Document(id=doc_id, date=year, text=text, annotations=(ann,))


NIL_KINDS = ("unknown_given", "bare_person", "early_org", "unknown_person")


def make_fixture(seed=0, dim=64, train_reps=4):
    """Build the synthetic KB plus train, eval (40), dev (10) and test (30) documents.

    The training set repeats every family ``train_reps`` times with fresh
    contexts and dates.
    """
    rng = random.Random(seed)
    entities, type_facts, date_facts, families = _build_kb(rng)

    train_docs = []
    for rep in range(train_reps):
        for f, fam in enumerate(families):
            for slot in "ABCDE":
                s, t, y, g = _linkable(fam, slot, rng)
                train_docs.append(_document(f"tr{rep}-{f}-{slot}", s, t, y, g, rng))
            for kind in NIL_KINDS:
                s, t, y, g = _nil(fam, kind, rng, f + 3 * rep)
                train_docs.append(_document(f"tr{rep}-{f}-{kind}", s, t, y, g, rng))

    eval_linkable, eval_nil = [], []
    for f, fam in enumerate(families):
        for slot in rng.sample("ABCDE", 3):
            s, t, y, g = _linkable(fam, slot, rng)
            eval_linkable.append(_document(f"ev-{f}-{slot}", s, t, y, g, rng))
        kind = NIL_KINDS[f % len(NIL_KINDS)]
        s, t, y, g = _nil(fam, kind, rng, f + 7)
        eval_nil.append(_document(f"ev-{f}-{kind}", s, t, y, g, rng))
    rng.shuffle(eval_linkable)
    rng.shuffle(eval_nil)
    dev_docs = eval_linkable[:8] + eval_nil[:2]
    test_docs = eval_linkable[8:] + eval_nil[2:]
    eval_docs = eval_linkable + eval_nil

    return Fixture(
        entities=entities,
        type_facts=type_facts,
        date_facts=date_facts,
        edges=list(CLASS_EDGES),
        train_docs=train_docs,
        eval_docs=eval_docs,
        dev_docs=dev_docs,
        test_docs=test_docs,
        provider=HashEmbeddingProvider(dim=dim, seed=seed),
    )


def write_fixture(fixture, directory):
    """Write the fixture in the on-disk formats the CLI consumes; return the paths."""
    os.makedirs(directory, exist_ok=True)
    p = lambda name: os.path.join(directory, name)
    with open(p("entities.jsonl"), "w", encoding="utf-8") as fh:
        for e in fixture.entities:
            fh.write(json.dumps(e, ensure_ascii=False) + "\n")
    with open(p("edges.tsv"), "w", encoding="utf-8") as fh:
        for child, parent in fixture.edges:
            fh.write(f"{child}\t{parent}\n")
    with open(p("types.jsonl"), "w", encoding="utf-8") as fh:
        for eid, classes in fixture.type_facts.items():
            fh.write(json.dumps({"entity_id": eid, "classes": classes}) + "\n")
    with open(p("dates.jsonl"), "w", encoding="utf-8") as fh:
        for eid, facts in fixture.date_facts.items():
            fh.write(json.dumps({"entity_id": eid, "facts": facts}) + "\n")
    write_embeddings(p("embeddings.bin"), *fixture.entity_vectors())
    for name, docs in (("train", fixture.train_docs), ("eval", fixture.eval_docs),
                       ("dev", fixture.dev_docs), ("test", fixture.test_docs)):
        dump_dataset(docs, p(f"{name}.json"))
    return {
        "entities": p("entities.jsonl"),
        "edges": p("edges.tsv"),
        "types": p("types.jsonl"),
        "dates": p("dates.jsonl"),
        "embeddings": p("embeddings.bin"),
        "train": p("train.json"),
        "eval": p("eval.json"),
        "dev": p("dev.json"),
        "test": p("test.json"),
    }


def fixture_mentions(docs, window=16):
    return extract_mentions(docs, window)
