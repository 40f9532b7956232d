"""Pairwise mention/candidate features fed to the re-ranker.

Column order is fixed; models trained on one order are invalid for another.
"""

import csv
import statistics
import unicodedata
from dataclasses import astuple, dataclass

import numpy as np

FEATURE_NAMES = (
    "l2",
    "set_min",
    "set_max",
    "set_mean",
    "set_median",
    "levenshtein",
    "jaccard",
    "type_match",
    "delta_time",
)


class EmptyBlockError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    l2: float
    set_min: float
    set_max: float
    set_mean: float
    set_median: float
    levenshtein: int
    jaccard: float
    type_match: int
    delta_time: float

    def as_array(self):
        return np.array(astuple(self), dtype=np.float64)


def normalize(text):
    return unicodedata.normalize("NFC", unicodedata.normalize("NFC", text).casefold())


def levenshtein(a, b):
    """Unit-cost edit distance between casefolded, NFC-normalized strings."""
    a, b = normalize(a), normalize(b)
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def tokens(text):
    return set(normalize(text).split())


def jaccard_distance(a, b):
    """1 - |A & B| / |A | B| over whitespace token sets; 0.0 when both are empty."""
    ta, tb = tokens(a), tokens(b)
    union = ta | tb
    if not union:
        return 0.0
    return 1.0 - len(ta & tb) / len(union)


def delta_time(d_m, d_e):
    """Document year minus entity year, or 0 when the entity is undated."""
    if d_e is None:
        return 0.0
    return float(d_m - d_e)


def type_match(t_m, t_e):
    return int(t_e is not None and t_m == t_e)


def featurize_block(mention, candidates):
    """One :class:`FeatureVector` per candidate of a single retrieval block."""
    if not candidates:
        raise EmptyBlockError(f"no candidates for mention {getattr(mention, 'key', mention)}")
    dists = [c.l2 for c in candidates]
    set_min, set_max = min(dists), max(dists)
    set_mean = statistics.fmean(dists)
    set_median = statistics.median(dists)
    # fmean may land an ulp outside [min, max] on near-constant blocks
    set_mean = min(max(set_mean, set_min), set_max)
    rows = []
    for c in candidates:
        e = c.entity
        rows.append(
            FeatureVector(
                l2=c.l2,
                set_min=set_min,
                set_max=set_max,
                set_mean=set_mean,
                set_median=set_median,
                levenshtein=levenshtein(mention.surface, e.label),
                jaccard=jaccard_distance(mention.surface, e.label),
                type_match=type_match(mention.etype, e.etype),
                delta_time=delta_time(mention.date, e.date),
            )
        )
    return rows


def feature_matrix(vectors):
    if not vectors:
        return np.empty((0, len(FEATURE_NAMES)))
    return np.array([astuple(v) for v in vectors], dtype=np.float64)


DUMP_COLUMNS = ("mention_id", "entity_id", *FEATURE_NAMES, "label")


def write_feature_dump(path, rows):
    """Write ``(mention_id, entity_id, FeatureVector, label)`` rows as TSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(DUMP_COLUMNS)
        for mention_id, entity_id, fv, label in rows:
            w.writerow([mention_id, entity_id, *(repr(v) for v in astuple(fv)), int(label)])


def read_feature_dump(path):
    """Return ``(mention_ids, entity_ids, X, y)`` from a feature TSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh, delimiter="\t")
        header = tuple(next(r))
        if header != DUMP_COLUMNS:
            raise ValueError(f"unexpected feature dump header {header}")
        mids, eids, X, y = [], [], [], []
        for row in r:
            mids.append(row[0])
            eids.append(int(row[1]))
            X.append([float(v) for v in row[2:-1]])
            y.append(int(row[-1]))
    return mids, eids, np.array(X, dtype=np.float64).reshape(-1, len(FEATURE_NAMES)), np.array(y, dtype=np.int64)
