"""Scoring and explainability statistics for linker output."""

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from delicate.common import ENTITY_TYPES, NIL


class AlignmentError(ValueError):
    pass


class SpanValidationError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Entity disambiguation accuracy


@dataclass
class EdReport:
    micro_accuracy: float
    macro_accuracy: float
    per_class: dict
    n: dict

    def to_json(self):
        return {
            "micro_accuracy": self.micro_accuracy,
            "macro_accuracy": self.macro_accuracy,
            "per_class": dict(self.per_class),
            "n": dict(self.n),
        }

    def render_table(self, name="model"):
        classes = [c for c in ENTITY_TYPES if c in self.per_class]
        classes += sorted(c for c in self.per_class if c not in ENTITY_TYPES)
        head = ["Model", "Acc_Micro", *(f"Acc_{c}" for c in classes), "Acc_Macro"]
        row = [name, self.micro_accuracy, *(self.per_class[c] for c in classes), self.macro_accuracy]
        cells = [row[0]] + [f"{100 * v:.2f}" for v in row[1:]]
        widths = [max(len(h), len(c)) for h, c in zip(head, cells)]
        fmt = lambda xs: " | ".join(x.rjust(w) for x, w in zip(xs, widths))
        return "\n".join([fmt(head), "-+-".join("-" * w for w in widths), fmt(cells)])


def _decisions(predictions):
    if isinstance(predictions, dict):
        return dict(predictions)
    out = {}
    for p in predictions:
        if p.mention_key in out:
            raise AlignmentError(f"duplicate prediction for {p.mention_key}")
        out[p.mention_key] = p.decision
    return out


def ed_accuracy(predictions, gold):
    """Micro, per-class and macro accuracy of linking decisions.

    ``predictions`` is a list of link predictions or a ``{mention_key:
    decision}`` dict; ``gold`` is a list of mentions carrying gold ids.
    A NIL decision on a NIL mention counts as correct.
    """
    decided = _decisions(predictions)
    gold = list(gold)
    gold_keys = {m.key for m in gold}
    if len(gold_keys) != len(gold):
        raise AlignmentError("duplicate gold mention keys")
    missing = gold_keys - decided.keys()
    extra = decided.keys() - gold_keys
    if missing or extra:
        raise AlignmentError(
            f"{len(missing)} gold mentions without prediction, {len(extra)} predictions without gold"
            + (f" (e.g. {sorted(missing or extra)[0]})" if missing or extra else "")
        )
    right, total = {}, {}
    for m in gold:
        g = m.gold if m.gold is not None else NIL
        total[m.etype] = total.get(m.etype, 0) + 1
        right[m.etype] = right.get(m.etype, 0) + (decided[m.key] == g)
    per_class = {t: right[t] / total[t] for t in total}
    n_all = sum(total.values())
    return EdReport(
        micro_accuracy=sum(right.values()) / n_all if n_all else 0.0,
        macro_accuracy=float(np.mean(list(per_class.values()))) if per_class else 0.0,
        per_class=per_class,
        n=total,
    )


def nil_recall(predictions, gold):
    decided = _decisions(predictions)
    nil = [m for m in gold if m.gold in (None, NIL)]
    if not nil:
        return float("nan")
    return sum(decided[m.key] == NIL for m in nil) / len(nil)


# ---------------------------------------------------------------------------
# End-to-end span metrics


@dataclass(frozen=True)
class Span:
    doc_id: str
    start: int
    end: int
    decision: str


@dataclass
class E2eReport:
    mode: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tp_pairs: list = field(default_factory=list, repr=False)

    def to_json(self):
        return {
            "mode": self.mode,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def spans_from_predictions(predictions):
    return [Span(p.doc_id, p.start, p.end, p.decision) for p in predictions]


def spans_from_mentions(mentions):
    return [Span(m.doc_id, m.start, m.end, m.gold if m.gold is not None else NIL) for m in mentions]


def _by_doc(spans, what):
    docs = {}
    for s in spans:
        if not s.start < s.end:
            raise SpanValidationError(f"{what} span {s} is empty")
        docs.setdefault(s.doc_id, []).append(s)
    for doc_id, items in docs.items():
        items.sort(key=lambda s: (s.start, s.end))
        for a, b in zip(items, items[1:]):
            if b.start < a.end:
                raise SpanValidationError(f"overlapping {what} spans in {doc_id}: {a} and {b}")
    return docs


_TOKEN_RE = re.compile(r"\S+")


def _token_bounds(text):
    return [(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def _overlap(p, g, overlap, tokens):
    if overlap == "char":
        return max(0, min(p.end, g.end) - max(p.start, g.start))
    lo, hi = max(p.start, g.start), min(p.end, g.end)
    if lo >= hi:
        return 0
    return sum(1 for s, e in tokens if s < hi and e > lo)


def e2e_metrics(pred_spans, gold_spans, mode="exact", overlap="char", texts=None):
    """Micro precision, recall and F1 over linked spans.

    Predicted and gold spans are paired one-to-one, greedily by largest
    overlap then earliest start. ``exact`` pairs only identical boundaries;
    ``fuzzy`` pairs any overlap (in characters, or in whitespace tokens
    with ``overlap="token"`` and document ``texts``). A pair is a true
    positive when the decisions agree.
    """
    if mode not in ("exact", "fuzzy"):
        raise ValueError(f"unknown mode {mode!r}")
    if overlap not in ("char", "token"):
        raise ValueError(f"unknown overlap unit {overlap!r}")
    if overlap == "token" and texts is None:
        raise ValueError("token overlap needs document texts")
    preds = _by_doc(pred_spans, "predicted")
    golds = _by_doc(gold_spans, "gold")
    tp_pairs = []
    n_pred = sum(len(v) for v in preds.values())
    n_gold = sum(len(v) for v in golds.values())
    for doc_id, ps in preds.items():
        gs = golds.get(doc_id, [])
        tokens = _token_bounds(texts[doc_id]) if overlap == "token" else None
        pairs = []
        for i, p in enumerate(ps):
            for j, g in enumerate(gs):
                if mode == "exact":
                    if (p.start, p.end) == (g.start, g.end):
                        pairs.append((-(p.end - p.start), p.start, g.start, i, j))
                else:
                    ov = _overlap(p, g, overlap, tokens)
                    if ov > 0:
                        pairs.append((-ov, p.start, g.start, i, j))
        pairs.sort()
        used_p, used_g = set(), set()
        for _, _, _, i, j in pairs:
            if i in used_p or j in used_g:
                continue
            used_p.add(i)
            used_g.add(j)
            if ps[i].decision == gs[j].decision:
                tp_pairs.append((ps[i], gs[j]))
    tp = len(tp_pairs)
    fp, fn = n_pred - tp, n_gold - tp
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return E2eReport(mode, precision, recall, f1, tp, fp, fn, tp_pairs)


# ---------------------------------------------------------------------------
# Permutation importance


@dataclass
class ImportanceReport:
    feature_names: list
    mean_drop: list
    std_drop: list
    n_reps: int
    baseline: float
    drops: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {
            "n_reps": self.n_reps,
            "baseline": self.baseline,
            "features": [
                {"name": n, "mean_drop": m, "std_drop": s}
                for n, m, s in zip(self.feature_names, self.mean_drop, self.std_drop)
            ],
        }

    def ranking(self):
        return sorted(zip(self.feature_names, self.mean_drop), key=lambda t: -t[1])


def pair_accuracy(model, X, y):
    """Accuracy of the pair classifier at a 0.5 probability cut."""
    p = model.predict_proba(X)
    return float(np.mean((p >= 0.5) == (np.asarray(y) == 1)))


def make_ed_metric(groups, nil_threshold):
    """Metric scoring the top candidate of each mention group as a linking decision.

    A group is right when its top row is the positive row and passes the
    threshold, or when it has no positive row and nothing passes.
    """
    groups = np.asarray(groups)
    keys, inverse = np.unique(groups, return_inverse=True)
    members = [np.flatnonzero(inverse == g) for g in range(len(keys))]

    def metric(model, X, y):
        p = model.predict_proba(X)
        y = np.asarray(y)
        right = 0
        for rows in members:
            top = rows[np.argmax(p[rows])]
            if p[top] >= nil_threshold:
                right += y[top] == 1
            else:
                right += not (y[rows] == 1).any()
        return right / len(members)

    return metric


def permutation_importance(model, X, y, metric=pair_accuracy, n_reps=30, seed=0,
                           feature_names=None):
    """Mean and standard deviation of the metric drop when each column is shuffled.

    Every (feature, repetition) pair draws its permutation from its own
    generator seeded by ``(seed, feature, repetition)``.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    n, n_feat = X.shape
    names = list(feature_names or getattr(model, "feature_names", None) or range(n_feat))
    baseline = metric(model, X, y)
    drops = np.zeros((n_feat, n_reps))
    for j in range(n_feat):
        for r in range(n_reps):
            perm = np.random.default_rng([seed, j, r]).permutation(n)
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            drops[j, r] = baseline - metric(model, Xp, y)
    return ImportanceReport(
        feature_names=names,
        mean_drop=drops.mean(axis=1).tolist(),
        std_drop=drops.std(axis=1).tolist(),
        n_reps=n_reps,
        baseline=float(baseline),
        drops=drops,
    )


# ---------------------------------------------------------------------------
# Point-biserial correlation


@dataclass(frozen=True)
class CorrelationReport:
    r_pb: float
    p_value: float
    n: int

    def to_json(self):
        return {"r_pb": self.r_pb, "p_value": self.p_value, "n": self.n}


def t_two_sided_p(r, n):
    """Two-sided p-value of a correlation ``r`` under a t test with n - 2 dof."""
    df = n - 2
    if abs(r) >= 1.0:
        return 0.0
    t2 = r * r * df / (1.0 - r * r)
    return float(min(1.0, betainc(df / 2.0, 0.5, df / (df + t2))))


def point_biserial(scores, correct):
    """Point-biserial correlation between continuous scores and 0/1 outcomes."""
    x = np.asarray(scores, dtype=np.float64)
    c = np.asarray(correct)
    if x.shape != c.shape or x.ndim != 1:
        raise ValueError("scores and correct must be 1-D and of equal length")
    n = len(x)
    if n < 3:
        raise UndefinedCorrelationError("need at least three observations")
    ones = c.astype(bool)
    if not np.isin(c, (0, 1)).all():
        raise ValueError("correct must be binary")
    n1 = int(ones.sum())
    if n1 in (0, n):
        raise UndefinedCorrelationError("correct contains a single class")
    s = x.std()
    if s == 0 or not math.isfinite(s):
        raise UndefinedCorrelationError("scores have zero variance")
    p = n1 / n
    r = (x[ones].mean() - x[~ones].mean()) / s * math.sqrt(p * (1.0 - p))
    r = max(-1.0, min(1.0, r))
    return CorrelationReport(r_pb=float(r), p_value=t_two_sided_p(r, n), n=n)
