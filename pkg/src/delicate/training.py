"""Re-ranker training and NIL-threshold tuning on top of the retrieval stack."""

import numpy as np

from delicate.common import NIL
from delicate.evaluation import ed_accuracy
from delicate.features import featurize_block
from delicate.gbt import TrainingRow, fit, rows_to_arrays, sample_training_pairs
from delicate.linker import decide, rerank, retrieve

DEFAULT_NIL_GRID = tuple(np.round(np.linspace(0.0, 1.0, 21), 2).tolist())


def training_blocks(mentions, config):
    """``(mention, candidates, gold)`` for every mention with a gold label."""
    blocks = []
    for m in mentions:
        if m.gold is None:
            continue
        candidates, _ = retrieve(m, config)
        blocks.append((m, candidates, m.gold))
    return blocks


def labeled_rows(mentions, config):
    """Every retrieved candidate of every gold-labelled mention, labelled 1 iff it is the gold entity."""
    rows = []
    for m, candidates, gold in training_blocks(mentions, config):
        if not candidates:
            continue
        for c, fv in zip(candidates, featurize_block(m, candidates)):
            rows.append(TrainingRow(m.key, c.entity_id, fv, int(gold != NIL and c.qid == gold)))
    return rows


def build_training_rows(mentions, config, c_neg_size, seed=0):
    return sample_training_pairs(training_blocks(mentions, config), c_neg_size, seed)


def train_reranker(mentions, config, hp, seed=0):
    """Sample labelled pairs from retrieval blocks and fit the classifier.

    ``config.block_size`` decides how many candidates each block holds.
    Returns ``(model, rows)``.
    """
    rows = build_training_rows(mentions, config, hp.c_neg_size, seed)
    X, y = rows_to_arrays(rows)
    return fit(X, y, hp, seed=seed), rows


def tune_nil_threshold(mentions, config, grid=DEFAULT_NIL_GRID):
    """Threshold maximizing ED accuracy on ``mentions``.

    Ties resolve to the middle of the best-scoring thresholds.
    """
    scored = {}
    for m in mentions:
        candidates, _ = retrieve(m, config)
        scored[m.key] = rerank(m, candidates, config.model) if candidates else []
    results = []
    for t in grid:
        decisions = {k: decide(s, t)[0] for k, s in scored.items()}
        results.append((ed_accuracy(decisions, mentions).micro_accuracy, t))
    best = max(acc for acc, _ in results)
    tied = [t for acc, t in results if acc == best]
    return tied[len(tied) // 2], results
