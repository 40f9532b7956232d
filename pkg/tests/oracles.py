"""Independent reference computations shared by unit and acceptance tests."""

import math

import numpy as np


def matrix_levenshtein(a, b):
    """Full (len(a)+1) x (len(b)+1) edit-distance table, filled row by row."""
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    table[:, 0] = np.arange(len(a) + 1)
    table[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i, j] = min(
                table[i - 1, j] + 1,
                table[i, j - 1] + 1,
                table[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
            )
    return int(table[-1, -1])


def naive_knn(vectors, ids, q, k):
    """Sort every (distance, id) pair and keep the first k."""
    q = np.asarray(q, dtype=np.float64)
    d = [(float(np.sqrt(((v.astype(np.float64) - q) ** 2).sum())), int(i)) for v, i in zip(vectors, ids)]
    d.sort()
    return [(i, dist) for dist, i in d[:k]]


# Four rows, one feature: x = 1..4, y = 0,1,1,1; learning rate 0.5, depth 1.
HAND_X = np.array([[1.0], [2.0], [3.0], [4.0]])
HAND_Y = np.array([0, 1, 1, 1])
HAND_LR = 0.5


def hand_newton_oracle():
    """Expected (base, [(threshold, left, right), ...]) for two boosting rounds.

    Round 1 starts at the log-odds of 3/4, so every p is 3/4 and the residuals
    are (-3/4, 1/4, 1/4, 1/4) with hessian 3/16. The x <= 1.5 split gives the
    largest variance reduction; its left leaf is -4 (the clamp) and its right
    leaf 4/3. Round 2 sees the same best split. Row 0 then has margin
    log 3 - 2, which gives leaf -1/(1 - p0) = -(1 + 3 e^-2); rows 1-3 have
    margin log 3 + 2/3, which gives leaf 1/p = 1 + e^(-2/3) / 3.
    """
    base = math.log(3.0)
    return base, [
        (1.5, -4.0, 4.0 / 3.0),
        (1.5, -(1.0 + 3.0 * math.exp(-2.0)), 1.0 + math.exp(-2.0 / 3.0) / 3.0),
    ]


def separable_1d(n=200, seed=0):
    """x spread over [0, 10], y = 1 iff x > 5."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 10.0, n))
    return x[:, None], (x > 5.0).astype(int)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.corrcoef(x, y)[0, 1])
