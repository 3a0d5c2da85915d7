"""Order-preserving row alignment between predicted and ground-truth tables.

``align_rows`` finds equal-length row subsequences of both tables maximizing
the summed row score, with a weighted-LCS style dynamic program. Matching is
monotone in both tables, so a predicted row that swaps places with another
cannot be credited twice.

``bipartite_match`` ignores row order and is kept as a contrast: it is how
bipartite-matching metrics pair rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import LineItemTable
from .similarity import SimilarityMeasure, row_score


@dataclass(frozen=True)
class AlignmentResult:
    pairs: tuple[tuple[int, int], ...] = ()
    pair_scores: tuple[float, ...] = ()
    total: float = field(default=0.0)

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "pair_scores": list(self.pair_scores),
            "total": self.total,
        }


def score_matrix(measure: SimilarityMeasure, pred: LineItemTable, truth: LineItemTable) -> np.ndarray:
    """Row scores for every (pred row, truth row) pair, each computed once."""
    scores = np.zeros((len(pred.rows), len(truth.rows)))
    for i, row_p in enumerate(pred.rows):
        for j, row_t in enumerate(truth.rows):
            scores[i, j] = row_score(measure, row_p, row_t)
    return scores


def _tolerance(x: float) -> float:
    return 1e-9 * (1.0 + abs(x))


def align_rows(
    measure: SimilarityMeasure,
    pred: LineItemTable,
    truth: LineItemTable,
    scores: np.ndarray | None = None,
) -> AlignmentResult:
    """Maximum-score order-preserving row matching.

    Among optimal alignments the lexicographically smallest pair sequence is
    returned. Zero-score pairs are dropped; they carry no credit.
    """
    if scores is None:
        scores = score_matrix(measure, pred, truth)
    n, m = scores.shape
    if n == 0 or m == 0:
        return AlignmentResult()

    # best[i][j]: optimum over pred rows i.. and truth rows j..
    best = np.zeros((n + 1, m + 1))
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            best[i, j] = max(best[i + 1, j], best[i, j + 1], best[i + 1, j + 1] + scores[i, j])

    pairs: list[tuple[int, int]] = []
    i = j = 0
    while i < n and j < m and best[i, j] > 0:
        target = best[i, j] - _tolerance(best[i, j])
        found = None
        for a in range(i, n):
            for b in range(j, m):
                if scores[a, b] > 0 and scores[a, b] + best[a + 1, b + 1] >= target:
                    found = (a, b)
                    break
            if found:
                break
        if found is None:  # pragma: no cover - best[i, j] > 0 implies a pair exists
            break
        pairs.append(found)
        i, j = found[0] + 1, found[1] + 1

    pair_scores = tuple(float(scores[a, b]) for a, b in pairs)
    return AlignmentResult(tuple(pairs), pair_scores, sum(pair_scores))


def bipartite_match(
    measure: SimilarityMeasure,
    pred: LineItemTable,
    truth: LineItemTable,
    scores: np.ndarray | None = None,
) -> AlignmentResult:
    """Maximum-weight bipartite matching of rows, ignoring order."""
    if scores is None:
        scores = score_matrix(measure, pred, truth)
    if scores.size == 0:
        return AlignmentResult()
    rows, cols = linear_sum_assignment(scores, maximize=True)
    pairs = tuple((int(a), int(b)) for a, b in zip(rows, cols) if scores[a, b] > 0)
    pair_scores = tuple(float(scores[a, b]) for a, b in pairs)
    return AlignmentResult(pairs, pair_scores, sum(pair_scores))
