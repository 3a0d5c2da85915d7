"""Cell similarity measures and the row score built on them.

Every measure maps a (predicted, truth) cell pair into [0, 1] and works on a
single facet: ``content`` (cell text) or ``location`` (cell bbox). Scoring one
facet at a time keeps the two subtasks isolated.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from rapidfuzz.distance import Levenshtein
from rapidfuzz.process import cdist

from .core import Cell, KieExtraction, LineItem, LineItemTable, normalize_text
from .errors import MissingBBox, MissingValue

Facet = Literal["content", "location"]


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    return Levenshtein.distance(a, b)


def normalized_edit_similarity(a: str, b: str) -> float:
    """``1 - d(a, b) / max(|a|, |b|)``; two empty strings are identical."""
    return Levenshtein.normalized_similarity(a, b)


def normalized_edit_matrix(a: Sequence[str], b: Sequence[str]) -> np.ndarray:
    """:func:`normalized_edit_similarity` for every pair in ``a x b``."""
    return cdist(a, b, scorer=Levenshtein.normalized_similarity, dtype=np.float64)


class SimilarityMeasure:
    """Base class for cell similarity measures.

    Subclasses set ``name`` and ``facet`` and implement :meth:`compare`, which
    receives the facet values (strings or boxes) rather than cells.
    """

    name: str = ""
    facet: Facet = "content"

    def compare(self, pred, truth) -> float:
        raise NotImplementedError

    def __call__(self, c_p: Cell, c_t: Cell) -> float:
        return eval_similarity(self, c_p, c_t)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


@dataclass(frozen=True, repr=False)
class ExactMatch(SimilarityMeasure):
    normalize: bool = True
    name = "exact"
    facet = "content"

    def compare(self, pred: str, truth: str) -> float:
        if self.normalize:
            pred, truth = normalize_text(pred), normalize_text(truth)
        return 1.0 if pred == truth else 0.0


@dataclass(frozen=True, repr=False)
class NormalizedEdit(SimilarityMeasure):
    normalize: bool = True
    name = "edit"
    facet = "content"

    def compare(self, pred: str, truth: str) -> float:
        if self.normalize:
            pred, truth = normalize_text(pred), normalize_text(truth)
        return normalized_edit_similarity(pred, truth)


@dataclass(frozen=True, repr=False)
class BBoxIoU(SimilarityMeasure):
    name = "iou"
    facet = "location"

    def compare(self, pred, truth) -> float:
        return pred.iou(truth)


_REGISTRY: dict[str, Callable[..., SimilarityMeasure]] = {
    "exact": ExactMatch,
    "edit": NormalizedEdit,
    "iou": BBoxIoU,
}


def register_measure(name: str, factory: Callable[..., SimilarityMeasure]) -> None:
    _REGISTRY[name] = factory


def get_measure(name: str, normalize: bool = True) -> SimilarityMeasure:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown measure {name!r}; choose from {sorted(_REGISTRY)}") from None
    if factory in (ExactMatch, NormalizedEdit):
        return factory(normalize=normalize)
    return factory()


def eval_similarity(measure: SimilarityMeasure, c_p: Cell, c_t: Cell) -> float:
    if measure.facet == "content":
        if c_p.value is None or c_t.value is None:
            raise MissingValue(f"{measure.name} needs a value on both cells")
        score = measure.compare(c_p.value, c_t.value)
    else:
        if c_p.bbox is None or c_t.bbox is None:
            raise MissingBBox(f"{measure.name} needs a bbox on both cells")
        score = measure.compare(c_p.bbox, c_t.bbox)
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"measure {measure.name!r} returned {score}, outside [0, 1]")
    return score


def _safe_similarity(measure: SimilarityMeasure, c_p: Cell, c_t: Cell) -> float:
    try:
        return eval_similarity(measure, c_p, c_t)
    except (MissingValue, MissingBBox):
        return 0.0


def row_score(measure: SimilarityMeasure, row_p: LineItem, row_t: LineItem) -> float:
    """Sum of cell similarities over the column keys both rows share.

    Keys are visited in sorted order so the float sum does not depend on how
    either row happens to order its columns.
    """
    shared = sorted(row_p.cells.keys() & row_t.cells.keys())
    total = 0.0
    for key in shared:
        total += _safe_similarity(measure, row_p.cells[key], row_t.cells[key])
    return total


def cell_count(x: LineItemTable | KieExtraction, facet: Facet) -> int:
    if isinstance(x, KieExtraction):
        return sum(c.has(facet) for c in x.fields.values())
    return sum(c.has(facet) for row in x.rows for c in row.cells.values())
