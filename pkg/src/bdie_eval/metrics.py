"""GLIRM precision/recall/F1/F-beta, KIE F1, Information Coverage Score and
report aggregation/emitters.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

from .alignment import align_rows
from .core import BBox, KieExtraction, LineItemTable
from .errors import InvalidBeta, MissingBBox, MissingValue
from .similarity import ExactMatch, Facet, SimilarityMeasure, cell_count, eval_similarity

Normalization = Literal["cells", "rows"]
Orientation = Literal["conventional", "swapped"]

ICS_VERSION = "ics_v1"


@dataclass(frozen=True)
class GlirmReport:
    precision: float
    recall: float
    f1: float
    fbeta: float
    beta: float
    matched_score: float
    pred_cells: int
    truth_cells: int
    normalization: Normalization = "cells"
    orientation: Orientation = "conventional"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class KieReport:
    precision: float
    recall: float
    f1: float
    correct: Mapping[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "correct": dict(sorted(self.correct.items())),
        }


def _resolve_facet(measure: SimilarityMeasure, facet: Facet | None) -> Facet:
    if facet is None:
        return measure.facet
    if facet != measure.facet:
        raise ValueError(f"measure {measure.name!r} scores {measure.facet}, not {facet}")
    return facet


def glirm(
    measure: SimilarityMeasure,
    pred: LineItemTable,
    truth: LineItemTable,
    beta: float = 1.0,
    facet: Facet | None = None,
    normalization: Normalization = "cells",
    orientation: Orientation = "conventional",
) -> GlirmReport:
    """Score a predicted line-item table against the ground truth.

    The matched score ``S`` is the total of the order-preserving alignment.
    Denominators are facet cell counts (``cells``) or row counts (``rows``).
    Conventional orientation divides precision by the predicted count and
    recall by the truth count, so F-beta tends to recall as beta grows;
    ``orientation="swapped"`` swaps both denominators. F1 is the same either way.

    Row normalization only stays within [0, 1] for single-column tables.
    """
    if isinstance(beta, bool) or not isinstance(beta, (int, float)) or not beta > 0 or math.isinf(beta):
        raise InvalidBeta(f"beta must be a positive finite number, got {beta!r}")
    facet = _resolve_facet(measure, facet)
    if normalization == "cells":
        n_pred, n_truth = cell_count(pred, facet), cell_count(truth, facet)
    elif normalization == "rows":
        n_pred, n_truth = len(pred.rows), len(truth.rows)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if orientation not in ("conventional", "swapped"):
        raise ValueError(f"unknown orientation {orientation!r}")

    def report(p: float, r: float, f1: float, fb: float, s: float) -> GlirmReport:
        return GlirmReport(p, r, f1, fb, float(beta), s, n_pred, n_truth, normalization, orientation)

    if n_pred == 0 and n_truth == 0:
        return report(1.0, 1.0, 1.0, 1.0, 0.0)
    if n_pred == 0 or n_truth == 0:
        return report(0.0, 0.0, 0.0, 0.0, 0.0)

    s = align_rows(measure, pred, truth).total
    b2 = beta * beta
    if orientation == "conventional":
        precision, recall = s / n_pred, s / n_truth
        fbeta = (1 + b2) * s / (b2 * n_truth + n_pred)
    else:
        precision, recall = s / n_truth, s / n_pred
        fbeta = (1 + b2) * s / (b2 * n_pred + n_truth)
    f1 = 2 * s / (n_pred + n_truth)
    return report(precision, recall, f1, fbeta, s)


def kie_f1(
    pred: KieExtraction,
    truth: KieExtraction,
    measure: SimilarityMeasure | None = None,
    threshold: float = 1.0,
) -> KieReport:
    """Field-level F1: a predicted field counts when its key is in the truth and
    its similarity reaches ``threshold``."""
    if measure is None:
        measure = ExactMatch()
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    correct: dict[str, bool] = {}
    for key, cell in pred.fields.items():
        ok = False
        if key in truth.fields:
            try:
                ok = eval_similarity(measure, cell, truth.fields[key]) >= threshold
            except (MissingValue, MissingBBox):
                ok = False
        correct[key] = ok
    for key in truth.fields.keys() - pred.fields.keys():
        correct[key] = False

    n_pred, n_truth = len(pred.fields), len(truth.fields)
    if n_pred == 0 and n_truth == 0:
        return KieReport(1.0, 1.0, 1.0, correct)
    tp = sum(correct[k] for k in pred.fields)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_truth if n_truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return KieReport(precision, recall, f1, correct)


def ics(pred_region: BBox, truth_region: BBox) -> float:
    """Fraction of the truth region covered by the predicted region."""
    if truth_region.area <= 0:
        return 0.0
    return min(1.0, pred_region.intersection_area(truth_region) / truth_region.area)


def table_region(table: LineItemTable) -> BBox | None:
    """Union of all cell boxes of a table, or None when no cell is located."""
    return BBox.union(c.bbox for row in table.rows for c in row.cells.values() if c.bbox is not None)


def table_ics(pred: LineItemTable, truth: LineItemTable) -> float | None:
    """Table-level ICS between the regions spanned by both tables."""
    t = table_region(truth)
    if t is None:
        return None
    p = table_region(pred)
    return 0.0 if p is None else ics(p, t)


def aggregate(values: Iterable[float]) -> dict[str, float | int | None]:
    vals = list(values)
    if not vals:
        return {"count": 0, "mean": None, "median": None}
    return {"count": len(vals), "mean": math.fsum(vals) / len(vals), "median": statistics.median(vals)}


def to_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def to_csv(records: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({c: ("" if rec.get(c) is None else rec.get(c)) for c in columns})
    return buf.getvalue()


def format_ablation_table(
    runs: Sequence[tuple[Mapping[str, bool], float]],
    flag_names: Sequence[str] | None = None,
    score_label: str = "F1 Score",
    sort: bool = True,
) -> str:
    """Render configuration flags against a score as a fixed-width text table.

    Scores are fractions and print as percentages with two decimals.
    """
    if flag_names is None:
        flag_names = list(dict.fromkeys(k for flags, _ in runs for k in flags))
    rows = list(runs)
    if sort:
        rows.sort(key=lambda r: -r[1])
    header = [*flag_names, score_label]
    body = [
        ["✓" if flags.get(name, False) else "✗" for name in flag_names] + [f"{score * 100:.2f}%"]
        for flags, score in rows
    ]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]

    def line(cells: Sequence[str]) -> str:
        parts = [c.center(w) for c, w in zip(cells[:-1], widths[:-1])]
        parts.append(cells[-1].rjust(widths[-1]))
        return " | ".join(parts).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), rule, *(line(r) for r in body)]) + "\n"
