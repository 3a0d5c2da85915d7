"""Bounding-box backcalculation from predicted values and OCR words.

A predicted value is located by scanning runs of consecutive words (in page
reading order) inside a vertical band and keeping the window whose text is
most similar to the value. For line items the page is cut into one band per
item; the cut points come from a dynamic program over a downscaled y grid.

Because a window that fits inside a band also fits inside any larger band,
the band score can only grow as the band widens. Both the divide-and-conquer
DP and the bound tightening rely on this.
"""

from __future__ import annotations

import bisect
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Literal

from .core import BBox, Cell, LineItem, LineItemTable, OcrPage, normalize_text
from .errors import EmptyTable, InvalidBand
from .similarity import normalized_edit_similarity

Strategy = Literal["naive", "dc"]

DEFAULT_SCALE_N = 128


@dataclass(frozen=True)
class BackcalcResult:
    score: float
    key_bbox_map: Mapping[str, BBox | None] = field(default_factory=dict)
    key_scores: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "key_bbox_map", dict(self.key_bbox_map))
        object.__setattr__(self, "key_scores", dict(self.key_scores))


@dataclass(frozen=True)
class Partition:
    """Per-item vertical bands. ``boundaries`` are grid levels in ``0..scale_n``;
    item ``i`` owns grid cells ``boundaries[i] <= c < boundaries[i + 1]``."""

    boundaries: tuple[int, ...]
    per_item: tuple[BackcalcResult, ...]
    total_score: float
    scale_n: int

    def boundaries_px(self, page_height: float) -> list[float]:
        return [b * page_height / self.scale_n for b in self.boundaries]


class BandCounter:
    """Counts band evaluations (calls to the per-band matcher)."""

    def __init__(self) -> None:
        self.count = 0


KeyValues = tuple[tuple[str, str], ...]


def _key_values(kv: Mapping[str, str | None] | LineItem) -> KeyValues:
    if isinstance(kv, LineItem):
        kv = {k: c.value for k, c in kv.cells.items()}
    return tuple((k, v) for k, v in kv.items() if v is not None)


class _Matcher:
    """Window search over one page, memoized by (key values, in-band word set)."""

    def __init__(self, page: OcrPage):
        self.page = page
        self.words = page.words
        self._cache: dict[tuple[KeyValues, tuple[int, ...]], BackcalcResult] = {}

    def match(self, kv: KeyValues, in_band: tuple[int, ...]) -> BackcalcResult:
        cache_key = (kv, in_band)
        hit = self._cache.get(cache_key)
        if hit is None:
            hit = self._cache[cache_key] = self._match(kv, in_band)
        return hit

    def _runs(self, in_band: tuple[int, ...]) -> list[list[int]]:
        runs: list[list[int]] = []
        for idx in in_band:
            if runs and runs[-1][-1] == idx - 1:
                runs[-1].append(idx)
            else:
                runs.append([idx])
        return runs

    def _best_window(self, value: str, runs: list[list[int]]) -> tuple[float, list[int]]:
        best_sim, best_window = 0.0, []
        target = normalize_text(value)
        if not target:
            return best_sim, best_window
        for run in runs:
            for s in range(len(run)):
                raw: list[str] = []
                for e in range(s, len(run)):
                    raw.append(self.words[run[e]].text)
                    text = normalize_text(" ".join(raw))
                    n_words = e - s + 1
                    sim = normalized_edit_similarity(text, target)
                    better = sim > best_sim or (
                        sim == best_sim and sim > 0 and n_words < len(best_window)
                    )
                    if better:
                        best_sim, best_window = sim, run[s : e + 1]
                    # Past the value's length, longer windows only lower the bound.
                    if len(text) >= len(target):
                        bound = len(target) / len(text) if text else 0.0
                        if bound < best_sim or (bound == best_sim and n_words >= len(best_window)):
                            break
        return best_sim, best_window

    def _match(self, kv: KeyValues, in_band: tuple[int, ...]) -> BackcalcResult:
        runs = self._runs(in_band)
        score = 0.0
        boxes: dict[str, BBox | None] = {}
        key_scores: dict[str, float] = {}
        for key, value in kv:
            sim, window = self._best_window(value, runs)
            if sim > 0:
                boxes[key] = BBox.union(self.words[i].bbox for i in window)
                key_scores[key] = sim
            else:
                boxes[key] = None
                key_scores[key] = 0.0
            score += key_scores[key]
        return BackcalcResult(score, boxes, key_scores)


def backcalc_kie(
    kv: Mapping[str, str | None] | LineItem,
    page: OcrPage,
    y_lo: float | None = None,
    y_hi: float | None = None,
) -> BackcalcResult:
    """Locate each value among words whose vertical center lies in [y_lo, y_hi].

    Omitting the bounds searches the whole page.
    """
    y_lo = 0.0 if y_lo is None else y_lo
    y_hi = float(page.height) if y_hi is None else y_hi
    if y_lo > y_hi:
        raise InvalidBand(f"y_lo={y_lo} is above y_hi={y_hi}")
    in_band = tuple(i for i, w in enumerate(page.words) if y_lo <= w.bbox.center_y <= y_hi)
    return _Matcher(page).match(_key_values(kv), in_band)


class _GridBands:
    """Band scores on a ``scale_n`` grid for a sequence of line items."""

    def __init__(
        self,
        items: Sequence[KeyValues],
        page: OcrPage,
        scale_n: int,
        counter: BandCounter | None = None,
    ):
        self.items = items
        self.scale_n = scale_n
        self.counter = counter
        self.matcher = _Matcher(page)
        cells = [
            min(math.floor(w.bbox.center_y * scale_n / page.height), scale_n - 1) for w in page.words
        ]
        self.occupied = sorted(set(cells))
        self.by_cell: dict[int, list[int]] = {}
        for idx, c in enumerate(cells):
            self.by_cell.setdefault(c, []).append(idx)
        self._bands: dict[tuple[int, int], tuple[int, ...]] = {}

    def _in_band(self, a: int, b: int) -> tuple[int, ...]:
        lo = bisect.bisect_left(self.occupied, a)
        hi = bisect.bisect_left(self.occupied, b)
        key = (lo, hi)
        words = self._bands.get(key)
        if words is None:
            words = self._bands[key] = tuple(
                sorted(i for c in self.occupied[lo:hi] for i in self.by_cell[c])
            )
        return words

    def result(self, item: int, a: int, b: int) -> BackcalcResult:
        if self.counter is not None:
            self.counter.count += 1
        return self.matcher.match(self.items[item], self._in_band(a, b))

    def score(self, item: int, a: int, b: int) -> float:
        return self.result(item, a, b).score


def _rows_to_items(rows: LineItemTable | Iterable[Mapping[str, str | None] | LineItem]) -> list[KeyValues]:
    if isinstance(rows, LineItemTable):
        rows = rows.rows
    return [_key_values(r) for r in rows]


def _layer_naive(grid: _GridBands, k: int, prev: list[float], targets: Sequence[int]):
    cur, arg = {}, {}
    for b in targets:
        best, best_a = -math.inf, 0
        for a in range(b + 1):
            v = prev[a] + grid.score(k, a, b)
            if v > best:
                best, best_a = v, a
        cur[b], arg[b] = best, best_a
    return cur, arg


def _layer_dc(grid: _GridBands, k: int, prev: list[float], n: int):
    cur: dict[int, float] = {}
    arg: dict[int, int] = {}

    # Iterative divide and conquer: (lo, hi, opt_lo, opt_hi).
    stack = [(0, n, 0, n)]
    while stack:
        lo, hi, opt_lo, opt_hi = stack.pop()
        if lo > hi:
            continue
        mid = (lo + hi) // 2
        best, best_a = -math.inf, opt_lo
        for a in range(opt_lo, min(mid, opt_hi) + 1):
            v = prev[a] + grid.score(k, a, mid)
            if v > best:
                best, best_a = v, a
        cur[mid], arg[mid] = best, best_a
        stack.append((mid + 1, hi, best_a, opt_hi))
        stack.append((lo, mid - 1, opt_lo, best_a))
    return cur, arg


def partition_line_items(
    rows: LineItemTable | Iterable[Mapping[str, str | None] | LineItem],
    page: OcrPage,
    scale_n: int = DEFAULT_SCALE_N,
    strategy: Strategy = "dc",
    counter: BandCounter | None = None,
) -> Partition:
    """Cut the page into one vertical band per line item, top to bottom,
    maximizing the summed backcalculation score.

    Boundaries live on a grid of ``scale_n`` levels. ``naive`` evaluates every
    split (O(M N^2) bands); ``dc`` uses divide and conquer over monotone split
    points (O(M N log N) bands). Ties pick the smallest split.
    """
    items = _rows_to_items(rows)
    if not items:
        raise EmptyTable("cannot partition a page for zero line items")
    if scale_n < 2:
        raise ValueError(f"scale_n must be at least 2, got {scale_n}")
    if strategy not in ("naive", "dc"):
        raise ValueError(f"unknown strategy {strategy!r}")

    n, m = scale_n, len(items)
    grid = _GridBands(items, page, n, counter)

    if m == 1:
        args: list[dict[int, int]] = []
    else:
        prev = [grid.score(0, 0, b) for b in range(n + 1)]
        args = []
        for k in range(1, m - 1):
            if strategy == "naive":
                cur, arg = _layer_naive(grid, k, prev, range(n + 1))
            else:
                cur, arg = _layer_dc(grid, k, prev, n)
            prev = [cur[b] for b in range(n + 1)]
            args.append(arg)
        # The last item must end at the bottom of the page.
        _, arg = _layer_naive(grid, m - 1, prev, [n])
        args.append(arg)

    bounds = [n]
    for arg in reversed(args):
        bounds.append(arg[bounds[-1]])
    bounds.append(0)
    bounds.reverse()
    return _build(grid, bounds)


def _build(grid: _GridBands, bounds: Sequence[int]) -> Partition:
    per_item = tuple(grid.matcher.match(grid.items[k], grid._in_band(bounds[k], bounds[k + 1]))
                     for k in range(len(grid.items)))
    return Partition(tuple(bounds), per_item, sum(r.score for r in per_item), grid.scale_n)


def tighten_bounds(
    partition: Partition,
    rows: LineItemTable | Iterable[Mapping[str, str | None] | LineItem],
    page: OcrPage,
    counter: BandCounter | None = None,
) -> Partition:
    """Raise the top bound of the first item and lower the bottom bound of the
    last item as far as possible without changing any per-key score."""
    items = _rows_to_items(rows)
    if len(items) != len(partition.per_item):
        raise ValueError("partition and rows disagree on the number of line items")
    grid = _GridBands(items, page, partition.scale_n, counter)
    bounds = list(partition.boundaries)
    m = len(items)

    def keeps(k: int, a: int, b: int, ref: Mapping[str, float]) -> bool:
        return grid.result(k, a, b).key_scores == ref

    # Largest lower bound for the first item.
    ref = grid.result(0, bounds[0], bounds[1]).key_scores
    lo, hi = bounds[0], bounds[1]
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if keeps(0, mid, bounds[1], ref):
            lo = mid
        else:
            hi = mid - 1
    bounds[0] = lo

    # Smallest upper bound for the last item.
    ref = grid.result(m - 1, bounds[m - 1], bounds[m]).key_scores
    lo, hi = bounds[m - 1], bounds[m]
    while lo < hi:
        mid = (lo + hi) // 2
        if keeps(m - 1, bounds[m - 1], mid, ref):
            hi = mid
        else:
            lo = mid + 1
    bounds[m] = lo

    return _build(grid, bounds)


def apply_partition(table: LineItemTable, partition: Partition) -> LineItemTable:
    """Return ``table`` with each cell's bbox replaced by the backcalculated one."""
    rows = []
    for row, result in zip(table.rows, partition.per_item):
        cells = {}
        for key, cell in row.cells.items():
            bbox = result.key_bbox_map.get(key, cell.bbox) if cell.value is not None else cell.bbox
            cells[key] = Cell(cell.value, bbox)
        rows.append(LineItem(cells))
    return LineItemTable(tuple(rows))
