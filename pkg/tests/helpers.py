"""Builders, random generators and brute-force oracles shared by the tests."""

from __future__ import annotations

import itertools
import random
import string

import numpy as np

from bdie_eval.core import BBox, Cell, KieExtraction, LineItem, LineItemTable, OcrPage, OcrWord


def row(**values: str) -> LineItem:
    return LineItem({k: Cell(v) for k, v in values.items()})


def table(*rows: LineItem) -> LineItemTable:
    return LineItemTable(tuple(rows))


def kie(**values: str) -> KieExtraction:
    return KieExtraction({k: Cell(v) for k, v in values.items()})


def random_table(rng: random.Random, max_rows: int = 5, max_cols: int = 3, vocab: str = "abc") -> LineItemTable:
    keys = [f"k{i}" for i in range(max_cols)]
    rows = []
    for _ in range(rng.randint(0, max_rows)):
        n_cols = rng.randint(1, max_cols)
        cols = rng.sample(keys, n_cols)
        rows.append(LineItem({k: Cell(rng.choice(vocab)) for k in cols}))
    return LineItemTable(tuple(rows))


def shuffled_columns(t: LineItemTable, rng: random.Random) -> LineItemTable:
    out = []
    for r in t.rows:
        items = list(r.cells.items())
        rng.shuffle(items)
        out.append(LineItem(dict(items)))
    return LineItemTable(tuple(out))


# Oracles


def brute_force_alignment_total(scores: np.ndarray) -> float:
    """Max over all equal-length increasing index subsequences of the summed scores."""
    n, m = scores.shape
    best = 0.0
    for k in range(1, min(n, m) + 1):
        for ps in itertools.combinations(range(n), k):
            for ts in itertools.combinations(range(m), k):
                best = max(best, sum(scores[p, t] for p, t in zip(ps, ts)))
    return best


def brute_force_matching_total(scores: np.ndarray) -> float:
    """Max over all partial injective row assignments, order ignored."""
    n, m = scores.shape
    if n == 0 or m == 0:
        return 0.0
    if n > m:
        scores = scores.T
        n, m = m, n
    best = 0.0
    for perm in itertools.permutations(range(m), n):
        best = max(best, sum(scores[i, perm[i]] for i in range(n)))
    return best


def recursive_edit_distance(a: str, b: str) -> int:
    """The textbook recursion, no memoization. Only for very short strings."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        recursive_edit_distance(a[:-1], b) + 1,
        recursive_edit_distance(a, b[:-1]) + 1,
        recursive_edit_distance(a[:-1], b[:-1]) + (a[-1] != b[-1]),
    )


def all_strings(alphabet: str, max_len: int) -> list[str]:
    """All strings up to ``max_len`` ordered by length then lexicographically."""
    return ["".join(p) for n in range(max_len + 1) for p in itertools.product(alphabet, repeat=n)]


def edit_distance_table(strings: list[str]) -> np.ndarray:
    """Edit distance between every pair of ``strings``, evaluating the recursion
    d(a, b) = min(d(a', b) + 1, d(a, b') + 1, d(a', b') + [last(a) != last(b)])
    with memoization over the prefix-closed list (x' is x minus its last
    character). Vectorized one length block at a time."""
    index = {s: i for i, s in enumerate(strings)}
    n = len(strings)
    lengths = np.array([len(s) for s in strings])
    parent = np.array([index[s[:-1]] if s else -1 for s in strings])
    last = np.array([ord(s[-1]) if s else -1 for s in strings])
    d = np.zeros((n, n), dtype=np.int16)
    by_len = [np.flatnonzero(lengths == k) for k in range(lengths.max() + 1)]
    for i, rows in enumerate(by_len):
        for j, cols in enumerate(by_len):
            if i == 0:
                d[np.ix_(rows, cols)] = j
                continue
            if j == 0:
                d[np.ix_(rows, cols)] = i
                continue
            pr, pc = parent[rows], parent[cols]
            delete = d[np.ix_(pr, cols)] + 1
            insert = d[np.ix_(rows, pc)] + 1
            subst = d[np.ix_(pr, pc)] + (last[rows][:, None] != last[cols][None, :])
            d[np.ix_(rows, cols)] = np.minimum(np.minimum(delete, insert), subst)
    return d


def pixel_page(width: int, height: int, words: list[tuple[str, tuple[float, float, float, float]]]) -> OcrPage:
    """Page with words in the given (already reading-ordered) sequence."""
    return OcrPage(width, height, tuple(OcrWord(t, BBox(*b), i) for i, (t, b) in enumerate(words)))


_TOKEN_CHARS = string.ascii_uppercase + string.digits


def unique_tokens(rng: random.Random, n: int, length: int = 6) -> list[str]:
    seen: set[str] = set()
    out = []
    while len(out) < n:
        tok = "".join(rng.choice(_TOKEN_CHARS) for _ in range(length))
        if tok not in seen:
            seen.add(tok)
            out.append(tok)
    return out


def synthetic_invoice(
    rng: random.Random,
    n_items: int,
    n_cols: int = 3,
    width: int = 800,
    height: int = 1000,
    header_fields: int = 3,
    noise_words: int = 4,
    words_per_value: tuple[int, int] = (1, 2),
):
    """Synthetic page: header key-value lines, then one line per item.

    Every value is made of tokens used nowhere else on the page, so each value
    appears verbatim exactly once. Returns ``(page, kv, items, truth_boxes)``
    where ``truth_boxes`` maps ("kie", key) / (item, key) to the union box of
    the value's words.
    """
    n_values = header_fields + n_items * n_cols
    tokens = iter(unique_tokens(rng, n_values * words_per_value[1] + noise_words, length=rng.randint(4, 8)))
    line_h = 20
    gap = line_h + rng.randint(4, 12)
    placed: list[tuple[str, tuple[float, float, float, float]]] = []
    truth: dict[tuple, BBox] = {}
    y = rng.randint(10, 40)
    assert 420 + 90 * noise_words <= width

    def place_value(x: float, y: float, key: tuple) -> tuple[str, float]:
        n_words = rng.randint(*words_per_value)
        words = [next(tokens) for _ in range(n_words)]
        boxes = []
        for w in words:
            w_px = 9 * len(w)
            box = (x, y, x + w_px, y + line_h)
            placed.append((w, box))
            boxes.append(BBox(*box))
            x += w_px + 9
        truth[key] = BBox.union(boxes)
        return " ".join(words), x

    kv = {}
    for f in range(header_fields):
        kv[f"field{f}"], _ = place_value(20, y, ("kie", f"field{f}"))
        y += gap
    for k in range(noise_words):
        placed.append((next(tokens), (420 + 90 * k, y, 500 + 90 * k, y + line_h)))
    y += gap
    items = []
    for i in range(n_items):
        x = 20.0
        values = {}
        for c in range(n_cols):
            values[f"col{c}"], x = place_value(x, y, (i, f"col{c}"))
            x += 30
        items.append(values)
        y += gap * rng.randint(1, 2)
    assert y < height, "synthetic page overflow"
    return pixel_page(width, height, placed), kv, items, truth


def levenshtein(a: str, b: str) -> int:
    """Two-row Wagner-Fischer table."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def oracle_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return 1.0 if longest == 0 else 1.0 - levenshtein(a, b) / longest


def brute_key_scores(kv: dict[str, str], page: OcrPage, in_band: set[int]) -> dict[str, float]:
    """Per key, the best similarity of any reading-order window lying in the band."""
    from bdie_eval.core import normalize_text

    out = {}
    n = len(page.words)
    for key, value in kv.items():
        target = normalize_text(value)
        best = 0.0
        for s in range(n):
            for e in range(s, n):
                if s not in in_band or e not in in_band:
                    break
                text = normalize_text(" ".join(w.text for w in page.words[s : e + 1]))
                best = max(best, oracle_similarity(text, target) if target else 0.0)
        out[key] = best
    return out


def brute_band_score(kv: dict[str, str], page: OcrPage, in_band: set[int]) -> float:
    return sum(brute_key_scores(kv, page, in_band).values())


def grid_band(page: OcrPage, scale_n: int, a: int, b: int) -> set[int]:
    """Word indices whose center falls in grid cells a..b-1."""
    out = set()
    for i, w in enumerate(page.words):
        cy = (w.bbox.y0 + w.bbox.y1) / 2
        cell = min(int(cy * scale_n // page.height), scale_n - 1)
        if a <= cell < b:
            out.add(i)
    return out


def write_corpus(root, n_docs: int, seed: int = 0) -> str:
    """Write ``n_docs`` random (pred, gt) LIR pairs plus a manifest; return the manifest path."""
    import json
    from pathlib import Path

    from bdie_eval.core import serialize_extraction

    rng = random.Random(seed)
    root = Path(root)
    (root / "docs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_docs):
        gt = random_table(rng, max_rows=8, max_cols=4, vocab=["apple", "apples", "pear", "10.00", "1O.00", "qty 3"])
        rows = list(gt.rows)
        if rows and rng.random() < 0.5:
            j = rng.randrange(len(rows))
            rows[j], rows[-1] = rows[-1], rows[j]
        if rng.random() < 0.3:
            rows.append(LineItem({"k0": Cell("junk")}))
        doc_id = f"doc{i:03d}"
        (root / "docs" / f"{doc_id}.gt.json").write_text(serialize_extraction(gt))
        (root / "docs" / f"{doc_id}.pred.json").write_text(serialize_extraction(LineItemTable(tuple(rows))))
        entries.append({"id": doc_id, "pred": f"docs/{doc_id}.pred.json", "gt": f"docs/{doc_id}.gt.json"})
    rng.shuffle(entries)
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"documents": entries}))
    return str(manifest)
