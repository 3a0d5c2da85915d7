"""Command-line front end.

Each task is a subcommand. Numeric knobs can come from a JSON config file
(``--config`` or the ``BDIE_EVAL_CONFIG`` environment variable); flags given
on the command line override it. Exit codes: 0 success, 1 lint findings,
2 input error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

from .alignment import align_rows
from .backcalc import apply_partition, backcalc_kie, partition_line_items, tighten_bounds
from .core import (
    Cell,
    KieExtraction,
    LineItemTable,
    extraction_to_dict,
    load_extraction,
    load_ocr_document,
)
from .errors import InputError
from .metrics import ICS_VERSION, aggregate, format_ablation_table, glirm, kie_f1, table_ics, to_csv, to_json
from .promptkit import build_layout_prompt, lint_schema
from .retrieval import RetrievalIndex, build_index, load_image, retrieve_nearest, wavelet_hash
from .similarity import get_measure

log = logging.getLogger(__name__)

CONFIG_ENV = "BDIE_EVAL_CONFIG"

EXIT_OK, EXIT_FINDINGS, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

TASKS = ("eval-kie", "eval-lir", "align", "backcalc", "retrieve", "prompt", "lint-schema", "ablation")

# Execution-only settings; they never change results and are left out of the
# config echoed into reports so that reports stay byte-identical across them.
_NOT_ECHOED = ("jobs", "out")


@dataclass
class RunConfig:
    task: str = "eval-lir"
    measure: str | None = None  # None: "edit" for eval-lir, "exact" for eval-kie
    normalize_text: bool = True
    beta: float = 1.0
    normalization: str = "cells"
    orientation: str = "conventional"
    facet: str | None = None  # None: the measure's own facet
    threshold: float = 1.0
    scale_n: int = 128
    strategy: str = "dc"
    tighten: bool = False
    hash_scale: int = 64
    hash_levels: int = 3
    k: int = 1
    char_cell_px: float | None = None
    line_factor: float = 1.0
    bloat_ratio: float = 3.0
    page: int = 0
    kind: str = "lir"
    manifest: str | None = None
    ocr: str | None = None
    pred: str | None = None
    gt: str | None = None
    images: str | None = None
    index: str | None = None
    query: str | None = None
    schema: str | None = None
    samples: str | None = None
    input: str | None = None
    score_label: str = "F1 Score"
    out: str | None = None
    format: str = "json"
    jobs: int = 1
    strict: bool = False

    def resolved_measure(self) -> str:
        if self.measure:
            return self.measure
        return "exact" if self.task == "eval-kie" else "edit"

    def echo(self) -> dict[str, Any]:
        data = asdict(self)
        data["measure"] = self.resolved_measure()
        for key in _NOT_ECHOED:
            data.pop(key)
        return data

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def validate(self) -> None:
        choices = {
            "task": TASKS,
            "normalization": ("cells", "rows"),
            "orientation": ("conventional", "swapped"),
            "facet": (None, "content", "location"),
            "strategy": ("naive", "dc"),
            "format": ("json", "csv"),
            "kind": ("kie", "lir"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise InputError(f"{name}={getattr(self, name)!r} is not one of {allowed}")
        try:
            measure = get_measure(self.resolved_measure())
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if self.facet is not None and self.facet != measure.facet:
            raise InputError(f"measure {measure.name!r} scores {measure.facet}, not {self.facet}")
        if not self.beta > 0:
            raise InputError(f"beta must be positive, got {self.beta}")
        if not 0 <= self.threshold <= 1:
            raise InputError(f"threshold must be in [0, 1], got {self.threshold}")
        for name, low in (("scale_n", 2), ("jobs", 1), ("k", 1), ("page", 0), ("hash_levels", 0)):
            if getattr(self, name) < low:
                raise InputError(f"{name} must be at least {low}")

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InputError(f"unknown config keys: {unknown}")
        config = cls(**raw)
        config.validate()
        return config


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


def resolve_config(task: str, args: argparse.Namespace) -> RunConfig:
    base: dict[str, Any] = {}
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if config_path:
        raw = _read_json(config_path)
        if not isinstance(raw, dict):
            raise InputError(f"{config_path}: config must be a JSON object")
        base.update(raw)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    base["task"] = task
    return RunConfig.from_mapping(base)


# Evaluation over a manifest


def _load_manifest(path: str) -> list[dict[str, str]]:
    raw = _read_json(path)
    docs = raw.get("documents") if isinstance(raw, dict) else raw
    if not isinstance(docs, list):
        raise InputError(f"{path}: manifest must be a list or an object with 'documents'")
    root = Path(path).parent
    out, seen = [], set()
    for i, d in enumerate(docs):
        if not isinstance(d, dict) or not isinstance(d.get("id"), str):
            raise InputError(f"{path}: documents[{i}] needs a string 'id'")
        if d["id"] in seen:
            raise InputError(f"{path}: duplicate document id {d['id']!r}")
        seen.add(d["id"])
        entry = {"id": d["id"]}
        for key in ("pred", "gt", "ocr"):
            if d.get(key) is not None:
                entry[key] = str(root / d[key])
        out.append(entry)
    return out


def _evaluate_document(doc: dict[str, str], config: RunConfig) -> dict[str, Any]:
    record: dict[str, Any] = {"id": doc["id"]}
    try:
        if "pred" not in doc or "gt" not in doc:
            raise InputError("manifest entry needs 'pred' and 'gt'")
        measure = get_measure(config.resolved_measure(), normalize=config.normalize_text)
        if config.task == "eval-lir":
            pred = load_extraction(doc["pred"], "lir")
            gt = load_extraction(doc["gt"], "lir")
            rep = glirm(
                measure,
                pred,
                gt,
                beta=config.beta,
                facet=config.facet,
                normalization=config.normalization,
                orientation=config.orientation,
            )
            record.update(rep.to_dict())
            record["ics"] = table_ics(pred, gt)
        else:
            pred = load_extraction(doc["pred"], "kie")
            gt = load_extraction(doc["gt"], "kie")
            record.update(kie_f1(pred, gt, measure, config.threshold).to_dict())
        record["status"] = "ok"
    except (InputError, OSError) as exc:
        record.update(status="input_error", error=str(exc))
    except Exception as exc:  # noqa: BLE001 - reported per document
        log.exception("evaluation failed for %s", doc["id"])
        record.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return record


def _evaluate_star(item: tuple[dict[str, str], RunConfig]) -> dict[str, Any]:
    return _evaluate_document(*item)


def evaluate_corpus(config: RunConfig) -> dict[str, Any]:
    if not config.manifest:
        raise InputError("--manifest is required")
    docs = _load_manifest(config.manifest)
    work = [(d, config) for d in docs]
    if config.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(_evaluate_star, work, chunksize=max(1, len(work) // (4 * config.jobs))))
    else:
        records = [_evaluate_star(w) for w in work]
    records.sort(key=lambda r: r["id"])

    ok = [r for r in records if r["status"] == "ok"]
    metric_keys = ["precision", "recall", "f1"] + (["fbeta"] if config.task == "eval-lir" else [])
    agg: dict[str, Any] = {k: aggregate(r[k] for r in ok) for k in metric_keys}
    if config.task == "eval-lir":
        agg["ics"] = aggregate(r["ics"] for r in ok if r.get("ics") is not None)
    agg["documents"] = len(records)
    agg["failed"] = len(records) - len(ok)
    return {"config": config.echo(), "ics_version": ICS_VERSION, "documents": records, "aggregate": agg}


def _render_eval_report(report: dict[str, Any], fmt: str, task: str) -> str:
    if fmt == "json":
        return to_json(report)
    if task == "eval-lir":
        columns = ["id", "status", "precision", "recall", "f1", "fbeta", "matched_score", "pred_cells", "truth_cells", "ics", "error"]
    else:
        columns = ["id", "status", "precision", "recall", "f1", "error"]
    rows = list(report["documents"])
    for stat in ("mean", "median"):
        row: dict[str, Any] = {"id": f"__{stat}__", "status": "aggregate"}
        for key, summary in report["aggregate"].items():
            if isinstance(summary, dict):
                row[key] = summary[stat]
        rows.append(row)
    header = "# config: " + json.dumps(report["config"], sort_keys=True) + "\n"
    return header + to_csv(rows, columns)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_eval(config: RunConfig) -> int:
    report = evaluate_corpus(config)
    failed = [r for r in report["documents"] if r["status"] != "ok"]
    if config.strict and failed:
        for r in failed:
            print(f"{r['id']}: {r['error']}", file=sys.stderr)
        return EXIT_INPUT if all(r["status"] == "input_error" for r in failed) else EXIT_INTERNAL
    for r in failed:
        log.warning("%s: %s", r["id"], r["error"])
    _emit(_render_eval_report(report, config.format, config.task), config.out)
    return EXIT_OK


def _cmd_align(config: RunConfig) -> int:
    if not (config.pred and config.gt):
        raise InputError("--pred and --gt are required")
    measure = get_measure(config.resolved_measure(), normalize=config.normalize_text)
    result = align_rows(measure, load_extraction(config.pred, "lir"), load_extraction(config.gt, "lir"))
    _emit(to_json({"config": config.echo(), "alignment": result.to_dict()}), config.out)
    return EXIT_OK


def _cmd_backcalc(config: RunConfig) -> int:
    if not (config.ocr and config.pred):
        raise InputError("--ocr and --pred are required")
    doc = load_ocr_document(config.ocr)
    if not 0 <= config.page < len(doc.pages):
        raise InputError(f"page {config.page} not in document with {len(doc.pages)} pages")
    page = doc.pages[config.page]
    extraction = load_extraction(config.pred, config.kind)
    summary: dict[str, Any]
    if isinstance(extraction, KieExtraction):
        result = backcalc_kie({k: c.value for k, c in extraction.fields.items()}, page)
        enriched = KieExtraction(
            {
                k: Cell(c.value, result.key_bbox_map.get(k, c.bbox) if c.value is not None else c.bbox)
                for k, c in extraction.fields.items()
            }
        )
        summary = {"score": result.score, "key_scores": dict(sorted(result.key_scores.items()))}
    else:
        assert isinstance(extraction, LineItemTable)
        if not extraction.rows:
            raise InputError("extraction has no line items")
        part = partition_line_items(extraction, page, scale_n=config.scale_n, strategy=config.strategy)
        if config.tighten:
            part = tighten_bounds(part, extraction, page)
        enriched = apply_partition(extraction, part)
        summary = {
            "total_score": part.total_score,
            "scale_n": part.scale_n,
            "boundaries": list(part.boundaries),
            "boundaries_px": part.boundaries_px(page.height),
            "item_scores": [r.score for r in part.per_item],
        }
    _emit(to_json({"config": config.echo(), "extraction": extraction_to_dict(enriched), "summary": summary}), config.out)
    return EXIT_OK


def _cmd_retrieve(config: RunConfig) -> int:
    hash_kwargs = {"image_scale": config.hash_scale, "levels": config.hash_levels}
    index = None
    if config.images:
        index = build_index(config.images, **hash_kwargs)
        if config.index:
            Path(config.index).write_text(index.to_json(), encoding="utf-8")
    elif config.index:
        index = RetrievalIndex.from_json(Path(config.index).read_text(encoding="utf-8"))
    if index is None:
        raise InputError("give --images to build an index or --index to load one")
    if config.query:
        h = wavelet_hash(load_image(config.query), **hash_kwargs)
        ranked = retrieve_nearest(index, h, k=config.k)
        _emit(to_json([{"id": i, "distance": d} for i, d in ranked]), config.out)
    elif not config.index:
        _emit(index.to_json(), config.out)
    return EXIT_OK


def _cmd_prompt(config: RunConfig) -> int:
    if not config.ocr:
        raise InputError("--ocr is required")
    doc = load_ocr_document(config.ocr)
    if not 0 <= config.page < len(doc.pages):
        raise InputError(f"page {config.page} not in document with {len(doc.pages)} pages")
    prompt = build_layout_prompt(doc.pages[config.page], config.char_cell_px, config.line_factor)
    _emit(prompt.text + "\n" if prompt.text else "", config.out)
    return EXIT_OK


def _load_samples(path: str) -> list[Any]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            return [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: samples must be a JSON array or JSON lines") from exc
    return data if isinstance(data, list) else [data]


def _cmd_lint(config: RunConfig) -> int:
    if not config.schema:
        raise InputError("--schema is required")
    schema = _read_json(config.schema)
    samples = _load_samples(config.samples) if config.samples else None
    findings = lint_schema(schema, samples, bloat_ratio=config.bloat_ratio)
    _emit(to_json([f.to_dict() for f in findings]), config.out)
    return EXIT_FINDINGS if findings else EXIT_OK


def _cmd_ablation(config: RunConfig) -> int:
    if not config.input:
        raise InputError("--input is required")
    raw = _read_json(config.input)
    if not isinstance(raw, list):
        raise InputError(f"{config.input}: expected a list of {{'flags': ..., 'score': ...}}")
    try:
        runs = [(dict(r["flags"]), float(r["score"])) for r in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{config.input}: bad run entry: {exc}") from exc
    _emit(format_ablation_table(runs, score_label=config.score_label), config.out)
    return EXIT_OK


_COMMANDS = {
    "eval-kie": _cmd_eval,
    "eval-lir": _cmd_eval,
    "align": _cmd_align,
    "backcalc": _cmd_backcalc,
    "retrieve": _cmd_retrieve,
    "prompt": _cmd_prompt,
    "lint-schema": _cmd_lint,
    "ablation": _cmd_ablation,
}


def _bool_flag(parser: argparse.ArgumentParser, name: str, help: str) -> None:
    parser.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_true", default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdie-eval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
        p.add_argument("--out", help="write output here instead of stdout")
        return p

    def measure_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--measure", help="similarity measure: exact, edit or iou")
        p.add_argument("--no-normalize", dest="normalize_text", action="store_false", default=None,
                       help="compare raw text without normalization")

    for task in ("eval-lir", "eval-kie"):
        p = add(task, f"evaluate a manifest of documents ({task[5:].upper()})")
        p.add_argument("--manifest", help="JSON manifest of {id, pred, gt[, ocr]} entries")
        measure_flags(p)
        if task == "eval-lir":
            p.add_argument("--beta", type=float)
            p.add_argument("--normalization", choices=["cells", "rows"])
            p.add_argument("--orientation", choices=["conventional", "swapped"])
            p.add_argument("--facet", choices=["content", "location"])
        else:
            p.add_argument("--threshold", type=float)
        p.add_argument("--format", choices=["json", "csv"])
        p.add_argument("--jobs", type=int)
        _bool_flag(p, "strict", "abort without a report if any document fails")

    p = add("align", "dump the order-preserving row alignment of two tables")
    p.add_argument("--pred")
    p.add_argument("--gt")
    measure_flags(p)

    p = add("backcalc", "backcalculate bounding boxes for a predicted extraction")
    p.add_argument("--ocr")
    p.add_argument("--pred", "--extraction", dest="pred")
    p.add_argument("--kind", choices=["kie", "lir"])
    p.add_argument("--page", type=int)
    p.add_argument("--scale-n", dest="scale_n", type=int)
    p.add_argument("--strategy", choices=["naive", "dc"])
    _bool_flag(p, "tighten", "tighten the outer bounds after partitioning")

    p = add("retrieve", "build a wavelet-hash index and/or query it")
    p.add_argument("--images", help="directory of page images to index")
    p.add_argument("--index", help="index file to write (with --images) or read")
    p.add_argument("--query", help="image to look up")
    p.add_argument("--k", type=int)
    p.add_argument("--hash-scale", dest="hash_scale", type=int)
    p.add_argument("--hash-levels", dest="hash_levels", type=int)

    p = add("prompt", "render an OCR page as a layout-preserving prompt")
    p.add_argument("--ocr")
    p.add_argument("--page", type=int)
    p.add_argument("--char-cell-px", dest="char_cell_px", type=float)
    p.add_argument("--line-factor", dest="line_factor", type=float)

    p = add("lint-schema", "lint a structured-output schema")
    p.add_argument("--schema")
    p.add_argument("--samples", help="JSON array or JSON lines of model outputs")
    p.add_argument("--bloat-ratio", dest="bloat_ratio", type=float)

    p = add("ablation", "format ablation runs as a table")
    p.add_argument("--input", help="JSON list of {flags: {name: bool}, score: fraction}")
    p.add_argument("--score-label", dest="score_label")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args.command, args)
        return _COMMANDS[args.command](config)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
