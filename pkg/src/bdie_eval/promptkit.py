"""Layout-preserving prompt rendering and a linter for structured-output schemas.

The renderer places OCR words on a character grid so that the prompt text
looks like the page. The linter flags schema shapes that interact badly with
regex/FSM-based constrained decoding: property order that disagrees with
what the model emits, objects whose keys are all optional, and objects with
many more optional keys than required ones.
"""

from __future__ import annotations

import copy
import json
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

from .core import OcrPage
from .errors import MalformedSchema, NameCollision

DUMMY_KEY = "__rasg_dummy"

KEY_ORDER_MISMATCH = "KEY_ORDER_MISMATCH"
ALL_KEYS_OPTIONAL = "ALL_KEYS_OPTIONAL"
OPTIONAL_KEY_BLOAT = "OPTIONAL_KEY_BLOAT"

REMEDIATION = {
    KEY_ORDER_MISMATCH: (
        "reorder the schema properties to match the training data, or decode with a "
        "grammar that does not fix key order"
    ),
    ALL_KEYS_OPTIONAL: f"add a required null-typed key (e.g. {DUMMY_KEY!r}) and strip it after decoding",
    OPTIONAL_KEY_BLOAT: "drop rarely used optional keys or make the common ones required",
}


@dataclass(frozen=True)
class LayoutPrompt:
    text: str
    char_cell_px: float


@dataclass(frozen=True)
class SchemaLintFinding:
    code: str
    path: str
    message: str

    @property
    def remediation(self) -> str:
        return REMEDIATION[self.code]

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "path": self.path, "message": self.message, "remediation": self.remediation}


def build_layout_prompt(
    page: OcrPage,
    char_cell_px: float | None = None,
    line_factor: float = 1.0,
) -> LayoutPrompt:
    """Render a page as monospace text.

    ``row = floor(center_y / (char_cell_px * line_factor))`` and
    ``col = floor(x0 / char_cell_px)``. A word that would touch or overlap
    the previous word on its row is pushed right, keeping one space between
    them. Only occupied rows are emitted. ``char_cell_px`` defaults to the
    median word height.
    """
    if char_cell_px is None:
        char_cell_px = page.median_word_height() or 1.0
    if char_cell_px <= 0 or line_factor <= 0:
        raise ValueError("char_cell_px and line_factor must be positive")
    line_h = char_cell_px * line_factor

    rows: dict[int, list] = {}
    for w in page.words:
        if not w.text.strip():
            continue
        rows.setdefault(math.floor(w.bbox.center_y / line_h), []).append(w)

    lines = []
    for r in sorted(rows):
        line = ""
        for w in sorted(rows[r], key=lambda w: w.reading_order):
            col = math.floor(w.bbox.x0 / char_cell_px)
            if line:
                col = max(col, len(line) + 1)
            line = line.ljust(col) + w.text.strip()
        lines.append(line.rstrip())
    return LayoutPrompt("\n".join(lines), char_cell_px)


# Schema linting


def _resolve(node: Any, root: Mapping[str, Any], seen: frozenset[str]) -> tuple[Any, frozenset[str]]:
    while isinstance(node, Mapping) and "$ref" in node:
        ref = node["$ref"]
        if not isinstance(ref, str) or not ref.startswith("#/"):
            raise MalformedSchema(f"only local $ref pointers are supported, got {ref!r}")
        if ref in seen:
            return None, seen
        seen = seen | {ref}
        target: Any = root
        for part in ref[2:].split("/"):
            part = part.replace("~1", "/").replace("~0", "~")
            if not isinstance(target, Mapping) or part not in target:
                raise MalformedSchema(f"unresolvable $ref {ref!r}")
            target = target[part]
        node = target
    return node, seen


def _object_nodes(schema: Mapping[str, Any]) -> Iterator[tuple[str, Mapping[str, Any]]]:
    """Yield (path, node) for every object schema that declares properties."""

    def walk(node: Any, path: str, seen: frozenset[str]) -> Iterator[tuple[str, Mapping[str, Any]]]:
        node, seen = _resolve(node, schema, seen)
        if node is None or isinstance(node, bool):
            return
        if not isinstance(node, Mapping):
            raise MalformedSchema(f"{path}: schema node must be an object")
        props = node.get("properties")
        if props is not None:
            if not isinstance(props, Mapping):
                raise MalformedSchema(f"{path}.properties must be an object")
            required = node.get("required", [])
            if not isinstance(required, list) or not all(isinstance(k, str) for k in required):
                raise MalformedSchema(f"{path}.required must be a list of strings")
            missing = [k for k in required if k not in props]
            if missing:
                raise MalformedSchema(f"{path}.required names undeclared properties {missing}")
            yield path, node
            for key, sub in props.items():
                yield from walk(sub, f"{path}.properties.{key}", seen)
        items = node.get("items")
        if items is not None:
            yield from walk(items, f"{path}.items", seen)
        for combo in ("anyOf", "oneOf", "allOf"):
            for i, sub in enumerate(node.get(combo, []) or []):
                yield from walk(sub, f"{path}.{combo}[{i}]", seen)

    if not isinstance(schema, Mapping):
        raise MalformedSchema("schema must be a JSON object")
    yield from walk(schema, "$", frozenset())


def _sample_objects(node: Any, schema_root: Mapping[str, Any], value: Any, path: str, seen=frozenset()):
    """Pair sample sub-objects with the object schemas they instantiate."""
    node, seen = _resolve(node, schema_root, seen)
    if not isinstance(node, Mapping):
        return
    props = node.get("properties")
    if isinstance(props, Mapping) and isinstance(value, Mapping):
        yield path, node, value
        for key, sub in props.items():
            if key in value:
                yield from _sample_objects(sub, schema_root, value[key], f"{path}.properties.{key}", seen)
    items = node.get("items")
    if items is not None and isinstance(value, list):
        for v in value:
            yield from _sample_objects(items, schema_root, v, f"{path}.items", seen)
    for combo in ("anyOf", "oneOf", "allOf"):
        for i, sub in enumerate(node.get(combo, []) or []):
            yield from _sample_objects(sub, schema_root, value, f"{path}.{combo}[{i}]", seen)


def _is_out_of_order(declared: Sequence[str], emitted: Iterable[str]) -> bool:
    rank = {k: i for i, k in enumerate(declared)}
    positions = [rank[k] for k in emitted if k in rank]
    return any(b < a for a, b in zip(positions, positions[1:]))


def lint_schema(
    schema: Mapping[str, Any],
    samples: Sequence[Any] | None = None,
    bloat_ratio: float = 3.0,
) -> list[SchemaLintFinding]:
    """Check a JSON-schema-style object schema (and optional sample outputs).

    Samples may be parsed objects or JSON strings; their key order is read
    as written.
    """
    findings: list[SchemaLintFinding] = []
    for path, node in _object_nodes(schema):
        props = list(node["properties"])
        required = set(node.get("required", []))
        optional = [k for k in props if k not in required]
        if props and not required:
            findings.append(
                SchemaLintFinding(
                    ALL_KEYS_OPTIONAL, path, f"all {len(props)} keys are optional; none is required"
                )
            )
        elif required and len(optional) > bloat_ratio * len(required):
            findings.append(
                SchemaLintFinding(
                    OPTIONAL_KEY_BLOAT,
                    path,
                    f"{len(optional)} optional vs {len(required)} required keys exceeds {bloat_ratio:g}:1",
                )
            )

    for s_idx, sample in enumerate(samples or []):
        if isinstance(sample, (str, bytes)):
            try:
                sample = json.loads(sample)
            except json.JSONDecodeError as exc:
                raise MalformedSchema(f"sample {s_idx} is not valid JSON: {exc}") from exc
        for path, node, value in _sample_objects(schema, schema, sample, "$"):
            declared = list(node["properties"])
            if _is_out_of_order(declared, value.keys()):
                emitted = [k for k in value if k in node["properties"]]
                findings.append(
                    SchemaLintFinding(
                        KEY_ORDER_MISMATCH,
                        path,
                        f"sample {s_idx} emits keys {emitted} but the schema declares {declared}",
                    )
                )
    return findings


def _contains_key(node: Any, key: str) -> bool:
    if isinstance(node, Mapping):
        props = node.get("properties")
        if isinstance(props, Mapping) and key in props:
            return True
        return any(_contains_key(v, key) for v in node.values())
    if isinstance(node, list):
        return any(_contains_key(v, key) for v in node)
    return False


def _add_dummy(node: dict[str, Any]) -> None:
    node["properties"] = {DUMMY_KEY: {"type": "null"}, **node["properties"]}
    node["required"] = [DUMMY_KEY, *node.get("required", [])]


def apply_dummy_key_workaround(schema: Mapping[str, Any]) -> dict[str, Any]:
    """Return a copy with a required null-typed ``__rasg_dummy`` key placed first.

    The key goes on the root object and on every nested object whose keys are
    all optional. Strip it from decoded outputs with :func:`strip_dummy_key`.
    """
    if _contains_key(schema, DUMMY_KEY):
        raise NameCollision(f"schema already declares {DUMMY_KEY!r}")
    out = copy.deepcopy(dict(schema))
    nodes = list(_object_nodes(out))
    if not nodes or nodes[0][0] != "$":
        raise MalformedSchema("the root schema must be an object with properties")
    targets = {
        path for path, node in nodes if path == "$" or (node["properties"] and not node.get("required"))
    }
    # Patch from the deepest path up so parents are rewritten after children.
    for path, node in sorted(nodes, key=lambda pn: -len(pn[0])):
        if path in targets and DUMMY_KEY not in node["properties"]:
            _add_dummy(node)  # type: ignore[arg-type]
    return out


def strip_dummy_key(output: Any) -> Any:
    """Remove every ``__rasg_dummy`` key from a decoded output."""
    if isinstance(output, Mapping):
        return {k: strip_dummy_key(v) for k, v in output.items() if k != DUMMY_KEY}
    if isinstance(output, list):
        return [strip_dummy_key(v) for v in output]
    return output
