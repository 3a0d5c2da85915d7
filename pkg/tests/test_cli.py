import argparse
import json

import numpy as np
import pytest
from PIL import Image

from bdie_eval.cli import (
    CONFIG_ENV,
    EXIT_FINDINGS,
    EXIT_INPUT,
    EXIT_OK,
    RunConfig,
    main,
    resolve_config,
)
from bdie_eval.core import serialize_extraction, serialize_ocr_document, OcrDocument
from bdie_eval.errors import InputError
from helpers import kie, pixel_page, row, table, write_corpus

A = row(desc="apple", qty="1")
B = row(desc="banana", qty="2")


def _write(path, text):
    path.write_text(text)
    return str(path)


def _manifest(tmp_path, pairs):
    docs = []
    for doc_id, (pred, gt) in pairs.items():
        _write(tmp_path / f"{doc_id}.pred.json", serialize_extraction(pred))
        _write(tmp_path / f"{doc_id}.gt.json", serialize_extraction(gt))
        docs.append({"id": doc_id, "pred": f"{doc_id}.pred.json", "gt": f"{doc_id}.gt.json"})
    return _write(tmp_path / "manifest.json", json.dumps(docs))


def _run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_eval_lir_perfect(tmp_path, capsys):
    manifest = _manifest(tmp_path, {"d1": (table(A, B), table(A, B))})
    code, out = _run(["eval-lir", "--manifest", manifest], capsys)
    assert code == EXIT_OK
    report = json.loads(out.out)
    assert report["aggregate"]["f1"]["mean"] == 1.0
    assert report["documents"][0]["status"] == "ok"
    assert report["config"]["measure"] == "edit"


def test_eval_lir_swap_beta_two(tmp_path, capsys):
    manifest = _manifest(tmp_path, {"swap": (table(B, A), table(A, B))})
    out_path = tmp_path / "out" / "report.json"
    code, _ = _run(["eval-lir", "--manifest", manifest, "--beta", "2", "--measure", "exact", "--out", str(out_path)], capsys)
    assert code == EXIT_OK
    report = json.loads(out_path.read_text())
    assert report["documents"][0]["f1"] == 0.5
    assert report["config"]["beta"] == 2.0


def test_missing_manifest_exit_two(tmp_path, capsys):
    out_path = tmp_path / "report.json"
    code, out = _run(["eval-lir", "--manifest", str(tmp_path / "nope.json"), "--out", str(out_path)], capsys)
    assert code == EXIT_INPUT
    assert not out_path.exists()
    assert "error" in out.err


def test_missing_document_reported_or_strict(tmp_path, capsys):
    manifest = _write(tmp_path / "m.json", json.dumps([{"id": "gone", "pred": "x.json", "gt": "y.json"}]))
    out_path = tmp_path / "report.json"
    code, _ = _run(["eval-lir", "--manifest", manifest, "--out", str(out_path)], capsys)
    assert code == EXIT_OK
    assert json.loads(out_path.read_text())["documents"][0]["status"] == "input_error"
    out_path.unlink()
    code, _ = _run(["eval-lir", "--manifest", manifest, "--out", str(out_path), "--strict"], capsys)
    assert code == EXIT_INPUT
    assert not out_path.exists()


def test_eval_kie_and_csv(tmp_path, capsys):
    manifest = _manifest(tmp_path, {"k1": (kie(a="1", b="x"), kie(a="1", b="2"))})
    code, out = _run(["eval-kie", "--manifest", manifest, "--format", "csv"], capsys)
    assert code == EXIT_OK
    lines = out.out.splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1] == "id,status,precision,recall,f1,error"
    assert lines[2] == "k1,ok,0.5,0.5,0.5,"
    assert lines[3].startswith("__mean__,aggregate,0.5")


def test_config_file_env_and_flag_precedence(tmp_path, capsys, monkeypatch):
    manifest = _manifest(tmp_path, {"swap": (table(B, A), table(A, B))})
    config = _write(tmp_path / "cfg.json", json.dumps({"beta": 3.0, "measure": "exact"}))
    monkeypatch.setenv(CONFIG_ENV, config)
    code, out = _run(["eval-lir", "--manifest", manifest], capsys)
    assert code == EXIT_OK
    assert json.loads(out.out)["config"]["beta"] == 3.0
    code, out = _run(["eval-lir", "--manifest", manifest, "--beta", "0.5"], capsys)
    assert json.loads(out.out)["config"]["beta"] == 0.5


def test_bad_config(tmp_path, capsys):
    config = _write(tmp_path / "cfg.json", json.dumps({"betta": 2}))
    code, _ = _run(["eval-lir", "--manifest", "m.json", "--config", config], capsys)
    assert code == EXIT_INPUT
    code, _ = _run(["eval-lir", "--manifest", "m.json", "--beta", "-1"], capsys)
    assert code == EXIT_INPUT
    code, _ = _run(["eval-lir", "--manifest", "m.json", "--measure", "iou", "--facet", "content"], capsys)
    assert code == EXIT_INPUT


def test_run_config_round_trip():
    config = RunConfig(task="backcalc", beta=2.5, scale_n=64, tighten=True, jobs=4)
    assert RunConfig.from_mapping(json.loads(config.to_json())) == config
    with pytest.raises(InputError):
        RunConfig.from_mapping({"task": "nope"})


def test_resolve_config_defaults():
    config = resolve_config("eval-kie", argparse.Namespace())
    assert config.resolved_measure() == "exact"
    assert config.scale_n == 128 and config.beta == 1.0


def test_jobs_do_not_change_report(tmp_path, capsys):
    manifest = write_corpus(tmp_path, 6, seed=3)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["eval-lir", "--manifest", manifest, "--jobs", "1", "--out", str(a)]) == EXIT_OK
    assert main(["eval-lir", "--manifest", manifest, "--jobs", "3", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    ids = [d["id"] for d in json.loads(a.read_text())["documents"]]
    assert ids == sorted(ids)


def test_align(tmp_path, capsys):
    pred = _write(tmp_path / "p.json", serialize_extraction(table(A, row(desc="x", qty="9"), B)))
    gt = _write(tmp_path / "g.json", serialize_extraction(table(A, B)))
    code, out = _run(["align", "--pred", pred, "--gt", gt, "--measure", "exact"], capsys)
    assert code == EXIT_OK
    assert json.loads(out.out)["alignment"]["pairs"] == [[0, 0], [2, 1]]


def _ocr_file(tmp_path):
    page = pixel_page(400, 800, [("WIDGET", (10, 100, 80, 120)), ("4.50", (100, 100, 140, 120)),
                                 ("GADGET", (10, 500, 80, 520)), ("9.00", (100, 500, 140, 520))])
    return _write(tmp_path / "ocr.json", serialize_ocr_document(OcrDocument((page,))))


def test_backcalc_lir_and_kie(tmp_path, capsys):
    ocr = _ocr_file(tmp_path)
    pred = _write(tmp_path / "p.json", serialize_extraction(table(row(desc="WIDGET", amt="4.50"), row(desc="GADGET", amt="9.00"))))
    code, out = _run(["backcalc", "--ocr", ocr, "--pred", pred, "--scale-n", "8", "--tighten"], capsys)
    assert code == EXIT_OK
    result = json.loads(out.out)
    assert result["summary"]["total_score"] == 4.0
    assert result["extraction"]["rows"][1]["desc"]["bbox"] == [10.0, 500.0, 80.0, 520.0]

    fields = _write(tmp_path / "k.json", serialize_extraction(kie(total="9.00")))
    code, out = _run(["backcalc", "--ocr", ocr, "--pred", fields, "--kind", "kie"], capsys)
    assert code == EXIT_OK
    assert json.loads(out.out)["extraction"]["fields"]["total"]["bbox"] == [100.0, 500.0, 140.0, 520.0]

    code, _ = _run(["backcalc", "--ocr", ocr, "--pred", pred, "--page", "3"], capsys)
    assert code == EXIT_INPUT


def test_retrieve(tmp_path, capsys):
    rng = np.random.default_rng(0)
    images = tmp_path / "images"
    images.mkdir()
    for i in range(5):
        Image.fromarray(rng.integers(0, 256, (64, 48)).astype(np.uint8)).save(images / f"p{i}.png")
    index = tmp_path / "index.json"
    code, out = _run(["retrieve", "--images", str(images), "--index", str(index), "--query", str(images / "p3.png")], capsys)
    assert code == EXIT_OK
    assert json.loads(out.out)[0] == {"id": "p3.png", "distance": 0}
    code, out = _run(["retrieve", "--index", str(index), "--query", str(images / "p1.png"), "--k", "9"], capsys)
    ranked = json.loads(out.out)
    assert ranked[0]["id"] == "p1.png" and len(ranked) == 5
    code, _ = _run(["retrieve"], capsys)
    assert code == EXIT_INPUT


def test_prompt(tmp_path, capsys):
    code, out = _run(["prompt", "--ocr", _ocr_file(tmp_path), "--char-cell-px", "10"], capsys)
    assert code == EXIT_OK
    assert out.out.split() == ["WIDGET", "4.50", "GADGET", "9.00"]


def test_lint_schema_exit_codes(tmp_path, capsys):
    schema = _write(tmp_path / "s.json", json.dumps({"type": "object", "properties": {"a": {}, "b": {}}}))
    code, out = _run(["lint-schema", "--schema", schema], capsys)
    assert code == EXIT_FINDINGS
    assert json.loads(out.out)[0]["code"] == "ALL_KEYS_OPTIONAL"
    ok = _write(tmp_path / "ok.json", json.dumps({"type": "object", "properties": {"a": {}}, "required": ["a"]}))
    samples = _write(tmp_path / "samples.jsonl", '{"a": 1}\n{"a": 2}\n')
    code, out = _run(["lint-schema", "--schema", ok, "--samples", samples], capsys)
    assert code == EXIT_OK
    assert json.loads(out.out) == []
    bad = _write(tmp_path / "bad.json", json.dumps({"properties": {"a": {}}, "required": ["z"]}))
    assert main(["lint-schema", "--schema", bad]) == EXIT_INPUT


def test_ablation(tmp_path, capsys):
    runs = _write(tmp_path / "runs.json", json.dumps([{"flags": {"layout": True}, "score": 0.7981}]))
    code, out = _run(["ablation", "--input", runs], capsys)
    assert code == EXIT_OK
    assert "79.81%" in out.out
