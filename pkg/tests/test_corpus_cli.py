from __future__ import annotations

import hashlib
import io
import json
import os
from pathlib import Path

import pytest

from fieldwise.benchgen import GenConfig
from fieldwise.cli import main
from fieldwise.corpus import (
    Corpus,
    generate_and_save,
    load_corpus,
    run_pipeline,
    save_corpus,
)
from fieldwise.errors import (
    DataError,
    DuplicateKey,
    IntegrityError,
    ParseError,
    ProtocolViolation,
    SchemaMismatch,
)
from fieldwise.policy import safe_override
from fieldwise.schema import GoldRecord, PromptVariant, RawOutput, default_camera_schema, serialize_fields
from fieldwise.verifier import load_verifier

from conftest import build_corpus

SCHEMA = default_camera_schema()


def small_corpus(seed=1, n=240):
    return build_corpus(seed=seed, n=n)


# --- persistence


def test_save_load_round_trip(tmp_path):
    corpus = small_corpus()
    save_corpus(str(tmp_path), corpus)
    loaded = load_corpus(str(tmp_path))
    assert loaded.schema == corpus.schema
    assert loaded.golds == corpus.golds
    assert loaded.outputs == corpus.outputs


def test_load_corpus_orphan_output(tmp_path):
    corpus = small_corpus(n=120)
    save_corpus(str(tmp_path), corpus)
    with open(tmp_path / "outputs.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "example_id": "exfFFFFF", "model_id": "m", "prompt_variant": "zero_shot", "text": "{}",
        }) + "\n")
    with pytest.raises(IntegrityError):
        load_corpus(str(tmp_path))


def test_load_corpus_truncated_line_reports_lineno(tmp_path):
    corpus = small_corpus(n=120)
    save_corpus(str(tmp_path), corpus)
    lines = (tmp_path / "gold.jsonl").read_text().splitlines()
    lines[2] = lines[2][: len(lines[2]) // 2]
    (tmp_path / "gold.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_corpus(str(tmp_path))
    assert info.value.line == 3


def test_corpus_rejects_bad_gold_keys():
    gold = GoldRecord("e1", "q", {"CAMERA": None}, split="train")
    with pytest.raises(SchemaMismatch):
        Corpus(schema=SCHEMA, golds=[gold], outputs=[], provenance={})


def test_corpus_rejects_duplicate_outputs():
    names = SCHEMA.field_names()
    gold = GoldRecord("e1", "q", {n: None for n in names}, split="train")
    output = RawOutput("e1", "m", PromptVariant.ZERO_SHOT, "{}")
    with pytest.raises(DuplicateKey):
        Corpus(schema=SCHEMA, golds=[gold], outputs=[output, output], provenance={})


# --- split protocol


def test_scoped_gold_blocks_test_labels():
    corpus = small_corpus(n=120)
    test_id = corpus.example_ids("test")[0]
    view = corpus.scoped_gold("verifier-train")
    with pytest.raises(ProtocolViolation):
        view[test_id]
    view[corpus.example_ids("train")[0]]  # allowed


def test_scoped_gold_for_splits_rejects_out_of_policy_request():
    corpus = small_corpus(n=120)
    with pytest.raises(ProtocolViolation):
        corpus.scoped_gold_for_splits("threshold-tune", ["test"])
    with pytest.raises(ProtocolViolation):
        corpus.scoped_gold_for_splits("verifier-train", ["dev"])


def test_unknown_stage_rejected():
    corpus = small_corpus(n=120)
    with pytest.raises(ProtocolViolation):
        corpus.scoped_gold("mystery-stage")


def test_run_pipeline_attestation_names_only_final_scorer_for_test():
    corpus = small_corpus(n=240)
    result = run_pipeline(corpus)
    attestation = result.report.attestation
    test_consumers = [stage for stage, splits in attestation.items() if "test" in splits]
    assert test_consumers == ["final-score"]
    assert attestation["verifier-train"] == ["train"]
    assert attestation["threshold-tune"] == ["dev"]


def test_run_pipeline_requires_all_splits():
    corpus = small_corpus(n=120)
    no_test = Corpus(
        schema=corpus.schema,
        golds=[g for g in corpus.golds if g.split != "test"],
        outputs=[o for o in corpus.outputs if any(
            g.example_id == o.example_id and g.split != "test" for g in corpus.golds
        )],
        provenance={},
    )
    with pytest.raises(DataError):
        run_pipeline(no_test)


# --- CLI


def sha256_dir(path: Path) -> dict[str, str]:
    out = {}
    for p in sorted(path.iterdir()):
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_cli_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--out-dir", str(a), "--seed", "42", "--n", "60"]) == 0
    assert main(["gen", "--out-dir", str(b), "--seed", "42", "--n", "60"]) == 0
    assert sha256_dir(a) == sha256_dir(b)


def test_cli_canonicalize_stdin(monkeypatch, capsys):
    body = serialize_fields({n: ("X" if n == "CAMERA" else None) for n in SCHEMA.field_names()})
    monkeypatch.setattr("sys.stdin", io.StringIO(f"```json\n{body}\n```"))
    assert main(["canonicalize"]) == 0
    out = capsys.readouterr().out.strip()
    parsed = json.loads(out)
    assert parsed["CAMERA"] == "X"
    from fieldwise.schema import validate_strict

    assert validate_strict(out, SCHEMA).ok


def test_cli_canonicalize_record_emit(tmp_path, capsys):
    src = tmp_path / "raw.txt"
    src.write_text("Sure: {'camera': 'X'} done")
    assert main(["canonicalize", "--in", str(src), "--emit", "record"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["strict_valid"] is False
    assert doc["fields"]["CAMERA"] == "X"
    assert "span_extracted" in doc["trace"]


def test_cli_run_without_policy_is_usage_error(capsys):
    assert main(["run", "--verifier", "nope.json"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_cli_unknown_corpus_is_data_error(tmp_path, capsys):
    assert main(["score", "--corpus", str(tmp_path / "nowhere")]) == 2


def test_cli_protocol_violation_exit_code(tmp_path, capsys):
    corpus_dir = tmp_path / "corpus"
    verifier_path = tmp_path / "v.json"
    assert main(["gen", "--out-dir", str(corpus_dir), "--seed", "5", "--n", "120"]) == 0
    code = main([
        "train-verifier", "--corpus", str(corpus_dir),
        "--out", str(verifier_path), "--split", "test",
    ])
    assert code == 3
    assert "protocol violation" in capsys.readouterr().err
    assert not verifier_path.exists()
    assert main([
        "train-verifier", "--corpus", str(corpus_dir), "--out", str(verifier_path), "--epochs", "50",
    ]) == 0
    code = main([
        "tune", "--corpus", str(corpus_dir),
        "--verifier", str(verifier_path), "--out", str(tmp_path / "p.json"),
        "--split", "test",
    ])
    assert code == 3


def test_cli_full_chain_and_reports(tmp_path, capsys):
    corpus_dir = tmp_path / "corpus"
    verifier_path = tmp_path / "verifier.json"
    policy_path = tmp_path / "policy.json"
    run_dir = tmp_path / "run"

    assert main(["gen", "--out-dir", str(corpus_dir), "--seed", "13", "--n", "300"]) == 0
    capsys.readouterr()
    assert main(["score", "--corpus", str(corpus_dir), "--format", "json"]) == 0
    scores = json.loads(capsys.readouterr().out)
    assert len(scores["per_model"]) == 6
    assert all(s["css"] >= s["ros"] for s in scores["per_model"].values())
    assert main(["taxonomy", "--corpus", str(corpus_dir), "--format", "json"]) == 0
    capsys.readouterr()
    assert main([
        "train-verifier", "--corpus", str(corpus_dir), "--out", str(verifier_path),
        "--epochs", "120",
    ]) == 0
    assert main([
        "tune", "--corpus", str(corpus_dir), "--verifier", str(verifier_path),
        "--out", str(policy_path), "--grid-step", "0.1",
    ]) == 0
    capsys.readouterr()
    assert main([
        "run", "--corpus", str(corpus_dir), "--verifier", str(verifier_path),
        "--policy", str(policy_path), "--out-dir", str(run_dir),
    ]) == 0
    assert (run_dir / "report.json").exists()
    assert (run_dir / "report.txt").exists()
    assert (run_dir / "decisions.jsonl").exists()
    report = json.loads((run_dir / "report.json").read_text())
    cascade = report["metrics"]["cascade"]
    assert cascade["best_single_ros"] <= cascade["best_single_css"] <= cascade["oracle_css"]
    assert report["attestation"] == {"final-score": ["test"]}
    capsys.readouterr()
    assert main(["report", "--report", str(run_dir / "report.json")]) == 0
    rendered = capsys.readouterr().out
    assert "Cascade (test split)" in rendered
    assert "oracle_css" in rendered


def test_cli_single_query_matches_library(tmp_path, capsys):
    corpus_dir = tmp_path / "corpus"
    verifier_path = tmp_path / "verifier.json"
    policy_path = tmp_path / "policy.json"
    assert main(["gen", "--out-dir", str(corpus_dir), "--seed", "23", "--n", "240"]) == 0
    assert main([
        "train-verifier", "--corpus", str(corpus_dir), "--out", str(verifier_path), "--epochs", "120",
    ]) == 0
    assert main([
        "tune", "--corpus", str(corpus_dir), "--verifier", str(verifier_path),
        "--out", str(policy_path), "--grid-step", "0.1",
    ]) == 0
    capsys.readouterr()

    query = "Shot with the Canon EOS R5 at f/2.8, ISO 400"
    candidates_path = tmp_path / "candidates.json"
    base_model = json.loads(policy_path.read_text())["base_model"]
    candidates = {
        base_model: '```json\n{"camera": "Canon EOS R5", "iso": "ISO 400"}\n```',
        "other": '{"CAMERA": "Canon EOS R5", "LENS": null, "ISO": "3200", '
                 '"APERTURE": "f/2.8", "SHUTTER_SPEED": null, "FOCAL_LENGTH": null}',
    }
    candidates_path.write_text(json.dumps(candidates))
    assert main([
        "run", "--query", query, "--candidates", str(candidates_path),
        "--verifier", str(verifier_path), "--policy", str(policy_path),
    ]) == 0
    cli_doc = json.loads(capsys.readouterr().out)

    from fieldwise.canon import canonicalize_text
    from fieldwise.policy import load_policy
    from fieldwise.schema import CanonicalRecord

    verifier = load_verifier(str(verifier_path))
    policy = load_policy(str(policy_path))
    records = {}
    for model_id, text in candidates.items():
        fields, strict_valid, trace = canonicalize_text(text, verifier.schema)
        records[model_id] = CanonicalRecord("query-0", model_id, fields, strict_valid, trace)
    fields, decisions = safe_override(query, records, verifier, policy)
    assert cli_doc["fields"] == {k: v for k, v in fields.items()}
    assert len(cli_doc["decisions"]) == len(decisions)


def test_generate_and_save_writes_profiles_and_provenance(tmp_path):
    from fieldwise.benchgen import builtin_profiles

    cfg = GenConfig(seed=3, n_examples=40, profiles=tuple(builtin_profiles()[:2]))
    corpus = generate_and_save(cfg, str(tmp_path))
    assert (tmp_path / "profiles.json").exists()
    assert (tmp_path / "gen_config.json").exists()
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["generator_seed"] == 3
    assert load_corpus(str(tmp_path)).provenance == prov
