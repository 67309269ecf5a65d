"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned here and nowhere else.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from fieldwise.benchgen import ModelProfile, builtin_profiles, random_profile
from fieldwise.corpus import Corpus, canonical_records, run_pipeline
from fieldwise.errors import ProtocolViolation
from fieldwise.metrics import micro_f1, oracle_select, strict_prediction
from fieldwise.policy import PolicyConfig, safe_override
from fieldwise.schema import GoldRecord, default_camera_schema
from fieldwise.taxonomy import FAILURE_ORDER, FailureCategory, classify_failure
from fieldwise.verifier import FieldConfidence, VerifierMode, bce_grad, bce_loss

from conftest import build_corpus

SCHEMA = default_camera_schema()


def _pass(cid: str, detail: str) -> None:
    print(f"ACCEPTANCE {cid} PASS - {detail}")


def _model_scores(corpus: Corpus, canon=None) -> dict[str, tuple[float, float]]:
    canon = canon if canon is not None else canonical_records(corpus)
    by_model: dict[str, dict[str, object]] = {}
    for output in corpus.outputs:
        by_model.setdefault(output.model_id, {})[output.example_id] = output
    out = {}
    for model, outputs in by_model.items():
        ros_preds = {eid: strict_prediction(o, corpus.schema) for eid, o in outputs.items()}
        css_preds = {eid: canon[model][eid].fields for eid in outputs}
        out[model] = (
            micro_f1(ros_preds, corpus.golds, corpus.schema),
            micro_f1(css_preds, corpus.golds, corpus.schema),
        )
    return out


def test_c1_css_never_below_ros():
    started = time.monotonic()
    corpus = build_corpus(seed=42, n=1000)
    scores = _model_scores(corpus)
    assert len(scores) == 6
    for model, (ros, css) in scores.items():
        assert css >= ros, (model, ros, css)
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"builtin sweep took {elapsed:.1f}s"

    rng = np.random.default_rng(20240817)
    checked = 0
    for batch in range(2):
        profiles = tuple(random_profile(f"rand{batch}-{i}", rng) for i in range(10))
        corpus = build_corpus(seed=1000 + batch, n=500, profiles=profiles)
        for model, (ros, css) in _model_scores(corpus).items():
            assert css >= ros, (model, ros, css)
            checked += 1
    assert checked == 20
    _pass("C1", f"css >= ros for 6 builtin + 20 random profiles ({elapsed:.1f}s builtin sweep)")


def test_c2_format_only_corruption_fully_recovered():
    recoverable = (
        FailureCategory.FENCED_JSON,
        FailureCategory.PROSE_WRAPPER,
        FailureCategory.TRAILING_TEXT,
    )
    fields = SCHEMA.field_names()
    cases = [({category: 1.0}, "exact", "double") for category in recoverable]
    cases.append(({c: 1.0 / 3.0 for c in recoverable}, "lower", "single"))
    for mix, key_case, quote_style in cases:
        profile = ModelProfile(
            model_id="fmt",
            semantic_error={f: 0.0 for f in fields},
            omission={f: 0.0 for f in fields},
            taxonomy_mix=mix,
            key_case=key_case,
            quote_style=quote_style,
        )
        corpus = build_corpus(seed=77, n=300, profiles=(profile,))
        scores = _model_scores(corpus)["fmt"]
        assert scores[1] == 1.0, (mix, scores)
        assert scores[0] == 0.0, (mix, scores)
    _pass("C2", "fence/prose/trailing corpora score css = 1.0 and ros = 0.0 exactly")


def test_c3_cascade_ordering(default_result):
    cascade = default_result.report.metrics.cascade
    assert cascade.best_single_ros <= cascade.best_single_css
    assert cascade.best_single_css <= cascade.safe_override_css
    assert cascade.safe_override_css <= cascade.oracle_css
    assert cascade.best_single_css < cascade.safe_override_css, "verifier must add value"
    assert cascade.best_single_ros < cascade.best_single_css, "canonicalization gain must be positive"

    for seed in (101, 102, 103, 104, 105):
        corpus = build_corpus(seed=seed, n=1200)
        result = run_pipeline(corpus)
        c = result.report.metrics.cascade
        assert c.oracle_css >= c.safe_override_css, seed
        assert c.best_single_ros <= c.best_single_css <= c.oracle_css, seed
    _pass("C3", f"cascade {cascade.best_single_ros:.3f} <= {cascade.best_single_css:.3f} < "
                f"{cascade.safe_override_css:.3f} <= {cascade.oracle_css:.3f}; oracle bound on 5 seeds")


@pytest.fixture(scope="module")
def calibration_corpus():
    started = time.monotonic()
    corpus = build_corpus(seed=42, n=5000)
    return corpus, time.monotonic() - started


def test_c4_builtin_profiles_match_reference_scores(calibration_corpus):
    corpus, gen_seconds = calibration_corpus
    started = time.monotonic()
    scores = _model_scores(corpus)
    elapsed = gen_seconds + (time.monotonic() - started)
    targets = {p.model_id: (p.target_ros, p.target_css) for p in builtin_profiles()}
    for model, (ros, css) in scores.items():
        t_ros, t_css = targets[model]
        assert abs(ros - t_ros) <= 0.05, (model, ros, t_ros)
        assert abs(css - t_css) <= 0.05, (model, css, t_css)
    qwen_ros, qwen_css = scores["qwen7b-like"]
    assert abs((qwen_css - qwen_ros) - 0.167) <= 0.05
    assert elapsed < 120.0, f"calibration run took {elapsed:.1f}s"
    worst = max(max(abs(r - targets[m][0]), abs(c - targets[m][1])) for m, (r, c) in scores.items())
    _pass("C4", f"n=5000 ros/css within +/-0.05 of reference (worst gap {worst:.3f}, {elapsed:.1f}s)")


def test_c5_ablation_ordering():
    gaps = []
    for seed in (7, 8, 9):
        corpus = build_corpus(seed=seed, n=1800)
        canon = canonical_records(corpus)
        by_mode = {}
        for mode in (VerifierMode.FULL, VerifierMode.QUERY_ONLY, VerifierMode.OUTPUT_ONLY):
            result = run_pipeline(corpus, verifier_mode=mode, canon=canon)
            by_mode[mode] = result.report.metrics.cascade
        best_css = by_mode[VerifierMode.FULL].best_single_css
        query_only = by_mode[VerifierMode.QUERY_ONLY].safe_override_css
        output_only = by_mode[VerifierMode.OUTPUT_ONLY].safe_override_css
        full = by_mode[VerifierMode.FULL].safe_override_css
        assert abs(query_only - best_css) <= 0.01, (seed, query_only, best_css)
        assert output_only < full, (seed, output_only, full)
        assert query_only < full, (seed, query_only, full)
        gaps.append(full - output_only)
    _pass("C5", f"query-only ~= best css, output-only < full on 3 seeds (full-vs-output gaps {min(gaps):.3f}..{max(gaps):.3f})")


def test_c6_holdout_generalization(default_corpus, default_canon, default_result):
    full_f1 = default_result.report.metrics.cascade.safe_override_css
    holdout_pairs = (
        ("phi3-like", "stablelm-like"),
        ("gemma9b-like", "qwen7b-like"),
    )
    assert not set(holdout_pairs[0]) & set(holdout_pairs[1])
    losses = []
    for held_out in holdout_pairs:
        train_models = [m for m in default_corpus.model_ids() if m not in held_out]
        assert len(train_models) == 4
        result = run_pipeline(default_corpus, train_models=train_models, canon=default_canon)
        f1 = result.report.metrics.cascade.safe_override_css
        assert full_f1 - f1 <= 0.03, (held_out, full_f1, f1)
        losses.append(full_f1 - f1)
    _pass("C6", f"hold-out losses {losses[0]:+.4f}, {losses[1]:+.4f} (limit 0.03)")


class _OracleVerifier:
    def __init__(self, golds: list[GoldRecord]):
        self.schema = SCHEMA
        self._gold = {g.example_id: g.gold for g in golds}

    def score_record(self, query, record):
        gold = self._gold[record.example_id]
        return [
            FieldConfidence(record.example_id, record.model_id, name,
                            1.0 if record.fields.get(name) == gold.get(name) else 0.0)
            for name in self.schema.field_names()
        ]


def test_c7_policy_diagnostics(default_corpus, default_canon, default_result):
    diag = default_result.report.policy_diagnostics
    assert diag.override_precision is not None and diag.override_precision > 0.7
    assert diag.abstain_precision is not None and diag.abstain_precision > 0.7

    test_golds = default_corpus.gold_for_split("test")
    verifier = _OracleVerifier(test_golds)
    policy = PolicyConfig(tau_keep=0.5, tau_take=0.5, delta_margin=0.0, base_model="gemma9b-like")
    policy_preds, oracle_preds = {}, {}
    for gold in test_golds:
        candidates = {m: default_canon[m][gold.example_id] for m in default_corpus.model_ids()}
        fields, _ = safe_override(gold.query, candidates, verifier, policy)
        policy_preds[gold.example_id] = fields
        oracle_preds[gold.example_id] = oracle_select(candidates, gold)
    policy_f1 = micro_f1(policy_preds, test_golds, SCHEMA)
    oracle_f1 = micro_f1(oracle_preds, test_golds, SCHEMA)
    assert abs(policy_f1 - oracle_f1) <= 1e-9
    _pass("C7", f"override precision {diag.override_precision:.3f}, abstain precision "
                f"{diag.abstain_precision:.3f}; oracle-verifier policy == oracle ({policy_f1:.4f})")


def _brute_force_f1(preds, golds, schema) -> float:
    tp = fp = fn = 0
    for g in golds:
        for name in schema.field_names():
            p, gv = preds[g.example_id][name], g.gold[name]
            if gv is not None and p == gv:
                tp += 1
            elif gv is not None and p is not None:
                fp += 1
                fn += 1
            elif gv is not None:
                fn += 1
            elif p is not None:
                fp += 1
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def test_c8_micro_f1_matches_brute_force():
    rng = np.random.default_rng(8)
    pool = [None, "a", "b", "c", "d"]
    names = SCHEMA.field_names()
    for case in range(200):
        n = int(rng.integers(1, 21))
        golds, preds = [], {}
        for i in range(n):
            eid = f"e{i}"
            golds.append(GoldRecord(eid, "q", {nm: pool[rng.integers(0, len(pool))] for nm in names}))
            preds[eid] = {nm: pool[rng.integers(0, len(pool))] for nm in names}
        assert micro_f1(preds, golds, SCHEMA) == _brute_force_f1(preds, golds, SCHEMA), case
    _pass("C8", "micro-F1 equals brute-force confusion counting on 200 random corpora")


def _run_chain(workdir, seed: int) -> dict[str, bytes]:
    corpus = workdir / "corpus"
    verifier = workdir / "verifier.json"
    policy = workdir / "policy.json"
    run_dir = workdir / "run"
    cmds = [
        ["gen", "--out-dir", str(corpus), "--seed", str(seed), "--n", "600"],
        ["train-verifier", "--corpus", str(corpus), "--out", str(verifier), "--epochs", "150"],
        ["tune", "--corpus", str(corpus), "--verifier", str(verifier), "--out", str(policy), "--grid-step", "0.1"],
        ["run", "--corpus", str(corpus), "--verifier", str(verifier), "--policy", str(policy),
         "--out-dir", str(run_dir)],
        ["report", "--report", str(run_dir / "report.json")],
    ]
    for cmd in cmds:
        proc = subprocess.run([sys.executable, "-m", "fieldwise.cli", *cmd], capture_output=True, text=True)
        assert proc.returncode == 0, (cmd, proc.stderr)
    return {
        "report.json": (run_dir / "report.json").read_bytes(),
        "decisions.jsonl": (run_dir / "decisions.jsonl").read_bytes(),
        "verifier.json": verifier.read_bytes(),
        "policy.json": policy.read_bytes(),
    }


def test_c9_end_to_end_determinism_and_gradient(tmp_path):
    first = _run_chain(tmp_path / "one", seed=4242)
    second = _run_chain(tmp_path / "two", seed=4242)
    for name in first:
        assert first[name] == second[name], f"{name} differs between identical runs"

    rng = np.random.default_rng(99)
    X = rng.random((60, 8))
    y = (rng.random(60) < 0.5).astype(np.float64)
    w = rng.normal(scale=0.4, size=8)
    b = -0.2
    l2 = 1e-3
    gw, gb = bce_grad(X, y, w, b, l2)
    eps = 1e-6
    worst = 0.0
    for j in range(8):
        wp, wm = w.copy(), w.copy()
        wp[j] += eps
        wm[j] -= eps
        numeric = (bce_loss(X, y, wp, b, l2) - bce_loss(X, y, wm, b, l2)) / (2 * eps)
        rel = abs(numeric - gw[j]) / max(1.0, abs(numeric))
        worst = max(worst, rel)
        assert rel <= 1e-5
    numeric_b = (bce_loss(X, y, w, b + eps, l2) - bce_loss(X, y, w, b - eps, l2)) / (2 * eps)
    assert abs(numeric_b - gb) / max(1.0, abs(numeric_b)) <= 1e-5
    digest = hashlib.sha256(first["report.json"]).hexdigest()[:12]
    _pass("C9", f"two seeded runs byte-identical (report sha {digest}); gradient rel err <= 1e-5 (worst {worst:.2e})")


def test_c10_taxonomy_frequencies(default_corpus):
    by_model: dict[str, list] = {}
    for output in default_corpus.outputs:
        by_model.setdefault(output.model_id, []).append(output)
    profiles = {p.model_id: p for p in builtin_profiles()}
    worst = 0.0
    for model, outputs in by_model.items():
        assert len(outputs) >= 5000
        counts = {c: 0 for c in FAILURE_ORDER}
        failures = 0
        for output in outputs:
            category = classify_failure(output, SCHEMA)
            if category is not FailureCategory.NO_FAILURE:
                counts[category] += 1
                failures += 1
        mix = profiles[model].taxonomy_mix
        no_failure_share = 1.0 - failures / len(outputs)
        assert abs(no_failure_share - mix[FailureCategory.NO_FAILURE]) <= 0.03
        fail_mass = 1.0 - mix[FailureCategory.NO_FAILURE]
        for category in FAILURE_ORDER:
            observed = counts[category] / failures
            configured = mix[category] / fail_mass
            gap = abs(observed - configured)
            worst = max(worst, gap)
            assert gap <= 0.03, (model, category, observed, configured)

    # precedence determinism on crafted overlap cases
    from fieldwise.schema import PromptVariant, RawOutput, serialize_fields

    body = serialize_fields({n: "x" for n in SCHEMA.field_names()})
    overlaps = [
        (f"```json\n{body}\n``` also fenced AND trailing", FailureCategory.FENCED_JSON),
        (f"Intro prose {body} trailing words", FailureCategory.PROSE_WRAPPER),
        (serialize_fields({"CAMERA": "x", "extra": "y"}), FailureCategory.MISSING_KEYS),
    ]
    for text, expected in overlaps:
        for _ in range(3):
            got = classify_failure(RawOutput("e0", "m", PromptVariant.ZERO_SHOT, text), SCHEMA)
            assert got is expected
    _pass("C10", f"classified shares within +/-0.03 of configured mixes (worst gap {worst:.3f})")


def test_c11_protocol_integrity(default_corpus, default_result, tmp_path):
    test_id = default_corpus.example_ids("test")[0]
    with pytest.raises(ProtocolViolation):
        default_corpus.scoped_gold("verifier-train")[test_id]
    with pytest.raises(ProtocolViolation):
        default_corpus.scoped_gold("threshold-tune")[test_id]
    with pytest.raises(ProtocolViolation):
        default_corpus.scoped_gold_for_splits("threshold-tune", ["test"])

    corpus_dir = tmp_path / "corpus"
    gen = subprocess.run(
        [sys.executable, "-m", "fieldwise.cli", "gen", "--out-dir", str(corpus_dir), "--seed", "1", "--n", "120"],
        capture_output=True, text=True,
    )
    assert gen.returncode == 0
    proc = subprocess.run(
        [sys.executable, "-m", "fieldwise.cli", "train-verifier",
         "--corpus", str(corpus_dir), "--out", str(tmp_path / "v.json"), "--split", "test"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 3
    assert "protocol violation" in proc.stderr

    attestation = default_result.report.attestation
    test_consumers = [stage for stage, splits in attestation.items() if "test" in splits]
    assert test_consumers == ["final-score"]
    _pass("C11", "train/tune cannot read test labels (exit 3); attestation lists only final-score for test")
