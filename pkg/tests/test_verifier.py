from __future__ import annotations

import json

import numpy as np
import pytest

from fieldwise.errors import DataError, DuplicateKey, EmptyTrainingSet, ParseError, RangeError
from fieldwise.schema import CanonicalRecord, GoldRecord, default_camera_schema
from fieldwise.verifier import (
    FEATURE_NAMES,
    ExternalScores,
    TrainConfig,
    VerifierMode,
    bce_grad,
    bce_loss,
    build_training_matrix,
    featurize,
    load_external_scores,
    load_verifier,
    save_verifier,
    score,
    train,
)

SCHEMA = default_camera_schema()
ISO = SCHEMA.field("ISO")
CAMERA = SCHEMA.field("CAMERA")
QUERY = "Shot with the Canon EOS R5 at f/2.8, ISO 400"


def record(**values) -> CanonicalRecord:
    full = {n: values.get(n) for n in SCHEMA.field_names()}
    return CanonicalRecord("e1", "m1", full, strict_valid=True)


def test_featurize_value_in_query():
    x = featurize(QUERY, ISO, "400", record(ISO="400"))
    assert x[FEATURE_NAMES.index("value_in_query")] == 1.0


def test_featurize_value_in_query_handles_unit_variants():
    aperture = SCHEMA.field("APERTURE")
    x = featurize("settings were f2.8 that day", aperture, "f/2.8", record(APERTURE="f/2.8"))
    assert x[FEATURE_NAMES.index("value_in_query")] == 1.0


def test_featurize_null_value():
    x = featurize(QUERY, ISO, None, record())
    assert x[FEATURE_NAMES.index("is_null")] == 1.0
    assert x[FEATURE_NAMES.index("token_overlap")] == 0.0
    assert x[FEATURE_NAMES.index("value_length_norm")] == 0.0


def test_featurize_bounds():
    for value in (None, "400", "a very long value " * 5):
        x = featurize(QUERY, ISO, value if value is None else value, record(ISO="400"))
        assert np.all(x >= 0.0) and np.all(x <= 1.0)


def test_query_only_masks_everything_output_derived():
    rec_a = record(ISO="400")
    rec_b = CanonicalRecord("e1", "m2", {n: "zzz" for n in SCHEMA.field_names()}, False, ("repaired_single_quotes",))
    xa = featurize(QUERY, ISO, "400", rec_a, VerifierMode.QUERY_ONLY)
    xb = featurize(QUERY, ISO, "zzz", rec_b, VerifierMode.QUERY_ONLY)
    assert np.array_equal(xa, xb)  # invariant to the candidate record


def test_output_only_masks_query_derived():
    rec = record(ISO="400")
    xa = featurize(QUERY, ISO, "400", rec, VerifierMode.OUTPUT_ONLY)
    xb = featurize("a completely different query", ISO, "400", rec, VerifierMode.OUTPUT_ONLY)
    assert np.array_equal(xa, xb)  # invariant to the query


def test_featurize_counts_repairs():
    rec = CanonicalRecord("e1", "m1", {n: None for n in SCHEMA.field_names()}, False,
                          ("repaired_trailing_comma", "repaired_single_quotes"))
    x = featurize(QUERY, ISO, None, rec)
    assert x[FEATURE_NAMES.index("trace_repair_count_norm")] == pytest.approx(0.5)


def make_triples(n: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    triples = []
    for i in range(n):
        eid = f"e{i}"
        iso = str(int(rng.choice([100, 200, 400, 800])))
        correct = bool(rng.random() < 0.5)
        pred_iso = iso if correct else str(int(rng.choice([1600, 3200])))
        query = f"Shot at ISO {iso} yesterday"
        gold = {name: None for name in SCHEMA.field_names()}
        gold["ISO"] = iso
        pred = {name: None for name in SCHEMA.field_names()}
        pred["ISO"] = pred_iso
        triples.append((
            query,
            CanonicalRecord(eid, "m", pred, strict_valid=True),
            GoldRecord(eid, query, gold),
        ))
    return triples


def test_train_learns_separable_signal():
    model = train(make_triples(400), SCHEMA, TrainConfig(epochs=400, lr=0.5))
    correct = 0
    total = 0
    for query, rec, gold in make_triples(400):
        confidences = {c.field: c.p for c in score(model, query, rec)}
        predicted = confidences["ISO"] >= 0.5
        actual = rec.fields["ISO"] == gold.gold["ISO"]
        correct += predicted == actual
        total += 1
    assert correct / total >= 0.99


def test_train_zero_epochs_gives_uniform_half():
    model = train(make_triples(50), SCHEMA, TrainConfig(epochs=0))
    confidences = score(model, "whatever query", record(ISO="400"))
    for c in confidences:
        if not model.units[c.field].degenerate:
            assert c.p == 0.5


def test_train_deterministic():
    a = train(make_triples(100), SCHEMA, TrainConfig(seed=1))
    b = train(make_triples(100), SCHEMA, TrainConfig(seed=1))
    assert a.units == b.units


def test_train_empty_raises():
    with pytest.raises(EmptyTrainingSet):
        train([], SCHEMA)


def test_single_class_fields_get_constant_units():
    model = train(make_triples(60), SCHEMA)
    # every field except ISO is always null and matches null gold: all positive
    unit = model.units["CAMERA"]
    assert unit.degenerate and unit.prior == 1.0
    confidences = {c.field: c.p for c in score(model, QUERY, record())}
    assert confidences["CAMERA"] > 0.99


def test_training_loss_non_increasing():
    from fieldwise._kernels import logreg_fit

    X, y = build_training_matrix(make_triples(300), SCHEMA, VerifierMode.FULL)
    _, _, losses = logreg_fit(X["ISO"], y["ISO"], epochs=200, lr=0.3, l2=1e-4)
    assert np.all(np.diff(losses) <= 1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.random((40, len(FEATURE_NAMES)))
    y = (rng.random(40) < 0.5).astype(np.float64)
    w = rng.normal(scale=0.5, size=len(FEATURE_NAMES))
    b = 0.3
    l2 = 1e-3
    gw, gb = bce_grad(X, y, w, b, l2)
    eps = 1e-6
    for j in range(len(w)):
        wp, wm = w.copy(), w.copy()
        wp[j] += eps
        wm[j] -= eps
        numeric = (bce_loss(X, y, wp, b, l2) - bce_loss(X, y, wm, b, l2)) / (2 * eps)
        assert abs(numeric - gw[j]) <= 1e-5 * max(1.0, abs(numeric))
    numeric_b = (bce_loss(X, y, w, b + eps, l2) - bce_loss(X, y, w, b - eps, l2)) / (2 * eps)
    assert abs(numeric_b - gb) <= 1e-5 * max(1.0, abs(numeric_b))


def test_score_emits_one_confidence_per_field():
    model = train(make_triples(50), SCHEMA)
    confidences = score(model, QUERY, record(ISO="400"))
    assert len(confidences) == 6
    assert [c.field for c in confidences] == list(SCHEMA.field_names())
    assert all(0.0 <= c.p <= 1.0 for c in confidences)


def test_score_ignores_model_identity():
    model = train(make_triples(100), SCHEMA)
    rec_a = record(ISO="400")
    rec_b = CanonicalRecord("e1", "other-model", dict(rec_a.fields), rec_a.strict_valid, rec_a.trace)
    pa = [c.p for c in score(model, QUERY, rec_a)]
    pb = [c.p for c in score(model, QUERY, rec_b)]
    assert pa == pb


def test_learned_value_in_query_weight_is_positive_and_monotone():
    model = train(make_triples(400), SCHEMA, TrainConfig(epochs=400, lr=0.5))
    unit = model.units["ISO"]
    idx = FEATURE_NAMES.index("value_in_query")
    assert unit.weights[idx] > 0
    x = featurize("Shot at ISO 400", ISO, "400", record(ISO="400"))
    x_flipped = x.copy()
    x_flipped[idx] = 0.0
    z = float(np.dot(unit.weights, x)) + unit.bias
    z_flipped = float(np.dot(unit.weights, x_flipped)) + unit.bias
    assert z > z_flipped


def test_model_json_round_trip(tmp_path):
    model = train(make_triples(80), SCHEMA, TrainConfig(seed=5, epochs=50))
    path = tmp_path / "verifier.json"
    save_verifier(model, str(path))
    loaded = load_verifier(str(path))
    assert loaded == model


def test_feature_spec_skew_rejected(tmp_path):
    model = train(make_triples(30), SCHEMA)
    doc = model.to_json()
    doc["feature_spec_version"] = "fv0"
    path = tmp_path / "old.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_verifier(str(path))


def test_load_external_scores(tmp_path):
    path = tmp_path / "scores.jsonl"
    rows = [
        {"example_id": "e1", "model_id": "m", "field": "ISO", "p": 0.5},
        {"example_id": "e1", "model_id": "m", "field": "CAMERA", "p": 1.0},
        {"example_id": "e2", "model_id": "m", "field": "ISO", "p": 0.0},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    scores = load_external_scores(str(path))
    assert len(scores) == 3


def test_external_scores_range_error(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text('{"example_id": "e1", "model_id": "m", "field": "ISO", "p": 1.3}\n')
    with pytest.raises(RangeError):
        load_external_scores(str(path))


def test_external_scores_duplicate_key(tmp_path):
    path = tmp_path / "scores.jsonl"
    row = '{"example_id": "e1", "model_id": "m", "field": "ISO", "p": 0.5}\n'
    path.write_text(row + row)
    with pytest.raises(DuplicateKey):
        load_external_scores(str(path))


def test_external_scores_parse_error_carries_line(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text('{"example_id": "e1", "model_id": "m", "field": "ISO", "p": 0.5}\nnot json\n')
    with pytest.raises(ParseError) as info:
        load_external_scores(str(path))
    assert info.value.line == 2


def test_external_scores_adapter_serves_policy_lookups():
    from fieldwise.verifier import FieldConfidence

    confs = [FieldConfidence("e1", "m1", name, 0.25) for name in SCHEMA.field_names()]
    adapter = ExternalScores(SCHEMA, confs)
    out = adapter.score_record("query", record(ISO="400"))
    assert [c.p for c in out] == [0.25] * 6
    with pytest.raises(DataError):
        adapter.score_record("query", CanonicalRecord("missing", "m1", record().fields, True))
