"""Micro-F1 scoring under strict (ros) and canonicalized (css) protocols.

Terminology used across the package:
  ros  - raw-output score: strict parse + schema validation, failures
         score as all-null predictions.
  css  - canonical semantic score: the canonicalizer runs first, so only
         genuine semantic errors cost credit.
  delta = css - ros, the share of failure attributable to formatting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping

from .canon import CanonConfig, DEFAULT_CONFIG, canonicalize, normalize_value
from .errors import AlignmentError, TooFewModels
from .schema import CanonicalRecord, FieldSpec, GoldRecord, RawOutput, Schema, validate_strict


class Match(enum.Enum):
    TP = "tp"
    FP_FN = "fp_fn"  # wrong non-null prediction: one FP and one FN
    FP = "fp"
    FN = "fn"
    TN = "tn"  # both null; excluded from micro-F1 pools


def field_match(pred: str | None, gold: str | None, field: FieldSpec) -> Match:
    """CoNLL-style per-field outcome for already-normalized values."""
    if gold is not None:
        if pred == gold:
            return Match.TP
        if pred is not None:
            return Match.FP_FN
        return Match.FN
    if pred is not None:
        return Match.FP
    return Match.TN


@dataclass
class FieldConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, outcome: Match) -> None:
        if outcome is Match.TP:
            self.tp += 1
        elif outcome is Match.FP_FN:
            self.fp += 1
            self.fn += 1
        elif outcome is Match.FP:
            self.fp += 1
        elif outcome is Match.FN:
            self.fn += 1

    def merge(self, other: "FieldConfusion") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def confusion_counts(
    preds: Mapping[str, Mapping[str, str | None]],
    golds: Iterable[GoldRecord],
    schema: Schema,
) -> FieldConfusion:
    """Pooled confusion counts over all fields and examples (keyed by example_id)."""
    golds = list(golds)
    gold_ids = {g.example_id for g in golds}
    if gold_ids != set(preds):
        missing = sorted(gold_ids ^ set(preds))[:5]
        raise AlignmentError(f"preds and golds disagree on example ids (e.g. {missing})")
    if len(gold_ids) != len(golds):
        raise AlignmentError("duplicate example_id in gold records")
    pooled = FieldConfusion()
    for gold in golds:
        pred = preds[gold.example_id]
        for spec in schema.fields:
            pooled.add(field_match(pred.get(spec.name), gold.gold.get(spec.name), spec))
    return pooled


def micro_f1(
    preds: Mapping[str, Mapping[str, str | None]],
    golds: Iterable[GoldRecord],
    schema: Schema,
) -> float:
    """Micro-averaged F1 pooled over all fields and examples; 0 when no TP."""
    pooled = confusion_counts(preds, golds, schema)
    return f1_from_counts(pooled.tp, pooled.fp, pooled.fn)


def strict_prediction(raw: RawOutput, schema: Schema) -> dict[str, str | None]:
    """The ros protocol's prediction for one output: parsed values when the
    text strict-validates (normalized), otherwise all-null."""
    result = validate_strict(raw.text, schema)
    if not result.ok:
        return {name: None for name in schema.field_names()}
    return {spec.name: normalize_value(spec, result.fields[spec.name]) for spec in schema.fields}


def _check_one_per_example(raws: list[RawOutput]) -> None:
    seen = set()
    for raw in raws:
        if raw.example_id in seen:
            raise AlignmentError(f"multiple outputs for example {raw.example_id!r}; score one model at a time")
        seen.add(raw.example_id)


def ros_score(raws: list[RawOutput], golds: Iterable[GoldRecord], schema: Schema) -> float:
    _check_one_per_example(raws)
    preds = {raw.example_id: strict_prediction(raw, schema) for raw in raws}
    return micro_f1(preds, golds, schema)


def css_score(
    raws: list[RawOutput],
    golds: Iterable[GoldRecord],
    schema: Schema,
    cfg: CanonConfig = DEFAULT_CONFIG,
) -> float:
    _check_one_per_example(raws)
    preds = {raw.example_id: canonicalize(raw, schema, cfg).fields for raw in raws}
    return micro_f1(preds, golds, schema)


def cross_model_gap(scores: Mapping[str, float]) -> float:
    if len(scores) < 2:
        raise TooFewModels("cross-model gap needs at least two models")
    values = list(scores.values())
    return max(values) - min(values)


def oracle_select(candidates: Mapping[str, CanonicalRecord], gold: GoldRecord) -> dict[str, str | None]:
    """Per-field upper bound: any candidate value equal to gold, else null.

    Falling back to null (rather than some wrong candidate) keeps the oracle
    pointwise optimal over the reachable choices (candidate values plus
    abstention), which makes oracle dominance an exact inequality.
    """
    out: dict[str, str | None] = {}
    ordered = [candidates[m] for m in sorted(candidates)]
    for record in ordered:
        if record.example_id != gold.example_id:
            raise AlignmentError(
                f"candidate {record.model_id!r} is for example {record.example_id!r}, gold is {gold.example_id!r}"
            )
    for name, gold_value in gold.gold.items():
        chosen: str | None = None
        for record in ordered:
            if record.fields.get(name) == gold_value:
                chosen = gold_value
                break
        out[name] = chosen
    return out


@dataclass(frozen=True)
class ModelScores:
    ros: float
    css: float

    @property
    def delta(self) -> float:
        return self.css - self.ros

    def to_json(self) -> dict:
        return {"ros": self.ros, "css": self.css, "delta": self.delta}


@dataclass(frozen=True)
class Cascade:
    best_single_ros: float
    best_single_css: float
    safe_override_css: float
    oracle_css: float

    def to_json(self) -> dict:
        return {
            "best_single_ros": self.best_single_ros,
            "best_single_css": self.best_single_css,
            "safe_override_css": self.safe_override_css,
            "oracle_css": self.oracle_css,
        }


@dataclass(frozen=True)
class MetricsReport:
    per_model: dict[str, ModelScores]
    cross_model_gap_ros: float
    cross_model_gap_css: float
    cascade: Cascade

    def to_json(self) -> dict:
        return {
            "per_model": {m: self.per_model[m].to_json() for m in sorted(self.per_model)},
            "cross_model_gap_ros": self.cross_model_gap_ros,
            "cross_model_gap_css": self.cross_model_gap_css,
            "cascade": self.cascade.to_json(),
        }
