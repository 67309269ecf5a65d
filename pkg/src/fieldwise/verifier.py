"""Per-field confidence scoring for (query, candidate record) pairs.

The reference verifier is one logistic unit per schema field over a small
hand-built feature vector, trained with full-batch gradient descent on
binary cross-entropy. It is deliberately free of any model-identity signal
so it transfers to held-out model families. External verifiers plug in
through a JSONL score file instead.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from . import _kernels
from .canon import NORMALIZERS
from .errors import (
    DataError,
    DuplicateKey,
    EmptyTrainingSet,
    ParseError,
    RangeError,
)
from .metrics import Match, field_match
from .schema import CanonicalRecord, FieldSpec, GoldRecord, Schema

FEATURE_SPEC_VERSION = "fv1"

FEATURE_NAMES = (
    "value_in_query",
    "token_overlap",
    "unit_pattern_match",
    "is_null",
    "query_mentions_field_cue",
    "value_length_norm",
    "strict_valid",
    "trace_repair_count_norm",
)

# Which feature slots describe the candidate output (value or source record)
# and which describe the query. Cross features (value x query) sit in both,
# so each ablation mode zeroes them.
_OUTPUT_DERIVED = (0, 1, 2, 3, 5, 6, 7)
_QUERY_DERIVED = (0, 1, 4)


class VerifierMode(enum.Enum):
    FULL = "full"
    QUERY_ONLY = "query_only"
    OUTPUT_ONLY = "output_only"


@dataclass(frozen=True)
class FieldConfidence:
    example_id: str
    model_id: str
    field: str
    p: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise RangeError(f"confidence out of range: {self.p}")


@lru_cache(maxsize=4096)
def _tokens(text: str) -> frozenset:
    return frozenset(re.findall(r"[a-z0-9][a-z0-9/.\-]*", text.lower()))


def _value_variants(field: FieldSpec, value: str) -> list[str]:
    v = value.lower()
    if field.normalizer_id == "aperture":
        bare = v.removeprefix("f/")
        return [v, f"f{bare}", bare]
    if field.normalizer_id == "iso":
        return [f"iso {v}", f"iso{v}", v]
    if field.normalizer_id == "shutter":
        if "/" in v:
            return [v]
        return [f"{v}s", f"{v} s", f"{v} sec"]
    if field.normalizer_id == "focal":
        bare = v.removesuffix("mm").strip()
        return [v, f"{bare} mm"]
    return [v]


# Cue patterns target shooting-settings phrasing; the "at " prefix and the
# lowercase "s" distinguish settings from the numbers inside lens names
# ("at f/2.8" vs "Nikkor 50mm f/1.8 S").
_CUE_PATTERNS = {
    "iso": re.compile(r"\biso\b|iso\s*[0-9]", re.IGNORECASE),
    "aperture": re.compile(r"\bat\s+f\s*/?\s*[0-9]|aperture", re.IGNORECASE),
    "shutter": re.compile(r"\b[0-9]+\s*/\s*[0-9]+|[Ss]hutter|\b[0-9]+(?:\.[0-9]+)?\s?s(?:ec)?\b"),
    "focal": re.compile(r"\bat\s+[0-9]+(?:\.[0-9]+)?\s*mm\b|focal", re.IGNORECASE),
}


def _query_cue(field: FieldSpec, query: str) -> float:
    pattern = _CUE_PATTERNS.get(field.normalizer_id)
    if pattern is not None:
        return 1.0 if pattern.search(query) else 0.0
    return 1.0 if field.name.lower() in query.lower() else 0.0


def featurize(
    query: str,
    field: FieldSpec,
    value: str | None,
    record: CanonicalRecord,
    mode: VerifierMode = VerifierMode.FULL,
) -> np.ndarray:
    """Deterministic feature vector for one candidate field value.

    QUERY_ONLY zeroes every output-derived slot (the record is invisible);
    OUTPUT_ONLY zeroes every query-derived slot. All features live in [0, 1].
    """
    x = np.zeros(len(FEATURE_NAMES), dtype=np.float64)
    query_lower = query.lower()
    if value is not None:
        if any(variant in query_lower for variant in _value_variants(field, value)):
            x[0] = 1.0
        value_tokens = _tokens(value)
        query_tokens = _tokens(query)
        if value_tokens and query_tokens:
            union = len(value_tokens | query_tokens)
            x[1] = len(value_tokens & query_tokens) / union if union else 0.0
        normalizer = NORMALIZERS[field.normalizer_id]
        x[2] = 1.0 if normalizer(value) == value else 0.0
        x[5] = min(len(value) / 32.0, 1.0)
    else:
        x[3] = 1.0
    x[4] = _query_cue(field, query)
    x[6] = 1.0 if record.strict_valid else 0.0
    repairs = sum(1 for tag in record.trace if tag.startswith("repaired_"))
    x[7] = min(repairs / 4.0, 1.0)

    if mode is VerifierMode.QUERY_ONLY:
        x[list(_OUTPUT_DERIVED)] = 0.0
    elif mode is VerifierMode.OUTPUT_ONLY:
        x[list(_QUERY_DERIVED)] = 0.0
    return x


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 300
    lr: float = 0.3
    l2: float = 1e-4

    def to_json(self) -> dict:
        return {"seed": self.seed, "epochs": self.epochs, "lr": self.lr, "l2": self.l2}


@dataclass(frozen=True)
class FieldUnit:
    weights: tuple[float, ...]
    bias: float
    degenerate: bool = False
    prior: float | None = None


@dataclass(frozen=True)
class VerifierModel:
    schema: Schema
    mode: VerifierMode
    units: dict[str, FieldUnit]
    hyper: TrainConfig
    feature_spec_version: str = FEATURE_SPEC_VERSION
    train_rows: int = 0

    def score_record(self, query: str, record: CanonicalRecord) -> list["FieldConfidence"]:
        """One confidence per schema field for a candidate record."""
        out = []
        for spec in self.schema.fields:
            unit = self.units[spec.name]
            x = featurize(query, spec, record.fields.get(spec.name), record, self.mode)
            z = float(np.dot(np.asarray(unit.weights), x)) + unit.bias
            out.append(
                FieldConfidence(
                    example_id=record.example_id,
                    model_id=record.model_id,
                    field=spec.name,
                    p=_sigmoid(z),
                )
            )
        return out

    def to_json(self) -> dict:
        return {
            "feature_spec_version": self.feature_spec_version,
            "mode": self.mode.value,
            "schema": self.schema.to_json(),
            "hyper": self.hyper.to_json(),
            "train_rows": self.train_rows,
            "units": {
                name: {
                    "weights": list(unit.weights),
                    "bias": unit.bias,
                    "degenerate": unit.degenerate,
                    "prior": unit.prior,
                }
                for name, unit in self.units.items()
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "VerifierModel":
        version = doc.get("feature_spec_version")
        if version != FEATURE_SPEC_VERSION:
            raise DataError(
                f"verifier was built for feature spec {version!r}, this build expects {FEATURE_SPEC_VERSION!r}"
            )
        schema = Schema.from_json(doc["schema"])
        units = {
            name: FieldUnit(
                weights=tuple(u["weights"]),
                bias=u["bias"],
                degenerate=u.get("degenerate", False),
                prior=u.get("prior"),
            )
            for name, u in doc["units"].items()
        }
        hyper = TrainConfig(**doc["hyper"])
        return cls(
            schema=schema,
            mode=VerifierMode(doc["mode"]),
            units=units,
            hyper=hyper,
            train_rows=doc.get("train_rows", 0),
        )


def save_verifier(model: VerifierModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_verifier(path: str) -> VerifierModel:
    with open(path, "r", encoding="utf-8") as fh:
        return VerifierModel.from_json(json.load(fh))


def _label(pred: str | None, gold: str | None, spec: FieldSpec) -> float:
    outcome = field_match(pred, gold, spec)
    return 1.0 if outcome in (Match.TP, Match.TN) else 0.0


def build_training_matrix(
    triples: Iterable[tuple[str, CanonicalRecord, GoldRecord]],
    schema: Schema,
    mode: VerifierMode,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Per-field feature matrices and labels from (query, candidate, gold) triples."""
    rows: dict[str, list[np.ndarray]] = {f.name: [] for f in schema.fields}
    labels: dict[str, list[float]] = {f.name: [] for f in schema.fields}
    for query, record, gold in triples:
        if record.example_id != gold.example_id:
            raise DataError(
                f"training triple misaligned: record {record.example_id!r} vs gold {gold.example_id!r}"
            )
        for spec in schema.fields:
            value = record.fields.get(spec.name)
            rows[spec.name].append(featurize(query, spec, value, record, mode))
            labels[spec.name].append(_label(value, gold.gold.get(spec.name), spec))
    X = {name: np.array(rows[name], dtype=np.float64) for name in rows}
    y = {name: np.array(labels[name], dtype=np.float64) for name in labels}
    return X, y


def _logit(p: float) -> float:
    p = min(max(p, 1e-6), 1.0 - 1e-6)
    return math.log(p / (1.0 - p))


def train(
    triples: list[tuple[str, CanonicalRecord, GoldRecord]],
    schema: Schema,
    hyper: TrainConfig = TrainConfig(),
    mode: VerifierMode = VerifierMode.FULL,
) -> VerifierModel:
    """Fit one logistic unit per field; deterministic for a fixed config.

    Fields whose labels are single-class get a constant unit at the class
    prior, flagged as degenerate.
    """
    if not triples:
        raise EmptyTrainingSet("no training triples")
    X, y = build_training_matrix(triples, schema, mode)
    units: dict[str, FieldUnit] = {}
    for spec in schema.fields:
        labels = y[spec.name]
        if labels.min() == labels.max():
            prior = float(labels.mean())
            units[spec.name] = FieldUnit(
                weights=(0.0,) * len(FEATURE_NAMES),
                bias=_logit(prior),
                degenerate=True,
                prior=prior,
            )
            continue
        w, b, _ = _kernels.logreg_fit(X[spec.name], labels, hyper.epochs, hyper.lr, hyper.l2)
        units[spec.name] = FieldUnit(weights=tuple(float(v) for v in w), bias=float(b))
    return VerifierModel(
        schema=schema,
        mode=mode,
        units=units,
        hyper=hyper,
        train_rows=len(triples),
    )


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def score(model: VerifierModel, query: str, record: CanonicalRecord) -> list[FieldConfidence]:
    """One confidence per schema field for a candidate record."""
    return model.score_record(query, record)


class ExternalScores:
    """Adapter that serves confidences produced by an external verifier.

    Anything with a schema and a score_record(query, record) method plugs
    into the selection policy; this one looks scores up by
    (example_id, model_id, field).
    """

    def __init__(self, schema: Schema, confidences: list[FieldConfidence]):
        self.schema = schema
        self._by_key: dict[tuple[str, str, str], FieldConfidence] = {}
        for confidence in confidences:
            key = (confidence.example_id, confidence.model_id, confidence.field)
            if key in self._by_key:
                raise DuplicateKey(f"duplicate external score for {key}")
            self._by_key[key] = confidence

    def score_record(self, query: str, record: CanonicalRecord) -> list[FieldConfidence]:
        out = []
        for spec in self.schema.fields:
            key = (record.example_id, record.model_id, spec.name)
            confidence = self._by_key.get(key)
            if confidence is None:
                raise DataError(f"no external score for {key}")
            out.append(confidence)
        return out


def bce_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> float:
    """Reference loss used by the gradient finite-difference check."""
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) + 0.5 * l2 * float(w @ w))


def bce_grad(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> tuple[np.ndarray, float]:
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
    g = p - y
    return X.T @ g / len(y) + l2 * w, float(np.mean(g))


def load_external_scores(path: str) -> list[FieldConfidence]:
    """Read verifier scores produced elsewhere (JSONL, one object per line)."""
    out: list[FieldConfidence] = []
    seen: set[tuple[str, str, str]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                example_id = doc["example_id"]
                model_id = doc["model_id"]
                field = doc["field"]
                p = doc["p"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad score record: {exc}") from None
            if not isinstance(p, (int, float)) or isinstance(p, bool) or not (0.0 <= p <= 1.0):
                raise RangeError(f"{path}:{lineno}: p={p!r} outside [0, 1]")
            key = (example_id, model_id, field)
            if key in seen:
                raise DuplicateKey(f"{path}:{lineno}: duplicate score for {key}")
            seen.add(key)
            out.append(FieldConfidence(example_id, model_id, field, float(p)))
    return out
