"""Classification of strict-validation failures into six exclusive categories."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .canon import CanonConfig, DEFAULT_CONFIG, _balanced_object_spans, _quoted_key_pattern, repair_near_json, strip_fences
from .errors import DataError
from .schema import RawOutput, Schema, validate_strict


class FailureCategory(enum.Enum):
    FENCED_JSON = "fenced_json"
    PROSE_WRAPPER = "prose_wrapper"
    TRAILING_TEXT = "trailing_text"
    MISSING_KEYS = "missing_keys"
    EXTRA_KEYS = "extra_keys"
    MALFORMED_JSON = "malformed_json"
    NO_FAILURE = "no_failure"


FAILURE_ORDER = (
    FailureCategory.FENCED_JSON,
    FailureCategory.PROSE_WRAPPER,
    FailureCategory.TRAILING_TEXT,
    FailureCategory.MISSING_KEYS,
    FailureCategory.EXTRA_KEYS,
    FailureCategory.MALFORMED_JSON,
)


def _best_span_bounds(text: str, schema: Schema) -> tuple[int, int] | None:
    spans = _balanced_object_spans(text)
    if not spans:
        return None
    patterns = [_quoted_key_pattern(name) for name in schema.field_names()]
    best = None
    best_rank = None
    for start, end in spans:
        body = text[start:end]
        count = sum(1 for p in patterns if p.search(body))
        rank = (count, end - start, -start)
        if best_rank is None or rank > best_rank:
            best_rank = rank
            best = (start, end)
    return best


def classify_failure(raw: RawOutput, schema: Schema, cfg: CanonConfig = DEFAULT_CONFIG) -> FailureCategory:
    """One exclusive category per output, in fixed precedence.

    Precedence follows the canonicalizer stage that resolves the failure:
    fence stripping, then span extraction (leading prose / trailing text),
    then key completeness, with malformed JSON as the residual (including
    near-JSON that only parses after repair and value-type violations).
    """
    text = raw.text
    if validate_strict(text, schema).ok:
        return FailureCategory.NO_FAILURE

    body, stripped = strip_fences(text, cfg)
    if stripped:
        if validate_strict(body, schema).ok:
            return FailureCategory.FENCED_JSON
        bounds = _best_span_bounds(body, schema)
        if bounds is not None:
            value, _ = repair_near_json(body[bounds[0]:bounds[1]], cfg)
            if isinstance(value, dict):
                return FailureCategory.FENCED_JSON

    bounds = _best_span_bounds(body, schema)
    if bounds is None:
        return FailureCategory.MALFORMED_JSON
    start, end = bounds
    if body[:start].strip():
        return FailureCategory.PROSE_WRAPPER
    value, _ = repair_near_json(body[start:end], cfg)
    if not isinstance(value, dict):
        return FailureCategory.MALFORMED_JSON
    if body[end:].strip():
        return FailureCategory.TRAILING_TEXT
    names = schema.field_names()
    if any(n not in value for n in names):
        return FailureCategory.MISSING_KEYS
    if any(k not in names for k in value):
        return FailureCategory.EXTRA_KEYS
    return FailureCategory.MALFORMED_JSON


@dataclass(frozen=True)
class TaxonomyReport:
    """Per-model failure counts and shares (shares are None for models without failures)."""

    counts: dict[str, dict[FailureCategory, int]]
    shares: dict[str, dict[FailureCategory, float] | None]
    totals: dict[str, int]  # outputs per model

    def to_json(self) -> dict:
        return {
            model: {
                "n_outputs": self.totals[model],
                "n_failures": sum(self.counts[model][c] for c in FAILURE_ORDER),
                "counts": {c.value: self.counts[model][c] for c in FAILURE_ORDER},
                "shares": None if self.shares[model] is None
                else {c.value: self.shares[model][c] for c in FAILURE_ORDER},
            }
            for model in sorted(self.counts)
        }


def taxonomy_report(corpus: list[RawOutput], schema: Schema, cfg: CanonConfig = DEFAULT_CONFIG) -> TaxonomyReport:
    """Failure-category shares per model, over strict failures only.

    Models with zero failures get an explicit empty-failure-set marker
    (shares None) rather than a crash.
    """
    if not corpus:
        raise DataError("taxonomy_report needs a non-empty corpus")
    counts: dict[str, dict[FailureCategory, int]] = {}
    totals: dict[str, int] = {}
    for raw in corpus:
        per = counts.setdefault(raw.model_id, {c: 0 for c in FAILURE_ORDER})
        totals[raw.model_id] = totals.get(raw.model_id, 0) + 1
        category = classify_failure(raw, schema, cfg)
        if category is not FailureCategory.NO_FAILURE:
            per[category] += 1
    shares: dict[str, dict[FailureCategory, float] | None] = {}
    for model, per in counts.items():
        n_fail = sum(per.values())
        shares[model] = None if n_fail == 0 else {c: per[c] / n_fail for c in FAILURE_ORDER}
    return TaxonomyReport(counts=counts, shares=shares, totals=totals)
