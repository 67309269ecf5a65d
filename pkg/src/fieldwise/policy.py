"""Keep / override / abstain selection across model candidates.

Per field the policy keeps the base model's value when the verifier trusts
it, swaps in a confidently better alternative, and abstains (null) when no
candidate clears the keep threshold. Thresholds come from an exhaustive
dev-split grid sweep; the sweep itself runs in a kernel (see _kernels) with
pure-integer pooled counts so tie-breaking is exact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from .errors import (
    AlignmentError,
    ConfigError,
    EmptyCandidates,
    EmptyDevSet,
    MissingBase,
)
from .metrics import Match, f1_from_counts, field_match, micro_f1
from .schema import CanonicalRecord, GoldRecord, Schema
from .verifier import VerifierModel

# One dev/test example as consumed by tuning and corpus-level selection:
# (query, candidates keyed by model_id, gold record).
PolicyExample = tuple[str, Mapping[str, CanonicalRecord], GoldRecord]


@dataclass(frozen=True)
class PolicyConfig:
    tau_keep: float
    tau_take: float
    delta_margin: float
    base_model: str
    grid_step: float | None = None
    dev_f1: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.tau_keep <= 1.0 and 0.0 <= self.tau_take <= 1.0):
            raise ConfigError("thresholds must lie in [0, 1]")
        if self.tau_take < self.tau_keep:
            raise ConfigError("tau_take must be >= tau_keep")
        if self.delta_margin < 0.0:
            raise ConfigError("delta_margin must be >= 0")

    def to_json(self) -> dict:
        return {
            "tau_keep": self.tau_keep,
            "tau_take": self.tau_take,
            "delta_margin": self.delta_margin,
            "base_model": self.base_model,
            "grid_step": self.grid_step,
            "dev_f1": self.dev_f1,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyConfig":
        return cls(
            tau_keep=doc["tau_keep"],
            tau_take=doc["tau_take"],
            delta_margin=doc["delta_margin"],
            base_model=doc["base_model"],
            grid_step=doc.get("grid_step"),
            dev_f1=doc.get("dev_f1"),
        )


def save_policy(cfg: PolicyConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_policy(path: str) -> PolicyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return PolicyConfig.from_json(json.load(fh))


class DecisionKind(enum.Enum):
    KEEP = "keep"
    OVERRIDE = "override"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class Decision:
    field: str
    kind: DecisionKind
    value: str | None
    source_model: str | None  # model whose value was chosen; None on abstain
    base_model: str
    base_value: str | None
    confidences: dict[str, float]
    example_id: str = ""

    def __post_init__(self):
        if self.kind is DecisionKind.ABSTAIN and self.value is not None:
            raise ConfigError("abstaining decisions must carry a null value")

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "field": self.field,
            "decision": self.kind.value,
            "value": self.value,
            "source_model": self.source_model,
            "base_model": self.base_model,
            "base_value": self.base_value,
            "confidences": {m: self.confidences[m] for m in sorted(self.confidences)},
        }


def _best_alternative(candidates: Mapping[str, tuple[str | None, float]], base_model: str) -> tuple[str, str | None, float] | None:
    best = None
    for model in sorted(candidates):
        if model == base_model:
            continue
        value, p = candidates[model]
        if best is None or p > best[2]:
            best = (model, value, p)
    return best


def decide_field(
    field: str,
    candidates: Mapping[str, tuple[str | None, float]],
    cfg: PolicyConfig,
    example_id: str = "",
) -> Decision:
    """Apply the keep/override/abstain rule to one field.

    Rule order: (1) override with the best non-base candidate when it clears
    tau_take, beats the base by delta_margin, and is strictly higher; (2) keep
    the base above tau_keep; (3) fall back to a keep-worthy alternative;
    (4) abstain with null.
    """
    if cfg.base_model not in candidates:
        raise MissingBase(f"base model {cfg.base_model!r} not among candidates {sorted(candidates)}")
    base_value, p_base = candidates[cfg.base_model]
    confidences = {m: candidates[m][1] for m in candidates}
    alt = _best_alternative(candidates, cfg.base_model)
    common = dict(
        field=field,
        base_model=cfg.base_model,
        base_value=base_value,
        confidences=confidences,
        example_id=example_id,
    )
    if alt is not None:
        alt_model, alt_value, p_star = alt
        if p_star >= cfg.tau_take and (p_star - p_base) >= cfg.delta_margin and p_star > p_base:
            return Decision(kind=DecisionKind.OVERRIDE, value=alt_value, source_model=alt_model, **common)
    if p_base >= cfg.tau_keep:
        return Decision(kind=DecisionKind.KEEP, value=base_value, source_model=cfg.base_model, **common)
    if alt is not None and alt[2] >= cfg.tau_keep:
        return Decision(kind=DecisionKind.OVERRIDE, value=alt[1], source_model=alt[0], **common)
    return Decision(kind=DecisionKind.ABSTAIN, value=None, source_model=None, **common)


def safe_override(
    query: str,
    candidates: Mapping[str, CanonicalRecord],
    verifier: VerifierModel,
    cfg: PolicyConfig,
) -> tuple[dict[str, str | None], list[Decision]]:
    """Assemble one validated record from multiple candidates.

    Scores every candidate with the verifier, decides per field, and returns
    the field map (strict-valid once serialized) plus the decision log.
    """
    if not candidates:
        raise EmptyCandidates("no candidate records")
    if cfg.base_model not in candidates:
        raise MissingBase(f"base model {cfg.base_model!r} not among candidates {sorted(candidates)}")
    example_ids = {r.example_id for r in candidates.values()}
    if len(example_ids) > 1:
        raise AlignmentError(f"candidates span multiple examples: {sorted(example_ids)}")
    example_id = next(iter(example_ids))

    per_model_scores = {
        model: {c.field: c.p for c in verifier.score_record(query, record)}
        for model, record in candidates.items()
    }
    fields: dict[str, str | None] = {}
    decisions: list[Decision] = []
    for spec in verifier.schema.fields:
        per_field = {
            model: (candidates[model].fields.get(spec.name), per_model_scores[model][spec.name])
            for model in candidates
        }
        decision = decide_field(spec.name, per_field, cfg, example_id=example_id)
        fields[spec.name] = decision.value
        decisions.append(decision)
    return fields, decisions


def _contribution(value: str | None, gold: str | None) -> tuple[int, int, int]:
    outcome = field_match(value, gold, None)
    if outcome is Match.TP:
        return 1, 0, 0
    if outcome is Match.FP_FN:
        return 0, 1, 1
    if outcome is Match.FP:
        return 0, 1, 0
    if outcome is Match.FN:
        return 0, 0, 1
    return 0, 0, 0


def _confidence_table(
    examples: Iterable[PolicyExample],
    verifier: VerifierModel,
) -> list[tuple[str, Mapping[str, CanonicalRecord], GoldRecord, dict[str, dict[str, float]]]]:
    table = []
    for query, candidates, gold in examples:
        scores = {
            model: {c.field: c.p for c in verifier.score_record(query, candidates[model])}
            for model in candidates
        }
        table.append((query, candidates, gold, scores))
    return table


def dev_css_by_model(examples: list[PolicyExample], schema: Schema) -> dict[str, float]:
    """Canonical-score micro-F1 per model over already-canonicalized candidates."""
    models = sorted({m for _, candidates, _ in examples for m in candidates})
    golds = [gold for _, _, gold in examples]
    out = {}
    for model in models:
        preds = {gold.example_id: candidates[model].fields for _, candidates, gold in examples}
        out[model] = micro_f1(preds, golds, schema)
    return out


def _grid_values(grid_step: float) -> list[float]:
    k = round(1.0 / grid_step)
    if k < 1 or abs(k * grid_step - 1.0) > 1e-9:
        raise ConfigError(f"grid step {grid_step} does not divide 1 evenly")
    return [i / k for i in range(k + 1)]


def _f1_key(counts: np.ndarray) -> tuple[int, int]:
    # F1 as an exact fraction (numerator, denominator) for integer comparison.
    tp, fp, fn = (int(v) for v in counts)
    return 2 * tp, 2 * tp + fp + fn


def _precision_key(counts: np.ndarray) -> tuple[int, int]:
    tp, fp, _ = (int(v) for v in counts)
    if tp + fp == 0:
        return 1, 1  # no predictions made: maximally conservative
    return tp, tp + fp


def _frac_cmp(a: tuple[int, int], b: tuple[int, int]) -> int:
    lhs = a[0] * b[1]
    rhs = b[0] * a[1]
    return (lhs > rhs) - (lhs < rhs)


def tune_thresholds(
    dev: list[PolicyExample],
    verifier: VerifierModel,
    base_model: str | None = None,
    grid_step: float = 0.05,
) -> PolicyConfig:
    """Exhaustive grid sweep over (tau_keep, tau_take, delta_margin) on dev.

    Maximizes pooled micro-F1; ties break toward higher precision, then
    lower tau_keep, then lexicographically smaller (tau_take, delta_margin).
    Null-valued fields make abstention F1-neutral, so among equally good
    configs the lowest keep threshold avoids flooding the decision log with
    abstentions that never prevented anything. The base model defaults to
    the dev css argmax.
    """
    if not dev:
        raise EmptyDevSet("threshold tuning needs a non-empty dev set")
    schema = verifier.schema
    if base_model is None:
        css = dev_css_by_model(dev, schema)
        best_css = max(css.values())
        base_model = min(m for m, v in css.items() if v == best_css)

    table = _confidence_table(dev, verifier)
    p_base_rows: list[float] = []
    p_star_rows: list[float] = []
    base_rows: list[tuple[int, int, int]] = []
    star_rows: list[tuple[int, int, int]] = []
    null_rows: list[int] = []
    for query, candidates, gold, scores in table:
        if base_model not in candidates:
            raise MissingBase(f"base model {base_model!r} missing for example {gold.example_id!r}")
        for spec in schema.fields:
            gold_value = gold.gold.get(spec.name)
            base_value = candidates[base_model].fields.get(spec.name)
            per_field = {m: (candidates[m].fields.get(spec.name), scores[m][spec.name]) for m in candidates}
            alt = _best_alternative(per_field, base_model)
            p_base_rows.append(per_field[base_model][1])
            base_rows.append(_contribution(base_value, gold_value))
            if alt is None:
                p_star_rows.append(-1.0)  # below every threshold; never selected
                star_rows.append((0, 0, 0))
            else:
                p_star_rows.append(alt[2])
                star_rows.append(_contribution(alt[1], gold_value))
            null_rows.append(1 if gold_value is not None else 0)

    values = _grid_values(grid_step)
    tks: list[float] = []
    tts: list[float] = []
    dms: list[float] = []
    for tk in values:
        for tt in values:
            if tt < tk:
                continue
            for dm in values:
                tks.append(tk)
                tts.append(tt)
                dms.append(dm)

    counts = _kernels.grid_counts(
        np.array(p_base_rows),
        np.array(p_star_rows),
        np.array(base_rows, dtype=np.int64),
        np.array(star_rows, dtype=np.int64),
        np.array(null_rows, dtype=np.int64),
        np.array(tks),
        np.array(tts),
        np.array(dms),
    )

    best = 0
    for g in range(1, len(tks)):
        c = _frac_cmp(_f1_key(counts[g]), _f1_key(counts[best]))
        if c == 0:
            c = _frac_cmp(_precision_key(counts[g]), _precision_key(counts[best]))
        if c == 0:
            c = (tks[g] < tks[best]) - (tks[g] > tks[best])
        if c == 0:
            c = ((tts[g], dms[g]) < (tts[best], dms[best])) - ((tts[g], dms[g]) > (tts[best], dms[best]))
        if c > 0:
            best = g

    dev_f1 = float(f1_from_counts(int(counts[best][0]), int(counts[best][1]), int(counts[best][2])))
    return PolicyConfig(
        tau_keep=tks[best],
        tau_take=tts[best],
        delta_margin=dms[best],
        base_model=base_model,
        grid_step=grid_step,
        dev_f1=dev_f1,
    )


@dataclass(frozen=True)
class PolicyDiagnostics:
    override_rate: float
    abstain_rate: float
    override_precision: float | None  # None when nothing was overridden
    abstain_precision: float | None  # None when nothing was abstained

    def to_json(self) -> dict:
        return {
            "override_rate": self.override_rate,
            "abstain_rate": self.abstain_rate,
            "override_precision": self.override_precision,
            "abstain_precision": self.abstain_precision,
        }


def diagnostics(decisions: list[Decision], golds: Iterable[GoldRecord]) -> PolicyDiagnostics:
    """Override/abstain rates and precisions against gold labels.

    Override precision counts overrides whose chosen value equals gold;
    abstain precision counts abstentions where the base value was wrong
    (the abstention avoided an error). Empty denominators yield None.
    """
    gold_by_id = {g.example_id: g for g in golds}
    n = len(decisions)
    if n == 0:
        raise AlignmentError("no decisions to diagnose")
    overrides = 0
    abstains = 0
    override_hits = 0
    abstain_hits = 0
    for decision in decisions:
        gold = gold_by_id.get(decision.example_id)
        if gold is None:
            raise AlignmentError(f"no gold record for example {decision.example_id!r}")
        gold_value = gold.gold.get(decision.field)
        if decision.kind is DecisionKind.OVERRIDE:
            overrides += 1
            if decision.value == gold_value:
                override_hits += 1
        elif decision.kind is DecisionKind.ABSTAIN:
            abstains += 1
            if decision.base_value != gold_value:
                abstain_hits += 1
    return PolicyDiagnostics(
        override_rate=overrides / n,
        abstain_rate=abstains / n,
        override_precision=override_hits / overrides if overrides else None,
        abstain_precision=abstain_hits / abstains if abstains else None,
    )
