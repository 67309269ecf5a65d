"""Corpus persistence, split-protocol enforcement, and the pipeline runner.

Gold labels flow to pipeline stages only through split-scoped views: the
verifier trainer may read train, threshold tuning may read dev, and only
final scoring may read test. A stage asking for anything else raises
ProtocolViolation, and every grant is recorded in the run report's
attestation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .benchgen import GenConfig, ModelProfile, generate_corpus
from .canon import CanonConfig, DEFAULT_CONFIG, canonicalize
from .errors import (
    DataError,
    DuplicateKey,
    IntegrityError,
    ParseError,
    ProtocolViolation,
    SchemaMismatch,
)
from .metrics import (
    Cascade,
    MetricsReport,
    ModelScores,
    cross_model_gap,
    micro_f1,
    oracle_select,
    strict_prediction,
)
from .policy import Decision, PolicyConfig, PolicyDiagnostics, diagnostics, safe_override, tune_thresholds
from .schema import CanonicalRecord, GoldRecord, PromptVariant, RawOutput, Schema, load_schema, save_schema
from .taxonomy import FAILURE_ORDER, TaxonomyReport, taxonomy_report
from .verifier import TrainConfig, VerifierMode, VerifierModel, train

SPLITS = ("train", "dev", "test")

# Which pipeline stage may read which gold splits. Only the final scorer
# ever sees test labels.
STAGE_SPLITS = {
    "verifier-train": frozenset({"train"}),
    "threshold-tune": frozenset({"dev"}),
    "final-score": frozenset({"test"}),
}


class SplitScopedGold:
    """Read-only gold access restricted to a stage's allowed splits."""

    def __init__(self, records: dict[str, GoldRecord], allowed: frozenset, consumer: str):
        self._records = records
        self._allowed = allowed
        self._consumer = consumer

    def __getitem__(self, example_id: str) -> GoldRecord:
        record = self._records.get(example_id)
        if record is None:
            raise IntegrityError(f"unknown example {example_id!r}")
        if record.split not in self._allowed:
            raise ProtocolViolation(
                f"stage {self._consumer!r} tried to read {record.split}-split gold "
                f"labels for {example_id!r} (allowed: {sorted(self._allowed)})"
            )
        return record

    def records(self) -> list[GoldRecord]:
        return sorted(
            (r for r in self._records.values() if r.split in self._allowed),
            key=lambda r: r.example_id,
        )


@dataclass
class Corpus:
    schema: Schema
    golds: list[GoldRecord]
    outputs: list[RawOutput]
    provenance: dict

    def __post_init__(self):
        by_id: dict[str, GoldRecord] = {}
        for gold in self.golds:
            if gold.example_id in by_id:
                raise DuplicateKey(f"duplicate gold record for {gold.example_id!r}")
            if gold.split not in SPLITS:
                raise DataError(f"unknown split {gold.split!r} for {gold.example_id!r}")
            if set(gold.gold) != set(self.schema.field_names()):
                raise SchemaMismatch(
                    f"gold for {gold.example_id!r} has keys {sorted(gold.gold)}, "
                    f"schema expects {sorted(self.schema.field_names())}"
                )
            by_id[gold.example_id] = gold
        seen = set()
        for output in self.outputs:
            if output.example_id not in by_id:
                raise IntegrityError(f"output references unknown example {output.example_id!r}")
            key = (output.example_id, output.model_id, output.prompt_variant)
            if key in seen:
                raise DuplicateKey(f"duplicate output for {key}")
            seen.add(key)
        self._by_id = by_id

    def model_ids(self) -> list[str]:
        return sorted({o.model_id for o in self.outputs})

    def example_ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return sorted(self._by_id)
        return sorted(g.example_id for g in self.golds if g.split == split)

    def split_sizes(self) -> dict[str, int]:
        sizes = {s: 0 for s in SPLITS}
        for gold in self.golds:
            sizes[gold.split] += 1
        return sizes

    def gold_for_split(self, split: str) -> list[GoldRecord]:
        return sorted((g for g in self.golds if g.split == split), key=lambda g: g.example_id)

    def scoped_gold(self, consumer: str, attestation: dict | None = None) -> SplitScopedGold:
        """Grant the stage its allowed splits, recording the grant."""
        allowed = STAGE_SPLITS.get(consumer)
        if allowed is None:
            raise ProtocolViolation(f"unknown pipeline stage {consumer!r}")
        if attestation is not None:
            attestation[consumer] = sorted(allowed)
        return SplitScopedGold(self._by_id, allowed, consumer)

    def scoped_gold_for_splits(self, consumer: str, splits, attestation: dict | None = None) -> SplitScopedGold:
        """Like scoped_gold but for an explicit split request (e.g. a CLI flag)."""
        allowed = STAGE_SPLITS.get(consumer)
        if allowed is None:
            raise ProtocolViolation(f"unknown pipeline stage {consumer!r}")
        requested = frozenset(splits)
        if not requested <= allowed:
            raise ProtocolViolation(
                f"stage {consumer!r} may not read splits {sorted(requested - allowed)}"
            )
        if attestation is not None:
            attestation[consumer] = sorted(requested)
        return SplitScopedGold(self._by_id, requested, consumer)


def _dump(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=True)


def save_corpus(directory: str, corpus: Corpus, profiles: list[ModelProfile] | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "gold.jsonl"), "w", encoding="utf-8") as fh:
        for gold in corpus.golds:
            fh.write(_dump({
                "example_id": gold.example_id,
                "query": gold.query,
                "split": gold.split,
                "gold": gold.gold,
            }) + "\n")
    with open(os.path.join(directory, "outputs.jsonl"), "w", encoding="utf-8") as fh:
        for output in corpus.outputs:
            fh.write(_dump({
                "example_id": output.example_id,
                "model_id": output.model_id,
                "prompt_variant": output.prompt_variant.value,
                "text": output.text,
            }) + "\n")
    save_schema(corpus.schema, os.path.join(directory, "schema.json"))
    with open(os.path.join(directory, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(corpus.provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if profiles is not None:
        with open(os.path.join(directory, "profiles.json"), "w", encoding="utf-8") as fh:
            json.dump([p.to_json() for p in profiles], fh, indent=2, sort_keys=True)
            fh.write("\n")


def _read_jsonl(path: str) -> list[tuple[int, dict]]:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not isinstance(doc, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            docs.append((lineno, doc))
    return docs


def load_corpus(directory: str) -> Corpus:
    """Load gold.jsonl + outputs.jsonl + schema.json with integrity checks."""
    schema_path = os.path.join(directory, "schema.json")
    if not os.path.exists(schema_path):
        raise DataError(f"no schema.json in {directory}")
    schema = load_schema(schema_path)

    golds = []
    gold_path = os.path.join(directory, "gold.jsonl")
    for lineno, doc in _read_jsonl(gold_path):
        try:
            golds.append(GoldRecord(
                example_id=doc["example_id"],
                query=doc["query"],
                gold=doc["gold"],
                split=doc["split"],
            ))
        except KeyError as exc:
            raise ParseError(gold_path, lineno, f"missing key {exc}") from None

    outputs = []
    outputs_path = os.path.join(directory, "outputs.jsonl")
    for lineno, doc in _read_jsonl(outputs_path):
        try:
            outputs.append(RawOutput(
                example_id=doc["example_id"],
                model_id=doc["model_id"],
                prompt_variant=PromptVariant(doc["prompt_variant"]),
                text=doc["text"],
            ))
        except (KeyError, ValueError) as exc:
            raise ParseError(outputs_path, lineno, f"bad output record: {exc}") from None

    provenance = {"generator_seed": "external", "config_hash": None}
    provenance_path = os.path.join(directory, "provenance.json")
    if os.path.exists(provenance_path):
        with open(provenance_path, "r", encoding="utf-8") as fh:
            provenance = json.load(fh)

    return Corpus(schema=schema, golds=golds, outputs=outputs, provenance=provenance)


def generate_and_save(cfg: GenConfig, directory: str) -> Corpus:
    golds, outputs = generate_corpus(cfg)
    corpus = Corpus(
        schema=cfg.schema(),
        golds=golds,
        outputs=outputs,
        provenance={"generator_seed": cfg.seed, "config_hash": cfg.config_hash()},
    )
    save_corpus(directory, corpus, profiles=list(cfg.profiles))
    with open(os.path.join(directory, "gen_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return corpus


@dataclass(frozen=True)
class RunReport:
    metrics: MetricsReport
    policy_diagnostics: PolicyDiagnostics
    taxonomy: TaxonomyReport
    config: dict
    attestation: dict[str, list[str]]

    def to_json(self) -> dict:
        return {
            "metrics": self.metrics.to_json(),
            "policy_diagnostics": self.policy_diagnostics.to_json(),
            "taxonomy": self.taxonomy.to_json(),
            "config": self.config,
            "attestation": {k: self.attestation[k] for k in sorted(self.attestation)},
        }

    def render_text(self) -> str:
        return render_report(self.to_json())


def render_taxonomy_table(doc: dict) -> str:
    """Aligned text table from a TaxonomyReport.to_json() document."""
    lines = ["Failure taxonomy (share of strict failures)"]
    lines.append(f"{'model':<18}" + "".join(f"{c.value:>16}" for c in FAILURE_ORDER))
    for model in sorted(doc):
        shares = doc[model]["shares"]
        if shares is None:
            lines.append(f"{model:<18}" + f"{'no failures':>16}")
        else:
            lines.append(f"{model:<18}" + "".join(f"{shares[c.value]:>16.3f}" for c in FAILURE_ORDER))
    return "\n".join(lines)


def render_scores_table(per_model: dict, gap_ros: float | None = None, gap_css: float | None = None) -> str:
    lines = [f"{'model':<18}{'ros':>8}{'css':>8}{'delta':>8}"]
    for model in sorted(per_model):
        s = per_model[model]
        lines.append(f"{model:<18}{s['ros']:>8.3f}{s['css']:>8.3f}{s['delta']:>8.3f}")
    if gap_ros is not None and gap_css is not None:
        lines.append(f"{'cross-model gap':<18}{gap_ros:>8.3f}{gap_css:>8.3f}{'':>8}")
    return "\n".join(lines)


def render_report(doc: dict) -> str:
    """Aligned text rendering of a RunReport.to_json() document."""
    lines = ["Per-model scores (test split)"]
    metrics = doc["metrics"]
    lines.append(render_scores_table(
        metrics["per_model"], metrics["cross_model_gap_ros"], metrics["cross_model_gap_css"]
    ))
    lines.append("")
    lines.append("Cascade (test split)")
    for label in ("best_single_ros", "best_single_css", "safe_override_css", "oracle_css"):
        lines.append(f"{label:<18}{metrics['cascade'][label]:>8.3f}")
    lines.append("")
    lines.append("Policy diagnostics")
    diag = doc["policy_diagnostics"]
    for label in ("override_rate", "abstain_rate", "override_precision", "abstain_precision"):
        value = diag[label]
        text = "n/a" if value is None else f"{value:.3f}"
        lines.append(f"{label:<20}{text:>8}")
    lines.append("")
    lines.append(render_taxonomy_table(doc["taxonomy"]))
    lines.append("")
    lines.append("Attestation (gold splits read per stage)")
    for stage in sorted(doc["attestation"]):
        lines.append(f"  {stage}: {', '.join(doc['attestation'][stage])}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PipelineResult:
    report: RunReport
    verifier: VerifierModel
    policy: PolicyConfig
    decisions: list[Decision]


def canonical_records(corpus: Corpus, canon_cfg: CanonConfig = DEFAULT_CONFIG) -> dict[str, dict[str, CanonicalRecord]]:
    """Canonicalize every output once, keyed model -> example."""
    models = corpus.model_ids()
    canon: dict[str, dict[str, CanonicalRecord]] = {m: {} for m in models}
    for output in corpus.outputs:
        canon[output.model_id][output.example_id] = canonicalize(output, corpus.schema, canon_cfg)
    all_ids = set(corpus.example_ids())
    for model in models:
        missing = all_ids - set(canon[model])
        if missing:
            raise IntegrityError(f"model {model!r} lacks outputs for {len(missing)} examples")
    return canon


def _final_scoring(
    corpus: Corpus,
    canon: dict[str, dict[str, CanonicalRecord]],
    verifier: VerifierModel,
    policy: PolicyConfig,
    attestation: dict[str, list[str]],
    canon_cfg: CanonConfig,
) -> tuple[MetricsReport, PolicyDiagnostics, TaxonomyReport, list[Decision]]:
    models = corpus.model_ids()
    final_gold = corpus.scoped_gold("final-score", attestation)
    test_ids = corpus.example_ids("test")
    test_golds = [final_gold[eid] for eid in test_ids]
    outputs_by_model: dict[str, dict[str, RawOutput]] = {m: {} for m in models}
    for output in corpus.outputs:
        outputs_by_model[output.model_id][output.example_id] = output

    per_model: dict[str, ModelScores] = {}
    for model in models:
        ros_preds = {eid: strict_prediction(outputs_by_model[model][eid], corpus.schema) for eid in test_ids}
        css_preds = {eid: canon[model][eid].fields for eid in test_ids}
        per_model[model] = ModelScores(
            ros=micro_f1(ros_preds, test_golds, corpus.schema),
            css=micro_f1(css_preds, test_golds, corpus.schema),
        )

    override_preds: dict[str, dict[str, str | None]] = {}
    oracle_preds: dict[str, dict[str, str | None]] = {}
    decisions: list[Decision] = []
    for gold in test_golds:
        candidates = {m: canon[m][gold.example_id] for m in models}
        fields, example_decisions = safe_override(gold.query, candidates, verifier, policy)
        override_preds[gold.example_id] = fields
        decisions.extend(example_decisions)
        oracle_preds[gold.example_id] = oracle_select(candidates, gold)

    cascade = Cascade(
        best_single_ros=max(s.ros for s in per_model.values()),
        best_single_css=max(s.css for s in per_model.values()),
        safe_override_css=micro_f1(override_preds, test_golds, corpus.schema),
        oracle_css=micro_f1(oracle_preds, test_golds, corpus.schema),
    )
    many = len(models) > 1
    metrics = MetricsReport(
        per_model=per_model,
        cross_model_gap_ros=cross_model_gap({m: s.ros for m, s in per_model.items()}) if many else 0.0,
        cross_model_gap_css=cross_model_gap({m: s.css for m, s in per_model.items()}) if many else 0.0,
        cascade=cascade,
    )
    test_outputs = [outputs_by_model[m][eid] for eid in test_ids for m in models]
    taxonomy = taxonomy_report(test_outputs, corpus.schema, canon_cfg)
    policy_diag = diagnostics(decisions, test_golds)
    return metrics, policy_diag, taxonomy, decisions


def _config_echo(
    corpus: Corpus,
    verifier: VerifierModel,
    policy: PolicyConfig,
    canon_cfg: CanonConfig,
    train_models: list[str],
) -> dict:
    return {
        "provenance": corpus.provenance,
        "split_sizes": corpus.split_sizes(),
        "models": corpus.model_ids(),
        "train_models": sorted(train_models),
        "verifier": {
            "mode": verifier.mode.value,
            "hyper": verifier.hyper.to_json(),
            "train_rows": verifier.train_rows,
        },
        "policy": policy.to_json(),
        "canon": canon_cfg.to_json(),
    }


def run_pipeline(
    corpus: Corpus,
    verifier_mode: VerifierMode = VerifierMode.FULL,
    grid_step: float = 0.05,
    hyper: TrainConfig = TrainConfig(),
    train_models: list[str] | None = None,
    canon_cfg: CanonConfig = DEFAULT_CONFIG,
    canon: dict[str, dict[str, CanonicalRecord]] | None = None,
) -> PipelineResult:
    """Full protocol: train on train, tune on dev, score on test.

    train_models restricts which models' outputs feed verifier training
    (hold-out evaluation); candidates at tune/test time always cover every
    model in the corpus. Canonicalization is pure, so callers re-running the
    pipeline on one corpus may pass canonical_records(...) back in.
    """
    sizes = corpus.split_sizes()
    for split in SPLITS:
        if sizes[split] == 0:
            raise DataError(f"corpus has no {split} examples")
    models = corpus.model_ids()
    if not models:
        raise DataError("corpus has no outputs")
    if canon is None:
        canon = canonical_records(corpus, canon_cfg)

    attestation: dict[str, list[str]] = {}

    train_gold = corpus.scoped_gold("verifier-train", attestation)
    training_models = train_models if train_models is not None else models
    unknown = set(training_models) - set(models)
    if unknown:
        raise DataError(f"train_models not in corpus: {sorted(unknown)}")
    triples = []
    for example_id in corpus.example_ids("train"):
        gold = train_gold[example_id]
        for model in training_models:
            triples.append((gold.query, canon[model][example_id], gold))
    verifier = train(triples, corpus.schema, hyper, verifier_mode)

    tune_gold = corpus.scoped_gold("threshold-tune", attestation)
    dev_examples = []
    for example_id in corpus.example_ids("dev"):
        gold = tune_gold[example_id]
        dev_examples.append((gold.query, {m: canon[m][example_id] for m in models}, gold))
    policy = tune_thresholds(dev_examples, verifier, base_model=None, grid_step=grid_step)

    metrics, policy_diag, taxonomy, decisions = _final_scoring(
        corpus, canon, verifier, policy, attestation, canon_cfg
    )
    report = RunReport(
        metrics=metrics,
        policy_diagnostics=policy_diag,
        taxonomy=taxonomy,
        config=_config_echo(corpus, verifier, policy, canon_cfg, list(training_models)),
        attestation=attestation,
    )
    return PipelineResult(report=report, verifier=verifier, policy=policy, decisions=decisions)


def evaluate_with_artifacts(
    corpus: Corpus,
    verifier: VerifierModel,
    policy: PolicyConfig,
    canon_cfg: CanonConfig = DEFAULT_CONFIG,
) -> PipelineResult:
    """Final-scoring stage only, with a pre-trained verifier and tuned policy."""
    if corpus.split_sizes()["test"] == 0:
        raise DataError("corpus has no test examples")
    canon = canonical_records(corpus, canon_cfg)
    attestation: dict[str, list[str]] = {}
    metrics, policy_diag, taxonomy, decisions = _final_scoring(
        corpus, canon, verifier, policy, attestation, canon_cfg
    )
    report = RunReport(
        metrics=metrics,
        policy_diagnostics=policy_diag,
        taxonomy=taxonomy,
        config=_config_echo(corpus, verifier, policy, canon_cfg, corpus.model_ids()),
        attestation=attestation,
    )
    return PipelineResult(report=report, verifier=verifier, policy=policy, decisions=decisions)
