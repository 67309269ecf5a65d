"""Command-line surface.

Subcommands: gen, canonicalize, taxonomy, score, train-verifier, tune, run,
report. Exit codes: 0 success, 1 usage error, 2 data error, 3 split-protocol
violation.
"""

from __future__ import annotations

import argparse
import json
import sys

from .benchgen import GenConfig, ModelProfile, builtin_fewshot_profiles, builtin_profiles
from .canon import CanonConfig, DEFAULT_CONFIG, canonicalize_text
from .corpus import (
    canonical_records,
    evaluate_with_artifacts,
    generate_and_save,
    load_corpus,
    render_report,
    render_scores_table,
    render_taxonomy_table,
)
from .errors import DataError, FieldwiseError, ProtocolViolation, UsageError
from .metrics import micro_f1, strict_prediction
from .policy import load_policy, safe_override, save_policy, tune_thresholds
from .schema import CanonicalRecord, Schema, default_camera_schema, load_schema, serialize_fields
from .taxonomy import taxonomy_report
from .verifier import TrainConfig, VerifierMode, load_verifier, save_verifier, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def _first(*values):
    for value in values:
        if value is not None:
            return value
    return None


def _resolve_globals(args) -> None:
    """Fold the top-level --seed/--schema/--config into the subcommand args."""
    if hasattr(args, "seed"):
        args.seed = _first(args.seed, args.global_seed)
    if hasattr(args, "schema"):
        args.schema = _first(args.schema, args.global_schema)
    if hasattr(args, "config"):
        args.config = _first(args.config, args.global_config)


def _load_canon_config(path: str | None) -> CanonConfig:
    if path is None:
        return DEFAULT_CONFIG
    with open(path, "r", encoding="utf-8") as fh:
        return CanonConfig.from_json(json.load(fh))


def _load_schema_arg(path: str | None) -> Schema:
    return default_camera_schema() if path is None else load_schema(path)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _cmd_gen(args) -> int:
    if args.profiles == "builtin":
        profiles = builtin_profiles()
    elif args.profiles == "builtin-fewshot":
        profiles = builtin_fewshot_profiles()
    else:
        with open(args.profiles, "r", encoding="utf-8") as fh:
            profiles = [ModelProfile.from_json(doc) for doc in json.load(fh)]
    splits = tuple(float(v) for v in args.splits.split(","))
    if len(splits) != 3:
        raise UsageError("--splits needs three comma-separated fractions")
    seed = args.seed if args.seed is not None else 42
    cfg = GenConfig(seed=seed, n_examples=args.n, profiles=tuple(profiles), splits=splits)
    corpus = generate_and_save(cfg, args.out_dir)
    sizes = corpus.split_sizes()
    print(f"wrote {len(corpus.golds)} examples x {len(profiles)} models to {args.out_dir} "
          f"(train/dev/test = {sizes['train']}/{sizes['dev']}/{sizes['test']})")
    return 0


def _canonicalize_one(text: str, schema: Schema, cfg: CanonConfig, emit: str) -> str:
    fields, strict_valid, trace = canonicalize_text(text, schema, cfg)
    if emit == "record":
        return json.dumps(
            {"fields": fields, "strict_valid": strict_valid, "trace": list(trace)},
            sort_keys=True, ensure_ascii=True,
        )
    return serialize_fields(fields)


def _cmd_canonicalize(args) -> int:
    schema = _load_schema_arg(args.schema)
    cfg = _load_canon_config(args.config)
    if args.infile is not None:
        with open(args.infile, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = sys.stdin.read()
    if args.jsonl:
        # batch mode: one {"text": ...} object per input line, one result per line
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                raw = doc["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"batch line {lineno}: expected {{\"text\": ...}}: {exc}") from None
            print(_canonicalize_one(raw, schema, cfg, args.emit))
        return 0
    print(_canonicalize_one(text, schema, cfg, args.emit))
    return 0


def _split_outputs(corpus, split: str):
    ids = set(corpus.example_ids(split)) if split != "all" else set(corpus.example_ids())
    return [o for o in corpus.outputs if o.example_id in ids]


def _cmd_taxonomy(args) -> int:
    corpus = load_corpus(args.corpus)
    cfg = _load_canon_config(args.config)
    outputs = _split_outputs(corpus, args.split)
    report = taxonomy_report(outputs, corpus.schema, cfg)
    doc = report.to_json()
    if args.format == "json":
        text = json.dumps(doc, indent=2, sort_keys=True)
    else:
        text = render_taxonomy_table(doc)
    if args.out:
        _write(args.out, text + "\n")
    else:
        print(text)
    return 0


def _cmd_score(args) -> int:
    corpus = load_corpus(args.corpus)
    cfg = _load_canon_config(args.config)
    golds = corpus.gold_for_split(args.split) if args.split != "all" else sorted(
        corpus.golds, key=lambda g: g.example_id
    )
    if not golds:
        raise DataError(f"no {args.split} examples in corpus")
    ids = {g.example_id for g in golds}
    canon = canonical_records(corpus, cfg)
    outputs_by_model: dict[str, dict[str, object]] = {}
    for output in corpus.outputs:
        outputs_by_model.setdefault(output.model_id, {})[output.example_id] = output
    per_model = {}
    for model in corpus.model_ids():
        ros_preds = {eid: strict_prediction(outputs_by_model[model][eid], corpus.schema) for eid in ids}
        css_preds = {eid: canon[model][eid].fields for eid in ids}
        ros = micro_f1(ros_preds, golds, corpus.schema)
        css = micro_f1(css_preds, golds, corpus.schema)
        per_model[model] = {"ros": ros, "css": css, "delta": css - ros}
    values_ros = [s["ros"] for s in per_model.values()]
    values_css = [s["css"] for s in per_model.values()]
    gap_ros = max(values_ros) - min(values_ros) if len(per_model) > 1 else None
    gap_css = max(values_css) - min(values_css) if len(per_model) > 1 else None
    if args.format == "json":
        doc = {"per_model": per_model, "cross_model_gap_ros": gap_ros, "cross_model_gap_css": gap_css}
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"Scores on split: {args.split}")
        print(render_scores_table(per_model, gap_ros, gap_css))
    return 0


_MODE_BY_FLAG = {
    "full": VerifierMode.FULL,
    "query-only": VerifierMode.QUERY_ONLY,
    "output-only": VerifierMode.OUTPUT_ONLY,
}


def _cmd_train_verifier(args) -> int:
    corpus = load_corpus(args.corpus)
    cfg = _load_canon_config(args.config)
    canon = canonical_records(corpus, cfg)
    view = corpus.scoped_gold_for_splits("verifier-train", [args.split])
    models = corpus.model_ids()
    if args.train_models:
        models = sorted(set(args.train_models.split(",")))
    triples = []
    for example_id in corpus.example_ids(args.split):
        gold = view[example_id]
        for model in models:
            triples.append((gold.query, canon[model][example_id], gold))
    hyper = TrainConfig(seed=args.seed if args.seed is not None else 0,
                        epochs=args.epochs, lr=args.lr, l2=args.l2)
    model = train(triples, corpus.schema, hyper, _MODE_BY_FLAG[args.mode])
    save_verifier(model, args.out)
    print(f"trained {args.mode} verifier on {len(triples)} triples -> {args.out}")
    return 0


def _cmd_tune(args) -> int:
    corpus = load_corpus(args.corpus)
    cfg = _load_canon_config(args.config)
    verifier = load_verifier(args.verifier)
    canon = canonical_records(corpus, cfg)
    view = corpus.scoped_gold_for_splits("threshold-tune", [args.split])
    models = corpus.model_ids()
    dev_examples = []
    for example_id in corpus.example_ids(args.split):
        gold = view[example_id]
        dev_examples.append((gold.query, {m: canon[m][example_id] for m in models}, gold))
    policy = tune_thresholds(dev_examples, verifier, base_model=args.base_model, grid_step=args.grid_step)
    save_policy(policy, args.out)
    print(
        f"tuned policy: tau_keep={policy.tau_keep} tau_take={policy.tau_take} "
        f"delta_margin={policy.delta_margin} base={policy.base_model} dev_f1={policy.dev_f1:.4f} -> {args.out}"
    )
    return 0


def _override_one(query: str, raw_candidates: dict, verifier, policy, cfg: CanonConfig, example_id: str) -> str:
    if not isinstance(raw_candidates, dict):
        raise DataError("candidates must be a JSON object of model_id -> raw text")
    schema = verifier.schema
    candidates = {}
    for model_id, text in raw_candidates.items():
        fields, strict_valid, trace = canonicalize_text(text, schema, cfg)
        candidates[model_id] = CanonicalRecord(
            example_id=example_id, model_id=model_id,
            fields=fields, strict_valid=strict_valid, trace=trace,
        )
    fields, decisions = safe_override(query, candidates, verifier, policy)
    return json.dumps(
        {"fields": fields, "decisions": [d.to_json() for d in decisions]},
        sort_keys=True, ensure_ascii=True,
    )


def _cmd_run(args) -> int:
    verifier = load_verifier(args.verifier)
    policy = load_policy(args.policy)
    cfg = _load_canon_config(args.config)
    if args.batch is not None:
        # batch mode: one {"query": ..., "candidates": {...}} object per line
        with open(args.batch, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                    query, raw_candidates = doc["query"], doc["candidates"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"batch line {lineno}: {exc}") from None
                print(_override_one(query, raw_candidates, verifier, policy, cfg, f"batch-{lineno}"))
        return 0
    if args.query is not None:
        if args.candidates is None:
            raise UsageError("single-query mode needs --candidates")
        with open(args.candidates, "r", encoding="utf-8") as fh:
            raw_candidates = json.load(fh)
        print(_override_one(args.query, raw_candidates, verifier, policy, cfg, "query-0"))
        return 0
    if args.corpus is None:
        raise UsageError("run needs either --corpus, --query, or --batch")
    corpus = load_corpus(args.corpus)
    result = evaluate_with_artifacts(corpus, verifier, policy, cfg)
    if args.out_dir:
        import os

        os.makedirs(args.out_dir, exist_ok=True)
        report_doc = result.report.to_json()
        _write(os.path.join(args.out_dir, "report.json"),
               json.dumps(report_doc, indent=2, sort_keys=True) + "\n")
        _write(os.path.join(args.out_dir, "report.txt"), result.report.render_text())
        with open(os.path.join(args.out_dir, "decisions.jsonl"), "w", encoding="utf-8") as fh:
            for decision in result.decisions:
                fh.write(json.dumps(decision.to_json(), sort_keys=True, ensure_ascii=True) + "\n")
        print(f"wrote report.json, report.txt, decisions.jsonl to {args.out_dir}")
    else:
        print(result.report.render_text())
    return 0


def _cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(render_report(doc), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fieldwise", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, dest="global_seed",
                        help="global seed (subcommand --seed wins)")
    parser.add_argument("--schema", default=None, dest="global_schema",
                        help="global schema.json path")
    parser.add_argument("--config", default=None, dest="global_config",
                        help="global canonicalizer config path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--profiles", default="builtin", help="builtin | builtin-fewshot | path to profiles.json")
    p.add_argument("--splits", default="0.8,0.1,0.1")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("canonicalize", help="canonicalize raw text (stdin or --in) to strict JSON")
    p.add_argument("--in", dest="infile", default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--emit", choices=("fields", "record"), default="fields")
    p.add_argument("--jsonl", action="store_true",
                   help="batch mode: one {\"text\": ...} object per input line")
    p.set_defaults(func=_cmd_canonicalize)

    p = sub.add_parser("taxonomy", help="failure-category report for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "dev", "test", "all"), default="all")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_taxonomy)

    p = sub.add_parser("score", help="ros/css tables for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "dev", "test", "all"), default="test")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("train-verifier", help="fit the per-field verifier on the train split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=tuple(_MODE_BY_FLAG), default="full")
    p.add_argument("--split", default="train")
    p.add_argument("--train-models", default=None, help="comma-separated model ids (default: all)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train_verifier)

    p = sub.add_parser("tune", help="grid-search policy thresholds on the dev split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--verifier", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--base-model", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("run", help="safe-override over a corpus (writes a run report) or a single query")
    p.add_argument("--corpus", default=None)
    p.add_argument("--verifier", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--query", default=None)
    p.add_argument("--candidates", default=None, help="JSON file of model_id -> raw output text")
    p.add_argument("--batch", default=None,
                   help="JSONL file of {query, candidates} objects; one result line each")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="render a report.json as aligned tables")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _resolve_globals(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FieldwiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
