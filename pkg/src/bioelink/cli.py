"""Single entry point wiring all stages.

Exit codes: 0 success, 1 validation/parse failure, 2 configuration error,
3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from . import corpus, distillgen, embedstore, evalharness, promptkit, retriever, teacher
from .errors import BackendError, BioelinkError, ConfigError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3


def _add_common(parser: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "config": lambda p: p.add_argument("--config", help="pipeline config JSON (flags override it)"),
        "kb": lambda p: p.add_argument("--kb", help="knowledge base TSV (id<TAB>name)"),
        "mentions": lambda p: p.add_argument("--mentions", help="mention file"),
        "format": lambda p: p.add_argument("--format", dest="mention_format",
                                           choices=corpus.MENTION_FORMATS, default=None,
                                           help="mention file format (default: normalized-tsv)"),
        "split": lambda p: p.add_argument("--split", choices=corpus.SPLITS, default=None,
                                          help="split tag for mention uids"),
        "embeddings": lambda p: (
            p.add_argument("--entity-embeddings", help="entity store manifest"),
            p.add_argument("--mention-embeddings", help="mention store manifest"),
        ),
        "retrieval": lambda p: (
            p.add_argument("--k", type=int, default=None, help="candidates per mention (default: 6)"),
            p.add_argument("--metric", choices=retriever.METRICS, default=None, help="similarity (default: dot)"),
        ),
        "backend": lambda p: (
            p.add_argument("--backend", default=None,
                           help="mock:identity | mock:oracle | mock:reverse | remote | student"),
            p.add_argument("--endpoint", default=None, help="chat-completion URL for remote/student backends"),
            p.add_argument("--model", default=None, help="model name sent on the wire and used in cache keys"),
            p.add_argument("--temperature", type=float, default=None, help="sampling temperature (default: 0)"),
            p.add_argument("--max-output", type=int, dest="max_output", default=None, help="completion token cap (default: 512)"),
            p.add_argument("--max-context-chars", type=int, dest="max_context_chars", default=None,
                           help="context window in characters (default: 256)"),
            p.add_argument("--cache-dir", dest="cache_dir", default=None, help="completion replay cache directory"),
            p.add_argument("--parallelism", type=int, default=None, help="bounded in-flight requests (default: 1)"),
            p.add_argument("--rate-limit", type=float, dest="rate_limit", default=None, help="max backend requests per second"),
            p.add_argument("--api-key-env", default=teacher.API_KEY_ENV,
                           help="environment variable holding the API key"),
            p.add_argument("--max-attempts", type=int, dest="max_attempts", default=None,
                           help="remote retry budget (default: 5)"),
            p.add_argument("--timeout", type=float, default=None, help="remote request timeout seconds (default: 60)"),
        ),
        "templates": lambda p: (
            p.add_argument("--teacher-template", dest="teacher_template", default=None, help="teacher template JSON"),
            p.add_argument("--student-template", dest="student_template", default=None, help="student template JSON"),
        ),
        "out_dir": lambda p: p.add_argument("--out-dir", dest="out_dir", default=None,
                                            help="directory for generated artifacts (default: out)"),
    }
    for name in names:
        flags[name](parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bioelink",
        description="Biomedical entity linking: retrieval, teacher re-ranking, distillation data, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a KB and mention file, check gold resolution, write a report",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config", "kb", "mentions", "format", "split", "out_dir")
    p.add_argument("--report", default=None, help="JSON report path (default: OUT_DIR/ingest_report.json)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("import-embeddings", help="convert a text vector file into a blob + manifest",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config", "out_dir")
    p.add_argument("--input", required=True, help="text vectors: id<TAB>f1 f2 ...")
    p.add_argument("--name", required=True, help="basename for NAME.emb / NAME.manifest.json")
    p.set_defaults(func=cmd_import_embeddings)

    p = sub.add_parser("retrieve", help="top-k candidates for every mention",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config", "kb", "mentions", "format", "split", "embeddings", "retrieval", "out_dir")
    p.add_argument("--out", default=None, help="candidate JSONL (default: OUT_DIR/candidates.jsonl)")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("mine-negatives", help="export contrastive training pairs with mined negatives",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config", "kb", "mentions", "format", "split", "embeddings", "retrieval", "out_dir")
    p.add_argument("--negatives", type=int, default=None, help="negatives per mention (default: 15)")
    p.add_argument("--hard-ratio", type=float, dest="hard_ratio", default=None,
                   help="fraction mined as hard negatives, ceil-rounded (default: 0.10)")
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: 0)")
    p.add_argument("--out", default=None, help="pair TSV (default: OUT_DIR/training_pairs.tsv)")
    p.set_defaults(func=cmd_mine_negatives)

    p = sub.add_parser("generate", help="generate the instruction-tuning dataset via the teacher",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config", "kb", "mentions", "format", "split", "embeddings", "retrieval",
                "backend", "templates", "out_dir")
    p.add_argument("--teacher", dest="model", default=None, help="teacher model name (alias of --model)")
    p.add_argument("--limit", type=int, default=None, help="mentions to process, in file order")
    p.add_argument("--fewshot-from-train", type=int, dest="fewshot_from_train", default=None, metavar="N",
                   help="replace the template's worked examples with N sampled from the train split")
    p.add_argument("--filter", dest="filter_policy", choices=distillgen.FILTER_POLICIES, default=None,
                   help="record filter policy (default: drop-unparseable-only)")
    p.add_argument("--dataset-out", default=None, help="dataset JSONL (default: OUT_DIR/dataset.jsonl)")
    p.add_argument("--audit-out", default=None, help="audit JSONL (default: OUT_DIR/audit.jsonl)")
    p.add_argument("--ledger-out", default=None, help="usage ledger JSON (default: OUT_DIR/ledger.json)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate-dataset", help="re-check every record of a generated dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--dataset", required=True, help="dataset JSONL to validate")
    p.add_argument("--report", default=None, help="optional JSON report path")
    p.set_defaults(func=cmd_validate_dataset)

    p = sub.add_parser("evaluate", help="end-to-end linking + Acc@k / recall metrics",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config", "kb", "mentions", "format", "split", "embeddings", "retrieval",
                "backend", "templates", "out_dir")
    p.add_argument("--template", default=None, help="template JSON for the reranker (default: the student template)")
    p.add_argument("--acc-ks", dest="acc_ks", default=None, help="comma-separated k values for Acc@k (default: 1,5)")
    p.add_argument("--strict-gold", dest="strict_gold", action="store_true", default=None,
                   help="exclude mentions whose gold id is missing from the KB instead of counting them as misses")
    p.add_argument("--trace-out", default=None, help="per-mention trace JSONL (default: OUT_DIR/trace.jsonl)")
    p.add_argument("--report-out", default=None, help="report JSON (default: OUT_DIR/eval_report.json)")
    p.add_argument("--ledger-out", default=None, help="usage ledger JSON (default: OUT_DIR/eval_ledger.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cost-report", help="render per-model cost totals from a usage ledger",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p, "config")
    p.add_argument("--ledger", required=True, help="usage ledger JSON")
    p.add_argument("--price-table", dest="price_table", default=None, help="model price table JSON")
    p.set_defaults(func=cmd_cost_report)

    return parser


def _build_config(args) -> cfgmod.PipelineConfig:
    config = cfgmod.load_config(args.config) if getattr(args, "config", None) else cfgmod.PipelineConfig()
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "func", "config") and hasattr(config, key)
    }
    if isinstance(overrides.get("acc_ks"), str):
        try:
            overrides["acc_ks"] = [int(v) for v in overrides["acc_ks"].split(",") if v]
        except ValueError as exc:
            raise ConfigError(f"bad --acc-ks value: {exc}") from exc
    return cfgmod.apply_overrides(config, overrides)


def _out_path(config, explicit, default_name) -> Path:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return Path(explicit) if explicit else out_dir / default_name


def _load_inputs(config, split, *, need_mention_vectors=True):
    cfgmod.require_paths(config, "kb", "mentions", "entity_embeddings",
                         *( ("mention_embeddings",) if need_mention_vectors else () ))
    kb = corpus.load_kb(config.kb)
    mentions = corpus.load_mentions(config.mentions, format=config.mention_format, split=split)
    entity_store = embedstore.load_store(config.entity_embeddings)
    alignment = embedstore.validate_alignment(entity_store, kb)
    if not alignment.ok:
        raise ConfigError(f"entity embeddings do not cover the KB; missing: {', '.join(alignment.missing[:5])}")
    store = entity_store
    if need_mention_vectors:
        mention_store = embedstore.load_store(config.mention_embeddings)
        store = embedstore.merge(entity_store, mention_store)
        missing = [m.uid for m in mentions if m.uid not in store]
        if missing:
            raise ConfigError(f"mention embeddings missing for: {', '.join(missing[:5])}")
    return kb, mentions, store


def _make_backend(config, args, mentions, kb):
    limiter = teacher.RateLimiter(int(config.rate_limit)) if config.rate_limit else None
    remote_kwargs = {}
    if getattr(args, "max_attempts", None) is not None:
        remote_kwargs["max_attempts"] = args.max_attempts
    if getattr(args, "timeout", None) is not None:
        remote_kwargs["timeout"] = args.timeout
    backend = teacher.make_backend(
        config.backend,
        mentions=mentions,
        kb=kb,
        endpoint=config.endpoint,
        api_key_env=getattr(args, "api_key_env", teacher.API_KEY_ENV),
        **remote_kwargs,
    )
    cache = teacher.CompletionCache(config.cache_dir) if config.cache_dir else None
    return backend, cache, limiter


def cmd_ingest(args) -> int:
    config = _build_config(args)
    cfgmod.require_paths(config, "kb", "mentions")
    split = args.split or "test"
    kb = corpus.load_kb(config.kb)
    mentions = corpus.load_mentions(config.mentions, format=config.mention_format, split=split)
    report = corpus.build_ingest_report(kb, mentions, kb_path=config.kb,
                                        mention_path=config.mentions, split=split)
    report_path = _out_path(config, args.report, "ingest_report.json")
    corpus.write_ingest_report(report, report_path)
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_import_embeddings(args) -> int:
    config = _build_config(args)
    store = embedstore.import_text(args.input)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = out_dir / f"{args.name}.emb"
    manifest = out_dir / f"{args.name}.manifest.json"
    embedstore.save_store(store, blob, manifest)
    print(f"wrote {manifest} ({len(store)} vectors, dim {store.dim})")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    config = _build_config(args)
    kb, mentions, store = _load_inputs(config, args.split or "test")
    retr = retriever.CandidateRetriever(store, kb, metric=config.metric)
    out = _out_path(config, args.out, "candidates.jsonl")
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for m in mentions:
            cs = retr.top_k(embedstore.lookup(store, m.uid), config.k, mention_uid=m.uid)
            f.write(json.dumps({"uid": m.uid, "k": cs.k, "metric": cs.metric,
                                "candidates": [[eid, s] for eid, s in cs.candidates]},
                               ensure_ascii=False) + "\n")
    print(f"wrote {out} ({len(mentions)} mentions, k={config.k}, metric={config.metric})")
    return EXIT_OK


def cmd_mine_negatives(args) -> int:
    config = _build_config(args)
    kb, mentions, store = _load_inputs(config, args.split or "train")
    labeled = [m for m in mentions if m.gold_id is not None and m.gold_id in kb]
    skipped = len(mentions) - len(labeled)
    negatives = []
    for m in labeled:
        negatives.extend(retriever.mine_negatives(
            store, kb, m, m.gold_id, total=config.negatives,
            hard_ratio=config.hard_ratio, seed=config.seed, metric=config.metric))
    out = _out_path(config, args.out, "training_pairs.tsv")
    retriever.export_training_pairs(labeled, negatives, out)
    if skipped:
        print(f"skipped {skipped} mentions without a resolvable gold id", file=sys.stderr)
    print(f"wrote {out} ({len(labeled)} mentions x (1 pos + {config.negatives} negatives))")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = _build_config(args)
    if config.limit is None or config.limit < 1:
        raise ConfigError("generate needs --limit >= 1")
    cfgmod.require_paths(config, "teacher_template", "student_template")
    kb, mentions, store = _load_inputs(config, args.split or "train")
    teacher_tpl = promptkit.load_template(config.teacher_template)
    student_tpl = promptkit.load_template(config.student_template)
    if args.fewshot_from_train:
        teacher_tpl.examples = promptkit.sample_examples_from_training(
            mentions, kb, store, n=args.fewshot_from_train, k=config.k,
            seed=config.seed, metric=config.metric)
    backend, cache, limiter = _make_backend(config, args, mentions, kb)
    ledger = teacher.UsageLedger()

    dataset_path = _out_path(config, args.dataset_out, "dataset.jsonl")
    audit_path = _out_path(config, args.audit_out, "audit.jsonl")
    ledger_path = _out_path(config, args.ledger_out, "ledger.json")

    summary = distillgen.generate_dataset(
        mentions, kb, store, backend, teacher_tpl, student_tpl,
        model=config.model, k=config.k, limit=config.limit,
        filter_policy=config.filter_policy, temperature=config.temperature,
        max_output=config.max_output, max_context_chars=config.max_context_chars,
        metric=config.metric, cache=cache, ledger=ledger, rate_limiter=limiter,
        parallelism=config.parallelism, dataset_path=dataset_path, audit_path=audit_path,
    )
    ledger.save(ledger_path)
    print(f"wrote {dataset_path} ({summary.emitted}/{summary.processed} records; "
          f"outcomes {summary.outcomes}; backend calls {ledger.backend_calls}, "
          f"cache hits {ledger.cache_hits}; config {config.config_hash()})")
    return EXIT_OK


def cmd_validate_dataset(args) -> int:
    report = distillgen.validate_dataset(args.dataset)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)
            f.write("\n")
    for line_no, message in report.problems:
        print(f"{args.dataset}:{line_no}: {message}", file=sys.stderr)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"{report.records} records, {len(report.problems)} problems, {len(report.warnings)} warnings")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_evaluate(args) -> int:
    config = _build_config(args)
    kb, mentions, store = _load_inputs(config, args.split or "test")
    template_path = args.template or config.student_template
    if template_path is None:
        raise ConfigError("evaluate needs --template or a configured student_template")
    if not Path(template_path).exists():
        raise ConfigError(f"template does not exist: {template_path}")
    template = promptkit.load_template(template_path)
    backend, cache, limiter = _make_backend(config, args, mentions, kb)
    ledger = teacher.UsageLedger()

    trace_path = _out_path(config, args.trace_out, "trace.jsonl")
    report_path = _out_path(config, args.report_out, "eval_report.json")
    ledger_path = _out_path(config, args.ledger_out, "eval_ledger.json")

    report = evalharness.run_eval(
        mentions, kb, store, backend, template,
        model=config.model, k=config.k, acc_ks=tuple(config.acc_ks),
        temperature=config.temperature, max_output=config.max_output,
        max_context_chars=config.max_context_chars, metric=config.metric,
        strict_gold=bool(config.strict_gold), cache=cache, ledger=ledger,
        rate_limiter=limiter, parallelism=config.parallelism, trace_path=trace_path,
        config_extra={"template": promptkit.template_hash(template_path),
                      "config_hash": config.config_hash()},
    )
    ledger.save(ledger_path)
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)
        f.write("\n")
    sys.stdout.write(report.render_text())
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_cost_report(args) -> int:
    config = _build_config(args)
    ledger = teacher.UsageLedger.load(args.ledger)
    price_table = teacher.load_price_table(config.price_table) if config.price_table else {}
    rows = teacher.cost_report(ledger, price_table)
    sys.stdout.write(teacher.render_cost_report(rows))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except BioelinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
