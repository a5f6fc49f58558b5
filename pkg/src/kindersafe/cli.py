"""Command-line entry points.

Subcommands mirror the pipeline stages: convert manifests, clean, sample,
classify, evaluate, audit, build the removal manifest, report energy, and
run the review service. Everything reads and writes the documented JSONL and
JSON formats so stages compose through files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .auditor import AuditConfig, audit_manifest
from .backend import EndpointConfig, HttpVqaBackend, MockBackendConfig, MockVqaBackend
from .cleaning import CleaningConfig, HttpSimilarityScorer, MockSimilarityScorer, dedup, similarity_filter
from .curation import BalancedPlan, KeywordPlan, ReviewQueue, balanced_sample, export_review_batch, keyword_sample
from .detector import (
    DECISIONS_FILENAME,
    REMOVAL_FILENAME,
    RunConfig,
    build_removal_manifest,
    classify_manifest,
    read_decision_log,
)
from .energy import EnergyModel, estimate, measure
from .errors import KindersafeError
from .manifest import (
    JSONL_FORMAT,
    OPENIMAGES_FORMAT,
    ClassHierarchy,
    load_manifest,
    load_open_images_csv,
    save_manifest,
)
from .metrics import evaluate, metrics_from_counts, sweep_report
from .prompts import DEFAULT_PROMPT_INDEX
from .review import DECISIONS_LOG_FILENAME, DecisionStore, ReviewDecision, ReviewService

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kindersafe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"kindersafe {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    # manifest convert
    p_manifest = sub.add_parser("manifest", help="manifest utilities")
    manifest_sub = p_manifest.add_subparsers(dest="manifest_command", required=True)
    p_convert = manifest_sub.add_parser("convert", help="convert between manifest formats")
    p_convert.add_argument("--from", dest="from_format", required=True, choices=[OPENIMAGES_FORMAT, JSONL_FORMAT])
    p_convert.add_argument("--to", dest="to_format", required=True, choices=[JSONL_FORMAT])
    p_convert.add_argument("--in", dest="in_path", help="input manifest path (jsonl) or directory (openimages-csv)")
    p_convert.add_argument("--labels", help="Open Images label CSV (alternative to --in)")
    p_convert.add_argument("--boxes", help="Open Images box CSV (alternative to --in)")
    p_convert.add_argument("--hierarchy", help="class hierarchy JSON tree")
    p_convert.add_argument("--image-root", default="", help="prefix for generated image refs")
    p_convert.add_argument("--out", required=True)

    # clean
    p_clean = sub.add_parser("clean", help="near-duplicate removal and similarity filtering")
    p_clean.add_argument("--manifest", required=True)
    p_clean.add_argument("--out", required=True)
    p_clean.add_argument("--sim-threshold", type=float, default=0.2)
    p_clean.add_argument("--hamming", type=int, default=8)
    p_clean.add_argument("--scorer-endpoint", help="image-text similarity endpoint base URL")
    p_clean.add_argument("--scorer", choices=["http", "mock", "none"], default="none",
                         help="'none' skips similarity filtering (dedup only)")
    p_clean.add_argument("--image-root", help="directory image refs resolve against")
    p_clean.add_argument("--report", help="write the cleaning report JSON here")

    # sample
    p_sample = sub.add_parser("sample", help="benchmark-construction samplers")
    sample_sub = p_sample.add_subparsers(dest="sample_command", required=True)
    p_kw = sample_sub.add_parser("keywords", help="keyword-stratified sampling")
    p_kw.add_argument("--manifest", required=True)
    p_kw.add_argument("--plan", help="keyword plan JSON (defaults to the packaged plan)")
    p_kw.add_argument("--seed", type=int, default=0)
    p_kw.add_argument("--per-category", type=int)
    p_kw.add_argument("--out", required=True)
    p_bal = sample_sub.add_parser("balanced", help="balanced child/adult sampling")
    p_bal.add_argument("--manifest", required=True)
    p_bal.add_argument("--pos", type=int, default=50_000)
    p_bal.add_argument("--neg", type=int, default=50_000)
    p_bal.add_argument("--seed", type=int, default=0)
    p_bal.add_argument("--out", required=True)

    # classify
    p_classify = sub.add_parser("classify", help="classify a whole manifest")
    p_classify.add_argument("--manifest", required=True)
    p_classify.add_argument("--prompt", type=int, default=DEFAULT_PROMPT_INDEX)
    p_classify.add_argument("--backend", choices=["http", "mock"], required=True)
    p_classify.add_argument("--endpoint", help="endpoint base URL (http backend)")
    p_classify.add_argument("--model", default="mock", help="model name")
    p_classify.add_argument("--category", default="detail", choices=["complex", "conv", "detail"])
    p_classify.add_argument("--out", required=True, help="run directory")
    p_classify.add_argument("--concurrency", type=int, default=4)
    p_classify.add_argument("--quarantine", choices=["keep", "remove"], default="remove")
    p_classify.add_argument("--timeout-ms", type=int, default=30_000)
    p_classify.add_argument("--max-retries", type=int, default=3)
    p_classify.add_argument("--image-root", help="directory image refs resolve against")
    p_classify.add_argument("--mock-miss-rate", type=float, default=0.0)
    p_classify.add_argument("--mock-false-alarm-rate", type=float, default=0.0)
    p_classify.add_argument("--mock-seed", type=int, default=0)
    p_classify.add_argument("--mock-verbose-fraction", type=float, default=0.0)

    # evaluate
    p_eval = sub.add_parser("evaluate", help="Recall/FPR report from a decision log")
    p_eval.add_argument("--decisions", required=True)
    p_eval.add_argument("--manifest", required=True, help="manifest carrying ground truth")
    p_eval.add_argument("--out", help="write the report JSON here (default stdout)")
    p_eval.add_argument("--markdown", action="store_true", help="also print a markdown table")

    # audit
    p_audit = sub.add_parser("audit", help="annotation-consistency audit")
    p_audit.add_argument("--manifest", required=True)
    p_audit.add_argument("--decisions", help="decision log to cross-check verdicts against")
    p_audit.add_argument("--iou", type=float, default=0.5)
    p_audit.add_argument("--out", required=True, help="findings JSONL path")

    # removal
    p_removal = sub.add_parser("removal", help="build the removal manifest from decisions + adjudications")
    p_removal.add_argument("--decisions", required=True)
    p_removal.add_argument("--adjudications", help="review decisions JSONL (from the review service export)")
    p_removal.add_argument("--quarantine", choices=["keep", "remove"], default="remove")
    p_removal.add_argument("--out", required=True)

    # report
    p_report = sub.add_parser("report", help="run reports")
    report_sub = p_report.add_subparsers(dest="report_command", required=True)
    p_energy = report_sub.add_parser("energy", help="energy/CO2 accounting for a run")
    p_energy.add_argument("--run", help="run directory holding decisions.jsonl")
    p_energy.add_argument("--model", help="model name for rate lookup")
    p_energy.add_argument("--images", type=int, help="image count (defaults to the decision log size)")
    p_energy.add_argument("--watts", type=float, help="device power draw for time-based measurement")
    p_energy.add_argument("--rates", help="energy rates JSON (defaults to the packaged table)")
    p_energy.add_argument("--out", help="write the report JSON here (default stdout)")

    # review utilities
    p_batch = sub.add_parser("review-batch", help="export a review queue file")
    p_batch.add_argument("--manifest", required=True)
    p_batch.add_argument("--decisions", help="attach machine verdicts from this decision log")
    p_batch.add_argument("--findings", help="attach audit findings from this JSONL")
    p_batch.add_argument("--batch-size", type=int, default=100)
    p_batch.add_argument("--flagged-only", action="store_true",
                         help="queue only positive/quarantined samples")
    p_batch.add_argument("--out", required=True)

    p_serve = sub.add_parser("review-serve", help="run the adjudication HTTP service")
    p_serve.add_argument("--queue", help="review queue JSON (default <run>/queue.json)")
    p_serve.add_argument("--run", help="run directory (for default queue/store paths)")
    p_serve.add_argument("--store", help="decision log path (default <run>/review_decisions.jsonl)")
    p_serve.add_argument("--bind", default="127.0.0.1:8787")
    p_serve.add_argument("--image-root", help="directory image refs resolve against")
    p_serve.add_argument("--static", help="directory of built UI assets to serve at /")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return _dispatch(args)
    except KindersafeError as exc:
        logger.error("error: %s", exc)
        return 1
    except FileNotFoundError as exc:
        logger.error("error: file not found: %s", exc)
        return 1


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "manifest":
        return _cmd_convert(args)
    if args.command == "clean":
        return _cmd_clean(args)
    if args.command == "sample":
        return _cmd_sample(args)
    if args.command == "classify":
        return _cmd_classify(args)
    if args.command == "evaluate":
        return _cmd_evaluate(args)
    if args.command == "audit":
        return _cmd_audit(args)
    if args.command == "removal":
        return _cmd_removal(args)
    if args.command == "report":
        return _cmd_report_energy(args)
    if args.command == "review-batch":
        return _cmd_review_batch(args)
    if args.command == "review-serve":
        return _cmd_review_serve(args)
    raise AssertionError(f"unhandled command {args.command}")


def _cmd_convert(args) -> int:
    if args.from_format == OPENIMAGES_FORMAT:
        if args.labels and args.boxes:
            hierarchy = ClassHierarchy.from_json_file(args.hierarchy) if args.hierarchy else ClassHierarchy.default()
            manifest = load_open_images_csv(
                args.labels, args.boxes, hierarchy=hierarchy, image_root=args.image_root
            )
        elif args.in_path:
            manifest = load_manifest(args.in_path, format=OPENIMAGES_FORMAT)
        else:
            logger.error("openimages-csv input needs --labels/--boxes or --in DIRECTORY")
            return 2
    else:
        if not args.in_path:
            logger.error("jsonl input needs --in")
            return 2
        manifest = load_manifest(args.in_path, format=JSONL_FORMAT)
    save_manifest(manifest, args.out)
    logger.info("wrote %d samples to %s", len(manifest), args.out)
    return 0


def _cmd_clean(args) -> int:
    manifest = load_manifest(args.manifest)
    config = CleaningConfig(similarity_threshold=args.sim_threshold, hamming_threshold=args.hamming)
    from .cleaning import FileHasher

    deduped, dedup_report = dedup(manifest, config, hasher=FileHasher(args.image_root))
    reports = {"dedup": dedup_report.as_dict()}
    cleaned = deduped
    if args.scorer != "none":
        if args.scorer == "http":
            if not args.scorer_endpoint:
                logger.error("--scorer http needs --scorer-endpoint")
                return 2
            endpoint = EndpointConfig(base_url=args.scorer_endpoint, model_name="similarity")
            scorer = HttpSimilarityScorer(endpoint, image_root=args.image_root)
        else:
            scorer = MockSimilarityScorer()
        cleaned, sim_report = similarity_filter(deduped, config, scorer)
        reports["similarity"] = sim_report.as_dict()
    save_manifest(cleaned, args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    logger.info("kept %d of %d samples", len(cleaned), len(manifest))
    return 0


def _cmd_sample(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.sample_command == "keywords":
        if args.plan:
            plan = KeywordPlan.from_file(args.plan, seed=args.seed)
        else:
            plan = KeywordPlan.default(seed=args.seed)
        if args.per_category:
            plan.per_category = args.per_category
        subset = keyword_sample(manifest, plan)
    else:
        plan = BalancedPlan(positive_count=args.pos, negative_count=args.neg, seed=args.seed)
        subset = balanced_sample(manifest, plan)
    save_manifest(subset, args.out)
    logger.info("sampled %d of %d", len(subset), len(manifest))
    return 0


def _cmd_classify(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.backend == "mock":
        backend = MockVqaBackend(
            MockBackendConfig(
                miss_rate=args.mock_miss_rate,
                false_alarm_rate=args.mock_false_alarm_rate,
                seed=args.mock_seed,
                verbose_fraction=args.mock_verbose_fraction,
            ),
            model_name=args.model,
            category=args.category,
        )
    else:
        if not args.endpoint:
            logger.error("--backend http needs --endpoint")
            return 2
        backend = HttpVqaBackend(
            EndpointConfig(
                base_url=args.endpoint,
                model_name=args.model,
                category=args.category,
                timeout_ms=args.timeout_ms,
                max_retries=args.max_retries,
                max_concurrency=args.concurrency,
            ),
            image_root=args.image_root,
        )
    run_config = RunConfig(
        out_dir=args.out,
        prompt_index=args.prompt,
        concurrency=args.concurrency,
        quarantine_policy=args.quarantine,
    )
    records = classify_manifest(manifest, args.prompt, backend, run_config)
    removal = build_removal_manifest(records, quarantine_policy=args.quarantine)
    removal.save(Path(args.out) / REMOVAL_FILENAME)
    positives = sum(1 for r in records if r.predicted_positive())
    logger.info(
        "classified %d samples: %d flagged (%.2f%%), removal manifest at %s",
        len(records), positives, 100.0 * positives / len(records) if records else 0.0,
        Path(args.out) / REMOVAL_FILENAME,
    )
    return 0


def _cmd_evaluate(args) -> int:
    records = read_decision_log(args.decisions)
    manifest = load_manifest(args.manifest)
    model = records[0].model_name if records else ""
    category = records[0].category if records else ""
    prompt_index = records[0].prompt_index if records else None
    report = evaluate(records, manifest, model_name=model, category=category, prompt_index=prompt_index)
    payload = report.as_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        print(json.dumps(payload, indent=2))
    if args.markdown:
        print(sweep_report([report]).to_markdown())
    return 0


def _cmd_audit(args) -> int:
    manifest = load_manifest(args.manifest)
    decisions = None
    if args.decisions:
        decisions = {r.sample_id: r for r in read_decision_log(args.decisions)}
    report = audit_manifest(manifest, decisions, AuditConfig(iou_threshold=args.iou))
    report.save_jsonl(args.out)
    logger.info("wrote %d findings to %s", len(report.findings), args.out)
    return 0


def _cmd_removal(args) -> int:
    records = read_decision_log(args.decisions)
    adjudications = []
    if args.adjudications:
        with Path(args.adjudications).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    adjudications.append(ReviewDecision.from_dict(json.loads(line)))
    removal = build_removal_manifest(records, adjudications, quarantine_policy=args.quarantine)
    removal.save(args.out)
    logger.info("remove=%d keep=%d overrides=%d",
                len(removal.remove_ids), len(removal.keep_ids), len(removal.overrides_applied))
    return 0


def _cmd_report_energy(args) -> int:
    energy_model = EnergyModel.from_file(args.rates) if args.rates else EnergyModel.default()
    if args.run:
        records = read_decision_log(Path(args.run) / DECISIONS_FILENAME)
        durations = [r.latency_ms for r in records]
        model = args.model or (records[0].model_name if records else "")
        if args.watts:
            report = measure(durations, args.watts, energy_model=energy_model, model_name=model)
        else:
            report = estimate(model, args.images or len(records), energy_model)
    else:
        if not args.model or args.images is None:
            logger.error("without --run, both --model and --images are required")
            return 2
        report = estimate(args.model, args.images, energy_model)
    payload = report.as_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        print(json.dumps(payload, indent=2))
    return 0


def _cmd_review_batch(args) -> int:
    manifest = load_manifest(args.manifest)
    decisions = None
    if args.decisions:
        decisions = {r.sample_id: r for r in read_decision_log(args.decisions)}
        if args.flagged_only:
            flagged = {sid for sid, r in decisions.items() if r.predicted_positive()}
            manifest = manifest.restrict(flagged)
    findings = None
    if args.findings:
        from .auditor import AuditFinding, AuditKind, Severity

        findings = []
        with Path(args.findings).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    d = json.loads(line)
                    findings.append(
                        AuditFinding(
                            kind=AuditKind(d["kind"]),
                            sample_id=d["sample_id"],
                            severity=Severity(d["severity"]),
                            evidence=d["evidence"],
                        )
                    )
    queue = export_review_batch(manifest, args.batch_size, decisions=decisions, findings=findings)
    queue.save(args.out)
    logger.info("queued %d items (%d pages) at %s", len(queue.items), queue.page_count, args.out)
    return 0


def _cmd_review_serve(args) -> int:
    queue_path = args.queue or (Path(args.run) / "queue.json" if args.run else None)
    if not queue_path or not Path(queue_path).exists():
        logger.error("no queue file; pass --queue or --run with a queue.json inside")
        return 2
    store_path = args.store or (
        Path(args.run) / DECISIONS_LOG_FILENAME if args.run else Path(queue_path).parent / DECISIONS_LOG_FILENAME
    )
    queue = ReviewQueue.load(queue_path)
    store = DecisionStore(store_path)
    service = ReviewService(
        bind=args.bind,
        queue=queue,
        store=store,
        image_root=args.image_root,
        static_dir=args.static,
    )
    logger.info("review service on http://%s (queue of %d, decisions at %s)",
                service.bound_address, len(queue.items), store_path)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        logger.info("shutting down")
    finally:
        service.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
