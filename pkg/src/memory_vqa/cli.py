"""Command-line entry point: stats, annotate, select, infer, eval, export, report"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from memory_vqa.annotation import (
    DirectMemoryAnnotations,
    IndirectMemoryStore,
    annotate_indirect_memory,
    annotate_split_direct_memory,
    apply_annotation_exclusions,
    build_frequency_table,
)
from memory_vqa.backend_class import ModelBackend
from memory_vqa.dataset import SampleSet, compute_stats, load_dataset
from memory_vqa.dataset_types import DatasetId, Split, parse_frame_key
from memory_vqa.errors import ConfigError, MemoryVQAError, RunError
from memory_vqa.exporter import export_training_records, validate_records, write_records
from memory_vqa.http_backend import HttpBackend
from memory_vqa.labels import QuestionClassifier, is_binary_question
from memory_vqa.metrics import evaluate, plot_per_type
from memory_vqa.pipeline import RunTrace, file_image_loader, load_predictions, run_split
from memory_vqa.retrieval import score_entries, select_indirect_memory
from memory_vqa.scripted_backend import MockScript, ScriptedBackend, oracle_script
from memory_vqa.vqa_params import RunConfig

logger = logging.getLogger("memory_vqa")

PREDICTIONS_FILE = "predictions.jsonl"
CHECKPOINT_FILE = "predictions.checkpoint.jsonl"
METRICS_FILE = "metrics.json"
RECORDS_FILE = "records.jsonl"
TRACE_FILE = "trace.jsonl"
CONFIG_FILE = "config.yaml"


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the memory-vqa command"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML parameter file")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--dry-run", action="store_true", help="print the plan without side effects")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", required=True, help="endovis18 | endovis17 | cholec80")
    data.add_argument("--root", type=Path, help="dataset root (overrides the parameter file)")

    parser = argparse.ArgumentParser(
        prog="memory-vqa", description="Memory-augmented surgical VQA pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common, data], help="corpus statistics of a split")
    p.add_argument("--split", default="train")
    p.add_argument("--memory", type=Path, help="indirect memory annotation file (for #M/F)")

    p = sub.add_parser("annotate", parents=[common, data], help="ground-truth memory of a split")
    p.add_argument("--split", default="train")
    p.add_argument("--k", type=int)
    p.add_argument("--n-min", type=int)
    p.add_argument("--emit-mock-script", action="store_true", help="also write an oracle mock script")

    p = sub.add_parser("select", parents=[common], help="Top-M indirect memory for one question")
    p.add_argument("--memory", type=Path, required=True, help="indirect memory annotation file")
    p.add_argument("--frame", required=True, help="video/frame")
    p.add_argument("--question", required=True)
    p.add_argument("--dataset", default="endovis18", help="dataset whose M applies")
    p.add_argument("--m", type=int)

    p = sub.add_parser("infer", parents=[common, data], help="answer a split")
    p.add_argument("--split", default="test")
    p.add_argument("--backend-url")
    p.add_argument("--mock-script", type=Path, help="replay a mock script instead of calling a model")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--no-dm", action="store_true", help="w/o direct memory ablation")
    p.add_argument("--no-im", action="store_true", help="w/o indirect memory ablation")

    p = sub.add_parser("eval", parents=[common], help="metrics of a prediction file")
    p.add_argument("--predictions", type=Path)

    p = sub.add_parser("export", parents=[common, data], help="instruction-tuning records")
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n-min", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("report", parents=[common], help="per-type and per-class tables")
    p.add_argument("--predictions", type=Path)
    p.add_argument("--plot", action="store_true", help="also draw the per-type bar chart")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then parameter file, then environment, then flags"""
    config = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    config = config.with_env()
    m = None
    if getattr(args, "m", None) is not None:
        m = {**config.m, DatasetId.from_tag(args.dataset).tag: args.m}
    return config.with_overrides(
        m=m,
        k=getattr(args, "k", None),
        n_min=getattr(args, "n_min", None),
        parallelism=getattr(args, "parallelism", None),
        seed=getattr(args, "seed", None),
        backend_url=getattr(args, "backend_url", None),
        use_dm=False if getattr(args, "no_dm", False) else None,
        use_im=False if getattr(args, "no_im", False) else None,
    )


def _prepare_out(args: argparse.Namespace, config: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.to_yaml(out / CONFIG_FILE)
    logger.debug("Effective configuration written to %s", out / CONFIG_FILE)
    return out


def _dataset_root(args: argparse.Namespace, config: RunConfig, dataset_id: DatasetId) -> Path:
    root = args.root or config.dataset_root(dataset_id)
    if not root:
        raise ConfigError(f"No root configured for {dataset_id.value}; pass --root")
    return Path(root)


def _load(args, config: RunConfig, dataset_id: DatasetId, split: Split) -> SampleSet:
    return load_dataset(
        _dataset_root(args, config, dataset_id),
        dataset_id,
        split,
        layout=config.dataset_layout(dataset_id),
        videos=config.split_videos(dataset_id, split),
    )


def cmd_stats(args, config: RunConfig) -> int:
    dataset_id, split = DatasetId.from_tag(args.dataset), Split.from_tag(args.split)
    samples = _load(args, config, dataset_id, split)
    store = IndirectMemoryStore.read(args.memory) if args.memory else None
    stats = compute_stats(samples, store)
    stats.describe()
    if not args.dry_run:
        out = _prepare_out(args, config)
        with open(out / f"stats_{dataset_id.tag}_{split.tag}.json", "w") as f:
            json.dump(stats.to_dict(), f, indent=2)
            f.write("\n")
    return 0


def cmd_annotate(args, config: RunConfig) -> int:
    dataset_id, split = DatasetId.from_tag(args.dataset), Split.from_tag(args.split)
    train = _load(args, config, dataset_id, Split.TRAIN)
    samples = train if split is Split.TRAIN else _load(args, config, dataset_id, split)
    table = build_frequency_table(train)
    exclusions = apply_annotation_exclusions(samples, dataset_id, table)
    store = annotate_indirect_memory(samples, table, config.n_min, config.k, exclusions)
    dm = annotate_split_direct_memory(samples, table, config.k, exclusions)
    print(
        f"{dataset_id.value} {split.value}: {len(samples)} samples, {len(store)} frames, "
        f"{store.n_entries} memory entries, {len(exclusions.dm_excluded)} without hints, "
        f"{len(exclusions.mvqa_excluded)} single-answer"
    )
    if args.dry_run:
        return 0
    out = _prepare_out(args, config)
    store.write(out / f"memory_{dataset_id.tag}_{split.tag}.jsonl")
    dm.write(out / f"dm_{dataset_id.tag}_{split.tag}.jsonl")
    if args.emit_mock_script:
        oracle_script(store, dm).to_json(out / f"mock_{dataset_id.tag}_{split.tag}.json")
    return 0


def cmd_select(args, config: RunConfig) -> int:
    store = IndirectMemoryStore.read(args.memory)
    frame = parse_frame_key(args.frame)
    entries = store.entries(frame)
    scores = score_entries(args.question, entries)
    m = config.m_for(DatasetId.from_tag(args.dataset))
    selected = select_indirect_memory(args.question, entries, m)
    for entry, score in zip(entries, scores):
        mark = "*" if entry in selected else " "
        print(f"{mark} {score:.4f}  {entry.serialize()}")
    return 0


def _make_backend(args, config: RunConfig) -> ModelBackend:
    retry = {
        "max_attempts": config.max_attempts,
        "backoff_seconds": config.backoff_seconds,
        "backoff_max_seconds": config.backoff_max_seconds,
    }
    if args.mock_script:
        return ScriptedBackend(MockScript.from_json(args.mock_script), **retry)
    if not config.backend_url:
        raise ConfigError("infer needs --backend-url, --mock-script or backend_url in the parameter file")
    return HttpBackend(
        config.backend_url, model=config.backend_model, timeout_seconds=config.timeout_seconds, **retry
    )


def cmd_infer(args, config: RunConfig) -> int:
    dataset_id, split = DatasetId.from_tag(args.dataset), Split.from_tag(args.split)
    samples = _load(args, config, dataset_id, split)
    inference = config.inference_config(dataset_id)
    if args.dry_run:
        n_dm = 0
        if inference.use_dm:
            n_dm = sum(not is_binary_question(s.question, dataset_id) for s in samples)
        n_im = len(samples.frames) if inference.use_im and inference.m > 0 else 0
        print(
            f"infer {dataset_id.value} {split.value}: {len(samples)} samples, {len(samples.frames)} "
            f"frames, K={inference.k}, M={inference.m}, parallelism {config.parallelism}\n"
            f"backend calls: {n_dm} direct memory + {n_im} indirect memory + {len(samples)} answers "
            f"= {n_dm + n_im + len(samples)}"
        )
        return 0

    out = _prepare_out(args, config)
    backend = _make_backend(args, config)
    trace = RunTrace(out / TRACE_FILE)
    try:
        result = run_split(
            samples,
            backend,
            inference,
            file_image_loader(_dataset_root(args, config, dataset_id)),
            parallelism=config.parallelism,
            predictions_path=out / PREDICTIONS_FILE,
            checkpoint_path=out / CHECKPOINT_FILE,
            resume=args.resume,
            failure_threshold=config.failure_threshold,
            trace_sink=trace,
        )
    finally:
        trace.close()
        backend.close()
    print(f"{len(result.predictions)} predictions ({result.n_failed} failed) -> {out / PREDICTIONS_FILE}")
    return 0


def _predictions_path(args) -> Path:
    return Path(args.predictions) if args.predictions else Path(args.out) / PREDICTIONS_FILE


def cmd_eval(args, config: RunConfig) -> int:
    predictions = load_predictions(_predictions_path(args))
    report = evaluate(predictions, classifier=QuestionClassifier(config.question_patterns))
    report.describe()
    if not args.dry_run:
        out = _prepare_out(args, config)
        report.write_json(out / METRICS_FILE)
    return 0


def cmd_export(args, config: RunConfig) -> int:
    dataset_id = DatasetId.from_tag(args.dataset)
    train = _load(args, config, dataset_id, Split.TRAIN)
    table = build_frequency_table(train)
    exclusions = apply_annotation_exclusions(train, dataset_id, table)
    store = annotate_indirect_memory(train, table, config.n_min, config.k, exclusions)
    dm: DirectMemoryAnnotations = annotate_split_direct_memory(train, table, config.k, exclusions)
    m = config.m_for(dataset_id)
    records = export_training_records(train, table, store, dm, m, config.seed, exclusions)
    report = validate_records(records, m)
    print(f"{report.n_records} records {dict(report.counts)}, {len(report.violations)} violations")
    for index, message in report.violations[:20]:
        print(f"  record {index}: {message}")
    if args.dry_run:
        return 0
    out = _prepare_out(args, config)
    write_records(records, out / RECORDS_FILE)
    with open(out / "validation.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    return 0 if report.ok else 1


def cmd_report(args, config: RunConfig) -> int:
    predictions = load_predictions(_predictions_path(args))
    report = evaluate(predictions, classifier=QuestionClassifier(config.question_patterns))
    report.describe()
    if args.dry_run:
        return 0
    out = _prepare_out(args, config)
    report.per_type_frame().to_csv(out / "per_type.csv")
    report.per_class_frame().to_csv(out / "per_class.csv")
    report.confusion.to_frame().to_csv(out / "confusion.csv")
    if args.plot:
        plot_per_type(report, out / "per_type.png")
    return 0


COMMANDS = {
    "stats": cmd_stats,
    "annotate": cmd_annotate,
    "select": cmd_select,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "export": cmd_export,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand

    Args:
        argv (Sequence[str] | None, optional): arguments. Defaults to sys.argv.

    Returns:
        int: 0 success, 1 run failure, 2 usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 0 if err.code in (0, None) else 2

    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except RunError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 1
    except (MemoryVQAError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
