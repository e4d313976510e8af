"""Command-line entry point: ``esra <subcommand> ...``.

Exit codes: 0 success, 1 issues found by ``validate --strict``, 2 usage or
configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import baseline, qa, quality, scoring, synth
from .annotation import FactBase, SynonymSchema, default_schema, load_annotations
from .config import ConfigError, PipelineConfig, load_config, override
from .ocr import parse_ocr_json, serialize_ocr
from .restore import EsraParams, restore

logger = logging.getLogger("esra")

EXIT_OK, EXIT_ISSUES, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

# files in an OCR directory that are not OCR documents
_SIDECAR_SUFFIXES = (".truth.json", ".linemap.json", ".ann.json")


class UsageError(Exception):
    pass


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map over a process pool; serial when one job suffices."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(min(jobs, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _ocr_inputs(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise UsageError(f"--in {path} does not exist")
    return sorted(
        p for p in path.glob("*.json") if not p.name.endswith(_SIDECAR_SUFFIXES)
    )


def _safe_name(image_id: str) -> str:
    if not image_id or "/" in image_id or "\\" in image_id or image_id in (".", ".."):
        raise ValueError(f"image_id {image_id!r} cannot be used as a file name")
    return image_id


# ---------------------------------------------------------------- restore


def _restore_one(job: tuple[str, str, EsraParams, bool, bool]) -> str:
    src, out_dir, params, emit_map, strict = job
    doc = parse_ocr_json(Path(src).read_bytes(), strict=strict)
    result = restore(doc, params)
    stem = Path(out_dir, _safe_name(doc.image_id))
    with open(f"{stem}.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.text + "\n")
    if emit_map:
        Path(f"{stem}.linemap.json").write_text(result.line_map_json(), encoding="utf-8")
    return doc.image_id


def cmd_restore(args, cfg: PipelineConfig) -> int:
    out = Path(cfg.output_dir)
    inputs = _ocr_inputs(Path(args.input))
    if not inputs:
        raise UsageError(f"no OCR documents found in {args.input}")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), str(out), cfg.esra, args.emit_line_map, args.strict_bbox) for p in inputs]
    ids = _pmap(_restore_one, jobs, args.jobs)
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ValueError(f"duplicate image ids in input: {sorted(dupes)}")
    logger.info("restored %d documents into %s", len(ids), out)
    return EXIT_OK


# ---------------------------------------------------------------- validate


def _schema(cfg: PipelineConfig) -> SynonymSchema:
    return SynonymSchema.load(cfg.schema_path) if cfg.schema_path else default_schema()


def cmd_validate(args, cfg: PipelineConfig) -> int:
    anns = load_annotations(args.annotations)
    schema = _schema(cfg)
    issues = [i for ann in anns for i in quality.validate_annotation(ann, schema)]
    report = quality.issues_to_json(issues)
    if args.report:
        Path(args.report).write_text(report + "\n", encoding="utf-8")
    else:
        print(report)
    errors = sum(i.severity == "error" for i in issues)
    logger.info("%d annotations, %d issues (%d errors)", len(anns), len(issues), errors)
    if args.strict and errors:
        return EXIT_ISSUES
    return EXIT_OK


# ---------------------------------------------------------------- gen-qa


def cmd_gen_qa(args, cfg: PipelineConfig) -> int:
    anns = load_annotations(args.annotations)
    facts = FactBase.load(cfg.facts_path) if cfg.facts_path else None
    qcfg = qa.QaConfig(
        seed=cfg.qa_seed,
        unanswerable_fraction=cfg.unanswerable_fraction,
        multirow_pairs=cfg.multirow_pairs,
    )
    bank = qa.generate_bank(anns, facts, _schema(cfg), qcfg)
    Path(args.out).write_text(qa.write_bank(bank), encoding="utf-8")
    logger.info("wrote %d QA items for %d reports to %s", len(bank), len(anns), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- score


def _strata_meta(directory: str | None) -> dict:
    if not directory:
        return {}
    return {
        a.image_id: {"image_type": a.image_type, "quality": a.quality}
        for a in load_annotations(directory)
    }


def cmd_score(args, cfg: PipelineConfig) -> int:
    bank = qa.read_bank(Path(args.bank).read_text(encoding="utf-8"))
    preds = scoring.read_predictions(Path(args.preds).read_text(encoding="utf-8"))
    report = scoring.score_run(bank, preds, _strata_meta(args.annotations))
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    table = scoring.format_report(report)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------- run-baseline


def _restored_docs(directory: Path) -> dict[str, str]:
    if not directory.is_dir():
        raise UsageError(f"--docs {directory} is not a directory")
    return {
        p.name[: -len(".txt")]: p.read_text(encoding="utf-8").rstrip("\n")
        for p in sorted(directory.glob("*.txt"))
    }


def cmd_run_baseline(args, cfg: PipelineConfig) -> int:
    bank = qa.read_bank(Path(args.bank).read_text(encoding="utf-8"))
    docs = _restored_docs(Path(args.docs))
    endpoint = baseline.EndpointConfig.load(cfg.endpoint_path)
    facts = FactBase.load(cfg.facts_path) if cfg.facts_path else None
    client = None if args.dry_run else baseline.HttpChatClient(endpoint)
    stats = baseline.run_batch(
        bank, docs, client, args.out, endpoint, facts=facts,
        dry_run=args.dry_run, limit=args.limit,
    )
    logger.info(
        "completed %d, skipped %d, failed %d", stats.completed, stats.skipped, stats.failed
    )
    return EXIT_RUNTIME if stats.failed else EXIT_OK


# ---------------------------------------------------------------- synth


def _synth_one(job) -> str:
    spec, out_dir, facts_path = job
    facts = FactBase.load(facts_path) if facts_path else None
    doc, truth = synth.generate(spec, facts)
    stem = Path(out_dir, doc.image_id)
    Path(f"{stem}.ocr.json").write_text(serialize_ocr(doc), encoding="utf-8")
    Path(f"{stem}.truth.json").write_text(
        json.dumps(truth.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8"
    )
    if truth.annotation is not None:
        ann_dir = Path(out_dir, "annotations")
        ann_dir.mkdir(exist_ok=True)
        (ann_dir / f"{doc.image_id}.json").write_text(truth.annotation.to_json(), encoding="utf-8")
    return doc.image_id


def cmd_synth(args, cfg: PipelineConfig) -> int:
    try:
        spec_data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        base, rows, cols = synth.spec_from_dict(spec_data)
    except (TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad spec file {args.spec}: {exc}") from exc
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = synth.corpus_specs(base, args.n, rows, cols)
    ids = _pmap(_synth_one, [(s, str(out), cfg.facts_path) for s in specs], args.jobs)
    logger.info("generated %d documents into %s", len(ids), out)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # added to the top-level parser and to every subparser, so global flags
    # can appear on either side of the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="TOML config file")
    p.add_argument("--jobs", type=int, default=d(os.cpu_count() or 1), help="worker processes")
    p.add_argument(
        "--log-level", default=d("WARNING"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    p.add_argument(
        "--print-config", action="store_true", default=d(False),
        help="print the resolved configuration and exit",
    )
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esra", parents=[_global_options(False)])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    common = [_global_options(True)]

    p = sub.add_parser("restore", parents=common, help="rebuild layout-preserving text from OCR")
    p.add_argument("--in", dest="input", help="OCR JSON file or directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--r", type=float)
    p.add_argument("--l", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--x-first", action="store_const", const=True, default=None)
    p.add_argument("--emit-line-map", action="store_true")
    p.add_argument("--strict-bbox", action="store_true", help="refuse [x0,y0,x1,y1]-looking boxes")
    p.set_defaults(func=cmd_restore, required=("input", "output_dir"))

    p = sub.add_parser("validate", parents=common, help="check annotations for consistency")
    p.add_argument("--annotations")
    p.add_argument("--schema")
    p.add_argument("--report", help="issues JSON path (default: stdout)")
    p.add_argument("--strict", action="store_true", help="exit 1 when error issues are found")
    p.set_defaults(func=cmd_validate, required=("annotations",))

    p = sub.add_parser("gen-qa", parents=common, help="generate the QA bank")
    p.add_argument("--annotations")
    p.add_argument("--facts")
    p.add_argument("--schema")
    p.add_argument("--seed", type=int)
    p.add_argument("--unanswerable-fraction", type=float)
    p.add_argument("--multirow-pairs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_qa, required=("annotations", "out"))

    p = sub.add_parser("score", parents=common, help="score predictions against a bank")
    p.add_argument("--bank")
    p.add_argument("--preds")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--table", help="also write the text table here")
    p.add_argument("--annotations", help="annotation dir for image-type / quality strata")
    p.set_defaults(func=cmd_score, required=("bank", "preds", "out"))

    p = sub.add_parser("run-baseline", parents=common, help="query a model endpoint")
    p.add_argument("--bank")
    p.add_argument("--docs", help="directory of restored .txt files")
    p.add_argument("--endpoint", help="endpoint config JSON")
    p.add_argument("--facts")
    p.add_argument("--out")
    p.add_argument("--dry-run", action="store_true", help="write prompts, send nothing")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_run_baseline, required=("bank", "docs", "endpoint_path", "out"))

    p = sub.add_parser("synth", parents=common, help="generate a synthetic OCR corpus")
    p.add_argument("--spec")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--facts", help="fact base for lab-layout context references")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth, required=("spec", "output_dir"))
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    cmd = args.command
    if cmd == "restore":
        cfg = override(
            cfg,
            esra={"r": args.r, "l": args.l, "k": args.k, "seed": args.seed, "x_first": args.x_first},
            output_dir=args.out,
        )
    elif cmd == "validate":
        cfg = override(cfg, schema_path=args.schema)
    elif cmd == "gen-qa":
        cfg = override(
            cfg, qa_seed=args.seed, unanswerable_fraction=args.unanswerable_fraction,
            multirow_pairs=args.multirow_pairs, facts_path=args.facts, schema_path=args.schema,
        )
    elif cmd == "run-baseline":
        cfg = override(cfg, endpoint_path=args.endpoint, facts_path=args.facts)
    elif cmd == "synth":
        cfg = override(cfg, output_dir=args.out, facts_path=args.facts)
    if not 0.0 <= cfg.unanswerable_fraction <= 1.0:
        raise ConfigError("unanswerable_fraction must be in [0, 1]")
    cfg.check_paths()
    return cfg


def _check_required(args, cfg: PipelineConfig):
    missing = []
    for name in args.required:
        value = getattr(cfg, name) if hasattr(cfg, name) else getattr(args, name)
        if value is None:
            flag = {"input": "--in", "output_dir": "--out", "endpoint_path": "--endpoint"}.get(
                name, "--" + name.replace("_", "-")
            )
            missing.append(flag)
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): {', '.join(missing)}")


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except SystemExit as exc:  # argparse reports usage errors this way
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(cfg.to_toml())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        _check_required(args, cfg)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"esra: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except baseline.AuthError as exc:
        print(f"esra: authentication failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        logger.debug("traceback", exc_info=True)
        print(f"esra: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
