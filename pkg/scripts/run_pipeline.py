"""Run the whole pipeline on a synthetic lab corpus.

synth -> restore -> validate -> gen-qa -> run-baseline -> score. Without
``--endpoint`` the baseline step is a dry run that only writes prompts, and
scoring is skipped.

    python3 scripts/run_pipeline.py --work runs/demo --n 50
    python3 scripts/run_pipeline.py --work runs/demo --endpoint endpoint.json
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from esra.cli import main as esra

FACTS = Path(__file__).resolve().parents[1] / "src" / "esra" / "data" / "sample_facts.json"

log = logging.getLogger("pipeline")


def step(*argv: str) -> None:
    log.info("esra %s", " ".join(argv))
    rc = esra(list(argv))
    if rc != 0:
        sys.exit(f"step failed with exit code {rc}: esra {' '.join(argv)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, required=True)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--y-jitter", type=float, default=0.0)
    ap.add_argument("--unanswerable-fraction", type=float, default=0.1)
    ap.add_argument("--facts", type=Path, default=FACTS)
    ap.add_argument("--endpoint", type=Path, help="endpoint config JSON; omit for a dry run")
    ap.add_argument("--config", type=Path, help="TOML config passed to every step")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    work = args.work
    work.mkdir(parents=True, exist_ok=True)
    spec = work / "spec.json"
    spec.write_text(json.dumps(
        {"layout": "lab", "rows": [2, 12], "y_jitter": args.y_jitter, "seed": args.seed}
    ))
    pre = ["--config", str(args.config)] if args.config else []
    facts = ["--facts", str(args.facts)]

    step(*pre, "synth", "--spec", str(spec), "--n", str(args.n), *facts, "--out", str(work / "ocr"))
    step(*pre, "restore", "--in", str(work / "ocr"), "--out", str(work / "docs"), "--emit-line-map")
    step(*pre, "validate", "--annotations", str(work / "ocr" / "annotations"),
         "--report", str(work / "issues.json"), "--strict")
    step(*pre, "gen-qa", "--annotations", str(work / "ocr" / "annotations"), *facts,
         "--unanswerable-fraction", str(args.unanswerable_fraction), "--out", str(work / "bank.jsonl"))

    if args.endpoint is None:
        step(*pre, "run-baseline", "--bank", str(work / "bank.jsonl"), "--docs", str(work / "docs"),
             "--endpoint", str(_dry_endpoint(work)), *facts, "--out", str(work / "prompts.jsonl"),
             "--dry-run")
        log.info("dry run: prompts in %s", work / "prompts.jsonl")
        return
    step(*pre, "run-baseline", "--bank", str(work / "bank.jsonl"), "--docs", str(work / "docs"),
         "--endpoint", str(args.endpoint), *facts, "--out", str(work / "preds.jsonl"))
    step(*pre, "score", "--bank", str(work / "bank.jsonl"), "--preds", str(work / "preds.jsonl"),
         "--out", str(work / "report.json"), "--table", str(work / "report.txt"),
         "--annotations", str(work / "ocr" / "annotations"))


def _dry_endpoint(work: Path) -> Path:
    # a dry run never connects, but the step still wants a valid endpoint file
    p = work / "dry_endpoint.json"
    p.write_text(json.dumps({"base_url": "http://localhost/unused", "model": "none"}))
    return p


if __name__ == "__main__":
    main()
