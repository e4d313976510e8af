"""Drive the full CLI pipeline against a mock endpoint: synth, restore,
gen-qa, run-baseline, score."""

from __future__ import annotations

import json
from pathlib import Path

from esra.cli import main
from esra.qa import read_bank

from mock_endpoint import MockEndpoint

FACTS = Path(__file__).resolve().parents[1] / "src" / "esra" / "data" / "sample_facts.json"


def prepare(root: Path, n: int = 20, seed: int = 500, unanswerable: float = 0.2) -> Path:
    """Generate, restore and build a bank under ``root``; returns ``root``."""
    spec = root / "spec.json"
    spec.write_text(json.dumps({"layout": "lab", "rows": [2, 8], "seed": seed}))
    steps = [
        ["synth", "--spec", str(spec), "--n", str(n), "--facts", str(FACTS), "--out", str(root / "ocr")],
        ["restore", "--in", str(root / "ocr"), "--out", str(root / "docs")],
        ["gen-qa", "--annotations", str(root / "ocr" / "annotations"), "--facts", str(FACTS),
         "--unanswerable-fraction", str(unanswerable), "--out", str(root / "bank.jsonl")],
    ]
    for argv in steps:
        rc = main(["--jobs", "1", *argv])
        assert rc == 0, argv
    return root


def run_mode(root: Path, mode: str) -> dict:
    """Query a mock endpoint in ``mode`` and return the score report."""
    bank = read_bank((root / "bank.jsonl").read_text())
    docs = {p.stem: p.read_text().rstrip("\n") for p in (root / "docs").glob("*.txt")}
    preds = root / f"preds-{mode}.jsonl"
    report = root / f"report-{mode}.json"
    with MockEndpoint(mode, bank, docs) as ep:
        endpoint = root / "endpoint.json"
        endpoint.write_text(json.dumps({"base_url": ep.url, "model": "mock", "max_in_flight": 4}))
        rc = main(["run-baseline", "--bank", str(root / "bank.jsonl"), "--docs", str(root / "docs"),
                   "--endpoint", str(endpoint), "--facts", str(FACTS), "--out", str(preds)])
    assert rc == 0, mode
    rc = main(["score", "--bank", str(root / "bank.jsonl"), "--preds", str(preds), "--out", str(report),
               "--annotations", str(root / "ocr" / "annotations")])
    assert rc == 0, mode
    return json.loads(report.read_text())
