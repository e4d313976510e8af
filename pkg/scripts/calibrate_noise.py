"""Freeze the line-accuracy threshold for the noisy-robustness check.

Runs ``--ensembles`` corpora of ``--n`` synthetic documents at each jitter
level, starting from ``--seed``, and writes the per-level statistics plus a
threshold for jitter 0.2 (ensemble mean minus three standard deviations,
rounded down to three decimals). The acceptance suite evaluates on a
separate seed recorded in the same file.

    python3 scripts/calibrate_noise.py --out tests/data/noise_calibration.json
"""

import argparse
import json
import logging
import math
import statistics
import time

from esra.restore import EsraParams
from esra.synth import SynthSpec, corpus_fidelity

ROWS, COLUMNS = (3, 30), (1, 5)
JITTERS = (0.0, 0.1, 0.2, 0.3)
TARGET = 0.2

log = logging.getLogger("calibrate")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7000, help="calibration base seed")
    ap.add_argument("--eval-seed", type=int, default=1000, help="seed the acceptance check uses")
    ap.add_argument("--ensembles", type=int, default=10)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--out", default="tests/data/noise_calibration.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    calib_seeds = [args.seed + i * args.n for i in range(args.ensembles)]
    lo, hi = calib_seeds[0], calib_seeds[-1] + args.n
    if lo <= args.eval_seed < hi or lo < args.eval_seed + args.n <= hi:
        ap.error("evaluation seeds overlap the calibration seeds")

    params = EsraParams()
    levels = {}
    t0 = time.perf_counter()
    for j in JITTERS:
        accs = [
            corpus_fidelity(SynthSpec(y_jitter=j, seed=s), args.n, params, ROWS, COLUMNS).line_accuracy
            for s in calib_seeds
        ]
        levels[str(j)] = {
            "mean": statistics.fmean(accs),
            "stdev": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "min": min(accs),
            "max": max(accs),
        }
        log.info("jitter %.1f: mean %.4f sd %.4f min %.4f", j, *(levels[str(j)][k] for k in ("mean", "stdev", "min")))

    stats = levels[str(TARGET)]
    threshold = math.floor((stats["mean"] - 3 * stats["stdev"]) * 1000) / 1000
    out = {
        "description": "pooled line-assignment accuracy of default restoration on synthetic corpora",
        "corpus": {"n": args.n, "rows": list(ROWS), "columns": list(COLUMNS)},
        "params": params.to_dict(),
        "calibration_seeds": calib_seeds,
        "eval_seed": args.eval_seed,
        "levels": levels,
        "target_jitter": TARGET,
        "threshold": threshold,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")
    log.info("threshold %.3f written to %s (%.1fs)", threshold, args.out, time.perf_counter() - t0)


if __name__ == "__main__":
    main()
