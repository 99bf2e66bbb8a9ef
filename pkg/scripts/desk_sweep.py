"""Desk-scale sweep on synthetic domains: ranking, every strategy, report tables.

    python scripts/desk_sweep.py                 # configs/desk.yaml
    python scripts/desk_sweep.py --seeds 2 --archs cnn
"""

import argparse
import logging
from pathlib import Path

from sdalab.harness import ExperimentConfig, emit_report, read_config_file, run_experiment_matrix

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.yaml"))
    ap.add_argument("--seeds", type=int)
    ap.add_argument("--archs", nargs="+")
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    d = read_config_file(args.config)
    if args.seeds:
        d["seeds"] = d["rank_seeds"] = args.seeds
    if args.archs:
        d["archs"] = args.archs
    if args.out:
        d["out_dir"] = args.out
    cfg = ExperimentConfig.from_dict(d)
    outcome = run_experiment_matrix(cfg)
    out = Path(cfg.out_dir)
    emit_report(outcome.rows, "csv", out / "report.csv")
    md = emit_report(outcome.rows, "markdown", out / "report.md")
    for arch, acc in outcome.ranking.items():
        order = sorted(acc, key=lambda n: (-acc[n], n))
        print(f"{arch} single-source accuracy: " + ", ".join(f"{n} {100 * acc[n]:.1f}" for n in order))
    print(md)
    if outcome.failures:
        print(f"{len(outcome.failures)} cells failed, see {out / 'failures.json'}")
    return outcome.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
