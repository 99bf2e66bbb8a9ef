"""Training time per strategy (mean wall-clock over seeds), single worker.

Only the training calls are timed.  With ``--data`` the full review
corpus is used, otherwise the planted synthetic domains.
"""

import argparse

import numpy as np

from sdalab.data import load_mdsd
from sdalab.harness import ModelFactory
from sdalab.models import ArchConfig
from sdalab.orchestrator import run_sda
from sdalab.strategies import parse_strategy
from sdalab.synthetic import PlantedSetup, gen_synthetic, split_target


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data")
    ap.add_argument("--target", default="kitchen")
    ap.add_argument("--archs", nargs="+", default=["cnn", "lstm", "alstm"])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    if args.data:
        datasets, vocab = load_mdsd(args.data)
        sources, target = split_target(datasets, args.target)
        over = {}
    else:
        datasets, vocab = gen_synthetic(PlantedSetup().spec(0))
        sources, target = split_target(datasets, "t")
        over = dict(embed_dim=16, max_len=12, filters=8, hidden=16, attn_hidden=8, epochs=5)
    order = sorted(s.name for s in sources)
    print("arch   strategy         mean_s   std_s")
    for arch in args.archs:
        factory = ModelFactory(ArchConfig.default(arch, **over), len(vocab))
        for name in ("ewc", "init", "combined", "imm_mean", "imm_mode"):
            secs = [run_sda(factory, sources, order, parse_strategy(name), target, s).train_seconds
                    for s in range(args.seeds)]
            print(f"{arch:6s} {name:15s} {np.mean(secs):7.2f} {np.std(secs):7.2f}")


if __name__ == "__main__":
    main()
