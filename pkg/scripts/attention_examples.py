"""Train an ALSTM on one synthetic domain and dump attention for a few test reviews."""

import argparse

from sdalab.harness import dump_attention, write_jsonl
from sdalab.models import ArchConfig, build_model
from sdalab.strategies import train_on_domain
from sdalab.synthetic import SyntheticSpec, gen_synthetic


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("-n", type=int, default=4)
    ap.add_argument("--out")
    args = ap.parse_args()
    (dom,), vocab = gen_synthetic(SyntheticSpec(knobs=(1.0,), names=("d",)))
    model = build_model(ArchConfig.default("alstm", embed_dim=16, max_len=12, hidden=16, attn_hidden=8,
                                           lr=1e-2, epochs=8), len(vocab))
    train_on_domain(model, dom)
    test = dom.test
    recs = dump_attention(model, zip(test.texts[:args.n], test.labels[:args.n]), vocab)
    for r in recs:
        top = sorted(zip(r["weights"], r["tokens"]), reverse=True)[:3]
        print(f"label {r['label']} p={r['prob']:.2f}  " + "  ".join(f"{t}:{w:.2f}" for w, t in top))
    if args.out:
        write_jsonl(recs, args.out)


if __name__ == "__main__":
    main()
