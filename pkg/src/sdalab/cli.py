"""Command line driver.

Exit codes: 0 success, 1 a matrix cell failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from sdalab.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from sdalab.data import DataError, Vocab, convert_mdsd, read_reviews_tsv
from sdalab.harness import (
    ConfigError, ExperimentConfig, ModelFactory, aggregate, arch_config, dump_attention, emit_report,
    load_data, load_records, ordering_label, read_config_file, run_experiment_matrix, save_run,
    split_sources, write_jsonl,
)
from sdalab.orchestrator import make_orderings, parse_order, rank_difficulty, run_sda
from sdalab.strategies import parse_strategy

log = logging.getLogger("sdalab")


def _config_from(args, overrides: dict) -> ExperimentConfig:
    base = read_config_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "data", None):
        base["data"] = {"mdsd": args.data}
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    return ExperimentConfig.from_dict(base)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file with ExperimentConfig fields")
    p.add_argument("--data", help="dataset root (<root>/<domain>/reviews.tsv); default synthetic")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--out", help="output directory")


def cmd_prepare(args) -> int:
    written = convert_mdsd(args.src, args.out)
    for name, n in written.items():
        print(f"{name}\t{n}")
    return 0


def cmd_rank(args) -> int:
    cfg = _config_from(args, {"target": args.target, "archs": [args.arch] if args.arch else None,
                              "rank_seeds": args.seeds, "embeddings": args.embeddings,
                              "embed_dim": args.embed_dim})
    datasets, vocab = load_data(cfg)
    sources, target = split_sources(cfg, datasets)
    factory = ModelFactory(arch_config(cfg, cfg.archs[0]), len(vocab))
    rk = rank_difficulty(factory, sources, target, cfg.rank_seeds)
    names = [s.name for s in sources]
    out = {
        "target": target.name,
        "accuracies": rk.accuracies,
        "easiest_to_hardest": rk.easiest_to_hardest,
        "anti_curriculum": ordering_label(make_orderings(rk, "anti_curriculum")[0], names),
        "curriculum": ordering_label(make_orderings(rk, "curriculum")[0], names),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args, {"target": args.target, "archs": [args.arch] if args.arch else None,
                              "strategies": [args.strategy] if args.strategy else None,
                              "lambdas": [args.lam] if args.lam is not None else None,
                              "seeds": [args.seed] if args.seed is not None else None,
                              "embeddings": args.embeddings, "embed_dim": args.embed_dim,
                              "out_dir": args.out})
    datasets, vocab = load_data(cfg)
    sources, target = split_sources(cfg, datasets)
    names = [s.name for s in sources]
    ordering = parse_order(args.order, names) if args.order else sorted(names)
    emb = None
    if cfg.embeddings:
        from sdalab.data import load_embeddings
        emb = load_embeddings(cfg.embeddings, vocab, cfg.embed_dim)
    arch = cfg.archs[0]
    factory = ModelFactory(arch_config(cfg, arch), len(vocab), emb)
    strategy = parse_strategy(cfg.strategies[0], cfg.lambdas[0], cfg.fisher_samples)
    result, art = run_sda(factory, sources, ordering, strategy, target, cfg.seeds[0], keep_artifacts=True)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = ordering_label(ordering, names)
    stem = f"{arch.lower()}_{strategy.name}_{label.replace('>', '-')}_s{cfg.seeds[0]}"
    save_run(out / f"{stem}.json", result, arch.upper(), label)
    save_checkpoint(out / f"{stem}.ckpt", art.model, art.fisher,
                    {"seed": cfg.seeds[0], "domain_history": art.history, "vocab": vocab.itos[1:-1],
                     "strategy": result.strategy, "target": result.target})
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from(args, {"out_dir": args.out, "workers": args.workers})
    outcome = run_experiment_matrix(cfg)
    out = Path(cfg.out_dir)
    if outcome.rows:
        emit_report(outcome.rows, "csv", out / "report.csv")
        emit_report(outcome.rows, "markdown", out / "report.md")
        print((out / "report.csv").read_text(), end="")
    for f in outcome.failures:
        print(f"FAILED {f['cell']}: {f['error']}", file=sys.stderr)
    return outcome.exit_code


def cmd_dump_attention(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    vocab = Vocab(meta.get("vocab", []))
    if len(vocab) != model.vocab_size:
        raise ConfigError("checkpoint vocabulary does not match the model")
    labels, texts = read_reviews_tsv(Path(args.input))
    text = write_jsonl(dump_attention(model, zip(texts, labels), vocab), args.out)
    if not args.out:
        print(text, end="")
    return 0


def cmd_report(args) -> int:
    rows = aggregate(load_records(args.inp))
    if not rows:
        raise ConfigError(f"no run records under {args.inp}")
    text = emit_report(rows, args.format, args.out)
    if not args.out:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdalab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("prepare-data", help="convert review XML folders to reviews.tsv")
    p.add_argument("src")
    p.add_argument("out")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("rank", help="single-source difficulty ranking for a target")
    _add_common(p)
    p.add_argument("--target")
    p.add_argument("--arch")
    p.add_argument("--seeds", type=int)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("train", help="one sequential run")
    _add_common(p)
    p.add_argument("--target")
    p.add_argument("--order", help="domain codes (DBE) or comma-separated names")
    p.add_argument("--strategy")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--arch")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run an experiment matrix from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-attention", help="ALSTM attention weights as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="TSV of label<TAB>text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("report", help="aggregate persisted runs into a table")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=["csv", "markdown"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
