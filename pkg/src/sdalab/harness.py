"""Experiment matrices, persisted results, reports and attention dumps."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from sdalab.checkpoint import save_checkpoint
from sdalab.data import DomainDataset, Vocab, encode_text, load_embeddings, load_mdsd
from sdalab.models import ArchConfig, Model, build_model
from sdalab.orchestrator import (
    DifficultyRanking, RunResult, make_orderings, parse_order, rank_difficulty, run_sda,
)
from sdalab.strategies import parse_strategy
from sdalab.synthetic import SyntheticSpec, gen_synthetic

logger = logging.getLogger(__name__)

CSV_FIELDS = ["arch", "strategy", "ordering", "target", "seed_count", "mean_acc", "std_acc", "mean_train_seconds"]
TIMING_FIELDS = ("mean_train_seconds",)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    target: str
    sources: list[str] | None = None
    archs: list[str] = field(default_factory=lambda: ["cnn"])
    strategies: list[str] = field(default_factory=lambda: ["ewc"])
    lambdas: list[float] = field(default_factory=lambda: [100.0])
    ordering: str | list = "anti_curriculum"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    rank_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    ranking: dict | None = None
    data: dict = field(default_factory=lambda: {"synthetic": {}})
    embeddings: str | None = None
    embed_dim: int = 50
    max_len: int = 40
    split_seed: int = 0
    arch_overrides: dict = field(default_factory=dict)
    fisher_samples: int | str = "all"
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if isinstance(self.rank_seeds, int):
            self.rank_seeds = list(range(self.rank_seeds))
        if isinstance(self.archs, str):
            self.archs = [self.archs]
        if isinstance(self.strategies, str):
            self.strategies = [self.strategies]
        if isinstance(self.lambdas, (int, float)):
            self.lambdas = [float(self.lambdas)]
        self.validate()

    def validate(self) -> None:
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required")
        if self.sources is not None and self.target in self.sources:
            raise ConfigError("target must not be among the sources")
        if not self.data or len(self.data) != 1 or next(iter(self.data)) not in ("mdsd", "synthetic"):
            raise ConfigError("data must be {'mdsd': path} or {'synthetic': {...}}")
        for a in self.archs:
            if a.upper() not in ("CNN", "LSTM", "ALSTM"):
                raise ConfigError(f"unknown architecture {a!r}")
        for s in self.strategies:
            try:
                parse_strategy(s)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if any(lam < 0 for lam in self.lambdas):
            raise ConfigError("lambda must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "target" not in d:
            raise ConfigError("config needs a target domain")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            d = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return d


# ---------------------------------------------------------------------------
# data and model construction

def load_data(cfg: ExperimentConfig) -> tuple[list[DomainDataset], Vocab]:
    kind, val = next(iter(cfg.data.items()))
    if kind == "mdsd":
        return load_mdsd(val, cfg.split_seed, cfg.max_len)
    spec_d = dict(val or {})
    for k in ("knobs", "names", "length_range"):
        if k in spec_d and spec_d[k] is not None:
            spec_d[k] = tuple(spec_d[k])
    spec_d.setdefault("max_len", cfg.max_len)
    return gen_synthetic(SyntheticSpec(**spec_d))


def resolve_domain(name: str, datasets: list[DomainDataset]) -> str:
    names = [d.name for d in datasets]
    if name in names:
        return name
    hits = [n for n in names if n[0].upper() == name.upper()] if len(name) == 1 else []
    if len(hits) != 1:
        raise ConfigError(f"unknown domain {name!r}; have {names}")
    return hits[0]


def split_sources(cfg: ExperimentConfig, datasets: list[DomainDataset]):
    target = resolve_domain(cfg.target, datasets)
    by_name = {d.name: d for d in datasets}
    if cfg.sources:
        src = [resolve_domain(s, datasets) for s in cfg.sources]
    else:
        src = [n for n in sorted(by_name) if n != target]
    if target in src:
        raise ConfigError("target must not be among the sources")
    return [by_name[n] for n in src], by_name[target]


def arch_config(cfg: ExperimentConfig, arch: str) -> ArchConfig:
    over = dict(cfg.arch_overrides.get(arch.lower(), cfg.arch_overrides.get(arch.upper(), {})) or {})
    over.setdefault("embed_dim", cfg.embed_dim)
    over.setdefault("max_len", cfg.max_len)
    try:
        return ArchConfig.default(arch, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad overrides for {arch}: {exc}") from None


class ModelFactory:
    """Picklable ``seed -> Model`` callable."""

    def __init__(self, arch: ArchConfig, vocab_size: int, embeddings: np.ndarray | None = None):
        self.arch = arch
        self.vocab_size = vocab_size
        self.embeddings = embeddings

    def __call__(self, seed: int) -> Model:
        return build_model(self.arch, self.vocab_size, self.embeddings, seed)


def ordering_label(ordering, datasets_names) -> str:
    codes = [n[0].upper() for n in datasets_names]
    if len(set(codes)) == len(codes):
        return "".join(n[0].upper() for n in ordering)
    return ">".join(ordering)


# ---------------------------------------------------------------------------
# matrix

@dataclass
class Cell:
    arch: str
    strategy: str
    lam: float
    ordering: list[str]
    seed: int

    @property
    def strategy_spec(self):
        return parse_strategy(self.strategy, self.lam, _CTX.get("fisher_samples", "all"))


_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _run_cell(cell: Cell):
    try:
        factory = _CTX["factories"][cell.arch]
        result, art = run_sda(factory, _CTX["sources"], cell.ordering, cell.strategy_spec,
                              _CTX["target"], cell.seed, keep_artifacts=True)
        return cell, result, art, None
    except Exception as exc:  # noqa: BLE001 - per-cell isolation
        logger.exception("cell %s failed", cell)
        return cell, None, None, f"{type(exc).__name__}: {exc}"


@dataclass
class ReportRow:
    arch: str
    strategy: str
    ordering: str
    target: str
    seed_count: int
    mean_acc: float
    std_acc: float
    mean_train_seconds: float


@dataclass
class MatrixOutcome:
    rows: list[ReportRow]
    records: list[dict]
    failures: list[dict]
    ranking: dict[str, dict[str, float]]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def aggregate(records: list[dict]) -> list[ReportRow]:
    """Group persisted run records by (arch, strategy, ordering) and average over seeds."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        r = rec["result"]
        key = (rec["arch"], r["strategy"], rec["ordering_label"], r["target"])
        groups.setdefault(key, []).append(rec)
    rows = []
    for key in groups:  # insertion order == matrix order
        recs = sorted(groups[key], key=lambda x: x["result"]["seed"])
        accs = np.array([x["result"]["target_accuracy"] for x in recs])
        secs = np.array([sum(s["seconds"] for s in x["result"]["steps"]) for x in recs])
        rows.append(ReportRow(*key, len(recs), float(accs.mean()), float(accs.std()), float(secs.mean())))
    return rows


def _cell_id(cell: Cell, label: str) -> str:
    strat = cell.strategy if cell.strategy != "ewc" else f"ewc-l{cell.lam:g}"
    return f"{cell.arch.lower()}_{strat}_{label.replace('>', '-')}_s{cell.seed}"


def run_experiment_matrix(cfg: ExperimentConfig, persist: bool = True) -> MatrixOutcome:
    datasets, vocab = load_data(cfg)
    sources, target = split_sources(cfg, datasets)
    src_names = [s.name for s in sources]
    emb = load_embeddings(cfg.embeddings, vocab, cfg.embed_dim) if cfg.embeddings else None
    factories = {a.upper(): ModelFactory(arch_config(cfg, a), len(vocab), emb) for a in cfg.archs}

    rankings: dict[str, dict[str, float]] = {}
    cells: list[Cell] = []
    for arch in factories:
        pol = cfg.ordering
        if isinstance(pol, str) and pol not in ("anti_curriculum", "curriculum", "all_permutations"):
            pol = parse_order(pol, src_names)
        elif isinstance(pol, list):
            pol = parse_order(",".join(pol), src_names)
        if isinstance(pol, str) and pol != "all_permutations":
            if cfg.ranking:
                rk = DifficultyRanking({resolve_domain(k, datasets): float(v) for k, v in cfg.ranking.items()})
            else:
                rk = rank_difficulty(factories[arch], sources, target, cfg.rank_seeds)
        else:
            rk = DifficultyRanking(dict.fromkeys(src_names, 0.0))
        rankings[arch] = rk.accuracies
        orderings = make_orderings(rk, pol)
        for strat in cfg.strategies:
            lams = cfg.lambdas if strat.lower() == "ewc" else [0.0]
            for lam in lams:
                for order in orderings:
                    for seed in cfg.seeds:
                        cells.append(Cell(arch, strat.lower(), float(lam), list(order), int(seed)))

    ctx = {"factories": factories, "sources": sources, "target": target, "fisher_samples": cfg.fisher_samples}
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            outcomes = list(ex.map(_run_cell, cells))
    else:
        _init_worker(ctx)
        outcomes = [_run_cell(c) for c in cells]

    out = Path(cfg.out_dir)
    if persist:
        (out / "runs").mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        with open(out / "config.yaml", "w", encoding="utf-8") as fh:
            yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
        with open(out / "ranking.json", "w", encoding="utf-8") as fh:
            json.dump(rankings, fh, indent=2, sort_keys=True)
    records, failures = [], []
    for cell, result, art, err in outcomes:
        label = ordering_label(cell.ordering, src_names)
        cid = _cell_id(cell, label)
        if err is not None:
            failures.append({"cell": cid, "error": err})
            continue
        rec = {"arch": cell.arch, "ordering_label": label, "result": result.to_dict()}
        records.append(rec)
        if persist:
            with open(out / "runs" / f"{cid}.json", "w", encoding="utf-8") as fh:
                json.dump(rec, fh, indent=2, sort_keys=True)
            meta = {"seed": cell.seed, "domain_history": art.history, "vocab": vocab.itos[1:-1],
                    "strategy": result.strategy, "target": result.target}
            save_checkpoint(out / "checkpoints" / f"{cid}.ckpt", art.model, art.fisher, meta)
    if persist and failures:
        with open(out / "failures.json", "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2)
    return MatrixOutcome(aggregate(records), records, failures, rankings)


def load_records(run_dir) -> list[dict]:
    files = sorted(Path(run_dir).glob("runs/*.json")) or sorted(Path(run_dir).glob("*.json"))
    recs = []
    for f in files:
        with open(f, encoding="utf-8") as fh:
            d = json.load(fh)
        if "result" in d:
            recs.append(d)
    return recs


# ---------------------------------------------------------------------------
# reports

def _csv_text(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.arch, r.strategy, r.ordering, r.target, r.seed_count,
                    f"{r.mean_acc:.6f}", f"{r.std_acc:.6f}", f"{r.mean_train_seconds:.3f}"])
    return buf.getvalue()


def bold_mask(values: list[list[float | None]]) -> list[list[bool]]:
    """Per column, mark every cell equal to the column maximum."""
    n_rows = len(values)
    n_cols = len(values[0]) if values else 0
    mask = [[False] * n_cols for _ in range(n_rows)]
    for j in range(n_cols):
        col = [values[i][j] for i in range(n_rows) if values[i][j] is not None]
        if not col:
            continue
        best = max(col)
        for i in range(n_rows):
            mask[i][j] = values[i][j] is not None and values[i][j] == best
    return mask


def _markdown_text(rows: list[ReportRow]) -> str:
    lines = []
    for arch in dict.fromkeys(r.arch for r in rows):
        sub = [r for r in rows if r.arch == arch]
        target = sub[0].target
        strategies = list(dict.fromkeys(r.strategy for r in sub))
        orderings = list(dict.fromkeys(r.ordering for r in sub))
        cell = {(r.strategy, r.ordering): r for r in sub}
        vals = [[cell[(s, o)].mean_acc if (s, o) in cell else None for o in orderings] for s in strategies]
        mask = bold_mask(vals)
        lines.append(f"### {arch} (target: {target})")
        lines.append("")
        lines.append("| C | " + " | ".join(orderings) + " |")
        lines.append("|---|" + "---|" * len(orderings))
        for i, s in enumerate(strategies):
            cells = []
            for j, o in enumerate(orderings):
                r = cell.get((s, o))
                if r is None:
                    cells.append("")
                    continue
                txt = f"{100 * r.mean_acc:.2f} ± {100 * r.std_acc:.2f}"
                cells.append(f"**{txt}**" if mask[i][j] else txt)
            lines.append(f"| {s} | " + " | ".join(cells) + " |")
        lines.append("")
        lines.append("| C | ordering | mean train seconds |")
        lines.append("|---|---|---|")
        for r in sub:
            lines.append(f"| {r.strategy} | {r.ordering} | {r.mean_train_seconds:.3f} |")
        lines.append("")
    return "\n".join(lines)


def emit_report(rows: list[ReportRow], fmt: str = "csv", path=None) -> str:
    if not rows:
        raise ValueError("no results to report")
    if fmt == "csv":
        text = _csv_text(rows)
    elif fmt in ("markdown", "md"):
        text = _markdown_text(rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def strip_timing(csv_text: str) -> str:
    """CSV text with the timing columns removed (for determinism checks)."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    keep = [i for i, h in enumerate(rows[0]) if h not in TIMING_FIELDS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows) + "\n"


# ---------------------------------------------------------------------------
# attention dumps

class AttentionError(ValueError):
    pass


def dump_attention(model: Model, samples, vocab: Vocab) -> list[dict]:
    """Per-sample tokens, attention weights over real tokens, probability and label.

    ``samples`` is an iterable of ``(text, label)``.
    """
    if model.arch.variant != "ALSTM":
        raise AttentionError(f"attention dumps need an ALSTM model, got {model.arch.variant}")
    records = []
    for text, label in samples:
        ids = np.array([encode_text(text, vocab, model.arch.max_len)])
        n = int((ids != 0).sum())
        if n == 0:
            raise AttentionError(f"sample has no tokens after encoding: {text!r}")
        pred = model.forward(ids)
        w = pred.attention[0, :n]
        records.append({
            "tokens": vocab.decode(ids[0]),
            "weights": [float(x) for x in w],
            "prob": float(pred.probs.data[0]),
            "label": None if label is None else int(label),
        })
    return records


def write_jsonl(records, path=None) -> str:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def save_run(path, result: RunResult, arch: str, ordering_lbl: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"arch": arch, "ordering_label": ordering_lbl, "result": result.to_dict()},
                  fh, indent=2, sort_keys=True)

