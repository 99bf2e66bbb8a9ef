"""Sequential training over ordered source domains, then one unseen-target test."""

from __future__ import annotations

import itertools
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from sdalab.data import DomainDataset, Split
from sdalab.models import Model
from sdalab.strategies import (
    EWC, Anchor, Combined, EwcConfig, FisherDiag, IMMMean, IMMMode, Init, StrategySpec,
    estimate_fisher_diag, imm_mean_merge, imm_mode_merge, predict_probs, train_combined,
    train_on_domain,
)

ModelFactory = Callable[[int], Model]


class OrderingError(ValueError):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    """Stable child seed for (seed, keys...)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def evaluate_accuracy(model: Model, split: Split) -> float:
    """Fraction of examples whose thresholded prediction matches the label.

    A probability of exactly 0.5 counts as a positive prediction.
    """
    if len(split) == 0:
        raise ValueError("cannot evaluate accuracy on an empty split")
    probs = predict_probs(model, split.ids)
    return float(np.mean((probs >= 0.5).astype(np.int64) == split.labels))


@dataclass
class StepRecord:
    domain: str
    seconds: float
    accuracies: dict[str, float]


@dataclass
class RunResult:
    ordering: list[str]
    strategy: str
    seed: int
    target: str
    target_accuracy: float
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def train_seconds(self) -> float:
        return float(sum(s.seconds for s in self.steps))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunResult:
        d = dict(d)
        d["steps"] = [StepRecord(**s) for s in d.get("steps", [])]
        return cls(**d)


@dataclass
class RunArtifacts:
    """Final model and (when EWC produced one) its last Fisher, kept for checkpoints."""
    model: Model
    fisher: FisherDiag | None = None
    history: list[str] = field(default_factory=list)


def check_ordering(ordering: Sequence[str], sources: Sequence[DomainDataset], target: DomainDataset) -> None:
    names = [s.name for s in sources]
    if target.name in names or any(s is target for s in sources):
        raise OrderingError("target must be unseen: it appears among the sources")
    if target.name in ordering:
        raise OrderingError("target must be unseen: it appears in the ordering")
    if sorted(ordering) != sorted(names) or len(set(ordering)) != len(ordering):
        raise OrderingError(f"ordering {list(ordering)} is not a permutation of sources {names}")


def _seen_accuracies(model: Model, seen: list[DomainDataset]) -> dict[str, float]:
    return {d.name: evaluate_accuracy(model, d.test) for d in seen}


def run_sda(model_factory: ModelFactory, sources: Sequence[DomainDataset], ordering: Sequence[str],
            strategy: StrategySpec, target: DomainDataset, seed: int = 0,
            keep_artifacts: bool = False) -> RunResult | tuple[RunResult, RunArtifacts]:
    """Train on the sources in ``ordering`` under ``strategy``; test once on ``target``.

    Only wall-clock of the training calls is timed.  The target's splits are
    read exactly once (its test split, after the last source step).
    """
    ordering = list(ordering)
    check_ordering(ordering, sources, target)
    by_name = {s.name: s for s in sources}
    steps: list[StepRecord] = []
    fisher: FisherDiag | None = None

    if isinstance(strategy, (EWC, Init)):
        model = model_factory(seed)
        anchor = None
        lam = strategy.config.lam if isinstance(strategy, EWC) else 0.0
        cfg = strategy.config if isinstance(strategy, EWC) else EwcConfig()
        for t, name in enumerate(ordering):
            ds = by_name[name]
            reg = None
            if isinstance(strategy, EWC) and anchor is not None:
                reg = (anchor, fisher, lam)
            t0 = time.perf_counter()
            train_on_domain(model, ds, reg, seed=derive_seed(seed, t))
            secs = time.perf_counter() - t0
            if isinstance(strategy, EWC) and (t + 1 < len(ordering) or keep_artifacts):
                anchor = Anchor.capture(model.params, name)
                fisher = estimate_fisher_diag(model, ds.train, cfg, seed=derive_seed(seed, t, 1))
            steps.append(StepRecord(name, secs, _seen_accuracies(model, [by_name[n] for n in ordering[:t + 1]])))
    elif isinstance(strategy, Combined):
        model = model_factory(seed)
        domains = sorted(sources, key=lambda d: d.name)
        t0 = time.perf_counter()
        train_combined(model, domains, seed=derive_seed(seed, 0))
        secs = time.perf_counter() - t0
        steps.append(StepRecord("+".join(d.name for d in domains), secs, _seen_accuracies(model, domains)))
    elif isinstance(strategy, (IMMMean, IMMMode)):
        models, fishers = [], []
        for t, name in enumerate(ordering):
            ds = by_name[name]
            m = model_factory(seed)
            t0 = time.perf_counter()
            train_on_domain(m, ds, seed=derive_seed(seed, t))
            secs = time.perf_counter() - t0
            models.append(m)
            if isinstance(strategy, IMMMode):
                fishers.append(estimate_fisher_diag(m, ds.train, EwcConfig(fisher_samples=strategy.fisher_samples),
                                                    seed=derive_seed(seed, t, 1)))
            steps.append(StepRecord(name, secs, _seen_accuracies(m, [ds])))
        if isinstance(strategy, IMMMean):
            model = imm_mean_merge(models, strategy.alpha)
        else:
            model = imm_mode_merge(models, fishers, strategy.alpha, strategy.eps)
    else:
        raise TypeError(f"unsupported strategy {strategy!r}")

    acc = evaluate_accuracy(model, target.test)
    result = RunResult(ordering, strategy.label, seed, target.name, acc, steps)
    if keep_artifacts:
        history = [s.domain for s in steps]
        return result, RunArtifacts(model, fisher, history)
    return result


# ---------------------------------------------------------------------------
# domain difficulty and orderings

@dataclass
class DifficultyRanking:
    accuracies: dict[str, float]

    def __post_init__(self):
        for name, a in self.accuracies.items():
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy for {name!r} outside [0, 1]: {a}")

    @property
    def easiest_to_hardest(self) -> list[str]:
        return sorted(self.accuracies, key=lambda n: (-self.accuracies[n], n))


def rank_difficulty(model_factory: ModelFactory, sources: Sequence[DomainDataset], target: DomainDataset,
                    seeds: Sequence[int]) -> DifficultyRanking:
    """Single-source transfer accuracy to ``target``, averaged over seeds."""
    if len(sources) < 2:
        raise ValueError("ranking needs at least two sources")
    if not seeds:
        raise ValueError("ranking needs at least one seed")
    accs = {}
    for src in sources:
        scores = []
        for seed in seeds:
            model = model_factory(seed)
            train_on_domain(model, src, seed=derive_seed(seed, 0))
            scores.append(evaluate_accuracy(model, target.test))
        accs[src.name] = float(np.mean(scores))
    return DifficultyRanking(accs)


def make_orderings(ranking: DifficultyRanking, policy: str | Sequence[str]) -> list[list[str]]:
    """Orderings for a policy name, or validate an explicit ordering.

    ``anti_curriculum``: hardest first; ``curriculum``: easiest first;
    ``all_permutations``: every ordering, lexicographic.
    """
    names = sorted(ranking.accuracies)
    if isinstance(policy, str):
        if policy == "anti_curriculum":
            return [ranking.easiest_to_hardest[::-1]]
        if policy == "curriculum":
            return [ranking.easiest_to_hardest]
        if policy == "all_permutations":
            return [list(p) for p in itertools.permutations(names)]
        raise ValueError(f"unknown ordering policy {policy!r}")
    explicit = list(policy)
    if sorted(explicit) != names:
        raise OrderingError(f"explicit ordering {explicit} is not a permutation of {names}")
    return [explicit]


def parse_order(code: str, names: Sequence[str]) -> list[str]:
    """Turn ``"DBE"`` (first letters) or ``"dvd,books,electronics"`` into domain names."""
    if "," in code:
        parts = [p.strip() for p in code.split(",")]
        unknown = [p for p in parts if p not in names]
        if unknown:
            raise OrderingError(f"unknown domain(s) {unknown}")
        return parts
    by_code = {}
    for n in names:
        by_code.setdefault(n[0].upper(), []).append(n)
    out = []
    for ch in code.upper():
        match = by_code.get(ch, [])
        if len(match) != 1:
            raise OrderingError(f"domain code {ch!r} matches {match or 'nothing'}")
        out.append(match[0])
    return out
