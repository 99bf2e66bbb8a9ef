"""Continual-learning strategies for successive-domain training.

EWC anchors the parameters to the previous domain's solution, weighted by a
diagonal empirical Fisher.  Init carries parameters over unchanged, Combined
trains once on the union of the sources, and the IMM merges average
independently trained per-domain models (plainly, or precision-weighted).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from sdalab import ops
from sdalab.data import DomainDataset, Split
from sdalab.models import Model, TrainConfig, bce_loss
from sdalab.optim import AdamWHyper, OptimizerState, adamw_step
from sdalab.tensor import ParamSet, Tape, Tensor, backprop


class AlignmentError(ValueError):
    """Parameter structures that should line up do not."""


# ---------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class Anchor:
    domain: str
    values: MappingProxyType

    @classmethod
    def capture(cls, params: ParamSet, domain: str) -> Anchor:
        vals = {}
        for n, t in params.items():
            v = t.data.copy()
            v.setflags(write=False)
            vals[n] = v
        return cls(domain, MappingProxyType(vals))


@dataclass
class FisherDiag:
    values: dict[str, np.ndarray]
    sample_count: int

    def max(self) -> float:
        return max(float(v.max()) for v in self.values.values())


@dataclass(frozen=True)
class EwcConfig:
    lam: float = 100.0
    fisher_samples: int | str = "all"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.fisher_samples != "all" and (not isinstance(self.fisher_samples, int)
                                             or self.fisher_samples < 1):
            raise ValueError("fisher_samples must be a positive int or 'all'")


@dataclass(frozen=True)
class EWC:
    config: EwcConfig = field(default_factory=EwcConfig)
    name = "ewc"

    @property
    def label(self) -> str:
        return f"ewc(lambda={self.config.lam:g})"


@dataclass(frozen=True)
class Init:
    name = "init"
    label = "init"


@dataclass(frozen=True)
class Combined:
    name = "combined"
    label = "combined"


def _check_alpha(alpha):
    if alpha is None:
        return
    a = np.asarray(alpha, dtype=float)
    if (a < 0).any() or abs(a.sum() - 1.0) > 1e-9:
        raise ValueError(f"mixture weights must be nonnegative and sum to 1: {alpha}")


@dataclass(frozen=True)
class IMMMean:
    alpha: tuple[float, ...] | None = None
    fisher_samples: int | str = "all"
    name = "imm_mean"
    label = "imm_mean"

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class IMMMode:
    alpha: tuple[float, ...] | None = None
    eps: float = 1e-8
    fisher_samples: int | str = "all"
    name = "imm_mode"
    label = "imm_mode"

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")


StrategySpec = EWC | Init | Combined | IMMMean | IMMMode


def parse_strategy(name: str, lam: float = 100.0, fisher_samples="all") -> StrategySpec:
    key = name.lower().replace("-", "_")
    if key == "ewc":
        return EWC(EwcConfig(lam, fisher_samples))
    if key == "init":
        return Init()
    if key in ("combined", "comb"):
        return Combined()
    if key in ("imm_mean", "mean"):
        return IMMMean(fisher_samples=fisher_samples)
    if key in ("imm_mode", "mode"):
        return IMMMode(fisher_samples=fisher_samples)
    raise ValueError(f"unknown strategy {name!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0


# ---------------------------------------------------------------------------
# EWC pieces

def _check_aligned(params: ParamSet, other: dict, what: str) -> None:
    for n, t in params.items():
        if n not in other:
            raise AlignmentError(f"{what} has no entry for parameter {n!r}")
        if other[n].shape != t.shape:
            raise AlignmentError(f"{what} entry {n!r} has shape {other[n].shape}, expected {t.shape}")
    extra = set(other) - set(params.names())
    if extra:
        raise AlignmentError(f"{what} has unknown parameter {sorted(extra)[0]!r}")


def ewc_penalty(params: ParamSet, anchor: Anchor, fisher: FisherDiag, lam: float) -> Tensor:
    """sum_i (lam / 2) F_i (theta_i - theta*_i)^2 as a differentiable scalar."""
    _check_aligned(params, anchor.values, "anchor")
    _check_aligned(params, fisher.values, "fisher")
    terms = [
        ops.sum(ops.mul(ops.square(ops.sub(t, anchor.values[n])), fisher.values[n]))
        for n, t in params.items()
    ]
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    return ops.mul(total, lam / 2.0)


def estimate_fisher_diag(model, data: Split, config: EwcConfig = EwcConfig(), seed: int = 0) -> FisherDiag:
    """Empirical diagonal Fisher: mean squared per-example loss gradient.

    Evaluated without dropout against the gold labels.  ``model`` is anything
    with a ``params`` ParamSet and a ``forward(ids, train_mode)`` method.
    """
    n = len(data)
    if n == 0:
        raise ValueError("cannot estimate a Fisher diagonal from empty data")
    idx = np.arange(n)
    if config.fisher_samples != "all" and config.fisher_samples < n:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=config.fisher_samples, replace=False))
    acc = {name: np.zeros_like(t.data) for name, t in model.params.items()}
    for i in idx:
        with Tape() as tape:
            pred = model.forward(data.ids[i:i + 1], train_mode=False)
            loss = bce_loss(pred, data.labels[i:i + 1])
        grads = backprop(tape, loss, model.params)
        for name, g in grads.items():
            acc[name] += g * g
    m = len(idx)
    return FisherDiag({name: a / m for name, a in acc.items()}, m)


# ---------------------------------------------------------------------------
# training

def predict_probs(model: Model, ids: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [model.forward(ids[s:s + batch_size]).probs.data for s in range(0, len(ids), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def _eval_split(model: Model, split: Split) -> tuple[float, float]:
    ids, y = split.ids, split.labels
    losses, correct = 0.0, 0
    for s in range(0, len(y), 256):
        pred = model.forward(ids[s:s + 256])
        losses += bce_loss(pred, y[s:s + 256]).item() * len(y[s:s + 256])
        correct += int(((pred.probs.data >= 0.5) == y[s:s + 256]).sum())
    return losses / len(y), correct / len(y)


def train_split(model: Model, train: Split, val: Split | None, regularizer=None,
                train_cfg: TrainConfig | None = None, seed: int = 0) -> tuple[Model, TrainHistory]:
    """Minibatch AdamW training on one labelled split (model updated in place)."""
    cfg = train_cfg or model.arch.train_config()
    if regularizer is not None:
        anchor, fisher, lam = regularizer
        _check_aligned(model.params, anchor.values, "anchor")
        _check_aligned(model.params, fisher.values, "fisher")
    if cfg.patience is not None and (val is None or len(val) == 0):
        raise ValueError("early stopping needs a nonempty validation split")
    hyper = AdamWHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    state = OptimizerState.zeros_like(model.params)
    shuffle_ss, dropout_ss = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    hist = TrainHistory()
    n = len(train)
    best_loss, best_vals, since_best = np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            b = perm[s:s + cfg.batch_size]
            with Tape() as tape:
                pred = model.forward(train.ids[b], train_mode=True, rng=dropout_rng)
                loss = bce_loss(pred, train.labels[b])
                total += loss.item() * len(b)
                if regularizer is not None:
                    loss = ops.add(loss, ewc_penalty(model.params, anchor, fisher, lam))
            grads = backprop(tape, loss, model.params)
            adamw_step(model.params, grads, state, hyper)
        hist.train_loss.append(total / n)
        hist.stopping_epoch = epoch
        if val is not None and len(val):
            vl, va = _eval_split(model, val)
            hist.val_loss.append(vl)
            hist.val_acc.append(va)
            if cfg.patience is not None:
                if vl < best_loss:
                    best_loss, best_vals, since_best = vl, model.params.snapshot(), 0
                    hist.best_epoch = epoch
                else:
                    since_best += 1
                    if since_best >= cfg.patience:
                        break
    if cfg.patience is not None and best_vals is not None:
        model.params.load(best_vals)
    else:
        hist.best_epoch = hist.stopping_epoch
    return model, hist


def train_on_domain(model: Model, domain: DomainDataset, regularizer=None,
                    train_cfg: TrainConfig | None = None, seed: int = 0) -> tuple[Model, TrainHistory]:
    """Train on ``domain``'s train split, validating on its val split.

    ``regularizer`` is ``(anchor, fisher, lam)`` to add the EWC penalty.
    """
    return train_split(model, domain.train, domain.val, regularizer, train_cfg, seed)


def train_combined(model: Model, domains: list[DomainDataset], train_cfg: TrainConfig | None = None,
                   seed: int = 0) -> tuple[Model, TrainHistory]:
    if not domains:
        raise ValueError("train_combined needs at least one domain")
    train = Split.concat(d.train for d in domains)
    val = Split.concat(d.val for d in domains)
    return train_split(model, train, val, None, train_cfg, seed)


# ---------------------------------------------------------------------------
# IMM merges

def _weights(alpha, k: int) -> np.ndarray:
    if alpha is None:
        return np.full(k, 1.0 / k)
    a = np.asarray(alpha, dtype=float)
    if len(a) != k:
        raise ValueError(f"{len(a)} mixture weights for {k} models")
    _check_alpha(a)
    return a


def _check_models(models: list[Model]) -> None:
    if not models:
        raise ValueError("nothing to merge")
    ref = models[0]
    for m in models[1:]:
        if m.arch != ref.arch or m.vocab_size != ref.vocab_size or m.params.shapes() != ref.params.shapes():
            raise AlignmentError("cannot merge models with different architectures")


def imm_mean_merge(models: list[Model], alpha=None) -> Model:
    _check_models(models)
    a = _weights(alpha, len(models))
    merged = models[0].copy()
    for name, t in merged.params.items():
        acc = a[0] * models[0].params[name].data
        for ak, m in zip(a[1:], models[1:]):
            acc = acc + ak * m.params[name].data
        t.data = acc
    return merged


def imm_mode_merge(models: list[Model], fishers: list[FisherDiag], alpha=None, eps: float = 1e-8) -> Model:
    """Precision-weighted merge: sum_k a_k F_k theta_k / (sum_k a_k F_k + eps)."""
    _check_models(models)
    if len(fishers) != len(models):
        raise AlignmentError(f"{len(fishers)} Fisher diagonals for {len(models)} models")
    for f in fishers:
        _check_aligned(models[0].params, f.values, "fisher")
    a = _weights(alpha, len(models))
    merged = models[0].copy()
    for name, t in merged.params.items():
        num = np.zeros_like(t.data)
        den = np.zeros_like(t.data)
        for ak, m, f in zip(a, models, fishers):
            w = ak * f.values[name]
            num = num + w * m.params[name].data
            den = den + w
        den = den + eps
        # where every precision vanishes fall back to the plain mean
        safe = den > 0
        mean = sum(ak * m.params[name].data for ak, m in zip(a, models))
        t.data = np.where(safe, num / np.where(safe, den, 1.0), mean)
    return merged
