"""Deterministic synthetic multi-domain sentiment corpora.

Every domain draws sentiment words from one shared lexicon (``pos*`` /
``neg*`` tokens with a global polarity) and filler from its own distractor
vocabulary plus a small shared neutral vocabulary.  A domain's difficulty
knob is the fraction of the shared lexicon whose polarity it agrees with:
at knob 1.0 the domain speaks the global sentiment language, at 0.0 every
sentiment word is inverted (a maximally interfering domain).  Models trained
on low-knob domains therefore transfer worse to a knob-1.0 target.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from sdalab.data import DomainDataset, Split, Vocab, encode_text


@dataclass(frozen=True)
class SyntheticSpec:
    knobs: tuple[float, ...] = (1.0, 0.9, 0.7, 0.5)
    names: tuple[str, ...] | None = None
    n_train: int = 200
    n_val: int = 50
    n_test: int = 100
    lexicon_size: int = 20          # sentiment words per polarity
    domain_vocab_size: int = 30     # distractor tokens per domain
    neutral_vocab_size: int = 20
    sentiment_per_example: int = 3
    length_range: tuple[int, int] = (8, 12)
    max_len: int = 12
    label_noise: float = 0.0
    seed: int = 0
    # distractor vocabulary tag per domain (defaults to the domain name)
    distractor_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        for k in self.knobs:
            if not 0.0 <= k <= 1.0:
                raise ValueError(f"knob {k} outside [0, 1]")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")
        if self.names is not None and len(self.names) != len(self.knobs):
            raise ValueError("one name per knob")
        if self.distractor_tags is not None and len(self.distractor_tags) != len(self.knobs):
            raise ValueError("one distractor tag per knob")
        lo, hi = self.length_range
        if not (self.sentiment_per_example <= lo <= hi):
            raise ValueError("length_range must fit the sentiment words")

    @property
    def n_domains(self) -> int:
        return len(self.knobs)

    @property
    def domain_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else tuple(f"d{i}" for i in range(self.n_domains))


def _domain_polarity(rng, size: int, knob: float) -> np.ndarray:
    """Per-word polarity flips: exactly round((1 - knob) * size) words of each polarity."""
    flip = np.zeros(size, dtype=bool)
    n_flip = int(round((1.0 - knob) * size))
    flip[rng.choice(size, size=n_flip, replace=False)] = True
    return flip


def _make_split(rng, n, spec: SyntheticSpec, pools, distractors, neutral):
    texts, labels = [], []
    lo, hi = spec.length_range
    for i in range(n):
        y = i % 2
        length = int(rng.integers(lo, hi + 1))
        words = list(rng.choice(pools[y], size=spec.sentiment_per_example))
        n_fill = length - len(words)
        fill_pool = distractors if rng.random() < 0.7 else neutral
        words += list(rng.choice(fill_pool, size=n_fill))
        words = [words[j] for j in rng.permutation(len(words))]
        if rng.random() < spec.label_noise:
            y = 1 - y
        texts.append(" ".join(words))
        labels.append(y)
    order = rng.permutation(n)
    return [texts[j] for j in order], np.array(labels)[order]


def gen_synthetic(spec: SyntheticSpec) -> tuple[list[DomainDataset], Vocab]:
    rng = np.random.default_rng(spec.seed)
    pos = np.array([f"pos{j}" for j in range(spec.lexicon_size)])
    neg = np.array([f"neg{j}" for j in range(spec.lexicon_size)])
    neutral = np.array([f"w{j}" for j in range(spec.neutral_vocab_size)])
    raw = []
    tags = spec.distractor_tags or spec.domain_names
    for name, knob, tag in zip(spec.domain_names, spec.knobs, tags):
        drng = np.random.default_rng(rng.integers(2**63))
        flip_pos = _domain_polarity(drng, spec.lexicon_size, knob)
        flip_neg = _domain_polarity(drng, spec.lexicon_size, knob)
        # words this domain uses to express label 1 / label 0
        says_pos = np.concatenate([pos[~flip_pos], neg[flip_neg]])
        says_neg = np.concatenate([neg[~flip_neg], pos[flip_pos]])
        # alphanumeric so the tokenizer keeps each distractor whole
        tag = re.sub(r"[^a-z0-9]", "", tag.lower())
        distractors = np.array([f"{tag}x{j}" for j in range(spec.domain_vocab_size)])
        parts = [
            _make_split(drng, n, spec, (says_neg, says_pos), distractors, neutral)
            for n in (spec.n_train, spec.n_val, spec.n_test)
        ]
        raw.append((name, parts))
    vocab = Vocab.build(t for _, parts in raw for t in parts[0][0])
    datasets = []
    for name, parts in raw:
        splits = [
            Split(np.array([encode_text(t, vocab, spec.max_len) for t in texts],
                           dtype=np.int64).reshape(len(texts), spec.max_len), labels, list(texts))
            for texts, labels in parts
        ]
        datasets.append(DomainDataset(name, *splits))
    return datasets, vocab


@dataclass(frozen=True)
class PlantedSetup:
    """Sources with planted difficulty plus a clean target."""
    source_knobs: tuple[float, ...] = (0.9, 0.7, 0.5)
    source_names: tuple[str, ...] = ("c", "a", "b")
    target_name: str = "t"
    extra: dict = field(default_factory=dict)

    def spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(knobs=(*self.source_knobs, 1.0),
                             names=(*self.source_names, self.target_name), seed=seed, **self.extra)


def split_target(datasets: list[DomainDataset], target: str) -> tuple[list[DomainDataset], DomainDataset]:
    tgt = [d for d in datasets if d.name == target]
    if len(tgt) != 1:
        raise ValueError(f"target {target!r} not among {[d.name for d in datasets]}")
    return [d for d in datasets if d.name != target], tgt[0]


def interfering_pair_spec(seed: int = 0) -> SyntheticSpec:
    """Domain ``a`` and its polarity-inverted twin ``b``.

    The twin reuses ``a``'s filler vocabulary, so the two differ only in
    what the sentiment words mean.  20% label noise keeps per-example
    gradients on ``a`` alive after training; with cleaner labels the Fisher
    of rarely firing units sits barely above zero and anchors them weakly.
    """
    return SyntheticSpec(knobs=(1.0, 0.0), names=("a", "b"), n_train=400, n_val=50, n_test=400,
                         label_noise=0.2, distractor_tags=("a", "a"), seed=seed)
