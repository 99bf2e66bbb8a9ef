"""Review-domain datasets, vocabulary, text encoding and word vectors.

On-disk layout: ``<root>/<domain>/reviews.tsv`` with one ``label<TAB>text``
review per line.  :func:`convert_mdsd` turns the original pseudo-XML
``positive.review`` / ``negative.review`` files into that layout.
"""

from __future__ import annotations

import html
import logging
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
MAX_LEN = 40
FULL_SPLIT = (1280, 320, 400)

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


class DataError(ValueError):
    """Malformed or missing dataset input."""


class Vocab:
    """Token <-> id map. Id 0 is padding and the last id is UNK."""

    def __init__(self, tokens):
        tokens = [t for t in tokens if t not in (PAD, UNK)]
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        self.itos: list[str] = [PAD, *tokens, UNK]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts, min_count: int = 1, remove_stopwords: bool = False) -> Vocab:
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text, remove_stopwords))
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(kept)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return len(self.itos) - 1

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids if i != self.pad_id]


_STOPWORDS: frozenset[str] | None = None


def _stopwords() -> frozenset[str]:
    global _STOPWORDS
    if _STOPWORDS is None:
        from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS
        _STOPWORDS = frozenset(ENGLISH_STOP_WORDS)
    return _STOPWORDS


def tokenize(text: str, remove_stopwords: bool = False) -> list[str]:
    toks = _TOKEN_RE.findall(text.lower())
    if remove_stopwords:
        stop = _stopwords()
        toks = [t for t in toks if t not in stop]
    return toks


def encode_text(text: str, vocab: Vocab, max_len: int = MAX_LEN,
                remove_stopwords: bool = False) -> list[int]:
    """Lowercase, tokenize, map to ids, truncate/pad on the right to ``max_len``."""
    ids = [vocab.id(t) for t in tokenize(text, remove_stopwords)[:max_len]]
    return ids + [vocab.pad_id] * (max_len - len(ids))


@dataclass
class Split:
    ids: np.ndarray      # (n, max_len) int64
    labels: np.ndarray   # (n,) int64 in {0, 1}
    texts: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids.ndim != 2 or len(self.ids) != len(self.labels):
            raise DataError(f"split ids {self.ids.shape} / labels {self.labels.shape} mismatch")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")

    def __len__(self):
        return len(self.labels)

    @staticmethod
    def concat(splits) -> Split:
        splits = list(splits)
        return Split(
            np.concatenate([s.ids for s in splits]),
            np.concatenate([s.labels for s in splits]),
            [t for s in splits for t in s.texts],
        )


class DomainDataset:
    """One review domain with train/val/test splits.

    Split access goes through properties that count reads, so callers can
    prove a target domain was never touched during training.
    """

    def __init__(self, name: str, train: Split, val: Split, test: Split):
        self.name = name
        self._splits = {"train": train, "val": val, "test": test}
        self.reads = {"train": 0, "val": 0, "test": 0}

    def _get(self, split: str) -> Split:
        self.reads[split] += 1
        return self._splits[split]

    @property
    def train(self) -> Split:
        return self._get("train")

    @property
    def val(self) -> Split:
        return self._get("val")

    @property
    def test(self) -> Split:
        return self._get("test")

    def reset_reads(self) -> None:
        self.reads = dict.fromkeys(self.reads, 0)

    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(self._splits[k]) for k in ("train", "val", "test"))

    @property
    def code(self) -> str:
        return self.name[0].upper()

    def __repr__(self):
        return f"DomainDataset({self.name!r}, sizes={self.sizes()})"


def stratified_split(labels: np.ndarray, seed: int, sizes=FULL_SPLIT):
    """Per-class shuffled split into (train, val, test) index arrays.

    ``sizes`` is honoured exactly when it sums to ``len(labels)``; otherwise
    the same proportions are applied.
    """
    labels = np.asarray(labels)
    total = sum(sizes)
    frac = np.array(sizes, dtype=float) / total
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        m = len(idx)
        n_train = int(round(frac[0] * m))
        n_val = int(round(frac[1] * m))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def read_reviews_tsv(path: Path) -> tuple[list[int], list[str]]:
    labels, texts = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep or label not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: expected 'label<TAB>text' with label 0/1")
            labels.append(int(label))
            texts.append(text)
    return labels, texts


def load_mdsd(root_dir, split_seed: int = 0, max_len: int = MAX_LEN,
              remove_stopwords: bool = False) -> tuple[list[DomainDataset], Vocab]:
    """Load every ``<root>/<domain>/reviews.tsv`` and split it 1280/320/400."""
    root = Path(root_dir)
    files = sorted(root.glob("*/reviews.tsv")) if root.is_dir() else []
    if not files:
        raise DataError(f"no domains found under {root}")
    raw = []
    for f in files:
        labels, texts = read_reviews_tsv(f)
        if len(labels) != sum(FULL_SPLIT):
            warnings.warn(f"{f}: {len(labels)} reviews (expected {sum(FULL_SPLIT)}); "
                          "using a proportional split", stacklevel=2)
        tr, va, te = stratified_split(np.array(labels), split_seed)
        raw.append((f.parent.name, np.array(labels), texts, (tr, va, te)))
    vocab = Vocab.build(
        (texts[i] for _, _, texts, (tr, _, _) in raw for i in tr),
        remove_stopwords=remove_stopwords,
    )
    datasets = []
    for name, labels, texts, parts in raw:
        splits = []
        for idx in parts:
            t = [texts[i] for i in idx]
            ids = [encode_text(s, vocab, max_len, remove_stopwords) for s in t]
            splits.append(Split(np.array(ids, dtype=np.int64).reshape(len(t), max_len), labels[idx], t))
        datasets.append(DomainDataset(name, *splits))
    return datasets, vocab


def load_embeddings(path, vocab: Vocab, dim: int) -> np.ndarray:
    """Read a ``token v1 ... vd`` text file into a |V| x dim matrix.

    Rows of tokens missing from the file, and the padding row, are zero.
    """
    mat = np.zeros((len(vocab), dim))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) - 1 != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx == vocab.pad_id:
                continue
            mat[idx] = np.array(parts[1:], dtype=np.float64)
    return mat


_REVIEW_TEXT_RE = re.compile(r"<review_text>(.*?)</review_text>", re.S)


def convert_mdsd(src_root, out_root) -> dict[str, int]:
    """Convert the original pseudo-XML domain folders to ``reviews.tsv``.

    Any ``<domain>/reviews.tsv`` already present is copied after validation.
    Whitespace (tabs, newlines) inside reviews collapses to single spaces;
    HTML entities are unescaped; exact duplicate reviews are kept.
    """
    src, out = Path(src_root), Path(out_root)
    written = {}
    for d in sorted(p for p in src.iterdir() if p.is_dir()):
        rows = []
        if (d / "reviews.tsv").exists():
            labels, texts = read_reviews_tsv(d / "reviews.tsv")
            rows = list(zip(labels, texts))
        else:
            for label, fname in ((1, "positive.review"), (0, "negative.review")):
                f = d / fname
                if not f.exists():
                    continue
                body = f.read_text(encoding="utf-8", errors="replace")
                for m in _REVIEW_TEXT_RE.finditer(body):
                    rows.append((label, " ".join(html.unescape(m.group(1)).split())))
        if not rows:
            continue
        (out / d.name).mkdir(parents=True, exist_ok=True)
        with open(out / d.name / "reviews.tsv", "w", encoding="utf-8") as fh:
            for label, text in rows:
                fh.write(f"{label}\t{text}\n")
        written[d.name] = len(rows)
        logger.info("converted %s: %d reviews", d.name, len(rows))
    if not written:
        raise DataError(f"no domains found under {src}")
    return written
