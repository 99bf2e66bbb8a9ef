"""CNN, LSTM and attention-LSTM sentence classifiers with a sigmoid head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from sdalab import ops
from sdalab.tensor import ParamSet, Tensor, record

VARIANTS = ("CNN", "LSTM", "ALSTM")

# per-variant training schedule: epochs, batch size, learning rate, early-stopping patience
_SCHEDULES = {
    "CNN": dict(epochs=30, batch_size=16, lr=1e-3, patience=10),
    "LSTM": dict(epochs=25, batch_size=15, lr=1e-3, patience=None),
    "ALSTM": dict(epochs=30, batch_size=35, lr=0.0081, patience=None),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    patience: int | None = None
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs and batch_size must be positive: {self}")


@dataclass(frozen=True)
class ArchConfig:
    variant: str
    embed_dim: int = 50
    max_len: int = 40
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    filters: int = 100
    dropout: float = 0.5
    hidden: int = 100
    attn_hidden: int = 64
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    patience: int | None = None
    weight_decay: float = 0.01
    embed_init_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "variant", self.variant.upper())
        object.__setattr__(self, "kernel_sizes", tuple(self.kernel_sizes))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        dims = [self.embed_dim, self.max_len, self.filters, self.hidden, self.attn_hidden]
        if min(dims) < 1 or not self.kernel_sizes or min(self.kernel_sizes) < 1:
            raise ValueError(f"all dimensions must be positive: {self}")
        if self.variant == "CNN" and max(self.kernel_sizes) > self.max_len:
            raise ValueError("kernel sizes must not exceed max_len")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def default(cls, variant: str, **overrides) -> ArchConfig:
        v = variant.upper()
        if v not in _SCHEDULES:
            raise ValueError(f"unknown variant {variant!r}")
        return cls(variant=v, **{**_SCHEDULES[v], **overrides})

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.patience, self.weight_decay)

    def with_(self, **changes) -> ArchConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d


def param_count(arch: ArchConfig, vocab_size: int) -> int:
    """Closed-form parameter count, embedding table included."""
    d, h = arch.embed_dim, arch.hidden
    n = vocab_size * d
    if arch.variant == "CNN":
        n += sum(k * d * arch.filters + arch.filters for k in arch.kernel_sizes)
        n += len(arch.kernel_sizes) * arch.filters + 1
        return n
    n += d * 4 * h + h * 4 * h + 4 * h
    if arch.variant == "ALSTM":
        n += h * arch.attn_hidden + arch.attn_hidden + arch.attn_hidden
    return n + h + 1


class Prediction(NamedTuple):
    probs: Tensor
    logits: Tensor
    attention: np.ndarray | None = None


@dataclass
class Model:
    arch: ArchConfig
    vocab_size: int
    params: ParamSet = field(repr=False)

    def forward(self, ids, train_mode: bool = False, rng: np.random.Generator | None = None) -> Prediction:
        return forward_predict(self, ids, train_mode, rng)

    def copy(self) -> Model:
        return Model(self.arch, self.vocab_size, self.params.copy())


def _uniform(rng, fan_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def build_model(arch: ArchConfig, vocab_size: int, init_embeddings: np.ndarray | None = None,
                seed: int = 0) -> Model:
    """Fresh model; non-embedding weights are U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Without ``init_embeddings`` the table is U(-s, s) with ``s = arch.embed_init_scale``.
    Row 0 (padding) is always zero.
    """
    if vocab_size < 1:
        raise ValueError("vocab_size must be positive")
    rng = np.random.default_rng(seed)
    d, h = arch.embed_dim, arch.hidden
    if init_embeddings is not None:
        emb = np.array(init_embeddings, dtype=np.float64)
        if emb.shape != (vocab_size, d):
            raise ValueError(f"init_embeddings shape {emb.shape} != {(vocab_size, d)}")
    else:
        s = arch.embed_init_scale
        emb = rng.uniform(-s, s, size=(vocab_size, d))
    emb[0] = 0.0
    ps = ParamSet()
    ps.add("embedding", Tensor(emb))
    if arch.variant == "CNN":
        for k in arch.kernel_sizes:
            ps.add(f"conv{k}.w", _uniform(rng, k * d, (k, d, arch.filters)))
            ps.add(f"conv{k}.b", _uniform(rng, k * d, (arch.filters,)))
        feat = len(arch.kernel_sizes) * arch.filters
    else:
        ps.add("lstm.w_x", _uniform(rng, h, (d, 4 * h)))
        ps.add("lstm.w_h", _uniform(rng, h, (h, 4 * h)))
        ps.add("lstm.b", _uniform(rng, h, (4 * h,)))
        if arch.variant == "ALSTM":
            a = arch.attn_hidden
            ps.add("attn.w", _uniform(rng, h, (h, a)))
            ps.add("attn.b", _uniform(rng, h, (a,)))
            ps.add("attn.v", _uniform(rng, a, (a, 1)))
        feat = h
    ps.add("out.w", _uniform(rng, feat, (feat, 1)))
    ps.add("out.b", _uniform(rng, feat, (1,)))
    return Model(arch, vocab_size, ps)


def _check_batch(model: Model, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != model.arch.max_len:
        raise ValueError(f"batch must have shape (n, {model.arch.max_len}), got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= model.vocab_size):
        raise IndexError(f"token id out of range [0, {model.vocab_size})")
    return ids


def _cnn(model: Model, ids, train_mode, rng) -> Prediction:
    p = model.params
    x = ops.embedding(p["embedding"], ids)
    pooled = [
        ops.max_over_time(ops.relu(ops.add(ops.conv1d(x, p[f"conv{k}.w"]), p[f"conv{k}.b"])))
        for k in model.arch.kernel_sizes
    ]
    feat = ops.dropout(ops.concat(pooled, axis=1), model.arch.dropout, rng, train_mode)
    logits = ops.reshape(ops.add(ops.matmul(feat, p["out.w"]), p["out.b"]), (-1,))
    return Prediction(ops.sigmoid(logits), logits)


def lstm_states(params: ParamSet, x: Tensor, hidden: int) -> list[Tensor]:
    """Unroll a single-layer LSTM (gate order i, f, g, o) and return every h_t."""
    b, length, _ = x.shape
    h_dim = hidden
    xw = ops.matmul(x, params["lstm.w_x"])
    w_h, bias = params["lstm.w_h"], params["lstm.b"]
    h = Tensor(np.zeros((b, h_dim)))
    c = Tensor(np.zeros((b, h_dim)))
    states = []
    for t in range(length):
        z = ops.add(ops.add(ops.index(xw, (slice(None), t)), ops.matmul(h, w_h)), bias)
        i = ops.sigmoid(ops.index(z, (slice(None), slice(0, h_dim))))
        f = ops.sigmoid(ops.index(z, (slice(None), slice(h_dim, 2 * h_dim))))
        g = ops.tanh(ops.index(z, (slice(None), slice(2 * h_dim, 3 * h_dim))))
        o = ops.sigmoid(ops.index(z, (slice(None), slice(3 * h_dim, 4 * h_dim))))
        c = ops.add(ops.mul(f, c), ops.mul(i, g))
        h = ops.mul(o, ops.tanh(c))
        states.append(h)
    return states


def _lengths(ids: np.ndarray) -> np.ndarray:
    return (ids != 0).sum(axis=1)


def _lstm(model: Model, ids, train_mode, rng) -> Prediction:
    p = model.params
    x = ops.embedding(p["embedding"], ids)
    hs = ops.stack(lstm_states(p, x, model.arch.hidden), axis=1)  # (b, L, h)
    # read the state at the last real token (right padding)
    last = np.maximum(_lengths(ids) - 1, 0)
    pick = np.zeros(ids.shape)
    pick[np.arange(len(ids)), last] = 1.0
    h_last = ops.sum(ops.mul(hs, pick[:, :, None]), axis=1)
    logits = ops.reshape(ops.add(ops.matmul(h_last, p["out.w"]), p["out.b"]), (-1,))
    return Prediction(ops.sigmoid(logits), logits)


_MASK = -1e9


def _alstm(model: Model, ids, train_mode, rng) -> Prediction:
    p = model.params
    x = ops.embedding(p["embedding"], ids)
    hs = ops.stack(lstm_states(p, x, model.arch.hidden), axis=1)
    u = ops.tanh(ops.add(ops.matmul(hs, p["attn.w"]), p["attn.b"]))
    scores = ops.reshape(ops.matmul(u, p["attn.v"]), ids.shape)
    scores = ops.add(scores, np.where(ids != 0, 0.0, _MASK))
    alpha = ops.softmax(scores, axis=1)
    ctx = ops.sum(ops.mul(hs, ops.reshape(alpha, (*ids.shape, 1))), axis=1)
    logits = ops.reshape(ops.add(ops.matmul(ctx, p["out.w"]), p["out.b"]), (-1,))
    return Prediction(ops.sigmoid(logits), logits, alpha.data)


_FORWARD = {"CNN": _cnn, "LSTM": _lstm, "ALSTM": _alstm}


def forward_predict(model: Model, batch, train_mode: bool = False,
                    rng: np.random.Generator | None = None) -> Prediction:
    """Sentence probabilities of the positive class; ALSTM also returns attention."""
    ids = _check_batch(model, batch)
    return _FORWARD[model.arch.variant](model, ids, train_mode, rng)


def bce_loss(probs, labels) -> Tensor:
    """Mean binary cross-entropy.

    Accepts a :class:`Prediction` (the stable logit path is used) or a tensor
    of probabilities, which is clipped away from 0 and 1 before the log.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if isinstance(probs, Prediction):
        if probs.logits.shape != labels.shape:
            raise ValueError(f"length mismatch: {probs.logits.shape} vs {labels.shape}")
        return ops.bce_with_logits(probs.logits, labels)
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    tiny = 1e-15
    clipped = np.clip(probs.data, tiny, 1.0 - tiny)
    n = labels.size
    loss = -np.mean(labels * np.log(clipped) + (1 - labels) * np.log1p(-clipped))
    return record("bce", np.array(loss), (probs,),
                  lambda g: (g * (clipped - labels) / (clipped * (1 - clipped)) / n,))
