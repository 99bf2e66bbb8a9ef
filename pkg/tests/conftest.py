import numpy as np
import pytest

from sdalab.data import DomainDataset, Split, Vocab


def central_diff(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    """Central finite difference of scalar ``f()`` w.r.t. ``arr[idx]`` (perturbed in place)."""
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_coords(params, n: int, rng, rows=None):
    """``n`` (name, index) pairs: tensor picked uniformly, then a coordinate in it.

    ``rows`` restricts embedding coordinates to the given row ids.
    """
    names = params.names()
    out = []
    for _ in range(n):
        name = names[rng.integers(len(names))]
        shape = params[name].shape
        if name == "embedding" and rows is not None:
            r = int(rng.choice(rows))
            idx = (r, int(rng.integers(shape[1])))
        else:
            idx = tuple(int(rng.integers(s)) for s in shape)
        out.append((name, idx))
    return out


def make_domain(name, ids, labels, texts=None, n_val=None, n_test=None):
    ids = np.asarray(ids)
    labels = np.asarray(labels)
    texts = texts or [""] * len(labels)
    sp = Split(ids, labels, texts)
    return DomainDataset(name, sp, Split(ids, labels, texts), Split(ids, labels, texts))


@pytest.fixture
def tiny_vocab():
    return Vocab(["great", "product", "bad"])


def desk_arch(variant="CNN", **kw):
    """Small, fast architecture for desk-scale runs on synthetic data."""
    from sdalab.models import ArchConfig
    base = dict(embed_dim=8, max_len=12, kernel_sizes=(2, 3), filters=6, hidden=8, attn_hidden=4,
                epochs=3, batch_size=16, lr=1e-2, patience=None)
    base.update(kw)
    return ArchConfig.default(variant, **base)


def desk_factory(vocab_size, variant="CNN", **kw):
    from sdalab.models import build_model
    arch = desk_arch(variant, **kw)
    return lambda seed: build_model(arch, vocab_size, seed=seed)


@pytest.fixture(scope="session")
def planted():
    """Three planted-difficulty sources (c easiest, b hardest) and a clean target t."""
    from sdalab.synthetic import PlantedSetup, gen_synthetic, split_target
    spec = PlantedSetup(extra=dict(n_train=96, n_val=32, n_test=64)).spec(0)
    datasets, vocab = gen_synthetic(spec)
    sources, target = split_target(datasets, "t")
    return sources, target, vocab


# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
