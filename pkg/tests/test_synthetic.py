import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from sdalab.synthetic import PlantedSetup, SyntheticSpec, gen_synthetic, interfering_pair_spec, split_target


def _bow(split, vocab_size):
    x = np.zeros((len(split), vocab_size))
    for i, row in enumerate(split.ids):
        for t in row[row != 0]:
            x[i, t] += 1
    return x


def test_same_seed_identical_corpora():
    a, va = gen_synthetic(SyntheticSpec(seed=4))
    b, vb = gen_synthetic(SyntheticSpec(seed=4))
    c, _ = gen_synthetic(SyntheticSpec(seed=5))
    assert va.itos == vb.itos
    for x, y in zip(a, b):
        for s in ("train", "val", "test"):
            assert np.array_equal(getattr(x, s).ids, getattr(y, s).ids)
            assert getattr(x, s).texts == getattr(y, s).texts
    assert not np.array_equal(a[0].train.ids, c[0].train.ids)


def test_clean_domain_is_linearly_separable():
    datasets, vocab = gen_synthetic(SyntheticSpec(knobs=(1.0,), seed=0))
    d = datasets[0]
    clf = LogisticRegression(max_iter=2000).fit(_bow(d.train, len(vocab)), d.train.labels)
    assert clf.score(_bow(d.test, len(vocab)), d.test.labels) > 0.95


def test_lower_knob_transfers_worse_to_clean_domain():
    datasets, vocab = gen_synthetic(SyntheticSpec(knobs=(1.0, 0.9, 0.5), n_train=300, seed=1))
    tgt = datasets[0]
    acc = []
    for src in datasets[1:]:
        clf = LogisticRegression(max_iter=2000).fit(_bow(src.train, len(vocab)), src.train.labels)
        acc.append(clf.score(_bow(tgt.test, len(vocab)), tgt.test.labels))
    assert acc[0] > acc[1] + 0.1


def test_knob_flips_exact_fraction_of_lexicon():
    # with knob 0 the domain uses every sentiment word with inverted polarity
    datasets, _ = gen_synthetic(SyntheticSpec(knobs=(0.0,), label_noise=0.0, seed=2))
    tr = datasets[0].train
    for text, y in zip(tr.texts, tr.labels):
        toks = text.split()
        assert not any(t.startswith("pos" if y == 1 else "neg") for t in toks)


def test_splits_balanced_and_sized():
    datasets, _ = gen_synthetic(SyntheticSpec(knobs=(1.0, 0.5), n_train=40, n_val=10, n_test=20))
    for d in datasets:
        assert d.sizes() == (40, 10, 20)
        assert d.train.labels.sum() == 20


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(knobs=(1.2,))
    with pytest.raises(ValueError):
        SyntheticSpec(knobs=(1.0, 0.5), names=("a",))
    with pytest.raises(ValueError):
        SyntheticSpec(label_noise=-0.1)


def test_planted_setup_and_target_split():
    datasets, _ = gen_synthetic(PlantedSetup().spec(0))
    sources, target = split_target(datasets, "t")
    assert [s.name for s in sources] == ["c", "a", "b"] and target.name == "t"
    with pytest.raises(ValueError):
        split_target(datasets, "zz")
    spec = interfering_pair_spec(3)
    assert spec.knobs == (1.0, 0.0) and spec.seed == 3
