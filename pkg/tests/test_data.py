import hashlib
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdalab.data import (
    FULL_SPLIT, DataError, Split, Vocab, convert_mdsd, encode_text, load_embeddings, load_mdsd,
    read_reviews_tsv, stratified_split, tokenize,
)

DOMAINS = ("books", "dvd", "electronics", "kitchen")


def write_tree(root, n_pos=1000, n_neg=1000, domains=DOMAINS):
    rng = np.random.default_rng(0)
    words = [f"tok{i}" for i in range(60)]
    for d in domains:
        (root / d).mkdir(parents=True)
        lines = []
        for lab, n in ((1, n_pos), (0, n_neg)):
            for _ in range(n):
                k = int(rng.integers(3, 15))
                lines.append(f"{lab}\t{d} " + " ".join(rng.choice(words, size=k)))
        (root / d / "reviews.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


@pytest.fixture(scope="module")
def tree(tmp_path_factory):
    return write_tree(tmp_path_factory.mktemp("mdsd"))


def _digest(datasets):
    h = hashlib.sha256()
    for d in datasets:
        for split in (d.train, d.val, d.test):
            h.update(split.ids.tobytes())
            h.update(split.labels.tobytes())
    return h.hexdigest()


def test_four_domain_tree_splits(tree):
    datasets, vocab = load_mdsd(tree, split_seed=0)
    assert [d.name for d in datasets] == list(DOMAINS)
    for d in datasets:
        assert d.sizes() == FULL_SPLIT
        assert d.train.ids.shape == (1280, 40)
        total = np.concatenate([d.train.labels, d.val.labels, d.test.labels])
        assert total.sum() == 1000
    assert vocab.itos[0] == "<pad>" and vocab.itos[-1] == "<unk>"


def test_same_seed_hash_equal_other_seed_differs(tree):
    a, _ = load_mdsd(tree, split_seed=3)
    b, _ = load_mdsd(tree, split_seed=3)
    c, _ = load_mdsd(tree, split_seed=4)
    assert _digest(a) == _digest(b) != _digest(c)


def test_empty_directory_is_structured_error(tmp_path):
    with pytest.raises(DataError, match="no domains found"):
        load_mdsd(tmp_path)


def test_malformed_line_reports_file_and_line(tmp_path):
    (tmp_path / "books").mkdir()
    (tmp_path / "books" / "reviews.tsv").write_text("1\tfine\n2\tbad label\n", encoding="utf-8")
    with pytest.raises(DataError, match=r"reviews.tsv:2"):
        load_mdsd(tmp_path)


def test_wrong_count_warns_and_splits_proportionally(tmp_path):
    write_tree(tmp_path, n_pos=50, n_neg=50, domains=("books",))
    with pytest.warns(UserWarning, match="100 reviews"):
        datasets, _ = load_mdsd(tmp_path)
    assert datasets[0].sizes() == (64, 16, 20)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_split_indices_disjoint_and_exhaustive(seed):
    labels = np.array([1] * 1000 + [0] * 1000)
    parts = stratified_split(labels, seed)
    assert tuple(map(len, parts)) == FULL_SPLIT
    allidx = np.concatenate(parts)
    assert len(np.unique(allidx)) == 2000 and set(allidx) == set(range(2000))
    assert [int(labels[p].sum()) for p in parts] == [640, 160, 200]


def test_vocab_built_from_train_splits_only(tmp_path):
    write_tree(tmp_path, n_pos=10, n_neg=10, domains=("books", "dvd"))
    datasets, vocab = load_mdsd(tmp_path)
    train_tokens = {t for d in datasets for s in d.train.texts for t in tokenize(s)}
    assert set(vocab.itos[1:-1]) == train_tokens
    assert sorted(vocab.stoi.values()) == list(range(len(vocab)))


# --- encoding ------------------------------------------------------------------

def test_encode_empty_and_long():
    v = Vocab([f"w{i}" for i in range(60)])
    assert encode_text("", v) == [0] * 40
    ids = encode_text(" ".join(f"w{i}" for i in range(50)), v)
    assert ids == [v.id(f"w{i}") for i in range(40)]


def test_fixture_vocab_ids(tiny_vocab):
    # ids: pad 0, great 1, product 2, bad 3, unk 4
    assert encode_text("Great product!", tiny_vocab, max_len=5) == [1, 2, 0, 0, 0]
    assert encode_text("great, unknown BAD.", tiny_vocab, max_len=4) == [1, 4, 3, 0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["great", "product", "bad"]), max_size=12))
def test_encode_decode_roundtrip(tokens):
    v = Vocab(["great", "product", "bad"])
    ids = encode_text(" ".join(tokens), v, max_len=10)
    assert encode_text(" ".join(v.decode(ids)), v, max_len=10) == ids


def test_stopword_flag_default_off():
    assert tokenize("this is not the end") == ["this", "is", "not", "the", "end"]
    assert "the" not in tokenize("this is not the end", remove_stopwords=True)


def test_split_validation():
    with pytest.raises(DataError):
        Split(np.zeros((2, 3)), np.array([0, 2]))
    with pytest.raises(DataError):
        Split(np.zeros((2, 3)), np.array([0]))


# --- embeddings --------------------------------------------------------------------

def test_embeddings_exact_copy_and_zero_rows(tmp_path, tiny_vocab):
    f = tmp_path / "vec.txt"
    f.write_text("great 0.25 -1.5 3\nbad 1 2 3\nmissing 9 9 9\n<pad> 5 5 5\n", encoding="utf-8")
    m = load_embeddings(f, tiny_vocab, 3)
    np.testing.assert_array_equal(m[1], [0.25, -1.5, 3.0])
    np.testing.assert_array_equal(m[3], [1.0, 2.0, 3.0])
    for row in (0, 2, 4):
        assert not m[row].any()


def test_embeddings_half_coverage(tmp_path):
    v = Vocab([f"w{i}" for i in range(10)])
    f = tmp_path / "vec.txt"
    f.write_text("".join(f"w{i} 1 1\n" for i in range(0, 10, 2)), encoding="utf-8")
    m = load_embeddings(f, v, 2)
    zero = {i for i in range(len(v)) if not m[i].any()}
    assert zero == {0, len(v) - 1} | {v.id(f"w{i}") for i in range(1, 10, 2)}


def test_embeddings_empty_file_and_dim_error(tmp_path, tiny_vocab):
    empty = tmp_path / "empty.txt"
    empty.write_text("", encoding="utf-8")
    assert not load_embeddings(empty, tiny_vocab, 4).any()
    bad = tmp_path / "bad.txt"
    bad.write_text("great 1 2 3\nbad 1 2\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        load_embeddings(bad, tiny_vocab, 3)


# --- converter -------------------------------------------------------------------

def test_convert_review_files(tmp_path):
    src = tmp_path / "raw"
    (src / "kitchen").mkdir(parents=True)
    (src / "kitchen" / "positive.review").write_text(
        "<review><review_text>\nLove\tit &amp; more\n</review_text></review>\n"
        "<review><review_text>good</review_text></review>", encoding="utf-8")
    (src / "kitchen" / "negative.review").write_text(
        "<review><review_text>broke</review_text></review>", encoding="utf-8")
    out = tmp_path / "tsv"
    assert convert_mdsd(src, out) == {"kitchen": 3}
    labels, texts = read_reviews_tsv(out / "kitchen" / "reviews.tsv")
    assert labels == [1, 1, 0] and texts == ["Love it & more", "good", "broke"]
    with pytest.raises(DataError):
        convert_mdsd(tmp_path / "tsv" / "kitchen", tmp_path / "x")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        datasets, _ = load_mdsd(out)
    assert datasets[0].name == "kitchen"


def test_read_counters():
    from conftest import make_domain
    d = make_domain("x", np.zeros((2, 3)), [0, 1])
    d.train, d.train, d.test
    assert d.reads == {"train": 2, "val": 0, "test": 1}
    d.sizes()
    assert d.reads["val"] == 0
    d.reset_reads()
    assert sum(d.reads.values()) == 0
