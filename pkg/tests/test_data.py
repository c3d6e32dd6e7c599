import numpy as np
import pytest

from subilstm.data import (
    PAD,
    UNK,
    LabeledCorpus,
    Vocab,
    corpus_from_texts,
    gen_longrange,
    load_embeddings,
    load_labeled_corpus,
    make_batches,
    pad_batch,
    train_test_split,
    write_labeled_corpus,
)
from subilstm.numerics import Rng
from subilstm.scheduler import token_steps


def test_single_line_parses(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("2\thello world\n")
    corpus = load_labeled_corpus(path)
    assert corpus.labels == [2]
    assert corpus.label_names == ["0", "1", "2"]
    assert corpus.vocab.decode(corpus.examples[0]) == ["hello", "world"]


def test_unknown_tokens_map_to_unk(tmp_path):
    vocab = Vocab(["hello"])
    path = tmp_path / "c.tsv"
    path.write_text("0\tHello there\n")
    corpus = load_labeled_corpus(path, vocab=vocab)
    assert corpus.examples[0] == (vocab.stoi["hello"], UNK)


def test_pair_and_trec_formats(tmp_path):
    pair = tmp_path / "p.tsv"
    pair.write_text("yes\ta b\tc\nno\tc\ta\n")
    corpus = load_labeled_corpus(pair, fmt="pair")
    assert corpus.is_pair and corpus.label_names == ["no", "yes"] and corpus.labels == [1, 0]
    trec = tmp_path / "t.txt"
    trec.write_text("NUM:dist How far is it ?\nLOC:city Where is Paris ?\n")
    corpus = load_labeled_corpus(trec, fmt="trec", label_names=["LOC", "NUM"])
    assert corpus.labels == [1, 0]
    assert corpus.vocab.decode(corpus.examples[1]) == ["where", "is", "paris", "?"]


@pytest.mark.parametrize("text", ["0\t\n", "0\ta\tb\n", "just text\n"])
def test_malformed_lines_rejected(tmp_path, text):
    path = tmp_path / "bad.tsv"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_labeled_corpus(path)


def test_unknown_label_rejected(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("maybe\tx\n")
    with pytest.raises(ValueError):
        load_labeled_corpus(path, label_names=["yes", "no"])


def test_corpus_round_trip(tmp_path):
    corpus = corpus_from_texts(["the cat sat", "a dog"], ["pos", "neg"])
    path = tmp_path / "c.tsv"
    write_labeled_corpus(corpus, path)
    again = load_labeled_corpus(path, vocab=corpus.vocab, label_names=corpus.label_names)
    assert again.examples == corpus.examples and again.labels == corpus.labels


def test_corpus_validation():
    v = Vocab(["a"])
    with pytest.raises(ValueError):
        LabeledCorpus([(2,)], [3], ["x", "y"], v)
    with pytest.raises(ValueError):
        LabeledCorpus([()], [0], ["x"], v)
    with pytest.raises(ValueError):
        LabeledCorpus([(2,)], [0, 0], ["x"], v)


def test_vocab_basics():
    v = Vocab.build([["a", "b", "a"], ["c"]], min_freq=2)
    assert v.itos == ["<pad>", "<unk>", "a"]
    assert v.stoi["<pad>"] == PAD and "b" not in v
    assert v.encode(["a", "zzz"]) == (2, UNK)


def test_embeddings_file(tmp_path):
    vocab = Vocab(["cat", "dog"])
    path = tmp_path / "e.txt"
    path.write_text("cat 1 2 3\nbird 0 0 0\n<pad> 9 9 9\n")
    table = load_embeddings(path, vocab, 3, Rng(0))
    np.testing.assert_array_equal(table[vocab.stoi["cat"]], [1, 2, 3])
    np.testing.assert_array_equal(table[PAD], 0.0)
    dog = table[vocab.stoi["dog"]]
    assert np.all(np.abs(dog) <= 0.1) and np.any(dog != 0)
    again = load_embeddings(path, vocab, 3, Rng(0))
    np.testing.assert_array_equal(table, again)


@pytest.mark.parametrize("text", ["cat 1 2\n", "cat 1 x 3\n", "cat\n"])
def test_bad_embeddings_rejected(tmp_path, text):
    path = tmp_path / "e.txt"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_embeddings(path, Vocab(["cat"]), 3)


def test_longrange_balance_and_shape():
    corpus = gen_longrange(10000, 60, 20, Rng(0))
    assert abs(np.mean(corpus.labels) - 0.5) <= 0.02
    assert set(corpus.lengths()) == {60}
    assert all(0 <= t < len(corpus.vocab) and t not in (PAD, UNK) for ex in corpus.examples[:50] for t in ex)


def test_longrange_label_is_endpoint_agreement():
    corpus = gen_longrange(2000, 20, 20, Rng(1))
    oracle = [int(ex[0] == ex[-1]) for ex in corpus.examples]
    assert oracle == corpus.labels


def test_longrange_middle_is_uninformative():
    corpus = gen_longrange(2000, 20, 20, Rng(2))
    signal = {ex[0] for ex in corpus.examples} | {ex[-1] for ex in corpus.examples}
    assert not any(t in signal for ex in corpus.examples for t in ex[1:-1])


def test_longrange_deterministic():
    a = gen_longrange(50, 10, 12, Rng(3))
    b = gen_longrange(50, 10, 12, Rng(3))
    assert a.examples == b.examples and a.labels == b.labels


def test_pad_batch():
    b = pad_batch([(2, 3), (4,)], [1, 0])
    np.testing.assert_array_equal(b.tokens, [[2, 3], [4, PAD]])
    np.testing.assert_array_equal(b.lengths, [2, 1])
    with pytest.raises(ValueError):
        pad_batch([(2,), ()])


def test_batch_sizes_cover_corpus():
    corpus = corpus_from_texts(["a b", "c", "d e f", "g", "h i", "j", "k l", "m", "n", "o"], [0, 1] * 5)
    batches = make_batches(corpus, 3, rng=Rng(0))
    assert [len(b) for b in batches] == [3, 3, 3, 1]
    bucketed = make_batches(corpus, 3, bucket=True, rng=Rng(0))
    assert sorted(len(b) for b in bucketed) == [1, 3, 3, 3]
    assert sum(int(b.lengths.sum()) for b in bucketed) == int(corpus.lengths().sum())


def test_bucketing_never_increases_suffix_work():
    rng = Rng(4)
    texts = [" ".join(["w"] * int(n)) for n in rng.integers(1, 40, 200)]
    corpus = corpus_from_texts(texts, [0] * 200)

    def padded_steps(batches):
        return sum(token_steps([b.tokens.shape[1]] * len(b)) for b in batches)

    plain = make_batches(corpus, 16, rng=Rng(5))
    bucketed = make_batches(corpus, 16, bucket=True, rng=Rng(5))
    assert sum(token_steps(b.lengths) for b in bucketed) == sum(token_steps(b.lengths) for b in plain)
    assert padded_steps(bucketed) <= padded_steps(plain)


def test_train_test_split_partitions():
    corpus = gen_longrange(100, 6, 8, Rng(6))
    train, test = train_test_split(corpus, 0.2, Rng(7))
    assert len(train) == 80 and len(test) == 20
    assert sorted(train.examples + test.examples) == sorted(corpus.examples)
