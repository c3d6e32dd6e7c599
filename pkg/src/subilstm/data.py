"""Vocabularies, labelled corpora, embedding files, batching and the synthetic task.

File formats (UTF-8, one example per line):

* single sentence: ``label<TAB>text``
* sentence pair:   ``label<TAB>text1<TAB>text2``
* raw TREC:        ``COARSE:fine question tokens ...``
* embeddings:      ``token v1 v2 ... vd`` (whitespace separated, GloVe style)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
OOV_SCALE = 0.1


class Vocab:
    """Token <-> id map with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, tokens=()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    @classmethod
    def build(cls, sequences, min_freq: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for seq in sequences:
            for tok in seq:
                counts[tok] = counts.get(tok, 0) + 1
        return cls(tok for tok, c in counts.items() if c >= min_freq)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens) -> tuple[int, ...]:
        return tuple(self.stoi.get(t, UNK) for t in tokens)

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass
class LabeledCorpus:
    """Token-id sequences (or pairs of them) with dense integer labels."""

    examples: list
    labels: list[int]
    label_names: list[str]
    vocab: Vocab
    is_pair: bool = False

    def __post_init__(self):
        if len(self.examples) != len(self.labels):
            raise ValueError("examples and labels differ in length")
        k = len(self.label_names)
        for y in self.labels:
            if not 0 <= y < k:
                raise ValueError(f"label {y} outside [0, {k})")
        for ex in self.examples:
            for seq in ex if self.is_pair else (ex,):
                if len(seq) < 1:
                    raise ValueError("every sequence needs at least one token")

    def __len__(self):
        return len(self.examples)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def subset(self, indices) -> "LabeledCorpus":
        idx = list(indices)
        return LabeledCorpus(
            [self.examples[i] for i in idx], [self.labels[i] for i in idx], self.label_names, self.vocab, self.is_pair
        )

    def lengths(self) -> np.ndarray:
        if self.is_pair:
            return np.array([max(len(a), len(b)) for a, b in self.examples], dtype=np.int64)
        return np.array([len(x) for x in self.examples], dtype=np.int64)


@dataclass
class PaddedBatch:
    """Token ids (B x n_max, pad-filled), true lengths and labels."""

    tokens: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.lengths)


@dataclass
class PairBatch:
    first: PaddedBatch
    second: PaddedBatch
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    return (text.lower() if lowercase else text).split()


def pad_batch(seqs, labels=None) -> PaddedBatch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("cannot pad empty sequences")
    tokens = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
    lab = np.asarray(labels if labels is not None else [], dtype=np.int64)
    return PaddedBatch(tokens, lengths, lab)


# ---------------------------------------------------------------------------
# files


def _label_map(raw_labels, label_names):
    if label_names is not None:
        index = {name: i for i, name in enumerate(label_names)}
        try:
            return [index[r] for r in raw_labels], list(label_names)
        except KeyError as err:
            raise ValueError(f"label {err.args[0]!r} not among the known labels") from None
    if all(r.lstrip("-").isdigit() for r in raw_labels):
        ids = [int(r) for r in raw_labels]
        if min(ids) < 0:
            raise ValueError("integer labels must be non-negative")
        return ids, [str(i) for i in range(max(ids) + 1)]
    names = sorted(set(raw_labels))
    index = {name: i for i, name in enumerate(names)}
    return [index[r] for r in raw_labels], names


def read_labeled_lines(path, fmt: str = "single", lowercase: bool = True):
    """Parse a corpus file into ``(raw_label, token list(s))`` records."""
    records = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if fmt == "trec":
                head, _, text = line.partition(" ")
                label = head.split(":", 1)[0]
                toks = tokenize(text, lowercase)
                if not label or not toks:
                    raise ValueError(f"{path}:{lineno}: malformed TREC line")
                records.append((label, toks))
                continue
            parts = line.split("\t")
            want = 3 if fmt == "pair" else 2
            if len(parts) != want:
                raise ValueError(f"{path}:{lineno}: expected {want} tab-separated fields, got {len(parts)}")
            label = parts[0].strip()
            seqs = [tokenize(p, lowercase) for p in parts[1:]]
            if any(not s for s in seqs):
                raise ValueError(f"{path}:{lineno}: empty text field")
            records.append((label, seqs[0] if fmt != "pair" else tuple(seqs)))
    if not records:
        raise ValueError(f"{path}: no examples")
    return records


def load_labeled_corpus(
    path,
    fmt: str = "single",
    vocab: Vocab | None = None,
    label_names=None,
    lowercase: bool = True,
    min_freq: int = 1,
) -> LabeledCorpus:
    """Load a corpus; with no ``vocab`` one is built from this file (use for the training split)."""
    if fmt not in ("single", "pair", "trec"):
        raise ValueError(f"unknown corpus format {fmt!r}")
    records = read_labeled_lines(path, fmt, lowercase)
    is_pair = fmt == "pair"
    if vocab is None:
        seqs = [s for _, ex in records for s in (ex if is_pair else (ex,))]
        vocab = Vocab.build(seqs, min_freq)
    labels, names = _label_map([r for r, _ in records], label_names)
    if is_pair:
        examples = [(vocab.encode(a), vocab.encode(b)) for _, (a, b) in records]
    else:
        examples = [vocab.encode(ex) for _, ex in records]
    return LabeledCorpus(examples, labels, names, vocab, is_pair)


def write_labeled_corpus(corpus: LabeledCorpus, path) -> None:
    """Write ``corpus`` in the tab-separated format (labels by name)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex, y in zip(corpus.examples, corpus.labels):
            texts = ex if corpus.is_pair else (ex,)
            fields = [corpus.label_names[y]] + [" ".join(corpus.vocab.decode(s)) for s in texts]
            fh.write("\t".join(fields) + "\n")


def load_embeddings(path, vocab: Vocab, dim: int, rng: Rng | None = None, dtype=np.float64) -> np.ndarray:
    """Embedding table (len(vocab) x dim) from a GloVe-style text file.

    Tokens missing from the file get seeded uniform(+-0.1) rows; the pad
    row is always zero.
    """
    rng = rng or Rng(0)
    table = rng.uniform(-OOV_SCALE, OOV_SCALE, (len(vocab), dim), dtype=dtype)
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) <= 1:
                if line.strip():
                    raise ValueError(f"{path}:{lineno}: malformed embedding line")
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx == PAD:
                continue
            try:
                table[idx] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric embedding value") from None
    table[PAD] = 0.0
    return table


# ---------------------------------------------------------------------------
# synthetic long-range task


def gen_longrange(num_examples: int, seq_len: int, vocab_size: int, rng: Rng) -> LabeledCorpus:
    """First/last token agreement task.

    The first and last tokens come from a small signal alphabet, everything
    in between from a disjoint distractor alphabet. The label is 1 when the
    first and last tokens agree. Exactly half the examples (rounded down)
    are positive, in shuffled order.
    """
    if seq_len < 4 or vocab_size < 4 or num_examples < 1:
        raise ValueError("need seq_len >= 4, vocab_size >= 4 and at least one example")
    n_signal = max(2, vocab_size // 4)
    n_noise = vocab_size - n_signal
    vocab = Vocab([f"s{k}" for k in range(n_signal)] + [f"n{k}" for k in range(n_noise)])
    signal_ids = np.arange(n_signal) + 2
    noise_ids = np.arange(n_noise) + 2 + n_signal

    labels = np.zeros(num_examples, dtype=np.int64)
    labels[: num_examples // 2] = 1
    labels = labels[rng.permutation(num_examples)]
    examples = []
    for y in labels:
        middle = noise_ids[rng.integers(0, n_noise, size=seq_len - 2)]
        first = int(rng.integers(0, n_signal))
        if y:
            last = first
        else:
            last = int((first + rng.integers(1, n_signal)) % n_signal)
        seq = (int(signal_ids[first]),) + tuple(int(t) for t in middle) + (int(signal_ids[last]),)
        examples.append(seq)
    return LabeledCorpus(examples, [int(y) for y in labels], ["0", "1"], vocab)


# ---------------------------------------------------------------------------
# batching


def make_batches(corpus: LabeledCorpus, batch_size: int, bucket: bool = False, rng: Rng | None = None, shuffle: bool = True):
    """Split ``corpus`` into padded batches covering every example once.

    With ``bucket`` the examples are sorted by length (ties broken by the
    shuffle) before slicing, so each batch holds similar lengths; the batch
    order is then shuffled.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    n = len(corpus)
    order = rng.permutation(n) if (shuffle and rng is not None) else np.arange(n)
    if bucket:
        lengths = corpus.lengths()
        order = order[np.argsort(lengths[order], kind="stable")]
    chunks = [order[k : k + batch_size] for k in range(0, n, batch_size)]
    if bucket and shuffle and rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [batch_from_indices(corpus, idx) for idx in chunks]


def batch_from_indices(corpus: LabeledCorpus, idx):
    labels = [corpus.labels[i] for i in idx]
    if corpus.is_pair:
        first = pad_batch([corpus.examples[i][0] for i in idx])
        second = pad_batch([corpus.examples[i][1] for i in idx])
        return PairBatch(first, second, np.asarray(labels, dtype=np.int64))
    return pad_batch([corpus.examples[i] for i in idx], labels)


def train_test_split(corpus: LabeledCorpus, test_fraction: float, rng: Rng):
    n = len(corpus)
    perm = rng.permutation(n)
    k = int(round(n * test_fraction))
    return corpus.subset(sorted(perm[k:])), corpus.subset(sorted(perm[:k]))


def corpus_from_texts(texts, labels, vocab: Vocab | None = None, lowercase: bool = True, pair: bool = False) -> LabeledCorpus:
    """Build a corpus from raw strings (or token lists) and label values."""

    def toks(x):
        return tokenize(x, lowercase) if isinstance(x, str) else [t.lower() if lowercase else t for t in x]

    if pair:
        seqs = [(toks(a), toks(b)) for a, b in texts]
        flat = [s for p in seqs for s in p]
    else:
        seqs = [toks(x) for x in texts]
        flat = seqs
    if vocab is None:
        vocab = Vocab.build(flat)
    ids, names = _label_map([str(y) for y in labels], None)
    if pair:
        examples = [(vocab.encode(a), vocab.encode(b)) for a, b in seqs]
    else:
        examples = [vocab.encode(s) for s in seqs]
    return LabeledCorpus(examples, ids, names, vocab, pair)

