"""scikit-learn style wrappers around the classifier and pair models.

Inputs are sentences given either as whitespace-separated strings or as
token lists; pair estimators take ``(first, second)`` tuples. Labels may be
any hashable values and are mapped through ``classes_``.

    clf = SuBiLSTMClassifier(encoder="subilstm-tied", hidden_dim=32, epochs=5)
    clf.fit(["a b c", "c b a"], ["yes", "no"]).predict(["a b"])
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import LabeledCorpus, Vocab, make_batches, pad_batch, tokenize
from .encoders import COMBINERS, EncoderConfig, normalize_variant
from .models import EncodeOptions, encode_sentences, make_classifier, make_siamese
from .numerics import Rng
from .training import AdamState, fit as fit_model

_DTYPES = ("float32", "float64")


# ---------------------------------------------------------------------------
# validation helpers


def check_sentences(X, lowercase: bool = True, name: str = "X") -> list[list[str]]:
    """Return ``X`` as a list of non-empty token lists."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"{name} must be an iterable of sentences") from None
    if not items:
        raise ValueError(f"{name} is empty")
    out = []
    for k, item in enumerate(items):
        if isinstance(item, str):
            toks = tokenize(item, lowercase)
        elif isinstance(item, (list, tuple)) and all(isinstance(t, str) for t in item):
            toks = [t.lower() for t in item] if lowercase else list(item)
        else:
            raise TypeError(f"{name}[{k}] is neither a string nor a list of tokens")
        if not toks:
            raise ValueError(f"{name}[{k}] has no tokens")
        out.append(toks)
    return out


def check_pairs(X, lowercase: bool = True) -> list[tuple[list[str], list[str]]]:
    items = list(X) if not isinstance(X, (str, bytes)) else None
    if items is None:
        raise TypeError("X must be a sequence of sentence pairs")
    if not items:
        raise ValueError("X is empty")
    bad = [k for k, p in enumerate(items) if not isinstance(p, (list, tuple)) or len(p) != 2]
    if bad:
        raise ValueError(f"X[{bad[0]}] is not a (first, second) pair")
    first = check_sentences([p[0] for p in items], lowercase, "X[:, 0]")
    second = check_sentences([p[1] for p in items], lowercase, "X[:, 1]")
    return list(zip(first, second))


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be one-dimensional, got shape {y.shape}")
    if len(y) != n:
        raise ValueError(f"X has {n} samples but y has {len(y)}")
    return y


def _check_hyper(est) -> None:
    normalize_variant(est.encoder)
    if est.combiner not in COMBINERS:
        raise ValueError(f"combiner must be one of {COMBINERS}")
    if est.dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {_DTYPES}")
    for name in ("embed_dim", "hidden_dim", "epochs", "batch_size"):
        if int(getattr(est, name)) < 1:
            raise ValueError(f"{name} must be positive")
    if not 0.0 <= est.dropout < 1.0:
        raise ValueError("dropout must be in [0, 1)")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# estimators


class _TextEstimator(BaseEstimator):
    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.encoder, int(self.embed_dim), int(self.hidden_dim), self.combiner)

    def _options(self) -> EncodeOptions:
        return EncodeOptions(threads=int(self.threads))

    def _train(self, corpus: LabeledCorpus, model) -> None:
        state = AdamState(lr=self.lr, weight_decay=self.weight_decay)
        rng = Rng(self.random_state).child(2)
        self.report_ = fit_model(model, corpus, state, rng, int(self.epochs), int(self.batch_size))
        self.model_ = model

    def _encode_ids(self, sentences) -> list[tuple[int, ...]]:
        return [self.vocab_.encode(s) for s in sentences]

    def _batched_logits(self, batches) -> np.ndarray:
        return np.concatenate([self.model_.logits(b, training=False).data for b in batches])

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X))


class SuBiLSTMClassifier(ClassifierMixin, _TextEstimator):
    """Single-sentence classifier: embeddings, encoder, max-pool, linear head."""

    def __init__(
        self,
        encoder: str = "subilstm-tied",
        embed_dim: int = 50,
        hidden_dim: int = 64,
        combiner: str = "max",
        epochs: int = 10,
        batch_size: int = 32,
        lr: float = 1e-3,
        weight_decay: float = 1e-5,
        dropout: float = 0.2,
        embeddings=None,
        lowercase: bool = True,
        threads: int = 1,
        dtype: str = "float64",
        random_state: int = 0,
    ):
        self.encoder = encoder
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.combiner = combiner
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.embeddings = embeddings
        self.lowercase = lowercase
        self.threads = threads
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y):
        """``embeddings`` may map tokens to vectors; those rows are frozen."""
        _check_hyper(self)
        sents = check_sentences(X, self.lowercase)
        y = check_labels(y, len(sents))
        self.classes_, ids = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.vocab_ = Vocab.build(sents)
        corpus = LabeledCorpus(
            self._encode_ids(sents), [int(i) for i in ids], [str(c) for c in self.classes_], self.vocab_
        )
        rng = Rng(self.random_state).child(1)
        table = _embedding_table(self.embeddings, self.vocab_, int(self.embed_dim), rng, self.dtype)
        model = make_classifier(
            len(self.vocab_), len(self.classes_), self._encoder_config(), rng, table,
            freeze_embeddings=table is not None, dropout=self.dropout, dtype=np.dtype(self.dtype),
            options=self._options(),
        )
        self._train(corpus, model)
        self.n_params_ = int(sum(p.size for p in model.encoder.parameters()))
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        ids = self._encode_ids(check_sentences(X, self.lowercase))
        bs = max(int(self.batch_size), 64)
        return self._batched_logits(pad_batch(ids[k : k + bs]) for k in range(0, len(ids), bs))


class SuBiLSTMPairClassifier(ClassifierMixin, _TextEstimator):
    """Siamese pair model over ``[u; v; |u - v|; u * v]`` with an MLP head."""

    def __init__(
        self,
        encoder: str = "subilstm-tied",
        embed_dim: int = 50,
        hidden_dim: int = 64,
        combiner: str = "max",
        mlp_hidden=(64, 64),
        epochs: int = 10,
        batch_size: int = 32,
        lr: float = 1e-3,
        weight_decay: float = 1e-5,
        dropout: float = 0.2,
        embeddings=None,
        lowercase: bool = True,
        threads: int = 1,
        dtype: str = "float64",
        random_state: int = 0,
    ):
        self.encoder = encoder
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.combiner = combiner
        self.mlp_hidden = mlp_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.embeddings = embeddings
        self.lowercase = lowercase
        self.threads = threads
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y):
        _check_hyper(self)
        pairs = check_pairs(X, self.lowercase)
        y = check_labels(y, len(pairs))
        self.classes_, ids = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.vocab_ = Vocab.build([s for p in pairs for s in p])
        examples = [(self.vocab_.encode(a), self.vocab_.encode(b)) for a, b in pairs]
        corpus = LabeledCorpus(
            examples, [int(i) for i in ids], [str(c) for c in self.classes_], self.vocab_, True
        )
        rng = Rng(self.random_state).child(1)
        table = _embedding_table(self.embeddings, self.vocab_, int(self.embed_dim), rng, self.dtype)
        model = make_siamese(
            len(self.vocab_), len(self.classes_), self._encoder_config(), rng, tuple(self.mlp_hidden),
            table, freeze_embeddings=table is not None, dropout=self.dropout,
            dtype=np.dtype(self.dtype), options=self._options(),
        )
        self._train(corpus, model)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        pairs = check_pairs(X, self.lowercase)
        examples = [(self.vocab_.encode(a), self.vocab_.encode(b)) for a, b in pairs]
        corpus = LabeledCorpus(examples, [0] * len(examples), [str(c) for c in self.classes_], self.vocab_, True)
        batches = make_batches(corpus, max(int(self.batch_size), 64), shuffle=False)
        return self._batched_logits(batches)


class SentenceEncoder(TransformerMixin, _TextEstimator):
    """Max-pooled sentence vectors from a freshly initialized encoder.

    ``fit`` only builds the vocabulary and draws weights, so it is useful
    for probing untrained encoders; to embed with trained weights, pass a
    fitted :class:`SuBiLSTMClassifier` as ``source``.
    """

    def __init__(
        self,
        encoder: str = "subilstm-tied",
        embed_dim: int = 50,
        hidden_dim: int = 64,
        combiner: str = "max",
        source=None,
        lowercase: bool = True,
        threads: int = 1,
        dtype: str = "float64",
        random_state: int = 0,
    ):
        self.encoder = encoder
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.combiner = combiner
        self.source = source
        self.lowercase = lowercase
        self.threads = threads
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.source is not None:
            check_is_fitted(self.source, "model_")
            self.vocab_ = self.source.vocab_
            self.embedding_ = self.source.model_.embedding
            self.encoder_ = self.source.model_.encoder
            return self
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {_DTYPES}")
        sents = check_sentences(X, self.lowercase)
        self.vocab_ = Vocab.build(sents)
        rng = Rng(self.random_state)
        model = make_classifier(
            len(self.vocab_), 2, self._encoder_config(), rng, dtype=np.dtype(self.dtype)
        )
        self.embedding_, self.encoder_ = model.embedding, model.encoder
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        ids = self._encode_ids(check_sentences(X, self.lowercase))
        opts = self._options()
        out = []
        for k in range(0, len(ids), 64):
            batch = pad_batch(ids[k : k + 64])
            out.append(encode_sentences(self.embedding_, self.encoder_, batch, opts).data)
        return np.concatenate(out)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "encoder_")
        return np.array([f"dim{k}" for k in range(self.encoder_.config.width)], dtype=object)


def _embedding_table(embeddings, vocab: Vocab, dim: int, rng: Rng, dtype):
    """Table from a ``{token: vector}`` mapping; missing tokens get uniform(+-0.1)."""
    if embeddings is None:
        return None
    table = rng.uniform(-0.1, 0.1, (len(vocab), dim), dtype=np.dtype(dtype))
    for tok, vec in embeddings.items():
        if tok in vocab:
            vec = np.asarray(vec, dtype=table.dtype)
            if vec.shape != (dim,):
                raise ValueError(f"embedding for {tok!r} has shape {vec.shape}, expected ({dim},)")
            table[vocab.stoi[tok]] = vec
    return table
