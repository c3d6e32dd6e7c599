"""Task heads: a max-pooled sentence classifier and a Siamese pair model.

Checkpoint layout (``save_checkpoint``)::

    SUBILSTM-CHECKPOINT 1\\n
    key=value\\n            model and run configuration, one per line
    param=<name> <shape>\\n one line per stored tensor, in blob order
    end\\n
    <blobs>                 little-endian arrays, row-major, concatenated

Tied encoders store each shared LSTM once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .data import PAD, PairBatch, PaddedBatch, Vocab
from .encoders import Encoder, EncoderConfig, pool_max_batch
from .numerics import Rng, Tensor, init_params
from .scheduler import encode_padded
from .training import apply_dropout

MAGIC = "SUBILSTM-CHECKPOINT 1"


@dataclass
class Linear:
    W: Tensor  # out x in
    b: Tensor

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: Rng, dtype=np.float64) -> "Linear":
        return cls(
            init_params((n_out, n_in), "uniform", rng, fan_in=n_in, dtype=dtype, name="W"),
            init_params((n_out,), "zeros", dtype=dtype, name="b"),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return nx.matmul(x, nx.transpose(self.W)) + self.b

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


@dataclass
class EncodeOptions:
    """How the batched encoder lays out suffix passes."""

    merge: bool = True
    max_pass_width: int | None = None
    pack_full: bool = True
    threads: int = 1


def make_embedding(vocab_size: int, dim: int, rng: Rng, table=None, freeze: bool = False, dtype=np.float64) -> Tensor:
    if table is None:
        data = rng.uniform(-0.1, 0.1, (vocab_size, dim), dtype=dtype)
    else:
        data = np.array(table, dtype=dtype)
        if data.shape != (vocab_size, dim):
            raise ValueError(f"embedding table has shape {data.shape}, expected {(vocab_size, dim)}")
    data[PAD] = 0.0
    return Tensor(data, requires_grad=not freeze, name="embedding")


def _embed(embedding: Tensor, batch: PaddedBatch) -> Tensor:
    tokens = np.asarray(batch.tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= embedding.shape[0]):
        raise ValueError("token id outside the vocabulary")
    if np.min(batch.lengths) < 1:
        raise ValueError("empty sentence in batch")
    return embedding[tokens]


def encode_sentences(embedding, encoder, batch, opts, rng=None, training=False, dropout=0.0):
    """Max-pooled sentence vectors (B x width) for a padded batch."""
    E = apply_dropout(_embed(embedding, batch), dropout, rng, training)
    H = encode_padded(
        encoder, E, batch.lengths, opts.merge, opts.max_pass_width, opts.threads, opts.pack_full
    )
    return pool_max_batch(H, batch.lengths)


@dataclass
class ClassifierModel:
    embedding: Tensor
    encoder: Encoder
    head: Linear
    dropout_embed: float = 0.2
    dropout_out: float = 0.2
    options: EncodeOptions = field(default_factory=EncodeOptions)
    kind = "classifier"

    @property
    def num_classes(self) -> int:
        return self.head.W.shape[0]

    def parameters(self) -> list[Tensor]:
        ps = [self.embedding] if self.embedding.requires_grad else []
        return ps + self.encoder.parameters() + self.head.parameters()

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for name, lstm in self.encoder.unique_lstms():
            out += [(f"encoder.{name}.{k}", getattr(lstm, k)) for k in ("W", "U", "b")]
        out += [("head.W", self.head.W), ("head.b", self.head.b)]
        return out

    def logits(self, batch: PaddedBatch, rng: Rng | None = None, training: bool = False) -> Tensor:
        return classify_forward(batch, self, rng, training)


def make_classifier(
    vocab_size: int,
    num_classes: int,
    config: EncoderConfig,
    rng: Rng,
    embeddings=None,
    freeze_embeddings: bool = True,
    dropout: float = 0.2,
    dtype=np.float64,
    options: EncodeOptions | None = None,
) -> ClassifierModel:
    emb = make_embedding(vocab_size, config.input_dim, rng, embeddings, freeze_embeddings, dtype)
    encoder = Encoder.init(config, rng, dtype)
    head = Linear.init(config.width, num_classes, rng, dtype)
    return ClassifierModel(emb, encoder, head, dropout, dropout, options or EncodeOptions())


def classify_forward(batch: PaddedBatch, model: ClassifierModel, rng: Rng | None = None, training: bool = False) -> Tensor:
    """``head(dropout(pool_max(encoder(dropout(embed(tokens))))))`` -> B x classes."""
    pooled = encode_sentences(
        model.embedding, model.encoder, batch, model.options, rng, training, model.dropout_embed
    )
    pooled = apply_dropout(pooled, model.dropout_out, rng, training)
    return model.head(pooled)


# ---------------------------------------------------------------------------
# pairs


def siamese_features(u: Tensor, v: Tensor) -> Tensor:
    """``[u; v; |u - v|; u * v]`` along the last axis."""
    if u.shape != v.shape:
        raise ValueError(f"sentence vectors differ in shape: {u.shape} vs {v.shape}")
    return nx.concat([u, v, nx.absolute(u - v), u * v], axis=-1)


@dataclass
class SiameseModel:
    embedding: Tensor
    encoder: Encoder
    hidden: list[Linear]
    out: Linear
    dropout_embed: float = 0.2
    dropout_out: float = 0.2
    options: EncodeOptions = field(default_factory=EncodeOptions)
    kind = "siamese"

    @property
    def num_classes(self) -> int:
        return self.out.W.shape[0]

    def parameters(self) -> list[Tensor]:
        ps = [self.embedding] if self.embedding.requires_grad else []
        ps += self.encoder.parameters()
        for layer in self.hidden:
            ps += layer.parameters()
        return ps + self.out.parameters()

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for name, lstm in self.encoder.unique_lstms():
            out += [(f"encoder.{name}.{k}", getattr(lstm, k)) for k in ("W", "U", "b")]
        for i, layer in enumerate(self.hidden):
            out += [(f"hidden{i}.W", layer.W), (f"hidden{i}.b", layer.b)]
        out += [("out.W", self.out.W), ("out.b", self.out.b)]
        return out

    def logits(self, batch: PairBatch, rng: Rng | None = None, training: bool = False) -> Tensor:
        return pair_forward(batch, self, rng, training)


def make_siamese(
    vocab_size: int,
    num_classes: int,
    config: EncoderConfig,
    rng: Rng,
    hidden=(64, 64),
    embeddings=None,
    freeze_embeddings: bool = False,
    dropout: float = 0.2,
    dtype=np.float64,
    options: EncodeOptions | None = None,
) -> SiameseModel:
    """Entailment heads use two hidden layers and 3 classes; paraphrase heads one layer and 2."""
    emb = make_embedding(vocab_size, config.input_dim, rng, embeddings, freeze_embeddings, dtype)
    encoder = Encoder.init(config, rng, dtype)
    layers, width = [], 4 * config.width
    for h in hidden:
        layers.append(Linear.init(width, h, rng, dtype))
        width = h
    out = Linear.init(width, num_classes, rng, dtype)
    return SiameseModel(emb, encoder, layers, out, dropout, dropout, options or EncodeOptions())


def _stack_pairs(batch: PairBatch) -> PaddedBatch:
    a, b = batch.first, batch.second
    n = max(a.tokens.shape[1], b.tokens.shape[1])
    tokens = np.full((len(a) + len(b), n), PAD, dtype=np.int64)
    tokens[: len(a), : a.tokens.shape[1]] = a.tokens
    tokens[len(a) :, : b.tokens.shape[1]] = b.tokens
    return PaddedBatch(tokens, np.concatenate([a.lengths, b.lengths]))


def pair_forward(batch: PairBatch, model: SiameseModel, rng: Rng | None = None, training: bool = False) -> Tensor:
    """Encode both sides with the shared encoder, then MLP over the pair features."""
    B = len(batch.first)
    pooled = encode_sentences(
        model.embedding, model.encoder, _stack_pairs(batch), model.options, rng, training, model.dropout_embed
    )
    x = siamese_features(pooled[:B], pooled[B:])
    for layer in model.hidden:
        x = apply_dropout(nx.relu(layer(x)), model.dropout_out, rng, training)
    if not model.hidden:
        x = apply_dropout(x, model.dropout_out, rng, training)
    return model.out(x)


# ---------------------------------------------------------------------------
# checkpoints


def model_config(model) -> dict:
    cfg = model.encoder.config
    out = {
        "kind": model.kind,
        "variant": cfg.variant,
        "input_dim": cfg.input_dim,
        "hidden_dim": cfg.hidden_dim,
        "combiner": cfg.combiner,
        "num_classes": model.num_classes,
        "vocab_size": model.embedding.shape[0],
        "dtype": np.dtype(model.embedding.dtype).name,
        "dropout": model.dropout_embed,
        "freeze_embeddings": not model.embedding.requires_grad,
    }
    if model.kind == "siamese":
        out["hidden"] = ",".join(str(layer.W.shape[0]) for layer in model.hidden)
    return out


def build_model(cfg: dict, rng: Rng | None = None):
    """Instantiate an (untrained) model from a checkpoint-style config dict."""
    rng = rng or Rng(0)
    enc = EncoderConfig(cfg["variant"], int(cfg["input_dim"]), int(cfg["hidden_dim"]), cfg.get("combiner", "max"))
    dtype = np.dtype(cfg.get("dtype", "float64"))
    freeze = str(cfg.get("freeze_embeddings", "False")) == "True"
    dropout = float(cfg.get("dropout", 0.2))
    if cfg["kind"] == "siamese":
        hidden = tuple(int(h) for h in str(cfg.get("hidden", "")).split(",") if h)
        return make_siamese(
            int(cfg["vocab_size"]), int(cfg["num_classes"]), enc, rng, hidden,
            freeze_embeddings=freeze, dropout=dropout, dtype=dtype,
        )
    return make_classifier(
        int(cfg["vocab_size"]), int(cfg["num_classes"]), enc, rng,
        freeze_embeddings=freeze, dropout=dropout, dtype=dtype,
    )


def save_checkpoint(path, model, vocab: Vocab | None = None, label_names=None, extra: dict | None = None) -> None:
    cfg = model_config(model)
    if extra:
        cfg.update({k: v for k, v in extra.items() if k not in cfg})
    lines = [MAGIC]
    for k, v in cfg.items():
        text = str(v)
        if "\n" in text:
            raise ValueError(f"config value for {k!r} contains a newline")
        lines.append(f"{k}={text}")
    if vocab is not None:
        lines.append("vocab=" + " ".join(vocab.itos[2:]))
    if label_names is not None:
        lines.append("labels=" + " ".join(label_names))
    tensors = model.named_tensors()
    for name, t in tensors:
        lines.append(f"param={name} {'x'.join(str(s) for s in t.shape)}")
    lines.append("end")
    dtype = np.dtype(cfg["dtype"]).newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t.data, dtype=dtype).tobytes())


def load_checkpoint(path):
    """Return ``(model, config, vocab, label_names)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"\nend\n"
    cut = blob.find(marker)
    if not blob.startswith(MAGIC.encode()) or cut < 0:
        raise ValueError(f"{path} is not a model checkpoint")
    header = blob[:cut].decode("utf-8").split("\n")[1:]
    body = blob[cut + len(marker) :]
    cfg, params = {}, []
    vocab, labels = None, None
    for line in header:
        key, _, value = line.partition("=")
        if key == "param":
            name, shape = value.split(" ")
            params.append((name, tuple(int(s) for s in shape.split("x") if s)))
        elif key == "vocab":
            vocab = Vocab(value.split(" ") if value else [])
        elif key == "labels":
            labels = value.split(" ")
        else:
            cfg[key] = value
    model = build_model(cfg)
    named = dict(model.named_tensors())
    dtype = np.dtype(cfg.get("dtype", "float64")).newbyteorder("<")
    offset = 0
    for name, shape in params:
        if name not in named or named[name].shape != shape:
            raise ValueError(f"checkpoint tensor {name} {shape} does not fit the configured model")
        n = int(np.prod(shape)) * dtype.itemsize
        if offset + n > len(body):
            raise ValueError("checkpoint is truncated")
        named[name].data = np.frombuffer(body[offset : offset + n], dtype=dtype).reshape(shape).astype(
            dtype.newbyteorder("="), copy=True
        )
        offset += n
    if offset != len(body):
        raise ValueError("checkpoint has trailing data")
    return model, cfg, vocab, labels
