"""Small Transformer encoder usable as either teacher or student.

Post-norm blocks, learned positional embeddings, multi-head self-attention
with an additive key mask built from per-example valid lengths.  The mask
constant is -1e30, large enough that masked attention weights underflow to
exact zero, which is what makes padded and unpadded forwards of the same
sentence agree bitwise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError

MASK_NEG = -1e30

HEAD_KINDS = ("classification", "mlm")
POOL_MODES = ("mean_pool", "cls")


@dataclass
class EncoderConfig:
    num_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 4
    ffn_dim: int = 0  # 0 means 4*hidden_dim
    vocab_size: int = 64
    max_len: int = 32
    num_classes: int = 2
    dropout_rate: float = 0.1
    head: str = "classification"
    head_pool: str = "mean_pool"

    def __post_init__(self):
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.hidden_dim
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1, got %d" % self.num_layers)
        if self.hidden_dim < 1 or self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                "hidden_dim %d must be a positive multiple of num_heads %d"
                % (self.hidden_dim, self.num_heads)
            )
        if self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be >= 1, got %d" % self.ffn_dim)
        if self.vocab_size < 6:
            # five reserved token ids plus at least one real token
            raise ConfigError("vocab_size must be >= 6, got %d" % self.vocab_size)
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1, got %d" % self.max_len)
        if self.head not in HEAD_KINDS:
            raise ConfigError("head must be one of %s" % (HEAD_KINDS,))
        if self.head == "classification" and self.num_classes < 2:
            raise ConfigError(
                "num_classes must be >= 2 for classification, got %d"
                % self.num_classes
            )
        if self.head_pool not in POOL_MODES:
            raise ConfigError("head_pool must be one of %s" % (POOL_MODES,))
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(
                "dropout_rate must be in [0,1), got %r" % self.dropout_rate
            )

    @property
    def head_out_dim(self) -> int:
        return self.vocab_size if self.head == "mlm" else self.num_classes

    def intermediate_feature_count(self) -> int:
        """Per-example scalar count across all retained hidden layers."""
        return self.num_layers * self.max_len * self.hidden_dim


@dataclass
class EncoderOutput:
    logits: T.Tensor
    hidden: list
    valid_lens: np.ndarray


def _trunc_normal(rng, shape, std=0.02):
    # resample anything beyond two standard deviations
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


class TransformerEncoder:
    """Parameter container plus forward pass; no internal training state."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        f = config.ffn_dim
        p = {}
        p["tok_emb"] = _trunc_normal(rng, (config.vocab_size, d))
        p["pos_emb"] = _trunc_normal(rng, (config.max_len, d))
        for i in range(config.num_layers):
            pre = "layers.%d." % i
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + "attn." + name] = _trunc_normal(rng, (d, d))
            for name in ("bq", "bk", "bv", "bo"):
                p[pre + "attn." + name] = np.zeros(d)
            p[pre + "ln1.gain"] = np.ones(d)
            p[pre + "ln1.bias"] = np.zeros(d)
            p[pre + "ffn.w1"] = _trunc_normal(rng, (d, f))
            p[pre + "ffn.b1"] = np.zeros(f)
            p[pre + "ffn.w2"] = _trunc_normal(rng, (f, d))
            p[pre + "ffn.b2"] = np.zeros(d)
            p[pre + "ln2.gain"] = np.ones(d)
            p[pre + "ln2.bias"] = np.zeros(d)
        p["head.w"] = _trunc_normal(rng, (d, config.head_out_dim))
        p["head.b"] = np.zeros(config.head_out_dim)
        self.params = {k: T.Tensor(v, requires_grad=True) for k, v in p.items()}

    def parameters(self) -> dict:
        return self.params

    def param_order(self) -> list:
        return list(self.params.keys())

    def set_trainable(self, trainable: bool) -> None:
        for t in self.params.values():
            t.requires_grad = trainable

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def load_arrays(self, arrays: dict, strict: bool = True) -> int:
        """Copy named arrays into parameters; returns how many matched."""
        matched = 0
        for name, tensor in self.params.items():
            if name in arrays:
                a = np.asarray(arrays[name], dtype=np.float64)
                if a.shape != tensor.data.shape:
                    raise ConfigError(
                        "parameter %s shape %s does not match checkpoint %s"
                        % (name, tensor.data.shape, a.shape)
                    )
                tensor.data = a.copy()
                matched += 1
            elif strict:
                raise ConfigError("checkpoint is missing parameter %s" % name)
        return matched

    def forward(self, batch, training=False, rng=None, retain_hidden=True):
        return forward(self, batch, training=training, rng=rng,
                       retain_hidden=retain_hidden)


def count_parameters(model: TransformerEncoder) -> int:
    return sum(t.data.size for t in model.params.values())


def _attention_mask(valid_lens, L):
    cols = np.arange(L)[None, :]
    m = np.where(cols >= np.asarray(valid_lens)[:, None], MASK_NEG, 0.0)
    return m[:, None, :]  # (B, 1, L): broadcast over query rows


def forward(model: TransformerEncoder, batch, training: bool = False,
            rng=None, retain_hidden: bool = True) -> EncoderOutput:
    """Run the encoder; returns logits plus every layer's hidden states.

    ``batch`` needs two attributes: ``ids`` (B x L int array) and
    ``valid_lens`` (B ints).  Dropout fires only when ``training`` is true,
    in which case ``rng`` must be a numpy Generator.
    """
    cfg = model.config
    ids = np.asarray(batch.ids)
    valid_lens = np.asarray(batch.valid_lens)
    if ids.ndim != 2:
        raise InputError("batch ids must be a 2D array, got %dD" % ids.ndim)
    B, L = ids.shape
    if L > cfg.max_len:
        raise InputError(
            "sequence length %d exceeds max_len %d; truncation is not silent"
            % (L, cfg.max_len)
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(
            "token id out of range [0, %d)" % cfg.vocab_size
        )
    if training and cfg.dropout_rate > 0.0 and rng is None:
        raise InputError("training-mode forward with dropout needs an rng")

    p = model.params
    rate = cfg.dropout_rate if training else 0.0
    d = cfg.hidden_dim
    nh = cfg.num_heads
    dh = d // nh
    attn_mask = _attention_mask(valid_lens, L)

    x = T.embedding(p["tok_emb"], ids)
    x = T.add_rows(x, _pos_slice(model, L))
    if rate > 0.0:
        x = T.dropout(x, rate, rng)

    hidden = []
    for i in range(cfg.num_layers):
        pre = "layers.%d." % i
        q = T.add_bias(T.matmul(x, p[pre + "attn.wq"]), p[pre + "attn.bq"])
        k = T.add_bias(T.matmul(x, p[pre + "attn.wk"]), p[pre + "attn.bk"])
        v = T.add_bias(T.matmul(x, p[pre + "attn.wv"]), p[pre + "attn.bv"])
        ctx_heads = []
        for h in range(nh):
            lo, hi = h * dh, (h + 1) * dh
            qh = T.slice_last(q, lo, hi)
            kh = T.slice_last(k, lo, hi)
            vh = T.slice_last(v, lo, hi)
            scores = T.matmul(qh, T.swap_last(kh))
            attn = T.softmax_rows(scores, temperature=math.sqrt(dh),
                                  mask=attn_mask)
            ctx_heads.append(T.matmul(attn, vh))
        ctx = ctx_heads[0] if nh == 1 else T.concat_last(ctx_heads)
        ctx = T.add_bias(T.matmul(ctx, p[pre + "attn.wo"]), p[pre + "attn.bo"])
        if rate > 0.0:
            ctx = T.dropout(ctx, rate, rng)
        x = T.layer_norm(T.add(x, ctx), p[pre + "ln1.gain"], p[pre + "ln1.bias"])

        f1 = T.gelu(T.add_bias(T.matmul(x, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]))
        f2 = T.add_bias(T.matmul(f1, p[pre + "ffn.w2"]), p[pre + "ffn.b2"])
        if rate > 0.0:
            f2 = T.dropout(f2, rate, rng)
        x = T.layer_norm(T.add(x, f2), p[pre + "ln2.gain"], p[pre + "ln2.bias"])
        if retain_hidden:
            hidden.append(x)

    if cfg.head == "mlm":
        logits = T.add_bias(T.matmul(x, p["head.w"]), p["head.b"])
    else:
        if cfg.head_pool == "cls":
            pooled = T.select_pos(x, 0)
        else:
            pooled = T.mean_pool_batch(x, valid_lens)
        logits = T.add_bias(T.matmul(pooled, p["head.w"]), p["head.b"])
    return EncoderOutput(logits=logits, hidden=hidden, valid_lens=valid_lens)


def _pos_slice(model, L):
    # positional rows for the batch's padded length; constant w.r.t. ids
    full = model.params["pos_emb"]
    if L == model.config.max_len:
        return full
    return T.slice_first_rows(full, L)
