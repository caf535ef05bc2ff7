"""Transformer encoder with first-position pooling and a single-vector decoder.

The encoder reads ``[STR_TAG, tokens..., EOS]`` (right-padded) and its final
hidden state at position 0 is the sentence embedding ``P``.  The decoder
concatenates a target-language embedding onto each previous-token embedding,
self-attends causally, and cross-attends on ``P`` alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .bpe import EOS, PAD, STR_TAG


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 1024
    n_heads: int = 16
    d_fc: int = 4096
    n_enc_layers: int = 6
    n_dec_layers: int = 1
    vocab_size: int = 50000
    n_langs: int = 5
    d_lang: int = 32
    max_positions: int = 1024
    dropout_p: float = 0.3
    lazy_final_layer: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0 < self.d_lang < self.d_model:
            raise ModelError(f"d_lang must be in (0, d_model), got {self.d_lang}")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ModelError("need at least one encoder and one decoder layer")

    @property
    def d_z(self) -> int:
        return self.d_model

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_tok_dec(self) -> int:
        return self.d_model - self.d_lang

    @classmethod
    def full_scale(cls, vocab_size: int = 50000, n_langs: int = 5) -> "ModelConfig":
        """Dimensions of the published 6-layer model."""
        return cls(d_model=1024, n_heads=16, d_fc=4096, n_enc_layers=6, n_dec_layers=1,
                   vocab_size=vocab_size, n_langs=n_langs, d_lang=32)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionParams:
    """Projections for one attention block.

    ``wq``/``wk``/``wv`` are ``d_model x d_model``; head ``i`` uses columns
    ``i*d_k:(i+1)*d_k``.  ``wq`` and ``wk`` are None for attention over a
    single key, where they cannot influence the output.
    """

    wv: Tensor
    wo: Tensor
    wq: Tensor | None = None
    wk: Tensor | None = None


@dataclass
class EncoderOutput:
    P: Tensor
    H: Tensor | None = None
    mask: np.ndarray | None = field(default=None, repr=False)


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


def multi_head_attention(q_seq: Tensor, kv_seq: Tensor, params: AttentionParams, n_heads: int,
                         mask: np.ndarray | None = None, dropout_p: float = 0.0,
                         rng: np.random.Generator | None = None) -> Tensor:
    """Scaled dot-product attention over ``n_heads`` heads.

    ``q_seq`` is ``(N, Tq, d)``, ``kv_seq`` is ``(N, Tk, d)`` and ``mask`` is
    broadcastable to ``(N, Tq, Tk)`` with True where a key may be attended.
    """
    if q_seq.ndim != 3 or kv_seq.ndim != 3:
        raise ag.ShapeError(f"attention expects (N, T, d) inputs, got {q_seq.shape} and {kv_seq.shape}")
    N, Tq, d = q_seq.shape
    Tk = kv_seq.shape[1]
    if kv_seq.shape[0] != N or kv_seq.shape[2] != d:
        raise ag.ShapeError(f"attention: query {q_seq.shape} and key/value {kv_seq.shape} disagree")
    if d % n_heads:
        raise ag.ShapeError(f"width {d} not divisible by {n_heads} heads")
    dk = d // n_heads

    if params.wq is None or params.wk is None:
        if Tk != 1:
            raise ModelError("query/key projections are required when attending over more than one key")
        if mask is not None and not np.broadcast_to(mask, (N, Tq, 1)).all():
            raise ag.DegenerateMaskError("softmax row has every entry masked")
        # softmax over a single key is exactly 1: output is the projected value
        ctx = ag.matmul(ag.matmul(kv_seq, params.wv), params.wo)
        return ag.expand(ctx, (N, Tq, d))

    def heads(x: Tensor, w: Tensor, T: int) -> Tensor:
        return ag.transpose(ag.reshape(ag.matmul(x, w), (N, T, n_heads, dk)), (0, 2, 1, 3))

    q = heads(q_seq, params.wq, Tq)
    k = heads(kv_seq, params.wk, Tk)
    v = heads(kv_seq, params.wv, Tk)
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, bool), (N, Tq, Tk))[:, None, :, :]
    weights = ag.dropout(ag.softmax_rows(scores, mask), dropout_p, rng)
    ctx = ag.reshape(ag.transpose(ag.matmul(weights, v), (0, 2, 1, 3)), (N, Tq, d))
    return ag.matmul(ctx, params.wo)


def frame_source(ids_list: list[list[int]], max_tokens: int | None = None) -> list[list[int]]:
    """``[STR_TAG, ids..., EOS]`` per sentence, optionally truncating ids first."""
    return [[STR_TAG, *(ids if max_tokens is None else ids[:max_tokens]), EOS] for ids in ids_list]


def pad_batch(rows: list[list[int]], width: int | None = None) -> np.ndarray:
    width = width or max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def decoder_views(ids_list: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forcing input ``G`` (EOS-fronted) and target ``Y`` (EOS-terminated)."""
    G = pad_batch([[EOS, *ids] for ids in ids_list])
    Y = pad_batch([[*ids, EOS] for ids in ids_list])
    return G, Y


class TLaser:
    """Parameters plus forward passes of the embedding / translation model."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self._pe = {}

    # ---- construction ---------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=None) -> "TLaser":
        """Uniform(+-1/sqrt(fan_in)) linear maps, N(0, d^-1/2) embeddings."""
        rng = np.random.default_rng(seed)
        dtype = dtype or ag.get_default_dtype()
        c = config
        p: dict[str, Tensor] = {}

        def lin(name, fan_in, fan_out):
            bound = 1.0 / math.sqrt(fan_in)
            p[name] = ag.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), name, dtype)

        def vec(name, n, value):
            p[name] = ag.parameter(np.full(n, value), name, dtype)

        def emb(name, rows, width):
            p[name] = ag.parameter(rng.normal(0.0, c.d_model ** -0.5, (rows, width)), name, dtype)

        emb("enc.embed", c.vocab_size, c.d_model)
        for li in range(c.n_enc_layers):
            pre = f"enc.{li}."
            vec(pre + "ln1.g", c.d_model, 1.0)
            vec(pre + "ln1.b", c.d_model, 0.0)
            for w in ("wq", "wk", "wv", "wo"):
                lin(pre + "attn." + w, c.d_model, c.d_model)
            vec(pre + "ln2.g", c.d_model, 1.0)
            vec(pre + "ln2.b", c.d_model, 0.0)
            lin(pre + "ffn.w1", c.d_model, c.d_fc)
            vec(pre + "ffn.b1", c.d_fc, 0.0)
            lin(pre + "ffn.w2", c.d_fc, c.d_model)
            vec(pre + "ffn.b2", c.d_model, 0.0)
        vec("enc.ln.g", c.d_model, 1.0)
        vec("enc.ln.b", c.d_model, 0.0)

        emb("dec.embed", c.vocab_size, c.d_tok_dec)
        emb("dec.lang", c.n_langs, c.d_lang)
        for li in range(c.n_dec_layers):
            pre = f"dec.{li}."
            vec(pre + "ln1.g", c.d_model, 1.0)
            vec(pre + "ln1.b", c.d_model, 0.0)
            for w in ("wq", "wk", "wv", "wo"):
                lin(pre + "self." + w, c.d_model, c.d_model)
            # the cross-attention query is inert (one key), so it gets no norm
            for w in ("wv", "wo"):
                lin(pre + "cross." + w, c.d_model, c.d_model)
            vec(pre + "ln3.g", c.d_model, 1.0)
            vec(pre + "ln3.b", c.d_model, 0.0)
            lin(pre + "ffn.w1", c.d_model, c.d_fc)
            vec(pre + "ffn.b1", c.d_fc, 0.0)
            lin(pre + "ffn.w2", c.d_fc, c.d_model)
            vec(pre + "ffn.b2", c.d_model, 0.0)
        vec("dec.ln.g", c.d_model, 1.0)
        vec("dec.ln.b", c.d_model, 0.0)
        lin("dec.out.w", c.d_model, c.vocab_size)
        vec("dec.out.b", c.vocab_size, 0.0)
        return cls(config, p)

    def astype(self, dtype) -> "TLaser":
        params = {k: ag.parameter(v.data.astype(dtype), k) for k, v in self.params.items()}
        return TLaser(self.config, params)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # ---- building blocks ------------------------------------------------

    def _positions(self, T: int, dtype) -> Tensor:
        if T > self.config.max_positions:
            raise ModelError(f"sequence length {T} exceeds max_positions={self.config.max_positions}")
        key = (T, np.dtype(dtype).str)
        if key not in self._pe:
            self._pe[key] = Tensor(sinusoidal_positions(T, self.config.d_model, dtype))
        return self._pe[key]

    def _attn(self, prefix: str) -> AttentionParams:
        p = self.params
        return AttentionParams(wv=p[prefix + "wv"], wo=p[prefix + "wo"],
                               wq=p.get(prefix + "wq"), wk=p.get(prefix + "wk"))

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ag.layer_norm(x, self.params[prefix + ".g"], self.params[prefix + ".b"], self.config.ln_eps)

    def _ffn(self, x: Tensor, prefix: str, rng) -> Tensor:
        p = self.params
        h = ag.relu(ag.add(ag.matmul(x, p[prefix + "w1"]), p[prefix + "b1"]))
        h = ag.dropout(h, self.config.dropout_p, rng)
        return ag.add(ag.matmul(h, p[prefix + "w2"]), p[prefix + "b2"])

    # ---- encoder --------------------------------------------------------

    def encode(self, tokens: np.ndarray, rng: np.random.Generator | None = None,
               lazy: bool | None = None) -> EncoderOutput:
        """Encode a right-padded ``(N, T)`` batch of framed sequences.

        ``rng`` enables dropout; pass None for evaluation.
        """
        c = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ModelError(f"expected an (N, T) id matrix, got shape {tokens.shape}")
        if (tokens[:, 0] != STR_TAG).any():
            raise ModelError("every encoder row must start with STR_TAG")
        if tokens.max() >= c.vocab_size:
            raise ModelError(f"token id {tokens.max()} outside vocabulary of size {c.vocab_size}")
        lazy = c.lazy_final_layer if lazy is None else lazy
        N, T = tokens.shape
        keep = tokens != PAD
        mask = np.broadcast_to(keep[:, None, :], (N, T, T))
        p_drop = c.dropout_p if rng is not None else 0.0

        x = ag.scale(ag.take(self.params["enc.embed"], tokens), math.sqrt(c.d_model))
        x = ag.dropout(ag.add(x, self._positions(T, x.dtype)), p_drop, rng)
        for li in range(c.n_enc_layers):
            pre = f"enc.{li}."
            last = li == c.n_enc_layers - 1
            h = self._ln(x, pre + "ln1")
            if last and lazy:
                # only position 0 is needed from the final layer
                q = ag.getitem(h, (slice(None), slice(0, 1)))
                a = multi_head_attention(q, h, self._attn(pre + "attn."), c.n_heads, mask[:, :1],
                                         p_drop, rng)
                x = ag.add(ag.getitem(x, (slice(None), slice(0, 1))), a)
            else:
                a = multi_head_attention(h, h, self._attn(pre + "attn."), c.n_heads, mask, p_drop, rng)
                x = ag.add(x, a)
            x = ag.add(x, self._ffn(self._ln(x, pre + "ln2"), pre + "ffn.", rng))
        x = self._ln(x, "enc.ln")
        P = ag.reshape(ag.getitem(x, (slice(None), slice(0, 1))), (N, c.d_model))
        return EncoderOutput(P=P, H=None if lazy else x, mask=keep)

    # ---- decoder --------------------------------------------------------

    def decode(self, G: np.ndarray, lang: int | np.ndarray, P: Tensor,
               rng: np.random.Generator | None = None) -> Tensor:
        """Teacher-forced logits ``(N, T, V)`` for EOS-fronted inputs ``G``."""
        c = self.config
        G = np.asarray(G, dtype=np.int64)
        if G.ndim != 2:
            raise ModelError(f"expected an (N, T) id matrix, got shape {G.shape}")
        N, T = G.shape
        if (G[:, 0] != EOS).any():
            raise ModelError("decoder input must be EOS-fronted")
        lang = np.broadcast_to(np.asarray(lang, dtype=np.int64), (N,))
        if lang.min() < 0 or lang.max() >= c.n_langs:
            raise ModelError(f"language id outside [0, {c.n_langs})")
        if P.shape != (N, c.d_model):
            raise ag.ShapeError(f"P has shape {P.shape}, expected {(N, c.d_model)}")
        p_drop = c.dropout_p if rng is not None else 0.0

        tok = ag.take(self.params["dec.embed"], G)
        le = ag.expand(ag.reshape(ag.take(self.params["dec.lang"], lang), (N, 1, c.d_lang)),
                       (N, T, c.d_lang))
        x = ag.scale(ag.concat([tok, le], axis=-1), math.sqrt(c.d_model))
        x = ag.dropout(ag.add(x, self._positions(T, x.dtype)), p_drop, rng)
        causal = np.tril(np.ones((T, T), dtype=bool))
        memory = ag.reshape(P, (N, 1, c.d_model))
        for li in range(c.n_dec_layers):
            pre = f"dec.{li}."
            h = self._ln(x, pre + "ln1")
            x = ag.add(x, multi_head_attention(h, h, self._attn(pre + "self."), c.n_heads, causal,
                                               p_drop, rng))
            x = ag.add(x, multi_head_attention(x, memory, self._attn(pre + "cross."), c.n_heads))
            x = ag.add(x, self._ffn(self._ln(x, pre + "ln3"), pre + "ffn.", rng))
        x = self._ln(x, "dec.ln")
        return ag.add(ag.matmul(x, self.params["dec.out.w"]), self.params["dec.out.b"])

    def translate_forward(self, src: np.ndarray, G: np.ndarray, tgt_lang: int | np.ndarray,
                          rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Encode ``src`` and decode ``G`` with teacher forcing; returns ``(logits, P_src)``."""
        if len(src) != len(G):
            raise ModelError(f"source has {len(src)} rows but target has {len(G)}")
        enc = self.encode(src, rng)
        return self.decode(G, tgt_lang, enc.P, rng), enc.P

    def greedy_decode(self, P: Tensor, tgt_lang: int, max_len: int) -> list[list[int]]:
        """Argmax decoding from ``P`` (``(N, d)``) until EOS or ``max_len`` tokens."""
        if max_len < 1:
            raise ModelError("max_len must be at least 1")
        N = P.shape[0]
        seqs = [[EOS] for _ in range(N)]
        done = np.zeros(N, dtype=bool)
        out: list[list[int]] = [[] for _ in range(N)]
        for _ in range(max_len):
            logits = self.decode(pad_batch(seqs), tgt_lang, P).data
            for i in range(N):
                if done[i]:
                    continue
                nxt = int(np.argmax(logits[i, len(seqs[i]) - 1]))
                if nxt == EOS:
                    done[i] = True
                else:
                    out[i].append(nxt)
                    seqs[i].append(nxt)
            if done.all():
                break
        return out
