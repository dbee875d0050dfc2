"""Minimal causal encoder with exact reverse-mode gradients.

Pre-norm transformer blocks over a byte-level vocabulary, learned positional
embeddings, 4x feed-forward expansion, GELU, no dropout, all in float64.
Embeddings are read off at the emb-token positions and l2-normalized.  The
attention mask switch (`causal` vs `isolated_turns`) controls whether later
turns can attend to earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMatrix, Role, RowLabel, ValidationError, Variant
from .template import AttentionMode, PackedSequence

LN_EPS = 1e-5
INIT_SCALE = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)


class SequenceTooLong(ValueError):
    pass


class TokenOutOfVocab(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int
    heads: int
    layers: int
    max_seq: int
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "dim", "heads", "layers", "max_seq"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.dim % self.heads != 0:
            raise ValidationError("dim must be divisible by heads")


def segment_shapes(config: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Named parameter segments in their flat-array order."""
    d, ff = config.dim, 4 * config.dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (config.vocab_size, d)),
        ("pos_emb", (config.max_seq, d)),
    ]
    for i in range(config.layers):
        shapes += [
            (f"l{i}.ln1_g", (d,)),
            (f"l{i}.ln1_b", (d,)),
            (f"l{i}.wq", (d, d)),
            (f"l{i}.bq", (d,)),
            (f"l{i}.wk", (d, d)),
            (f"l{i}.bk", (d,)),
            (f"l{i}.wv", (d, d)),
            (f"l{i}.bv", (d,)),
            (f"l{i}.wo", (d, d)),
            (f"l{i}.bo", (d,)),
            (f"l{i}.ln2_g", (d,)),
            (f"l{i}.ln2_b", (d,)),
            (f"l{i}.w1", (d, ff)),
            (f"l{i}.b1", (ff,)),
            (f"l{i}.w2", (ff, d)),
            (f"l{i}.b2", (d,)),
        ]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,))]
    return shapes


_WEIGHT_SUFFIXES = ("tok_emb", "pos_emb", "wq", "wk", "wv", "wo", "w1", "w2")
_GAIN_SUFFIXES = ("ln1_g", "ln2_g", "lnf_g")


@dataclass
class EncoderState:
    """Flat float64 parameter array plus the named-segment index."""

    config: EncoderConfig
    params: np.ndarray
    offsets: dict[str, tuple[int, tuple[int, ...]]]

    def __post_init__(self):
        if self.params.shape != (self.param_count,):
            raise ValidationError("parameter array does not match segment sum")
        if not np.all(np.isfinite(self.params)):
            raise ValidationError("parameters must be finite")

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, (_, shape) in self.offsets.items())

    def seg(self, name: str, flat: np.ndarray | None = None) -> np.ndarray:
        """View of one named segment (of `flat` if given, else the params)."""
        offset, shape = self.offsets[name]
        base = self.params if flat is None else flat
        return base[offset : offset + int(np.prod(shape))].reshape(shape)

    def zeros_like_params(self) -> np.ndarray:
        return np.zeros_like(self.params)


def _build_offsets(config: EncoderConfig) -> dict[str, tuple[int, tuple[int, ...]]]:
    offsets: dict[str, tuple[int, tuple[int, ...]]] = {}
    cursor = 0
    for name, shape in segment_shapes(config):
        offsets[name] = (cursor, shape)
        cursor += int(np.prod(shape))
    return offsets


def init(config: EncoderConfig) -> EncoderState:
    """Seeded initialization: 0.02 x standard normal for weight matrices,
    ones for norm gains, zeros for biases and norm offsets."""
    rng = np.random.default_rng(config.seed)
    offsets = _build_offsets(config)
    total = sum(int(np.prod(shape)) for _, shape in segment_shapes(config))
    params = np.zeros(total, dtype=np.float64)
    for name, (offset, shape) in offsets.items():
        size = int(np.prod(shape))
        leaf = name.rsplit(".", 1)[-1]
        if leaf in _WEIGHT_SUFFIXES:
            params[offset : offset + size] = INIT_SCALE * rng.standard_normal(size)
        elif leaf in _GAIN_SUFFIXES:
            params[offset : offset + size] = 1.0
        # biases and norm offsets stay zero
    return EncoderState(config=config, params=params, offsets=offsets)


def attention_allowed(packed: PackedSequence) -> np.ndarray:
    """(n, n) boolean matrix: may position p attend to source position s.

    `causal` is the standard lower triangle.  `isolated_turns` additionally
    requires the source to be in the image prefix or in the same turn, so
    each turn sees only the shared image context and its own tokens.
    """
    n = len(packed)
    lower = np.tril(np.ones((n, n), dtype=bool))
    if packed.attention_mode is AttentionMode.CAUSAL:
        return lower
    turns = packed.turn_ids
    same_or_prefix = (turns[None, :] == turns[:, None]) | (turns[None, :] == -1)
    return lower & same_or_prefix


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x: np.ndarray):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def forward(state: EncoderState, packed: PackedSequence):
    """Run the encoder; returns (hidden_states (n, dim), cache for backward)."""
    cfg = state.config
    ids = packed.token_ids
    n = len(packed)
    if n > cfg.max_seq:
        raise SequenceTooLong(f"sequence length {n} exceeds max_seq {cfg.max_seq}")
    if n and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise TokenOutOfVocab(f"token id outside [0, {cfg.vocab_size})")

    d, h = cfg.dim, cfg.heads
    dh = d // h
    allowed = attention_allowed(packed)
    x = state.seg("tok_emb")[ids] + state.seg("pos_emb")[:n]
    cache: dict = {"ids": ids, "x0": x, "allowed": allowed, "layers": []}

    for i in range(cfg.layers):
        p = lambda name: state.seg(f"l{i}.{name}")
        lc: dict = {"x_in": x}
        hn, lc["ln1"] = _layer_norm(x, p("ln1_g"), p("ln1_b"))
        lc["hn"] = hn
        q = hn @ p("wq") + p("bq")
        k = hn @ p("wk") + p("bk")
        v = hn @ p("wv") + p("bv")
        qh = q.reshape(n, h, dh).transpose(1, 0, 2)
        kh = k.reshape(n, h, dh).transpose(1, 0, 2)
        vh = v.reshape(n, h, dh).transpose(1, 0, 2)
        scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(dh)
        scores = np.where(allowed[None, :, :], scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = (attn @ vh).transpose(1, 0, 2).reshape(n, d)
        lc.update(qh=qh, kh=kh, vh=vh, attn=attn, ctx=ctx)
        x = x + ctx @ p("wo") + p("bo")

        lc["x_mid"] = x
        hn2, lc["ln2"] = _layer_norm(x, p("ln2_g"), p("ln2_b"))
        lc["hn2"] = hn2
        pre = hn2 @ p("w1") + p("b1")
        act, tanh_cache = _gelu(pre)
        lc.update(pre=pre, act=act, tanh=tanh_cache)
        x = x + act @ p("w2") + p("b2")
        cache["layers"].append(lc)

    out, cache["lnf"] = _layer_norm(x, state.seg("lnf_g"), state.seg("lnf_b"))
    cache["x_final"] = x
    return out, cache


def backward(state: EncoderState, cache: dict, d_hidden: np.ndarray):
    """Exact reverse pass.

    Returns (flat parameter gradient, gradient at the input embedding rows
    x0 = tok_emb[ids] + pos_emb).  Token/positional embedding gradients are
    also scattered into the flat gradient.
    """
    cfg = state.config
    d, h = cfg.dim, cfg.heads
    dh = d // h
    n = d_hidden.shape[0]
    grads = state.zeros_like_params()

    dx, dg, db = _layer_norm_backward(d_hidden, state.seg("lnf_g"), cache["lnf"])
    state.seg("lnf_g", grads)[:] += dg
    state.seg("lnf_b", grads)[:] += db

    for i in reversed(range(cfg.layers)):
        p = lambda name: state.seg(f"l{i}.{name}")
        g = lambda name: state.seg(f"l{i}.{name}", grads)
        lc = cache["layers"][i]

        # feed-forward sublayer: x_out = x_mid + gelu(ln2(x_mid)) @ w2 + b2
        d_ffn_out = dx
        g("w2")[:] += lc["act"].T @ d_ffn_out
        g("b2")[:] += d_ffn_out.sum(axis=0)
        d_act = d_ffn_out @ p("w2").T
        d_pre = _gelu_backward(d_act, lc["pre"], lc["tanh"])
        g("w1")[:] += lc["hn2"].T @ d_pre
        g("b1")[:] += d_pre.sum(axis=0)
        d_hn2 = d_pre @ p("w1").T
        d_x_mid, dg2, db2 = _layer_norm_backward(d_hn2, p("ln2_g"), lc["ln2"])
        g("ln2_g")[:] += dg2
        g("ln2_b")[:] += db2
        dx = dx + d_x_mid

        # attention sublayer: x_mid = x_in + attn(ln1(x_in)) @ wo + bo
        d_attn_out = dx
        g("wo")[:] += lc["ctx"].T @ d_attn_out
        g("bo")[:] += d_attn_out.sum(axis=0)
        d_ctx = (d_attn_out @ p("wo").T).reshape(n, h, dh).transpose(1, 0, 2)
        attn, vh, qh, kh = lc["attn"], lc["vh"], lc["qh"], lc["kh"]
        d_vh = attn.transpose(0, 2, 1) @ d_ctx
        d_attn = d_ctx @ vh.transpose(0, 2, 1)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_qh = d_scores @ kh / math.sqrt(dh)
        d_kh = d_scores.transpose(0, 2, 1) @ qh / math.sqrt(dh)
        d_q = d_qh.transpose(1, 0, 2).reshape(n, d)
        d_k = d_kh.transpose(1, 0, 2).reshape(n, d)
        d_v = d_vh.transpose(1, 0, 2).reshape(n, d)
        hn = lc["hn"]
        g("wq")[:] += hn.T @ d_q
        g("bq")[:] += d_q.sum(axis=0)
        g("wk")[:] += hn.T @ d_k
        g("bk")[:] += d_k.sum(axis=0)
        g("wv")[:] += hn.T @ d_v
        g("bv")[:] += d_v.sum(axis=0)
        d_hn = d_q @ p("wq").T + d_k @ p("wk").T + d_v @ p("wv").T
        d_x_in, dg1, db1 = _layer_norm_backward(d_hn, p("ln1_g"), lc["ln1"])
        g("ln1_g")[:] += dg1
        g("ln1_b")[:] += db1
        dx = dx + d_x_in

    d_x0 = dx
    np.add.at(state.seg("tok_emb", grads), cache["ids"], d_x0)
    state.seg("pos_emb", grads)[:n] += d_x0
    return grads, d_x0


def extract_embeddings(
    hidden: np.ndarray,
    packed: PackedSequence,
    image_index: int,
    role: Role,
    variants: dict[int, Variant] | None = None,
) -> EmbeddingMatrix:
    """Select hidden states at the emb positions, l2-normalize each, and
    label rows with (image_index, turn_index, role[, variant])."""
    rows = []
    values = np.empty((packed.num_turns, hidden.shape[1]), dtype=np.float64)
    for r, pos in enumerate(packed.emb_positions):
        turn = packed.turn_of_position[int(pos)]
        variant = (variants or {}).get(turn, Variant.ORIGINAL)
        rows.append(RowLabel(image_index, turn, role, variant))
        vec = hidden[pos]
        values[r] = vec / np.linalg.norm(vec)
    return EmbeddingMatrix(rows=tuple(rows), values=values)


def extract_backward(
    hidden: np.ndarray, packed: PackedSequence, grad_rows: np.ndarray
) -> np.ndarray:
    """Backward of extract_embeddings: route unit-row gradients through the
    l2 normalization onto the hidden-state positions."""
    d_hidden = np.zeros_like(hidden)
    for r, pos in enumerate(packed.emb_positions):
        vec = hidden[pos]
        norm = np.linalg.norm(vec)
        unit = vec / norm
        upstream = grad_rows[r]
        d_hidden[pos] = (upstream - unit * (unit @ upstream)) / norm
    return d_hidden
