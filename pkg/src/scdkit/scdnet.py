"""Speaker change decision networks on top of the frozen ASR encoder.

Two heads: an encoder-only head over boundary-pooled word embeddings, and
an encoder+decoder head that cross-attends token embeddings onto acoustic
frames. Both are trained with focal loss against the change labels.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tn
from .layers import DecoderLayer, EncoderLayer, LayerNorm, Linear
from .tensor import Tensor

PROB_EPS = 1e-7

SELECTOR_MODES = ("single", "weighted-learned", "weighted-fixed")
POSITION_MODES = ("none", "relative")


class FeatureSelector:
    """Chooses the acoustic feature: one encoder layer, or a (learned or
    fixed) convex combination of layers 1..L. The learned weights are a
    softmax reparameterization, so they always sum to 1 and stay positive."""

    def __init__(self, mode="weighted-learned", num_layers=6, layer_index=None):
        if mode not in SELECTOR_MODES:
            raise ValueError(f"unknown selector mode {mode!r}")
        if mode == "single" and layer_index is None:
            raise ValueError("single-layer mode needs a layer index")
        self.mode = mode
        self.num_layers = num_layers
        self.layer_index = layer_index
        if mode == "weighted-learned":
            self.logits = Tensor(np.zeros(num_layers), requires_grad=True)
        else:
            self.logits = None

    def weights(self):
        """Effective layer weights as a numpy array (diagnostics)."""
        if self.mode == "weighted-learned":
            e = np.exp(self.logits.data - self.logits.data.max())
            return e / e.sum()
        return np.full(self.num_layers, 1.0 / self.num_layers)

    def select(self, layer_outputs):
        if len(layer_outputs) != self.num_layers + 1:
            raise ValueError(
                f"expected {self.num_layers + 1} layer outputs, "
                f"got {len(layer_outputs)}")
        if self.mode == "single":
            if not 0 <= self.layer_index <= self.num_layers:
                raise IndexError(f"layer index {self.layer_index} out of range")
            return layer_outputs[self.layer_index]
        if self.mode == "weighted-learned":
            w = tn.softmax(self.logits, axis=-1)
        else:
            w = tn.constant(np.full(self.num_layers, 1.0 / self.num_layers))
        out = None
        for i in range(self.num_layers):
            term = tn.scale_by(layer_outputs[i + 1], tn.narrow(w, 0, i, 1))
            out = term if out is None else tn.add(out, term)
        return out

    def params(self, pfx="selector"):
        if self.logits is None:
            return {}
        return {f"{pfx}.logits": self.logits}


def map_frame_boundary(start, end, stride_total, t_sub):
    """Map an original-frame word boundary into subsampled frame indices."""
    if end < start:
        raise ValueError(f"invalid boundary ({start}, {end})")
    s = start // stride_total
    e = min(t_sub - 1, end // stride_total)
    s = min(s, e)
    return s, e


def pool_matrix(boundaries, stride_total, t_sub):
    """Constant (N, T') row-averaging matrix for word pooling."""
    mat = np.zeros((len(boundaries), t_sub))
    for n, (s, e) in enumerate(boundaries):
        s2, e2 = map_frame_boundary(s, e, stride_total, t_sub)
        mat[n, s2:e2 + 1] = 1.0 / (e2 - s2 + 1)
    return mat


def pool_word_embeddings(z_chi, boundaries, stride_total):
    """Average the subsampled-frame rows of each word into one embedding."""
    mat = pool_matrix(boundaries, stride_total, z_chi.shape[0])
    return tn.matmul(tn.constant(mat), z_chi)


def token_frame_positions(boundaries, token_to_word, stride_total, t_sub):
    """Subsampled-frame position of each token: the start frame of its word.

    Anchors decoder-head queries on the time axis so cross-attention can use
    a frame-distance bias; emission or oracle boundaries both work."""
    starts = [map_frame_boundary(s, e, stride_total, t_sub)[0]
              for s, e in boundaries]
    return np.asarray([starts[w] for w in token_to_word], dtype=np.int64)


def fuse_text_feature(pooled, predictor_outputs, transcript):
    """Concatenate each word's pooled acoustics with the predictor state
    after that word's last token. predictor_outputs is the teacher-forced
    (U+1, h) matrix whose row u+1 has consumed token u."""
    idx = [transcript.last_token_of_word(n) + 1
           for n in range(transcript.num_words)]
    return tn.concat([pooled, tn.gather_rows(predictor_outputs, idx)], axis=1)


@dataclass
class ScdEncConfig:
    num_layers: int = 2
    dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    use_text_feature: bool = False
    position_mode: str = "relative"
    rel_clip: int = 16

    def __post_init__(self):
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"unknown position mode {self.position_mode!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class ScdDecConfig:
    num_enc_layers: int = 1
    num_dec_layers: int = 2
    dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    position_mode: str = "relative"
    rel_clip: int = 16
    # train-time random forward shift (in subsampled frames, uniform over
    # 0..anchor_jitter) on the token position anchors; emission-derived
    # anchors at inference lag the true word start by up to ~1 subframe
    anchor_jitter: int = 1

    def __post_init__(self):
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"unknown position mode {self.position_mode!r}")
        if self.anchor_jitter < 0:
            raise ValueError("anchor_jitter must be >= 0")

    def to_dict(self):
        return asdict(self)


class ScdEncHead:
    """Non-causal Transformer encoder over pooled word embeddings, sigmoid head."""

    def __init__(self, cfg, in_dim, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        rel = cfg.rel_clip if cfg.position_mode == "relative" else None
        self.in_proj = Linear(rng, in_dim, cfg.dim)
        self.layers = [EncoderLayer(rng, cfg.dim, cfg.num_heads, cfg.ffn_dim,
                                    rel_clip=rel)
                       for _ in range(cfg.num_layers)]
        self.ln = LayerNorm(cfg.dim)
        self.head = Linear(rng, cfg.dim, 1)

    def __call__(self, word_feats):
        if word_feats.shape[0] < 1:
            raise ValueError("need at least one word")
        x = self.in_proj(word_feats)
        for layer in self.layers:
            x = layer(x)
        logit = self.head(self.ln(x))
        return tn.reshape(tn.sigmoid(logit), (-1,))

    def params(self, pfx="enc_head"):
        out = {}
        out.update(self.in_proj.params(f"{pfx}.in_proj"))
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{pfx}.layer{i}"))
        out.update(self.ln.params(f"{pfx}.ln"))
        out.update(self.head.params(f"{pfx}.head"))
        return out


class ScdDecHead:
    """Acoustic encoder + Transformer decoder with source-target attention
    from token embeddings onto the refined acoustic frames."""

    def __init__(self, cfg, acoustic_dim, token_dim, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        rel = cfg.rel_clip if cfg.position_mode == "relative" else None
        self.ac_proj = Linear(rng, acoustic_dim, cfg.dim)
        self.enc_layers = [EncoderLayer(rng, cfg.dim, cfg.num_heads, cfg.ffn_dim,
                                        rel_clip=rel)
                           for _ in range(cfg.num_enc_layers)]
        self.tok_proj = Linear(rng, token_dim, cfg.dim)
        self.dec_layers = [DecoderLayer(rng, cfg.dim, cfg.num_heads, cfg.ffn_dim,
                                        rel_clip=rel, cross_rel_clip=rel)
                           for _ in range(cfg.num_dec_layers)]
        if rel is not None:
            # learnable locality prior on the cross-attention bias: head h
            # starts as -slope_h * |frame distance| so queries read acoustics
            # around the token's own frames instead of a uniform average,
            # which the gradient can then specialize
            dist = np.abs(np.arange(-rel, rel + 1, dtype=np.float64))
            slopes = 2.0 / (2.0 ** np.arange(cfg.num_heads))
            for layer in self.dec_layers:
                layer.cross_attn.rel_table.data[...] = (
                    -slopes[:, None] * dist[None, :])
        self.ln = LayerNorm(cfg.dim)
        self.head = Linear(rng, cfg.dim, 1)

    def __call__(self, z_chi, token_embeddings, token_positions=None):
        """token_positions: subsampled-frame position per token (query anchor
        for the cross-attention distance bias); defaults to token index."""
        if token_embeddings.shape[0] < 1:
            raise ValueError("need at least one token")
        num_tok = token_embeddings.shape[0]
        if token_positions is None:
            token_positions = np.arange(num_tok, dtype=np.int64)
        else:
            token_positions = np.asarray(token_positions, dtype=np.int64)
            if token_positions.shape != (num_tok,):
                raise ValueError("token_positions length mismatch")
        cross_positions = (token_positions,
                           np.arange(z_chi.shape[0], dtype=np.int64))
        m = self.ac_proj(z_chi)
        for layer in self.enc_layers:
            m = layer(m)
        x = self.tok_proj(token_embeddings)
        for layer in self.dec_layers:
            x = layer(x, memory=m, cross_positions=cross_positions)
        logit = self.head(self.ln(x))
        return tn.reshape(tn.sigmoid(logit), (-1,))

    def params(self, pfx="dec_head"):
        out = {}
        out.update(self.ac_proj.params(f"{pfx}.ac_proj"))
        for i, layer in enumerate(self.enc_layers):
            out.update(layer.params(f"{pfx}.enc_layer{i}"))
        out.update(self.tok_proj.params(f"{pfx}.tok_proj"))
        for i, layer in enumerate(self.dec_layers):
            out.update(layer.params(f"{pfx}.dec_layer{i}"))
        out.update(self.ln.params(f"{pfx}.ln"))
        out.update(self.head.params(f"{pfx}.head"))
        return out


def token_to_word_probs(p_token, token_to_word):
    """Word probability = max over the word's token probabilities."""
    p_token = np.asarray(p_token, dtype=np.float64)
    if len(p_token) != len(token_to_word):
        raise ValueError("token probability / map length mismatch")
    num_words = (max(token_to_word) + 1) if token_to_word else 0
    out = np.full(num_words, -1.0)
    for p, w in zip(p_token, token_to_word):
        out[w] = max(out[w], p)
    if np.any(out < 0):
        raise ValueError("word with no tokens in token_to_word map")
    return out


def focal_loss(probs, labels, alpha=0.8, gamma=0.5):
    """Binary focal loss, summed over positions (gradient flows through the
    modulating factors as well)."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != probs.shape:
        raise tn.ShapeError("focal_loss", probs.shape, labels.shape)
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise ValueError("focal loss labels must be 0/1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if gamma < 0.0:
        raise ValueError("gamma must be >= 0")
    p = tn.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    one_minus_p = tn.add_scalar(tn.mul_scalar(p, -1.0), 1.0)
    y = tn.constant(labels)
    one_minus_y = tn.constant(1.0 - labels)
    psi = tn.mul_scalar(tn.pow_scalar(one_minus_p, gamma), alpha)
    phi = tn.mul_scalar(tn.pow_scalar(p, gamma), 1.0 - alpha)
    pos = tn.mul(tn.mul(psi, y), tn.log(p))
    neg = tn.mul(tn.mul(phi, one_minus_y), tn.log(one_minus_p))
    return tn.mul_scalar(tn.sum_all(tn.add(pos, neg)), -1.0)


def threshold_decisions(p_word, threshold=0.5, suppress_final=True):
    """Binary decisions by strict threshold; the session-final word is
    forced to 0 when scoring full sessions (change points lie between
    words, so a trailing positive has nothing to its right)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p_word = np.asarray(p_word, dtype=np.float64)
    decisions = (p_word > threshold).astype(np.int64)
    if suppress_final and len(decisions):
        decisions[-1] = 0
    return decisions
