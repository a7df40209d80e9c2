"""Reusable network building blocks: linear, layer norm, attention, FFN, LSTM."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .tensor import Tensor

MASK_NEG = -1e30


class Linear:
    def __init__(self, rng, in_dim, out_dim, scale=None):
        s = scale if scale is not None else 1.0 / math.sqrt(in_dim)
        self.w = Tensor(rng.normal(0.0, s, (in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return tn.add_bias(tn.tensordot_last(x, self.w), self.b)

    def params(self, pfx):
        return {f"{pfx}.w": self.w, f"{pfx}.b": self.b}


class LayerNorm:
    def __init__(self, dim):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return tn.layer_norm(x, self.gain, self.bias)

    def params(self, pfx):
        return {f"{pfx}.gain": self.gain, f"{pfx}.bias": self.bias}


def relative_index_matrix(num_q, num_k, clip):
    """idx[i, j] = clip(j - i, -clip, clip) + clip, for bias-table lookup."""
    rel = np.arange(num_k)[None, :] - np.arange(num_q)[:, None]
    return np.clip(rel, -clip, clip) + clip


def relative_index_from_positions(q_pos, k_pos, clip):
    """Bias-table lookup indices for explicit query/key positions.

    Positions need not be contiguous or share an axis: cross-attention can
    use token time positions against frame indices."""
    q_pos = np.asarray(q_pos, dtype=np.int64)
    k_pos = np.asarray(k_pos, dtype=np.int64)
    rel = k_pos[None, :] - q_pos[:, None]
    return np.clip(rel, -clip, clip) + clip


def streaming_mask(length, chunk_size):
    """Additive mask: frame t sees its own chunk and all earlier chunks."""
    chunk_of = np.arange(length) // chunk_size
    allowed = chunk_of[None, :] <= chunk_of[:, None]
    return np.where(allowed, 0.0, MASK_NEG)


class MultiHeadAttention:
    """Self- or cross-attention with optional clipped relative-position bias.

    The bias table is per head over relative distances in [-clip, clip];
    cross-attention typically runs without it (content-based addressing).
    """

    def __init__(self, rng, dim, num_heads, rel_clip=None, kv_dim=None):
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.rel_clip = rel_clip
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, kv_dim or dim, dim)
        self.wv = Linear(rng, kv_dim or dim, dim)
        self.wo = Linear(rng, dim, dim)
        if rel_clip is not None:
            self.rel_table = Tensor(np.zeros((num_heads, 2 * rel_clip + 1)),
                                    requires_grad=True)
        else:
            self.rel_table = None

    def __call__(self, x, memory=None, mask_add=None, positions=None):
        kv = x if memory is None else memory
        q = self.wq(x)
        k = self.wk(kv)
        v = self.wv(kv)
        num_q, num_k = q.shape[0], k.shape[0]
        rel_idx = None
        if self.rel_table is not None:
            if positions is not None:
                q_pos, k_pos = positions
                rel_idx = relative_index_from_positions(q_pos, k_pos,
                                                        self.rel_clip)
            else:
                rel_idx = relative_index_matrix(num_q, num_k, self.rel_clip)
        inv = 1.0 / math.sqrt(self.head_dim)
        outs = []
        for h in range(self.num_heads):
            off = h * self.head_dim
            q_h = tn.narrow(q, 1, off, self.head_dim)
            k_h = tn.narrow(k, 1, off, self.head_dim)
            v_h = tn.narrow(v, 1, off, self.head_dim)
            scores = tn.mul_scalar(tn.matmul(q_h, tn.transpose(k_h)), inv)
            if rel_idx is not None:
                row = tn.reshape(tn.narrow(self.rel_table, 0, h, 1), (-1,))
                scores = tn.add(scores, tn.gather(row, rel_idx))
            if mask_add is not None:
                scores = tn.add_const(scores, mask_add)
            attn = tn.softmax(scores, axis=-1)
            outs.append(tn.matmul(attn, v_h))
        return self.wo(tn.concat(outs, axis=1))

    def params(self, pfx):
        out = {}
        out.update(self.wq.params(f"{pfx}.wq"))
        out.update(self.wk.params(f"{pfx}.wk"))
        out.update(self.wv.params(f"{pfx}.wv"))
        out.update(self.wo.params(f"{pfx}.wo"))
        if self.rel_table is not None:
            out[f"{pfx}.rel_table"] = self.rel_table
        return out


class FeedForward:
    def __init__(self, rng, dim, hidden):
        self.lin1 = Linear(rng, dim, hidden)
        self.lin2 = Linear(rng, hidden, dim)

    def __call__(self, x):
        return self.lin2(tn.gelu(self.lin1(x)))

    def params(self, pfx):
        return {**self.lin1.params(f"{pfx}.lin1"), **self.lin2.params(f"{pfx}.lin2")}


class EncoderLayer:
    """Pre-norm Transformer encoder block: x + MHSA(ln(x)), then + FFN(ln(.))."""

    def __init__(self, rng, dim, num_heads, ffn_dim, rel_clip=None):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, num_heads, rel_clip=rel_clip)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, ffn_dim)

    def __call__(self, x, mask_add=None):
        x = tn.add(x, self.attn(self.ln1(x), mask_add=mask_add))
        return tn.add(x, self.ffn(self.ln2(x)))

    def params(self, pfx):
        out = {}
        out.update(self.ln1.params(f"{pfx}.ln1"))
        out.update(self.attn.params(f"{pfx}.attn"))
        out.update(self.ln2.params(f"{pfx}.ln2"))
        out.update(self.ffn.params(f"{pfx}.ffn"))
        return out


class DecoderLayer:
    """Pre-norm decoder block: self-attention, source-target attention, FFN."""

    def __init__(self, rng, dim, num_heads, ffn_dim, rel_clip=None,
                 cross_rel_clip=None):
        self.ln1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(rng, dim, num_heads, rel_clip=rel_clip)
        self.ln2 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(rng, dim, num_heads,
                                             rel_clip=cross_rel_clip)
        self.ln3 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, ffn_dim)

    def __call__(self, x, memory, cross_positions=None):
        x = tn.add(x, self.self_attn(self.ln1(x)))
        x = tn.add(x, self.cross_attn(self.ln2(x), memory=memory,
                                      positions=cross_positions))
        return tn.add(x, self.ffn(self.ln3(x)))

    def params(self, pfx):
        out = {}
        out.update(self.ln1.params(f"{pfx}.ln1"))
        out.update(self.self_attn.params(f"{pfx}.self_attn"))
        out.update(self.ln2.params(f"{pfx}.ln2"))
        out.update(self.cross_attn.params(f"{pfx}.cross_attn"))
        out.update(self.ln3.params(f"{pfx}.ln3"))
        out.update(self.ffn.params(f"{pfx}.ffn"))
        return out


class LSTMCell:
    def __init__(self, rng, in_dim, hidden):
        self.hidden = hidden
        s_in = 1.0 / math.sqrt(in_dim)
        s_h = 1.0 / math.sqrt(hidden)
        self.w_ih = Tensor(rng.normal(0.0, s_in, (in_dim, 4 * hidden)),
                           requires_grad=True)
        self.w_hh = Tensor(rng.normal(0.0, s_h, (hidden, 4 * hidden)),
                           requires_grad=True)
        self.bias = Tensor(np.zeros(4 * hidden), requires_grad=True)

    def init_state(self):
        return (tn.constant(np.zeros((1, self.hidden))),
                tn.constant(np.zeros((1, self.hidden))))

    def __call__(self, x, state):
        h_prev, c_prev = state
        z = tn.add_bias(tn.add(tn.tensordot_last(x, self.w_ih),
                               tn.tensordot_last(h_prev, self.w_hh)), self.bias)
        n = self.hidden
        i = tn.sigmoid(tn.narrow(z, 1, 0, n))
        f = tn.sigmoid(tn.narrow(z, 1, n, n))
        g = tn.tanh(tn.narrow(z, 1, 2 * n, n))
        o = tn.sigmoid(tn.narrow(z, 1, 3 * n, n))
        c = tn.add(tn.mul(f, c_prev), tn.mul(i, g))
        h = tn.mul(o, tn.tanh(c))
        return h, (h, c)

    def params(self, pfx):
        return {f"{pfx}.w_ih": self.w_ih, f"{pfx}.w_hh": self.w_hh,
                f"{pfx}.bias": self.bias}
