"""Streaming Transformer-Transducer ASR at desk scale.

Convolutional subsampling, pre-norm Transformer encoder with chunked
streaming attention and clipped relative-position bias, LSTM predictor,
additive joint network, transducer loss (DP kernel), and greedy decoding
that records per-token emission frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as tn
from .layers import EncoderLayer, Linear, LSTMCell, streaming_mask
from .tensor import Tensor


@dataclass
class EncoderConfig:
    input_dim: int = 32
    num_layers: int = 6
    dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    conv_kernel: int = 3
    conv_stride: int = 2
    conv_layers: int = 1
    chunk_size: int = 4          # attention chunk, in subsampled frames
    rel_clip: int = 64

    def __post_init__(self):
        if self.dim % self.num_heads != 0:
            raise ValueError("model dim must be divisible by num heads")
        if self.chunk_size < 1:
            raise ValueError("chunk size must be >= 1")

    @property
    def stride_total(self):
        return self.conv_stride ** self.conv_layers


@dataclass
class TransducerConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    embed_dim: int = 32
    pred_hidden: int = 64
    pred_layers: int = 1
    joint_dim: int = 64


@dataclass
class Transcript:
    """Decoded or reference token/word sequence with timing information."""

    tokens: list
    words: list
    token_to_word: list
    boundaries: list                 # per word (start, end) in original frames
    boundary_source: str             # "oracle-alignment" | "emission"
    emission_frames: list = None     # per token, subsampled frame of emission

    @property
    def num_words(self):
        return len(self.words)

    def last_token_of_word(self, n):
        idx = [i for i, w in enumerate(self.token_to_word) if w == n]
        if not idx:
            raise ValueError(f"word {n} has no tokens")
        return idx[-1]

    def to_record(self):
        return {
            "tokens": list(map(int, self.tokens)),
            "words": list(self.words),
            "token_to_word": list(map(int, self.token_to_word)),
            "boundaries": [[int(s), int(e)] for s, e in self.boundaries],
            "boundary_source": self.boundary_source,
            "emission_frames": (None if self.emission_frames is None
                                else list(map(int, self.emission_frames))),
        }

    @classmethod
    def from_record(cls, rec):
        return cls(tokens=list(rec["tokens"]), words=list(rec["words"]),
                   token_to_word=list(rec["token_to_word"]),
                   boundaries=[tuple(b) for b in rec["boundaries"]],
                   boundary_source=rec["boundary_source"],
                   emission_frames=rec.get("emission_frames"))


class ConvSubsampler:
    """Stack of strided temporal convolutions with GELU, symmetric zero pad.

    Per layer: pad (kernel-1)//2 on both sides, output length ceil(T/stride).
    """

    def __init__(self, rng, in_dim, out_dim, kernel, stride, num_layers):
        self.kernel = kernel
        self.stride = stride
        self.layers = []
        d = in_dim
        for _ in range(num_layers):
            self.layers.append(Linear(rng, kernel * d, out_dim))
            d = out_dim

    def output_length(self, length):
        pad = (self.kernel - 1) // 2
        for _ in self.layers:
            length = (length + 2 * pad - self.kernel) // self.stride + 1
        return length

    def __call__(self, x):
        if x.shape[0] < 1:
            raise ValueError("conv subsampling needs at least one input frame")
        pad = (self.kernel - 1) // 2
        for lin in self.layers:
            t_in, d = x.shape
            if pad > 0:
                z = tn.constant(np.zeros((pad, d)))
                x = tn.concat([z, x, z], axis=0)
            t_out = (t_in + 2 * pad - self.kernel) // self.stride + 1
            idx = (np.arange(t_out)[:, None] * self.stride
                   + np.arange(self.kernel)[None, :]).ravel()
            win = tn.reshape(tn.gather_rows(x, idx), (t_out, self.kernel * d))
            x = tn.gelu(lin(win))
        return x

    def params(self, pfx):
        out = {}
        for i, lin in enumerate(self.layers):
            out.update(lin.params(f"{pfx}.conv{i}"))
        return out


class Predictor:
    """Embedding + LSTM stack; start-of-sequence uses a dedicated embedding row."""

    def __init__(self, rng, num_tokens, embed_dim, hidden, num_layers):
        self.num_tokens = num_tokens
        self.sos_id = num_tokens
        self.embed = Tensor(rng.normal(0.0, 0.5, (num_tokens + 1, embed_dim)),
                            requires_grad=True)
        self.cells = []
        d = embed_dim
        for _ in range(num_layers):
            self.cells.append(LSTMCell(rng, d, hidden))
            d = hidden

    def init_state(self):
        return [cell.init_state() for cell in self.cells]

    def step(self, token_id, state):
        """One predictor step; returns (output (1, hidden), new state)."""
        if not 0 <= token_id <= self.sos_id:
            raise ValueError(f"unknown token id {token_id}")
        x = tn.gather_rows(self.embed, [token_id])
        new_state = []
        for cell, st in zip(self.cells, state):
            x, st2 = cell(x, st)
            new_state.append(st2)
        return x, new_state

    def outputs_for(self, tokens):
        """Teacher-forced outputs (U+1, hidden); row u has consumed u tokens."""
        state = self.init_state()
        outs = []
        g, state = self.step(self.sos_id, state)
        outs.append(g)
        for tok in tokens:
            g, state = self.step(int(tok), state)
            outs.append(g)
        return tn.concat(outs, axis=0)

    def params(self, pfx):
        out = {f"{pfx}.embed": self.embed}
        for i, cell in enumerate(self.cells):
            out.update(cell.params(f"{pfx}.lstm{i}"))
        return out


class Joint:
    """Project encoder frame and predictor state to a shared dim, add, GELU,
    then a linear layer to vocab-plus-blank logits (blank last)."""

    def __init__(self, rng, enc_dim, pred_dim, joint_dim, num_outputs):
        self.proj_enc = Linear(rng, enc_dim, joint_dim)
        self.proj_pred = Linear(rng, pred_dim, joint_dim)
        self.out = Linear(rng, joint_dim, num_outputs)
        self.num_outputs = num_outputs

    def lattice(self, z, g):
        """Logits over the full (T', U+1) grid: (T', U+1, V+1)."""
        return self.out(tn.gelu(tn.pairwise_add(self.proj_enc(z),
                                                self.proj_pred(g))))

    def single(self, z_row, g_row):
        return self.out(tn.gelu(tn.add(self.proj_enc(z_row),
                                       self.proj_pred(g_row))))

    def params(self, pfx):
        out = {}
        out.update(self.proj_enc.params(f"{pfx}.proj_enc"))
        out.update(self.proj_pred.params(f"{pfx}.proj_pred"))
        out.update(self.out.params(f"{pfx}.out"))
        return out


def transducer_loss(log_probs, targets):
    """Negative log-likelihood over all monotonic alignments.

    log_probs: Tensor (T', U+1, V+1) of log-softmaxed joint outputs with the
    blank symbol last; targets: token-id sequence of length U.
    """
    data = log_probs.data
    # -inf is a legal log-prob (exact zero); nan / +inf are not
    if np.any(np.isnan(data)) or np.any(data == np.inf):
        raise FloatingPointError("transducer loss: non-finite logits")
    t_len, u1, _ = data.shape
    targets = [int(t) for t in targets]
    u_len = len(targets)
    if u1 != u_len + 1:
        raise tn.ShapeError("transducer_loss", data.shape, (u_len,))
    blank_id = data.shape[2] - 1
    blank = np.ascontiguousarray(data[:, :, blank_id])
    if u_len > 0:
        emit = np.ascontiguousarray(data[:, np.arange(u_len), targets])
    else:
        emit = np.zeros((t_len, 0))
    nll, grad_blank, grad_emit = kernels.rnnt_forward_backward(blank, emit)

    def bwd(g):
        full = np.zeros_like(data)
        full[:, :, blank_id] = grad_blank
        for u, tok in enumerate(targets):
            full[:, u, tok] += grad_emit[:, u]
        log_probs._accum(float(g) * full)

    return tn.custom_op(np.float64(nll), (log_probs,), bwd)


class TransducerModel:
    def __init__(self, cfg, vocab, seed=0):
        self.cfg = cfg
        self.vocab = vocab
        enc = cfg.encoder
        rng = np.random.default_rng(seed)
        self.conv = ConvSubsampler(rng, enc.input_dim, enc.dim, enc.conv_kernel,
                                   enc.conv_stride, enc.conv_layers)
        self.layers = [EncoderLayer(rng, enc.dim, enc.num_heads, enc.ffn_dim,
                                    rel_clip=enc.rel_clip)
                       for _ in range(enc.num_layers)]
        self.predictor = Predictor(rng, vocab.num_tokens, cfg.embed_dim,
                                   cfg.pred_hidden, cfg.pred_layers)
        self.joint = Joint(rng, enc.dim, cfg.pred_hidden, cfg.joint_dim,
                           vocab.num_tokens + 1)
        self.blank_id = vocab.num_tokens

    # ---------------- encoder ----------------

    def conv_subsample(self, feats):
        return self.conv(tn.as_tensor(feats))

    def encoder_forward(self, z0, mask="streaming"):
        """Run the Transformer stack; returns [Z_0, ..., Z_L]."""
        if mask == "streaming":
            mask_add = streaming_mask(z0.shape[0], self.cfg.encoder.chunk_size)
        elif mask == "full" or mask is None:
            mask_add = None
        else:
            mask_add = mask
        outputs = [z0]
        x = z0
        for layer in self.layers:
            x = layer(x, mask_add=mask_add)
            outputs.append(x)
        return outputs

    def encode(self, feats, mask="streaming"):
        return self.encoder_forward(self.conv_subsample(feats), mask=mask)

    # ---------------- training ----------------

    def loss(self, feats, target_tokens, mask="streaming"):
        layer_outputs = self.encode(feats, mask=mask)
        z_last = layer_outputs[-1]
        g = self.predictor.outputs_for(target_tokens)
        logits = self.joint.lattice(z_last, g)
        return transducer_loss(tn.log_softmax(logits, axis=-1), target_tokens)

    # ---------------- decoding ----------------

    def greedy_decode(self, layer_outputs, total_frames, max_symbols_per_frame=4,
                      emission_delay=0):
        """Frame-synchronous greedy decode over Z_L, recording emission frames.

        emission_delay shifts recorded emission frames later by a fixed
        number of subsampled frames (clipped), for boundary-quality studies.
        """
        with tn.no_grad():
            z_last = layer_outputs[-1]
            t_sub = z_last.shape[0]
            state = self.predictor.init_state()
            g, state = self.predictor.step(self.predictor.sos_id, state)
            tokens = []
            frames = []
            for t in range(t_sub):
                z_row = tn.narrow(z_last, 0, t, 1)
                for _ in range(max_symbols_per_frame):
                    logits = self.joint.single(z_row, g)
                    k = int(np.argmax(logits.data[0]))
                    if k == self.blank_id:
                        break
                    tokens.append(k)
                    frames.append(t)
                    g, state = self.predictor.step(k, state)
        return self._assemble_transcript(tokens, frames, t_sub, total_frames,
                                         emission_delay)

    def _assemble_transcript(self, tokens, frames, t_sub, total_frames,
                             emission_delay):
        words, token_to_word = self.vocab.tokens_to_words(tokens)
        if emission_delay:
            frames = [min(t_sub - 1, f + emission_delay) for f in frames]
        stride = self.cfg.encoder.stride_total
        boundaries = []
        prev_end = -1
        for n in range(len(words)):
            tok_idx = [i for i, w in enumerate(token_to_word) if w == n]
            s = frames[tok_idx[0]] * stride
            e = frames[tok_idx[-1]] * stride + stride - 1
            s = max(s, prev_end + 1)
            e = max(e, s)
            s = min(s, total_frames - 1)
            e = min(e, total_frames - 1)
            boundaries.append((s, e))
            prev_end = e
        return Transcript(tokens=tokens, words=words, token_to_word=token_to_word,
                          boundaries=boundaries, boundary_source="emission",
                          emission_frames=frames)

    # ---------------- parameters ----------------

    def params(self):
        out = {}
        out.update(self.conv.params("enc.conv"))
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"enc.layer{i}"))
        out.update(self.predictor.params("pred"))
        out.update(self.joint.params("joint"))
        return out

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.params().items()}

    def load_state(self, arrays):
        params = self.params()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if p.data.shape != arrays[name].shape:
                raise tn.ShapeError(f"load_state[{name}]", p.data.shape,
                                    arrays[name].shape)
            p.data[...] = arrays[name]
