"""Chunk-wise streaming SCD inference over long-form sessions.

The decoded word stream is segmented into overlapping chunks (look-back /
core / future word counts); each chunk runs the SCD head on its word or
acoustic slice, and core-position probabilities are merged back into the
full-session decision sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scdnet, scoreval
from . import tensor as tn


@dataclass
class ChunkSpec:
    n_h: int = 4
    n_c: int = 8
    n_f: int = 4

    def __post_init__(self):
        if self.n_c < 1:
            raise ValueError("core chunk length must be >= 1")
        if self.n_h < 0 or self.n_f < 0:
            raise ValueError("context sizes must be >= 0")


@dataclass
class ChunkView:
    core_start: int
    core_end: int
    ext_start: int
    ext_end: int
    frame_start: int
    frame_end: int
    tok_start: int
    tok_end: int


def segment(transcript, spec):
    """Tile the word axis with cores of stride n_c plus truncated context."""
    num_words = transcript.num_words
    if num_words == 0:
        return []
    tok_of_word = {}
    for i, w in enumerate(transcript.token_to_word):
        tok_of_word.setdefault(w, [i, i])[1] = i
    views = []
    for core_start in range(0, num_words, spec.n_c):
        core_end = min(num_words, core_start + spec.n_c)
        ext_start = max(0, core_start - spec.n_h)
        ext_end = min(num_words, core_end + spec.n_f)
        frame_start = transcript.boundaries[ext_start][0]
        frame_end = transcript.boundaries[ext_end - 1][1]
        views.append(ChunkView(
            core_start=core_start, core_end=core_end,
            ext_start=ext_start, ext_end=ext_end,
            frame_start=frame_start, frame_end=frame_end,
            tok_start=tok_of_word[ext_start][0],
            tok_end=tok_of_word[ext_end - 1][1] + 1))
    return views


def merge(chunks):
    """Assemble full-session P_W, each word taken from its core chunk."""
    if not chunks:
        return np.zeros(0)
    total = max(view.core_end for view, _ in chunks)
    out = np.full(total, np.nan)
    for view, probs in chunks:
        probs = np.asarray(probs, dtype=np.float64)
        if len(probs) != view.ext_end - view.ext_start:
            raise ValueError("chunk probability length mismatch")
        core = probs[view.core_start - view.ext_start:
                     view.core_end - view.ext_start]
        out[view.core_start:view.core_end] = core
    if np.any(np.isnan(out)):
        raise ValueError("chunk cores do not cover the word axis")
    return out


def decision_delay(view, word_index, spec):
    """Words of decision delay: wait for the chunk's future context."""
    return (view.core_end - 1 - word_index) + spec.n_f


def oracle_boundaries_for_hypothesis(ref_words, ref_boundaries, hyp_transcript):
    """Give decoded words alignment-based ("oracle") boundaries.

    Hypothesis words aligned to a reference word inherit its simulator
    boundary; insertions keep their emission boundary. A monotonic repair
    keeps boundaries ordered and non-overlapping.
    """
    bounds = [list(b) for b in hyp_transcript.boundaries]
    _, ops = scoreval.align_sequences(ref_words, hyp_transcript.words)
    for op, i, j in ops:
        if op in ("match", "substitute"):
            bounds[j] = list(ref_boundaries[i])
    prev_end = -1
    repaired = []
    for s, e in bounds:
        s = max(s, prev_end + 1)
        e = max(e, s)
        repaired.append((s, e))
        prev_end = e
    return repaired


class ScdInferencer:
    """Runs chunk-wise SCD over one session given frozen ASR artifacts."""

    def __init__(self, asr_model, selector, head, head_type,
                 use_text_feature=False, threshold=0.5):
        if head_type not in ("enc", "dec"):
            raise ValueError(f"unknown head type {head_type!r}")
        self.asr = asr_model
        self.selector = selector
        self.head = head
        self.head_type = head_type
        self.use_text_feature = use_text_feature
        self.threshold = threshold

    def session_probs(self, layer_outputs, transcript, spec):
        """Merged P_W plus per-word decision delays for one session."""
        views = segment(transcript, spec)
        if not views:
            return np.zeros(0), []
        stride = self.asr.cfg.encoder.stride_total
        with tn.no_grad():
            z_chi = self.selector.select(layer_outputs)
            if self.head_type == "enc":
                pooled = scdnet.pool_word_embeddings(
                    z_chi, transcript.boundaries, stride)
                if self.use_text_feature:
                    g = self.asr.predictor.outputs_for(transcript.tokens)
                    pooled = scdnet.fuse_text_feature(pooled, g, transcript)
            else:
                tok_pos = scdnet.token_frame_positions(
                    transcript.boundaries, transcript.token_to_word,
                    stride, z_chi.shape[0])
            chunk_probs = []
            for view in views:
                if self.head_type == "enc":
                    feats = tn.narrow(pooled, 0, view.ext_start,
                                      view.ext_end - view.ext_start)
                    probs = self.head(feats).data
                else:
                    s_sub, e_sub = scdnet.map_frame_boundary(
                        view.frame_start, view.frame_end, stride,
                        z_chi.shape[0])
                    if e_sub < s_sub:
                        raise ValueError("empty acoustic frame range for chunk")
                    z_slice = tn.narrow(z_chi, 0, s_sub, e_sub - s_sub + 1)
                    toks = transcript.tokens[view.tok_start:view.tok_end]
                    e_o = tn.constant(self.asr.predictor.embed.data[list(toks)])
                    pos_slice = tok_pos[view.tok_start:view.tok_end] - s_sub
                    p_tok = self.head(z_slice, e_o, pos_slice).data
                    t2w = transcript.token_to_word[view.tok_start:view.tok_end]
                    t2w = [w - view.ext_start for w in t2w]
                    probs = scdnet.token_to_word_probs(p_tok, t2w)
                chunk_probs.append((view, probs))
        merged = merge(chunk_probs)
        delays = []
        for view in views:
            for n in range(view.core_start, view.core_end):
                delays.append(decision_delay(view, n, spec))
        return merged, delays

    def infer_session(self, layer_outputs, transcript, spec):
        probs, delays = self.session_probs(layer_outputs, transcript, spec)
        decisions = scdnet.threshold_decisions(probs, self.threshold,
                                               suppress_final=True)
        return {
            "words": list(transcript.words),
            "p_word": [float(p) for p in probs],
            "decisions": [int(d) for d in decisions],
            "boundary_source": transcript.boundary_source,
            "decision_delay": [int(d) for d in delays],
        }
