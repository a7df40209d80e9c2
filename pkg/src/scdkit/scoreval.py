"""Alignment-based evaluation: change-tag transcripts, Levenshtein
alignment, F1 at reference change-tag positions, and WER."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

SC_TAG = "<sc>"


@dataclass
class TaggedTranscript:
    items: list
    origin: str  # "reference" | "hypothesis"


@dataclass
class AlignmentResult:
    pairs: list  # (op, ref_item | None, hyp_item | None)
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0


def denote(words, change_decisions, origin="hypothesis"):
    """Insert a change tag immediately after every word whose decision is 1."""
    if len(words) != len(change_decisions):
        raise ValueError("words / decisions length mismatch")
    items = []
    for w, d in zip(words, change_decisions):
        items.append(w)
        if int(d) == 1:
            items.append(SC_TAG)
    return TaggedTranscript(items=items, origin=origin)


def _backtrace(dp, ref, hyp):
    """Unit-cost backtrace; ties broken match > substitute > delete > insert."""
    ops = []
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if (i > 0 and j > 0 and ref[i - 1] == hyp[j - 1]
                and dp[i - 1, j - 1] == dp[i, j]):
            ops.append(("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i - 1, j - 1] + 1 == dp[i, j]:
            ops.append(("substitute", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i - 1, j] + 1 == dp[i, j]:
            ops.append(("delete", i - 1, None))
            i = i - 1
        else:
            ops.append(("insert", None, j - 1))
            j = j - 1
    ops.reverse()
    return ops


def align_sequences(ref_items, hyp_items):
    """Levenshtein-align two symbol sequences; returns (distance, op list)."""
    table = {}
    for s in list(ref_items) + list(hyp_items):
        table.setdefault(s, len(table))
    ref = np.array([table[s] for s in ref_items], dtype=np.int64)
    hyp = np.array([table[s] for s in hyp_items], dtype=np.int64)
    dp = kernels.edit_dp(ref, hyp)
    return int(dp[len(ref), len(hyp)]), _backtrace(dp, ref, hyp)


def align(ref, hyp):
    """Align tagged transcripts; score change tags at reference positions."""
    _, ops = align_sequences(ref.items, hyp.items)
    pairs = []
    tp = fp = fn = 0
    for op, i, j in ops:
        r = ref.items[i] if i is not None else None
        h = hyp.items[j] if j is not None else None
        pairs.append((op, r, h))
        if r == SC_TAG and h == SC_TAG:
            tp += 1
        elif r == SC_TAG:
            fn += 1
        elif h == SC_TAG:
            fp += 1
    return AlignmentResult(pairs=pairs, tp=tp, fp=fp, fn=fn)


def wer(ref_words, hyp_words):
    """Word error rate (S+D+I over reference length) with an empty-ref guard."""
    if len(ref_words) == 0:
        return {"wer": None, "defined": False, "errors": len(hyp_words),
                "ref_len": 0}
    dist, ops = align_sequences(ref_words, hyp_words)
    counts = {"match": 0, "substitute": 0, "delete": 0, "insert": 0}
    for op, _, _ in ops:
        counts[op] += 1
    return {"wer": dist / len(ref_words), "defined": True, "errors": dist,
            "ref_len": len(ref_words), **counts}


def aggregate_scores(per_session):
    """Corpus-level precision/recall/F1 from per-session TP/FP/FN counts."""
    tp = sum(s["tp"] for s in per_session)
    fp = sum(s["fp"] for s in per_session)
    fn = sum(s["fn"] for s in per_session)
    agg = AlignmentResult(pairs=[], tp=tp, fp=fp, fn=fn)
    return {"tp": tp, "fp": fp, "fn": fn, "precision": agg.precision,
            "recall": agg.recall, "f1": agg.f1}
