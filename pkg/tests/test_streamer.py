import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scdkit.streamer import (ChunkSpec, decision_delay, merge,
                             oracle_boundaries_for_hypothesis, segment)
from scdkit.transducer import Transcript


def word_transcript(num_words, frames_per_word=4, tokens_per_word=1):
    tokens, token_to_word, boundaries = [], [], []
    cursor = 0
    for n in range(num_words):
        for _ in range(tokens_per_word):
            tokens.append(n % 5)
            token_to_word.append(n)
        boundaries.append((cursor, cursor + frames_per_word - 1))
        cursor += frames_per_word
    return Transcript(tokens=tokens, words=[f"w{n}" for n in range(num_words)],
                      token_to_word=token_to_word, boundaries=boundaries,
                      boundary_source="oracle-alignment")


def test_chunk_spec_validation():
    with pytest.raises(ValueError):
        ChunkSpec(n_c=0)
    with pytest.raises(ValueError):
        ChunkSpec(n_h=-1)


def test_segment_hand_case():
    tr = word_transcript(16)
    views = segment(tr, ChunkSpec(n_h=4, n_c=8, n_f=4))
    assert len(views) == 2
    v0, v1 = views
    assert (v0.core_start, v0.core_end) == (0, 8)
    assert (v0.ext_start, v0.ext_end) == (0, 12)      # no look-back at the edge
    assert (v1.core_start, v1.core_end) == (8, 16)
    assert (v1.ext_start, v1.ext_end) == (4, 16)      # no future at the edge
    assert v0.frame_start == 0 and v0.frame_end == 12 * 4 - 1
    assert v1.frame_start == 4 * 4 and v1.frame_end == 16 * 4 - 1


def test_segment_token_ranges_cover_extended_words():
    tr = word_transcript(10, tokens_per_word=2)
    views = segment(tr, ChunkSpec(n_h=1, n_c=4, n_f=1))
    for v in views:
        assert v.tok_start == v.ext_start * 2
        assert v.tok_end == v.ext_end * 2


def test_segment_empty_transcript():
    assert segment(word_transcript(0), ChunkSpec()) == []


@settings(max_examples=100, deadline=None)
@given(num_words=st.integers(1, 40), n_h=st.integers(0, 5),
       n_c=st.integers(1, 9), n_f=st.integers(0, 5))
def test_segment_cores_tile_word_axis(num_words, n_h, n_c, n_f):
    views = segment(word_transcript(num_words), ChunkSpec(n_h, n_c, n_f))
    assert views[0].core_start == 0
    assert views[-1].core_end == num_words
    for a, b in zip(views, views[1:]):
        assert b.core_start == a.core_end
    for v in views:
        assert v.ext_start == max(0, v.core_start - n_h)
        assert v.ext_end == min(num_words, v.core_end + n_f)


def test_merge_takes_core_values_only():
    tr = word_transcript(16)
    views = segment(tr, ChunkSpec(n_h=4, n_c=8, n_f=4))
    chunks = []
    for k, v in enumerate(views):
        probs = np.full(v.ext_end - v.ext_start, 0.1 * (k + 1))
        chunks.append((v, probs))
    out = merge(chunks)
    np.testing.assert_allclose(out[:8], 0.1)
    np.testing.assert_allclose(out[8:], 0.2)


def test_merge_detects_length_mismatch_and_gaps():
    tr = word_transcript(8)
    (v,) = segment(tr, ChunkSpec(n_h=0, n_c=8, n_f=0))
    with pytest.raises(ValueError):
        merge([(v, np.zeros(5))])
    v_short = segment(word_transcript(8), ChunkSpec(n_h=0, n_c=4, n_f=0))[1]
    with pytest.raises(ValueError):
        merge([(v_short, np.zeros(4))])   # words 0..3 never covered
    assert merge([]).shape == (0,)


def test_decision_delay_includes_future_context():
    spec = ChunkSpec(n_h=2, n_c=4, n_f=3)
    (v,) = segment(word_transcript(4), spec)
    # first word of the core waits for the rest of the core plus the future
    assert decision_delay(v, 0, spec) == 3 + 3
    assert decision_delay(v, 3, spec) == 3
    assert all(decision_delay(v, n, spec) >= spec.n_f for n in range(4))


def test_oracle_boundaries_inherited_on_match_and_substitution():
    ref_words = ["a", "b", "c"]
    ref_bounds = [(0, 4), (5, 9), (10, 14)]
    hyp = Transcript(tokens=[0, 1, 2], words=["a", "x", "c"],
                     token_to_word=[0, 1, 2],
                     boundaries=[(0, 1), (2, 3), (4, 5)],
                     boundary_source="emission")
    out = oracle_boundaries_for_hypothesis(ref_words, ref_bounds, hyp)
    assert out == [(0, 4), (5, 9), (10, 14)]


def test_oracle_boundaries_insertion_keeps_emission_and_repairs_order():
    ref_words = ["a", "b"]
    ref_bounds = [(0, 4), (5, 9)]
    hyp = Transcript(tokens=[0, 1, 2], words=["a", "zz", "b"],
                     token_to_word=[0, 1, 2],
                     boundaries=[(0, 1), (2, 3), (4, 5)],
                     boundary_source="emission")
    out = oracle_boundaries_for_hypothesis(ref_words, ref_bounds, hyp)
    assert out[0] == (0, 4)
    prev_e = -1
    for s, e in out:
        assert s == prev_e + 1 or s > prev_e
        assert s <= e
        prev_e = e
    assert out[2][0] > out[1][1]
