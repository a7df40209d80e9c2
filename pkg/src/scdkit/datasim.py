"""Synthetic speaker-turn corpus generator.

Frames carry a speaker embedding plus a token signature (projected to the
feature dim with Gaussian noise), so the content is both speaker- and
token-discriminative without any real audio front end. Oracle word
boundaries tile the frame axis exactly; speaker-change labels mark the
last word / token of every utterance in a concatenated session.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .transducer import Transcript


@dataclass
class Vocab:
    """Toy sentence-piece style vocabulary.

    Token ids < num_pieces carry the word-start marker; ids in
    [num_pieces, 2*num_pieces) are continuation pieces. Every word maps to
    a unique 1..max_tokens_per_word token tuple.
    """

    words: list
    word_tokens: list
    num_pieces: int

    @property
    def num_tokens(self):
        return 2 * self.num_pieces

    @property
    def blank_id(self):
        return self.num_tokens

    def is_word_start(self, token_id):
        return token_id < self.num_pieces

    def tokens_to_words(self, tokens):
        """Group a token sequence into words at word-start tokens.

        Unknown token tuples become unique placeholder strings so that
        downstream WER counts them as errors.
        """
        lookup = {tuple(t): w for w, t in zip(self.words, self.word_tokens)}
        groups = []
        for tok in tokens:
            if self.is_word_start(tok) or not groups:
                groups.append([tok])
            else:
                groups[-1].append(tok)
        words = []
        token_to_word = []
        for n, grp in enumerate(groups):
            words.append(lookup.get(tuple(grp), "<unk:" + "-".join(map(str, grp)) + ">"))
            token_to_word.extend([n] * len(grp))
        return words, token_to_word

    def to_dict(self):
        return {"words": self.words,
                "word_tokens": [list(t) for t in self.word_tokens],
                "num_pieces": self.num_pieces}

    @classmethod
    def from_dict(cls, d):
        return cls(words=list(d["words"]),
                   word_tokens=[tuple(t) for t in d["word_tokens"]],
                   num_pieces=int(d["num_pieces"]))


def build_vocab(rng, vocab_size, num_pieces, max_tokens_per_word=3):
    words = [f"w{i:03d}" for i in range(vocab_size)]
    seen = set()
    word_tokens = []
    for _ in range(vocab_size):
        while True:
            length = int(rng.integers(1, max_tokens_per_word + 1))
            toks = [int(rng.integers(0, num_pieces))]
            toks += [int(rng.integers(num_pieces, 2 * num_pieces))
                     for _ in range(length - 1)]
            key = tuple(toks)
            if key not in seen:
                seen.add(key)
                word_tokens.append(key)
                break
    return Vocab(words=words, word_tokens=word_tokens, num_pieces=num_pieces)


@dataclass
class SpeakerModel:
    speaker_id: int
    embedding: np.ndarray


@dataclass
class SimConfig:
    vocab_size: int = 40
    num_pieces: int = 15
    words_per_utterance: tuple = (3, 8)
    tokens_per_word: tuple = (1, 3)
    frames_per_token: tuple = (2, 4)
    feature_dim: int = 32
    speaker_dim: int = 8
    token_sig_dim: int = 16
    noise_scale: float = 0.1
    speaker_scale: float = 4.0   # speaker-embedding gain in raw frames
    m_range: tuple = (2, 4)
    speaker_pool: int = 64
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.words_per_utterance, self.tokens_per_word,
                       self.frames_per_token, self.m_range):
            if lo > hi or lo < 1:
                raise ValueError("empty or invalid range in SimConfig")
        if self.feature_dim < self.speaker_dim:
            raise ValueError("feature_dim must be >= speaker_dim")
        if self.speaker_scale <= 0:
            raise ValueError("speaker_scale must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("words_per_utterance", "tokens_per_word",
                    "frames_per_token", "m_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class World:
    """Deterministic shared state: vocabulary, speakers, token signatures,
    and the fixed projection matrix. Fully derived from cfg.seed."""

    def __init__(self, cfg):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA5]))
        self.vocab = build_vocab(rng, cfg.vocab_size, cfg.num_pieces,
                                 max_tokens_per_word=cfg.tokens_per_word[1])
        self.speakers = []
        seen = set()
        while len(self.speakers) < cfg.speaker_pool:
            emb = rng.normal(0.0, 1.0, cfg.speaker_dim)
            key = emb.tobytes()
            if key in seen:
                continue
            seen.add(key)
            self.speakers.append(SpeakerModel(len(self.speakers), emb))
        self.token_sigs = rng.normal(0.0, 1.0,
                                     (self.vocab.num_tokens, cfg.token_sig_dim))
        raw_dim = cfg.speaker_dim + cfg.token_sig_dim
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(raw_dim),
                                     (raw_dim, cfg.feature_dim))


@dataclass
class UtteranceFragment:
    frames: np.ndarray
    words: list
    tokens: list
    token_to_word: list
    boundaries: list
    speaker_id: int


@dataclass
class SimSession:
    session_id: str
    frames: np.ndarray
    transcript: Transcript
    y_word: list
    y_token: list
    speaker_ids: list        # per utterance
    utterance_word_counts: list

    def to_record(self):
        return {
            "session_id": self.session_id,
            "num_frames": int(self.frames.shape[0]),
            "feature_dim": int(self.frames.shape[1]),
            "transcript": self.transcript.to_record(),
            "y_word": list(map(int, self.y_word)),
            "y_token": list(map(int, self.y_token)),
            "speaker_ids": list(map(int, self.speaker_ids)),
            "utterance_word_counts": list(map(int, self.utterance_word_counts)),
        }


def gen_utterance(speaker, world, rng):
    """One single-speaker utterance with exact per-word frame boundaries."""
    cfg = world.cfg
    vocab = world.vocab
    num_words = int(rng.integers(cfg.words_per_utterance[0],
                                 cfg.words_per_utterance[1] + 1))
    word_ids = rng.integers(0, cfg.vocab_size, num_words)
    words, tokens, token_to_word = [], [], []
    frames_rows = []
    boundaries = []
    cursor = 0
    for n, wid in enumerate(word_ids):
        word_start = cursor
        toks = vocab.word_tokens[int(wid)]
        words.append(vocab.words[int(wid)])
        for tok in toks:
            tokens.append(tok)
            token_to_word.append(n)
            n_frames = int(rng.integers(cfg.frames_per_token[0],
                                        cfg.frames_per_token[1] + 1))
            raw = np.concatenate([
                np.tile(cfg.speaker_scale * speaker.embedding, (n_frames, 1)),
                np.tile(world.token_sigs[tok], (n_frames, 1)),
            ], axis=1)
            raw = raw + cfg.noise_scale * rng.normal(0.0, 1.0, raw.shape)
            frames_rows.append(raw @ world.projection)
            cursor += n_frames
        boundaries.append((word_start, cursor - 1))
    return UtteranceFragment(frames=np.concatenate(frames_rows, axis=0),
                             words=words, tokens=tokens,
                             token_to_word=token_to_word,
                             boundaries=boundaries, speaker_id=speaker.speaker_id)


def gen_session(world, rng, session_id, num_utterances=None):
    """Concatenate utterances from adjacent-distinct speakers with labels."""
    cfg = world.cfg
    if num_utterances is None:
        num_utterances = int(rng.integers(cfg.m_range[0], cfg.m_range[1] + 1))
    if cfg.speaker_pool < max(2, num_utterances if num_utterances > 1 else 1):
        raise ValueError("speaker pool too small for requested session")
    frags = []
    prev_spk = -1
    for _ in range(num_utterances):
        while True:
            spk = int(rng.integers(0, cfg.speaker_pool))
            if spk != prev_spk:
                break
        frags.append(gen_utterance(world.speakers[spk], world, rng))
        prev_spk = spk

    frames = np.concatenate([f.frames for f in frags], axis=0)
    words, tokens, token_to_word, boundaries = [], [], [], []
    y_word, y_token = [], []
    frame_off = 0
    word_off = 0
    for f in frags:
        words.extend(f.words)
        tokens.extend(f.tokens)
        token_to_word.extend(w + word_off for w in f.token_to_word)
        boundaries.extend((s + frame_off, e + frame_off) for s, e in f.boundaries)
        y_word.extend([0] * (len(f.words) - 1) + [1])
        y_token.extend([0] * (len(f.tokens) - 1) + [1])
        frame_off += f.frames.shape[0]
        word_off += len(f.words)
    transcript = Transcript(tokens=tokens, words=words,
                            token_to_word=token_to_word, boundaries=boundaries,
                            boundary_source="oracle-alignment")
    return SimSession(session_id=session_id, frames=frames, transcript=transcript,
                      y_word=y_word, y_token=y_token,
                      speaker_ids=[f.speaker_id for f in frags],
                      utterance_word_counts=[len(f.words) for f in frags])


def session_rng(cfg, split, index):
    """Independent per-session stream from (seed, split, index)."""
    split_code = int(hashlib.sha256(split.encode()).hexdigest()[:8], 16)
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, split_code, index]))


def generate_corpus(cfg, split, num_sessions, single_speaker=False):
    """Yield SimSession objects; single_speaker=True gives the ASR corpus (M=1)."""
    world = World(cfg)
    for i in range(num_sessions):
        rng = session_rng(cfg, split, i)
        m = 1 if single_speaker else None
        yield gen_session(world, rng, session_id=f"{split}-{i:05d}",
                          num_utterances=m)


# ---------------------------------------------------------------------------
# on-disk corpus format
# ---------------------------------------------------------------------------

def write_corpus(out_dir, cfg, split, num_sessions, single_speaker=False):
    """Write manifest.json + per-session feature blobs and transcripts.

    Layout: manifest.json at the root; sessions/<id>.f64 holds row-major
    little-endian float64 frames; sessions/<id>.json the transcript record.
    """
    out_dir = Path(out_dir)
    (out_dir / "sessions").mkdir(parents=True, exist_ok=True)
    world = World(cfg)
    entries = []
    for sess in generate_corpus(cfg, split, num_sessions,
                                single_speaker=single_speaker):
        blob = np.ascontiguousarray(sess.frames, dtype="<f8").tobytes()
        (out_dir / "sessions" / f"{sess.session_id}.f64").write_bytes(blob)
        rec = sess.to_record()
        with open(out_dir / "sessions" / f"{sess.session_id}.json", "w") as f:
            json.dump(rec, f)
        entries.append({"session_id": sess.session_id,
                        "num_frames": rec["num_frames"],
                        "sha256": hashlib.sha256(blob).hexdigest()})
    manifest = {
        "format": "scdkit-corpus-v1",
        "config": cfg.to_dict(),
        "split": split,
        "single_speaker": single_speaker,
        "vocab": world.vocab.to_dict(),
        "sessions": entries,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def manifest_digest(corpus_dir):
    data = Path(Path(corpus_dir) / "manifest.json").read_bytes()
    return hashlib.sha256(data).hexdigest()


class CorpusReader:
    def __init__(self, corpus_dir):
        self.dir = Path(corpus_dir)
        with open(self.dir / "manifest.json") as f:
            self.manifest = json.load(f)
        self.cfg = SimConfig.from_dict(self.manifest["config"])
        self.vocab = Vocab.from_dict(self.manifest["vocab"])
        self.session_ids = [e["session_id"] for e in self.manifest["sessions"]]

    def __len__(self):
        return len(self.session_ids)

    def load(self, session_id):
        with open(self.dir / "sessions" / f"{session_id}.json") as f:
            rec = json.load(f)
        frames = np.frombuffer(
            (self.dir / "sessions" / f"{session_id}.f64").read_bytes(),
            dtype="<f8").reshape(rec["num_frames"], rec["feature_dim"]).copy()
        return SimSession(
            session_id=session_id, frames=frames,
            transcript=Transcript.from_record(rec["transcript"]),
            y_word=rec["y_word"], y_token=rec["y_token"],
            speaker_ids=rec["speaker_ids"],
            utterance_word_counts=rec["utterance_word_counts"])

    def __iter__(self):
        for sid in self.session_ids:
            yield self.load(sid)
