"""Experiment orchestration: configuration, training loops, decoding and
corpus-level SCD evaluation. The CLI is a thin wrapper over this module."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

import numpy as np

from . import scdnet, scoreval, streamer
from . import tensor as tn
from .checkpoint import load_checkpoint, save_checkpoint
from .datasim import CorpusReader, SimConfig, Vocab, write_corpus
from .optim import AdamW
from .scdnet import FeatureSelector, ScdDecConfig, ScdEncConfig, ScdDecHead, ScdEncHead
from .streamer import ChunkSpec, ScdInferencer
from .transducer import EncoderConfig, Transcript, TransducerConfig, TransducerModel


def _from_dict(cls, d):
    """Build a dataclass from a dict, rejecting unknown keys."""
    if d is None:
        return cls()
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 4
    peak_lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.01
    seed: int = 0


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    embed_dim: int = 32
    pred_hidden: int = 64
    pred_layers: int = 1
    joint_dim: int = 64
    scd_enc: ScdEncConfig = field(default_factory=ScdEncConfig)
    scd_dec: ScdDecConfig = field(default_factory=ScdDecConfig)
    enc_selector_mode: str = "weighted-learned"
    enc_selector_layer: int = None
    dec_selector_mode: str = "weighted-learned"
    dec_selector_layer: int = None
    chunk: ChunkSpec = field(default_factory=ChunkSpec)
    focal_alpha: float = 0.8
    focal_gamma: float = 0.5
    threshold: float = 0.5
    asr_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        steps=1800, batch_size=4, peak_lr=2e-3, warmup_steps=200))
    scd_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        steps=6000, batch_size=8, peak_lr=3e-3, warmup_steps=300))
    asr_train_sessions: int = 4000
    asr_eval_sessions: int = 200
    scd_train_sessions: int = 8000
    scd_eval_sessions: int = 400
    max_symbols_per_frame: int = 4
    model_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError("focal alpha must lie in (0, 1)")
        if self.focal_gamma < 0.0:
            raise ValueError("focal gamma must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def transducer_config(self):
        return TransducerConfig(encoder=self.encoder, embed_dim=self.embed_dim,
                                pred_hidden=self.pred_hidden,
                                pred_layers=self.pred_layers,
                                joint_dim=self.joint_dim)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        nested = {"sim": SimConfig, "encoder": EncoderConfig,
                  "scd_enc": ScdEncConfig, "scd_dec": ScdDecConfig,
                  "chunk": ChunkSpec, "asr_train": TrainConfig,
                  "scd_train": TrainConfig}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, val in d.items():
            if key in nested and isinstance(val, dict):
                if key == "sim":
                    kwargs[key] = SimConfig.from_dict(val)
                else:
                    kwargs[key] = _from_dict(nested[key], val)
            else:
                kwargs[key] = val
        return cls(**kwargs)

    def apply_overrides(self, overrides):
        """Apply dotted key=value overrides (flags win over the config file)."""
        d = self.to_dict()
        for key, raw in overrides.items():
            parts = key.split(".")
            node = d
            for p in parts[:-1]:
                if p not in node:
                    raise ValueError(f"unknown config key: {key}")
                node = node[p]
            leaf = parts[-1]
            if leaf not in node:
                raise ValueError(f"unknown config key: {key}")
            old = node[leaf]
            if isinstance(old, bool):
                val = raw in ("1", "true", "True", "yes")
            elif isinstance(old, int) and old is not None:
                val = int(raw)
            elif isinstance(old, float):
                val = float(raw)
            elif isinstance(old, (list, tuple)):
                val = json.loads(raw)
            else:
                val = raw if old is not None or not _looks_numeric(raw) else json.loads(raw)
            node[leaf] = val
        return ExperimentConfig.from_dict(d)


def _looks_numeric(s):
    try:
        json.loads(s)
        return True
    except (ValueError, TypeError):
        return False


def load_config(path=None, overrides=None):
    cfg = ExperimentConfig() if path is None else ExperimentConfig.from_dict(
        json.loads(Path(path).read_text()))
    if overrides:
        cfg = cfg.apply_overrides(overrides)
    return cfg


# ---------------------------------------------------------------------------
# corpus simulation
# ---------------------------------------------------------------------------

STANDARD_SPLITS = (
    ("asr-train", True, "asr_train_sessions"),
    ("asr-eval", True, "asr_eval_sessions"),
    ("scd-train", False, "scd_train_sessions"),
    ("scd-eval", False, "scd_eval_sessions"),
)


def simulate_all(cfg, out_dir):
    """Write the four standard corpora under out_dir; returns their paths."""
    out_dir = Path(out_dir)
    paths = {}
    for split, single, size_attr in STANDARD_SPLITS:
        path = out_dir / split
        write_corpus(path, cfg.sim, split, getattr(cfg, size_attr),
                     single_speaker=single)
        paths[split] = path
    return paths


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class StepLogger:
    """Append-only JSONL training log, one record per step."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def log(self, **rec):
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec) + "\n")


def build_asr(cfg, vocab):
    return TransducerModel(cfg.transducer_config(), vocab, seed=cfg.model_seed)


def train_asr(cfg, corpus_dir, out_prefix, log_path=None):
    """Train the transducer on the single-speaker corpus; save a checkpoint."""
    corpus = CorpusReader(corpus_dir)
    model = build_asr(cfg, corpus.vocab)
    params = model.params()
    tc = cfg.asr_train
    opt = AdamW(peak_lr=tc.peak_lr, warmup_steps=tc.warmup_steps,
                total_steps=tc.steps, weight_decay=tc.weight_decay)
    rng = np.random.default_rng(tc.seed)
    order = rng.permutation(len(corpus))
    logger = StepLogger(log_path)
    cursor = 0
    t0 = time.time()
    last_loss = None
    for step in range(tc.steps):
        opt.zero_grad(params)
        batch_loss = None
        for _ in range(tc.batch_size):
            if cursor >= len(order):
                order = rng.permutation(len(corpus))
                cursor = 0
            sess = corpus.load(corpus.session_ids[order[cursor]])
            cursor += 1
            loss = model.loss(sess.frames, sess.transcript.tokens)
            batch_loss = loss if batch_loss is None else tn.add(batch_loss, loss)
        batch_loss = tn.mul_scalar(batch_loss, 1.0 / tc.batch_size)
        if not np.isfinite(batch_loss.data):
            raise RuntimeError(
                f"ASR training diverged at step {step}: loss={batch_loss.data}")
        batch_loss.backward()
        opt.step(params)
        last_loss = float(batch_loss.data)
        logger.log(step=step, loss=last_loss, lr=opt.current_lr())
    save_checkpoint(out_prefix, model.state_arrays(), metadata={
        "kind": "asr",
        "config": cfg.to_dict(),
        "vocab": corpus.vocab.to_dict(),
        "final_loss": last_loss,
        "train_seconds": time.time() - t0,
    })
    return model, logger.records


def load_asr(prefix):
    arrays, meta = load_checkpoint(prefix)
    if meta.get("kind") != "asr":
        raise ValueError("checkpoint is not an ASR checkpoint")
    cfg = ExperimentConfig.from_dict(meta["config"])
    vocab = Vocab.from_dict(meta["vocab"])
    model = build_asr(cfg, vocab)
    model.load_state(arrays)
    return model, cfg


def build_scd(cfg, head_type, seed=None):
    """Selector + head for one SCD variant."""
    seed = cfg.model_seed + 1 if seed is None else seed
    num_layers = cfg.encoder.num_layers
    if head_type == "enc":
        selector = FeatureSelector(cfg.enc_selector_mode, num_layers,
                                   cfg.enc_selector_layer)
        in_dim = cfg.encoder.dim
        if cfg.scd_enc.use_text_feature:
            in_dim += cfg.pred_hidden
        head = ScdEncHead(cfg.scd_enc, in_dim, seed=seed)
    elif head_type == "dec":
        selector = FeatureSelector(cfg.dec_selector_mode, num_layers,
                                   cfg.dec_selector_layer)
        head = ScdDecHead(cfg.scd_dec, cfg.encoder.dim, cfg.embed_dim,
                          seed=seed + 1)
    else:
        raise ValueError(f"unknown head type {head_type!r}")
    return selector, head


def scd_params(selector, head):
    return {**selector.params("selector"), **head.params("head")}


def scd_session_loss(asr, selector, head, head_type, sess, cfg, rng=None):
    """Focal loss of one training session against its oracle labels.

    The ASR is frozen: its activations are produced with the tape disabled,
    so gradients stop at the selector and head inputs. When an rng is given,
    the decoder head's token position anchors get a random forward shift of
    up to scd_dec.anchor_jitter subsampled frames (train-time robustness to
    the emission-anchor lag seen at inference).
    """
    with tn.no_grad():
        layer_outputs = asr.encode(sess.frames, mask="streaming")
        if head_type == "enc" and cfg.scd_enc.use_text_feature:
            g_frozen = tn.constant(
                asr.predictor.outputs_for(sess.transcript.tokens).data)
    stride = asr.cfg.encoder.stride_total
    z_chi = selector.select(layer_outputs)
    if head_type == "enc":
        pooled = scdnet.pool_word_embeddings(z_chi, sess.transcript.boundaries,
                                             stride)
        if cfg.scd_enc.use_text_feature:
            pooled = scdnet.fuse_text_feature(pooled, g_frozen, sess.transcript)
        probs = head(pooled)
        labels = sess.y_word
    else:
        e_o = tn.constant(asr.predictor.embed.data[list(sess.transcript.tokens)])
        tok_pos = scdnet.token_frame_positions(
            sess.transcript.boundaries, sess.transcript.token_to_word,
            stride, z_chi.shape[0])
        jitter = cfg.scd_dec.anchor_jitter
        if rng is not None and jitter > 0:
            tok_pos = np.clip(
                tok_pos + rng.integers(0, jitter + 1, size=len(tok_pos)),
                0, z_chi.shape[0] - 1)
        probs = head(z_chi, e_o, tok_pos)
        labels = sess.y_token
    return scdnet.focal_loss(probs, labels, cfg.focal_alpha, cfg.focal_gamma)


def train_scd(cfg, corpus_dir, asr_prefix, head_type, out_prefix, log_path=None):
    corpus = CorpusReader(corpus_dir)
    asr, _ = load_asr(asr_prefix)
    frozen_before = {k: v.copy() for k, v in asr.state_arrays().items()}
    selector, head = build_scd(cfg, head_type)
    params = scd_params(selector, head)
    tc = cfg.scd_train
    opt = AdamW(peak_lr=tc.peak_lr, warmup_steps=tc.warmup_steps,
                total_steps=tc.steps, weight_decay=tc.weight_decay)
    rng = np.random.default_rng(tc.seed + (0 if head_type == "enc" else 1))
    order = rng.permutation(len(corpus))
    cursor = 0
    logger = StepLogger(log_path)
    last_loss = None
    for step in range(tc.steps):
        opt.zero_grad(params)
        batch_loss = None
        for _ in range(tc.batch_size):
            if cursor >= len(order):
                order = rng.permutation(len(corpus))
                cursor = 0
            sess = corpus.load(corpus.session_ids[order[cursor]])
            cursor += 1
            loss = scd_session_loss(asr, selector, head, head_type, sess, cfg,
                                    rng=rng)
            batch_loss = loss if batch_loss is None else tn.add(batch_loss, loss)
        batch_loss = tn.mul_scalar(batch_loss, 1.0 / tc.batch_size)
        if not np.isfinite(batch_loss.data):
            raise RuntimeError(
                f"SCD training diverged at step {step}: loss={batch_loss.data}")
        batch_loss.backward()
        opt.step(params)
        last_loss = float(batch_loss.data)
        logger.log(step=step, loss=last_loss, lr=opt.current_lr())
    after = asr.state_arrays()
    for name, before in frozen_before.items():
        if not np.array_equal(before, after[name]):
            raise RuntimeError(f"frozen ASR parameter changed: {name}")
    save_checkpoint(out_prefix, {k: p.data.copy() for k, p in params.items()},
                    metadata={
                        "kind": "scd",
                        "head_type": head_type,
                        "selector_mode": selector.mode,
                        "selector_layer": selector.layer_index,
                        "config": cfg.to_dict(),
                        "final_loss": last_loss,
                    })
    return selector, head, logger.records


def load_scd(prefix, cfg=None):
    arrays, meta = load_checkpoint(prefix)
    if meta.get("kind") != "scd":
        raise ValueError("checkpoint is not an SCD checkpoint")
    cfg = cfg or ExperimentConfig.from_dict(meta["config"])
    head_type = meta["head_type"]
    selector, head = build_scd(cfg, head_type)
    params = scd_params(selector, head)
    for name, p in params.items():
        p.data[...] = arrays[name]
    return selector, head, head_type, cfg


# ---------------------------------------------------------------------------
# decoding / evaluation
# ---------------------------------------------------------------------------

class DecodeCache:
    """Per-session layer outputs and greedy transcripts, computed once."""

    def __init__(self, asr, max_symbols_per_frame=4):
        self.asr = asr
        self.max_symbols = max_symbols_per_frame
        self._store = {}

    def get(self, sess):
        hit = self._store.get(sess.session_id)
        if hit is None:
            with tn.no_grad():
                layer_outputs = self.asr.encode(sess.frames, mask="streaming")
            transcript = self.asr.greedy_decode(
                layer_outputs, sess.frames.shape[0],
                max_symbols_per_frame=self.max_symbols)
            hit = (layer_outputs, transcript)
            self._store[sess.session_id] = hit
        return hit


def evaluate_asr(asr, corpus, limit=None, max_symbols_per_frame=4):
    """Corpus WER and exact-token-match rate on single-speaker utterances."""
    total_err = 0
    total_ref = 0
    exact = 0
    count = 0
    for sess in corpus:
        if limit is not None and count >= limit:
            break
        count += 1
        with tn.no_grad():
            lo = asr.encode(sess.frames, mask="streaming")
        hyp = asr.greedy_decode(lo, sess.frames.shape[0],
                                max_symbols_per_frame=max_symbols_per_frame)
        res = scoreval.wer(sess.transcript.words, hyp.words)
        total_err += res["errors"]
        total_ref += res["ref_len"]
        if list(hyp.tokens) == list(sess.transcript.tokens):
            exact += 1
    return {"wer": total_err / total_ref if total_ref else None,
            "token_exact_rate": exact / count if count else None,
            "sessions": count}


def transcript_with_boundaries(asr, sess, transcript, boundary_source,
                               emission_delay=0):
    """Return a transcript variant with the requested boundary source."""
    stride = asr.cfg.encoder.stride_total
    t_sub = max(1, asr.conv.output_length(sess.frames.shape[0]))
    if emission_delay and transcript.emission_frames is not None:
        transcript = asr._assemble_transcript(
            list(transcript.tokens), list(transcript.emission_frames),
            t_sub, sess.frames.shape[0], emission_delay)
    if boundary_source == "emission":
        return transcript
    if boundary_source == "oracle":
        bounds = streamer.oracle_boundaries_for_hypothesis(
            sess.transcript.words, sess.transcript.boundaries, transcript)
        return Transcript(tokens=list(transcript.tokens),
                          words=list(transcript.words),
                          token_to_word=list(transcript.token_to_word),
                          boundaries=bounds,
                          boundary_source="oracle-alignment",
                          emission_frames=transcript.emission_frames)
    raise ValueError(f"unknown boundary source {boundary_source!r}")


def infer_corpus(asr, selector, head, head_type, corpus, chunk_spec, cfg,
                 boundary_source="emission", emission_delay=0, limit=None,
                 decode_cache=None):
    """Chunk-wise SCD decisions for every session; returns records keyed by id."""
    cache = decode_cache or DecodeCache(asr, cfg.max_symbols_per_frame)
    inferencer = ScdInferencer(asr, selector, head, head_type,
                               use_text_feature=(head_type == "enc"
                                                 and cfg.scd_enc.use_text_feature),
                               threshold=cfg.threshold)
    records = {}
    count = 0
    for sess in corpus:
        if limit is not None and count >= limit:
            break
        count += 1
        layer_outputs, transcript = cache.get(sess)
        transcript = transcript_with_boundaries(asr, sess, transcript,
                                                boundary_source, emission_delay)
        rec = inferencer.infer_session(layer_outputs, transcript, chunk_spec)
        rec["session_id"] = sess.session_id
        records[sess.session_id] = rec
    return records


def score_records(corpus, records):
    """Align denoted reference and hypothesis transcripts, session by session."""
    per_session = []
    for sess in corpus:
        if sess.session_id not in records:
            raise KeyError(f"no hypothesis record for session {sess.session_id}")
        rec = records[sess.session_id]
        ref_dec = list(sess.y_word)
        if ref_dec:
            ref_dec[-1] = 0  # session-final change has nothing to its right
        ref = scoreval.denote(sess.transcript.words, ref_dec, origin="reference")
        hyp = scoreval.denote(rec["words"], rec["decisions"], origin="hypothesis")
        res = scoreval.align(ref, hyp)
        per_session.append({"session_id": sess.session_id, "tp": res.tp,
                            "fp": res.fp, "fn": res.fn,
                            "precision": res.precision, "recall": res.recall,
                            "f1": res.f1})
    agg = scoreval.aggregate_scores(per_session)
    return {"per_session": per_session, "aggregate": agg}


def sweep_context(asr, heads, corpus_sessions, cfg, total=16,
                  context_values=(0, 1, 2, 3, 4), decode_cache=None):
    """F1 vs symmetric context size under n_h + n_c + n_f = total.

    heads: dict head_type -> (selector, head, boundary_source).
    """
    cache = decode_cache or DecodeCache(asr, cfg.max_symbols_per_frame)
    rows = []
    for ctx in context_values:
        spec = ChunkSpec(n_h=ctx, n_c=total - 2 * ctx, n_f=ctx)
        row = {"context": ctx, "n_h": spec.n_h, "n_c": spec.n_c, "n_f": spec.n_f}
        for head_type, (selector, head, source) in heads.items():
            records = infer_corpus(asr, selector, head, head_type,
                                   corpus_sessions, spec, cfg,
                                   boundary_source=source, decode_cache=cache)
            result = score_records(corpus_sessions, records)
            row[f"f1_{head_type}"] = result["aggregate"]["f1"]
        rows.append(row)
    return rows
