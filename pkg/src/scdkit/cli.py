"""Command-line entry point: simulate | train-asr | train-scd | infer |
score | sweep-context. A JSON config file plus repeated --set dotted
overrides configure every run; flags win over the file."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment
from .datasim import CorpusReader
from .streamer import ChunkSpec


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _load_cfg(args):
    return experiment.load_config(args.config, _parse_overrides(args.set))


def cmd_simulate(args):
    cfg = _load_cfg(args)
    paths = experiment.simulate_all(cfg, args.out)
    print(json.dumps({"corpora": {k: str(v) for k, v in paths.items()}}, indent=1))


def cmd_train_asr(args):
    cfg = _load_cfg(args)
    _, records = experiment.train_asr(cfg, args.corpus, args.out, args.log)
    print(json.dumps({"checkpoint": args.out, "steps": len(records),
                      "final_loss": records[-1]["loss"] if records else None}))


def cmd_train_scd(args):
    cfg = _load_cfg(args)
    _, _, records = experiment.train_scd(cfg, args.corpus, args.asr, args.head,
                                         args.out, args.log)
    print(json.dumps({"checkpoint": args.out, "head": args.head,
                      "steps": len(records),
                      "final_loss": records[-1]["loss"] if records else None}))


def _chunk_spec(cfg, args):
    spec = cfg.chunk
    n_h = spec.n_h if args.n_h is None else args.n_h
    n_c = spec.n_c if args.n_c is None else args.n_c
    n_f = spec.n_f if args.n_f is None else args.n_f
    return ChunkSpec(n_h=n_h, n_c=n_c, n_f=n_f)


def cmd_infer(args):
    asr, _ = experiment.load_asr(args.asr)
    selector, head, head_type, cfg = experiment.load_scd(args.scd)
    corpus = list(CorpusReader(args.corpus))
    if args.limit:
        corpus = corpus[:args.limit]
    records = experiment.infer_corpus(
        asr, selector, head, head_type, corpus, _chunk_spec(cfg, args), cfg,
        boundary_source=args.boundary_source,
        emission_delay=args.emission_delay)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as f:
        json.dump({"head_type": head_type,
                   "boundary_source": args.boundary_source,
                   "records": list(records.values())}, f, indent=1)
    print(json.dumps({"sessions": len(records), "out": args.out}))


def cmd_score(args):
    with open(args.hyp) as f:
        payload = json.load(f)
    records = {r["session_id"]: r for r in payload["records"]}
    corpus = [s for s in CorpusReader(args.ref_corpus)
              if s.session_id in records]
    if len(corpus) != len(records):
        missing = set(records) - {s.session_id for s in corpus}
        raise KeyError(f"hypothesis sessions missing from corpus: {sorted(missing)[:5]}")
    result = experiment.score_records(corpus, records)
    report = json.dumps(result, indent=1)
    if args.out:
        Path(args.out).write_text(report)
    print(json.dumps(result["aggregate"], indent=1))


def cmd_sweep_context(args):
    asr, _ = experiment.load_asr(args.asr)
    heads = {}
    if args.scd_enc:
        sel, head, _, cfg = experiment.load_scd(args.scd_enc)
        heads["enc"] = (sel, head, args.enc_boundary_source)
    if args.scd_dec:
        sel, head, _, cfg = experiment.load_scd(args.scd_dec)
        heads["dec"] = (sel, head, "emission")
    if not heads:
        raise ValueError("sweep-context needs at least one SCD checkpoint")
    corpus = list(CorpusReader(args.corpus))
    if args.limit:
        corpus = corpus[:args.limit]
    rows = experiment.sweep_context(asr, heads, corpus, cfg, total=args.total)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=1))
    header = ["context"] + [f"f1_{h}" for h in heads]
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(round(row[c], 4)) if isinstance(row[c], float)
                        else str(row[c]) for c in header))


def build_parser():
    parser = argparse.ArgumentParser(prog="scdkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. sim.seed=3")

    p = sub.add_parser("simulate", help="write the four standard corpora")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train-asr")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path prefix")
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train_asr)

    p = sub.add_parser("train-scd")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--asr", required=True, help="ASR checkpoint prefix")
    p.add_argument("--head", required=True, choices=["enc", "dec"])
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train_scd)

    p = sub.add_parser("infer")
    p.add_argument("--asr", required=True)
    p.add_argument("--scd", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-h", type=int, default=None)
    p.add_argument("--n-c", type=int, default=None)
    p.add_argument("--n-f", type=int, default=None)
    p.add_argument("--boundary-source", default="emission",
                   choices=["emission", "oracle"])
    p.add_argument("--emission-delay", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("score")
    p.add_argument("--ref-corpus", required=True)
    p.add_argument("--hyp", required=True, help="records JSON from infer")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("sweep-context")
    p.add_argument("--asr", required=True)
    p.add_argument("--scd-enc", default=None)
    p.add_argument("--scd-dec", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--total", type=int, default=16)
    p.add_argument("--enc-boundary-source", default="oracle",
                   choices=["emission", "oracle"])
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sweep_context)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
