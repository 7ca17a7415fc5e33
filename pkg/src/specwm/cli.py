"""Command line entry point: ``specwm {gen,detect,bench,verify,nogo}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import harness, nogo, verify
from .detect import score_sequence
from .dist import format_dist
from .gen import (
    DEFAULT_WINDOW,
    CodeHistory,
    Mode,
    TableModel,
    generate_basic,
    generate_two_reweight,
    generate_vsps,
    generate_vuw,
)
from .harness import BenchConfig, Method, ToyModelSpec
from .reweight import Scheme

DEFAULT_KEY_HEX = BenchConfig().key.hex()


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="master random seed")
    p.add_argument("--config", default=default, help="file of 'key = value' lines; flags override it")
    p.add_argument("--out", default=default, help="output directory")
    return p


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vocab", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--epsilon", type=float, help="draft divergence in [0, 1]")
    p.add_argument("--model-seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specwm", parents=[_global_flags(False)], description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    g = sub.add_parser("gen", parents=[common], help="generate one sequence and print its tokens")
    g.add_argument("--model", help="target model file (header 'n m', then one distribution per line)")
    g.add_argument("--draft", help="draft model file (defaults to a synthesized draft)")
    g.add_argument("--method", choices=[m.value for m in Method], default="mws")
    g.add_argument("--scheme", choices=["gumbel", "gamma"], default="gumbel")
    g.add_argument("--key", default=DEFAULT_KEY_HEX, help="watermark key as hex")
    g.add_argument("-K", "--K", dest="K", type=int, default=4)
    g.add_argument("--tokens", type=int, default=50)
    g.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    g.add_argument("--prompt", default="0", help="space-separated prompt token ids")
    g.add_argument("--history", help="context code history file; read if present, then updated")
    g.add_argument("--trace", action="store_true", help="print one line per speculative step to stderr")
    _model_flags(g)

    d = sub.add_parser("detect", parents=[common], help="score sequences for the watermark (JSON lines)")
    d.add_argument("file", help="one sequence per line, space-separated token ids")
    d.add_argument("--key", required=True, help="watermark key as hex")
    d.add_argument("--scheme", choices=["gumbel", "gamma"], required=True)
    d.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    d.add_argument("--vocab", type=int, required=True)
    d.add_argument("--prompt-len", type=int, default=0, help="leading tokens per line that are context only")

    b = sub.add_parser("bench", parents=[common], help="run the method x reweight x K benchmark matrix")
    b.add_argument("--methods")
    b.add_argument("--reweights")
    b.add_argument("--k", dest="k", help="comma-separated draft lengths")
    b.add_argument("--sequences", type=int)
    b.add_argument("--tokens", type=int)
    b.add_argument("--key")
    b.add_argument("--window", type=int)
    b.add_argument("--prompt-len", type=int)
    b.add_argument("--workers", type=int)
    _model_flags(b)

    v = sub.add_parser("verify", parents=[common], help="run the exact and Monte-Carlo oracle suites")
    v.add_argument("--quick", action="store_true", help="smaller sample sizes")

    n = sub.add_parser("nogo", parents=[common], help="scan the reweighting overlap gap")
    n.add_argument("--n", type=int, default=3)
    n.add_argument("--points", type=int, default=1000)
    return parser


def _settings(args, names: list[str]) -> dict[str, str]:
    settings = harness.load_settings(args.config) if getattr(args, "config", None) else {}
    for name in names:
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            settings[name] = str(val)
    return settings


def _models(args, settings: dict[str, str]):
    spec = BenchConfig.from_settings({k: v for k, v in settings.items() if k in ("vocab", "order", "temperature", "epsilon", "model-seed")}).model
    if getattr(args, "model", None):
        target = TableModel.load(args.model)
        draft = TableModel.load(args.draft) if args.draft else harness.synth_models(
            ToyModelSpec(target.n, target.order, spec.seed, spec.temperature, spec.draft_epsilon)
        )[1]
        return target, draft
    return harness.synth_models(spec)


def cmd_gen(args) -> int:
    settings = _settings(args, ["vocab", "order", "temperature", "epsilon", "model-seed"])
    target, draft = _models(args, settings)
    key = bytes.fromhex(args.key)
    scheme = Scheme.parse(args.scheme)
    method = Method(args.method)
    prompt = [int(x) for x in args.prompt.split()]
    rng = np.random.default_rng(args.seed)
    cch = CodeHistory()
    if args.history and os.path.exists(args.history):
        with open(args.history) as fh:
            cch = CodeHistory.loads(fh.read())

    out: list[int] = []
    if method is Method.BASIC:
        out = generate_basic(target, prompt, args.tokens, rng)
    elif method is Method.VUW:
        out, cch = generate_vuw(target, prompt, args.tokens, scheme, key, cch, args.window, rng)
    else:
        while len(out) < args.tokens:
            ctx = prompt + out
            if method is Method.VSPS:
                emitted, trace = generate_vsps(target, draft, ctx, args.K, rng)
            else:
                emitted, cch, trace = generate_two_reweight(target, draft, ctx, args.K, Mode(method.value), scheme, key, cch, args.window, rng)
            if args.trace:
                print(f"drafts={trace.drafts} accepted={trace.accepted_count} emitted={emitted}", file=sys.stderr)
            out.extend(emitted)
    print(" ".join(map(str, out)))
    if args.history:
        with open(args.history, "w") as fh:
            fh.write(cch.dumps())
    if getattr(args, "out", None):
        os.makedirs(args.out, exist_ok=True)
        target.save(os.path.join(args.out, "target.model"))
        draft.save(os.path.join(args.out, "draft.model"))
    return 0


def cmd_detect(args) -> int:
    key = bytes.fromhex(args.key)
    with open(args.file) as fh:
        for line in fh:
            toks = [int(x) for x in line.split()]
            if len(toks) <= args.prompt_len:
                continue
            prompt, body = toks[: args.prompt_len], toks[args.prompt_len :]
            rep = score_sequence(body, prompt, key, args.scheme, args.window, args.vocab)
            print(json.dumps(rep.to_dict()))
    return 0


def cmd_bench(args) -> int:
    names = ["methods", "reweights", "k", "sequences", "tokens", "key", "window", "prompt-len", "vocab", "order", "temperature", "epsilon", "model-seed"]
    settings = _settings(args, names)
    if getattr(args, "seed", None) is not None:
        settings["seed"] = str(args.seed)
    workers = args.workers or (int(settings["workers"]) if "workers" in settings else None)
    cfg = BenchConfig.from_settings(settings)
    rows = harness.run_benchmark(cfg, workers=workers)
    summary = harness.summarize(rows)
    out = getattr(args, "out", None) or "bench_out"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write(harness.to_csv(summary))
    with open(os.path.join(out, "tokens.txt"), "w") as fh:
        fh.write(harness.format_streams(rows))
    print(harness.format_table(summary))
    print(f"wrote {out}/metrics.csv and {out}/tokens.txt")
    return 0


def cmd_verify(args) -> int:
    results = verify.run_all(seed=args.seed, quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_nogo(args) -> int:
    rng = np.random.default_rng(args.seed)
    reports = nogo.gap_scan(args.n, args.points, rng)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["p", "q", "alpha", "expected_reweighted_alpha", "gap"])
    for r in reports:
        w.writerow([format_dist(r.p), format_dist(r.q), repr(r.alpha), repr(r.expected_reweighted_alpha), repr(r.gap)])
    best = nogo.widest_gap(reports)
    print(f"# widest gap {best.gap:.6f} at p=({format_dist(best.p)}) q=({format_dist(best.q)})")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return {"gen": cmd_gen, "detect": cmd_detect, "bench": cmd_bench, "verify": cmd_verify, "nogo": cmd_nogo}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
