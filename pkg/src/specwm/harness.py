"""Toy target/draft models, the benchmark matrix and metric aggregation."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .detect import score_sequence
from .gen import DEFAULT_WINDOW, CodeHistory, Mode, TableModel, generate_basic, generate_two_reweight, generate_vsps, generate_vuw
from .reweight import Scheme

log = logging.getLogger(__name__)

METRICS = ("aatps", "anlppt_u", "logppl", "ptt_ms")
CSV_COLUMNS = ("method", "reweight", "K", "metric", "mean", "stderr", "n_sequences")


class Method(str, enum.Enum):
    BASIC = "basic"
    VUW = "vuw"
    VSPS = "vsps"
    MWS = "mws"
    MSE = "mse"

    @property
    def speculative(self) -> bool:
        return self in (Method.VSPS, Method.MWS, Method.MSE)

    @property
    def watermarked(self) -> bool:
        return self in (Method.VUW, Method.MWS, Method.MSE)


@dataclass(frozen=True)
class ToyModelSpec:
    n: int = 64
    order: int = 2
    seed: int = 0
    temperature: float = 1.0
    draft_epsilon: float = 0.3


def synth_models(spec: ToyModelSpec) -> tuple[TableModel, TableModel]:
    """Seeded Dirichlet target rows sharpened by temperature, and a draft mixed toward noise."""
    if spec.temperature <= 0:
        raise ValueError("temperature must be positive")
    if not 0.0 <= spec.draft_epsilon <= 1.0:
        raise ValueError("draft_epsilon must lie in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    rows = spec.n**spec.order
    g = rng.dirichlet(np.ones(spec.n), size=rows)
    with np.errstate(divide="ignore"):
        logits = np.log(g) / spec.temperature
    logits -= logits.max(axis=1, keepdims=True)
    target = np.exp(logits)
    target /= target.sum(axis=1, keepdims=True)
    noise = rng.dirichlet(np.ones(spec.n), size=rows)
    draft = (1.0 - spec.draft_epsilon) * target + spec.draft_epsilon * noise
    draft /= draft.sum(axis=1, keepdims=True)
    return TableModel(target, spec.order), TableModel(draft, spec.order)


@dataclass
class BenchConfig:
    methods: tuple[Method, ...] = tuple(Method)
    reweights: tuple[Scheme, ...] = (Scheme.DELTA_GUMBEL, Scheme.GAMMA)
    ks: tuple[int, ...] = (1, 2, 3, 4)
    sequences: int = 200
    tokens: int = 100
    model: ToyModelSpec = field(default_factory=ToyModelSpec)
    key: bytes = b"specwm-default-watermark-key"
    window: int = DEFAULT_WINDOW
    seed: int = 0
    prompt_len: int = 4

    def __post_init__(self):
        self.methods = tuple(Method(m) for m in self.methods)
        self.reweights = tuple(Scheme.parse(s) for s in self.reweights)
        self.ks = tuple(int(k) for k in self.ks)
        if not (self.methods and self.reweights and self.ks):
            raise ValueError("methods, reweights and K values must be non-empty")
        if self.sequences < 2 or self.tokens < 1 or min(self.ks) < 1:
            raise ValueError("need >= 2 sequences, >= 1 token and K >= 1")

    # `key = value` settings, named like the CLI flags
    @classmethod
    def from_settings(cls, settings: dict[str, str], base: "BenchConfig | None" = None) -> "BenchConfig":
        cfg = base or cls()
        model = cfg.model
        kw: dict = {}
        for name, raw in settings.items():
            name = name.replace("-", "_")
            if name == "methods":
                kw["methods"] = _split(raw)
            elif name == "reweights":
                kw["reweights"] = _split(raw)
            elif name in ("k", "ks"):
                kw["ks"] = tuple(int(x) for x in _split(raw))
            elif name in ("sequences", "tokens", "window", "seed", "prompt_len"):
                kw[name] = int(raw)
            elif name == "key":
                kw["key"] = bytes.fromhex(raw)
            elif name == "vocab":
                model = replace(model, n=int(raw))
            elif name == "order":
                model = replace(model, order=int(raw))
            elif name == "model_seed":
                model = replace(model, seed=int(raw))
            elif name == "temperature":
                model = replace(model, temperature=float(raw))
            elif name == "epsilon":
                model = replace(model, draft_epsilon=float(raw))
            elif name in ("workers", "out", "config"):
                continue
            else:
                raise ValueError(f"unknown setting {name!r}")
        return replace(cfg, model=model, **kw)


def _split(raw: str) -> tuple[str, ...]:
    return tuple(x for x in raw.replace(",", " ").split() if x)


def load_settings(path) -> dict[str, str]:
    settings = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            name, value = line.split("=", 1)
            settings[name.strip()] = value.strip()
    return settings


# -- generation of one sequence -------------------------------------------------


def generate_sequence(
    method: Method,
    target: TableModel,
    draft: TableModel,
    prompt: list[int],
    n_tokens: int,
    K: int,
    scheme: Scheme,
    key: bytes,
    window: int,
    rng: np.random.Generator,
) -> tuple[list[int], int]:
    """Generate at least ``n_tokens`` tokens; returns (tokens, generation steps)."""
    method = Method(method)
    if method is Method.BASIC:
        return generate_basic(target, prompt, n_tokens, rng), n_tokens
    if method is Method.VUW:
        out, _ = generate_vuw(target, prompt, n_tokens, scheme, key, CodeHistory(), window, rng)
        return out, n_tokens
    out: list[int] = []
    steps = 0
    cch = CodeHistory()
    while len(out) < n_tokens:
        ctx = prompt + out
        if method is Method.VSPS:
            emitted, _ = generate_vsps(target, draft, ctx, K, rng)
        else:
            emitted, cch, _ = generate_two_reweight(
                target, draft, ctx, K, Mode(method.value), scheme, key, cch, window, rng
            )
        out.extend(emitted)
        steps += 1
    return out, steps


@dataclass
class SequenceRow:
    method: str
    reweight: str
    K: int
    seq: int
    prompt: list[int]
    tokens: list[int]
    steps: int
    aatps: float
    anlppt_u: float
    logppl: float
    ptt_ms: float


def log_perplexity(model: TableModel, prompt: list[int], tokens: list[int]) -> float:
    ctx = list(prompt)
    total = 0.0
    for t in tokens:
        total -= math.log(model.next_dist(ctx)[t])
        ctx.append(t)
    return total / len(tokens)


def _prompt_for(cfg: BenchConfig, seq: int) -> list[int]:
    rng = np.random.default_rng([cfg.seed, seq, 0])
    return [int(x) for x in rng.integers(0, cfg.model.n, size=cfg.prompt_len)]


def _generation_groups(cfg: BenchConfig) -> list[tuple[Method, Scheme | None, int | None]]:
    """Distinct token streams: reweight only matters when watermarking, K only when speculating."""
    groups = []
    for method in cfg.methods:
        schemes = cfg.reweights if method.watermarked else (None,)
        ks = cfg.ks if method.speculative else (None,)
        if not method.watermarked and len(cfg.reweights) > 1:
            log.info("%s ignores the reweight setting for generation; it is used for detection only", method.value)
        for s in schemes:
            for k in ks:
                groups.append((method, s, k))
    return groups


_WORKER_STATE: dict = {}


def _init_worker(cfg: BenchConfig) -> None:
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["models"] = synth_models(cfg.model)


def _run_task(task: tuple[Method, Scheme | None, int | None, int]):
    cfg: BenchConfig = _WORKER_STATE["cfg"]
    target, draft = _WORKER_STATE["models"]
    method, scheme, K, seq = task
    prompt = _prompt_for(cfg, seq)
    rng = np.random.default_rng([cfg.seed, seq, 1])
    t0 = time.perf_counter()
    tokens, steps = generate_sequence(
        method, target, draft, prompt, cfg.tokens, K or 1, scheme or Scheme.DELTA_GUMBEL, cfg.key, cfg.window, rng
    )
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    return task, prompt, tokens, steps, elapsed_ms


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("SPECWM_THREADS")
    n = requested or (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_benchmark(cfg: BenchConfig, workers: int | None = None) -> list[SequenceRow]:
    """Per-sequence metric rows for every method x reweight x K cell.

    Token streams and every metric except ``ptt_ms`` depend only on ``cfg``.
    """
    tasks = [(m, s, k, seq) for (m, s, k) in _generation_groups(cfg) for seq in range(cfg.sequences)]
    nw = worker_count(workers)
    if nw == 1:
        _init_worker(cfg)
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(nw, initializer=_init_worker, initargs=(cfg,)) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * nw))))
    streams = {task: rest for task, *rest in results}

    target, _ = synth_models(cfg.model)
    n = cfg.model.n
    rows = []
    for method in cfg.methods:
        for scheme in cfg.reweights:
            for K in cfg.ks:
                gkey = (method, scheme if method.watermarked else None, K if method.speculative else None)
                for seq in range(cfg.sequences):
                    prompt, tokens, steps, elapsed_ms = streams[gkey + (seq,)]
                    rep = score_sequence(tokens, prompt, cfg.key, scheme, cfg.window, n)
                    rows.append(
                        SequenceRow(
                            method=method.value,
                            reweight=scheme.value,
                            K=K,
                            seq=seq,
                            prompt=prompt,
                            tokens=tokens,
                            steps=steps,
                            aatps=len(tokens) / steps,
                            anlppt_u=rep.anlppt,
                            logppl=log_perplexity(target, prompt, tokens),
                            ptt_ms=elapsed_ms / len(tokens),
                        )
                    )
    return rows


# -- aggregation ---------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    method: str
    reweight: str
    K: int
    metric: str
    mean: float
    stderr: float
    n_sequences: int

    @property
    def ci3(self) -> tuple[float, float]:
        return self.mean - 3 * self.stderr, self.mean + 3 * self.stderr


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least 2 values for a standard error")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def summarize(rows: list[SequenceRow]) -> list[SummaryRow]:
    cells: dict[tuple[str, str, int], list[SequenceRow]] = {}
    for r in rows:
        cells.setdefault((r.method, r.reweight, r.K), []).append(r)
    out = []
    for (method, reweight, K), cell in cells.items():
        for metric in METRICS:
            mean, se = mean_stderr([getattr(r, metric) for r in cell])
            out.append(SummaryRow(method, reweight, K, metric, mean, se, len(cell)))
    return out


def summary_lookup(summary: list[SummaryRow]) -> dict[tuple[str, str, int, str], SummaryRow]:
    return {(s.method, s.reweight, s.K, s.metric): s for s in summary}


def to_csv(summary: list[SummaryRow], exclude: tuple[str, ...] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in summary:
        if s.metric in exclude:
            continue
        w.writerow([s.method, s.reweight, s.K, s.metric, repr(s.mean), repr(s.stderr), s.n_sequences])
    return buf.getvalue()


def read_csv(text: str) -> list[SummaryRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [
        SummaryRow(r["method"], r["reweight"], int(r["K"]), r["metric"], float(r["mean"]), float(r["stderr"]), int(r["n_sequences"]))
        for r in reader
    ]


def format_table(summary: list[SummaryRow]) -> str:
    look = summary_lookup(summary)
    cells = sorted({(s.method, s.reweight, s.K) for s in summary}, key=lambda c: (c[1], c[2], [m.value for m in Method].index(c[0]) if c[0] in {m.value for m in Method} else 99))
    header = f"{'method':<6} {'reweight':<8} {'K':>2}  " + "  ".join(f"{m:>22}" for m in METRICS)
    lines = [header, "-" * len(header)]
    for cell in cells:
        parts = []
        for metric in METRICS:
            s = look[cell + (metric,)]
            parts.append(f"{s.mean:>10.4f} ± {3 * s.stderr:<9.4f}")
        lines.append(f"{cell[0]:<6} {cell[1]:<8} {cell[2]:>2}  " + "  ".join(parts))
    lines.append("(± is a 3-sigma interval across sequences)")
    return "\n".join(lines)


def format_streams(rows: list[SequenceRow]) -> str:
    """One line per generated sequence: ``method reweight K seq: tokens``."""
    return "".join(f"{r.method} {r.reweight} {r.K} {r.seq}: {' '.join(map(str, r.tokens))}\n" for r in rows)
