import math

import numpy as np
import pytest

from specwm.dist import entropy, overlap
from specwm.gen import TableModel
from specwm.harness import (
    BenchConfig,
    Method,
    SequenceRow,
    ToyModelSpec,
    format_streams,
    format_table,
    generate_sequence,
    load_settings,
    log_perplexity,
    mean_stderr,
    read_csv,
    run_benchmark,
    summarize,
    summary_lookup,
    synth_models,
    to_csv,
    worker_count,
)
from specwm.reweight import Scheme

SMALL = dict(sequences=4, tokens=12, ks=(1, 3), model=ToyModelSpec(n=8, order=2, seed=3))


def test_synth_models_shapes_and_determinism():
    t1, d1 = synth_models(ToyModelSpec(n=8, order=2, seed=1))
    t2, d2 = synth_models(ToyModelSpec(n=8, order=2, seed=1))
    assert t1.table.shape == (64, 8) and t1.order == 2
    assert np.array_equal(t1.table, t2.table) and np.array_equal(d1.table, d2.table)
    assert not np.array_equal(t1.table, synth_models(ToyModelSpec(n=8, order=2, seed=2))[0].table)


def test_identical_draft_accepts_everything():
    spec = ToyModelSpec(n=16, order=1, seed=0, draft_epsilon=0.0)
    target, draft = synth_models(spec)
    assert np.allclose(target.table, draft.table, atol=1e-15, rtol=0)
    for K in (1, 2, 4):
        toks, steps = generate_sequence(Method.VSPS, target, draft, [0], 40, K, Scheme.GAMMA, b"k", 5, np.random.default_rng(0))
        # every step emits K + 1 tokens, so the last step may overshoot
        assert steps == math.ceil(40 / (K + 1)) and len(toks) == steps * (K + 1)


def test_epsilon_lowers_overlap():
    def mean_overlap(eps):
        t, d = synth_models(ToyModelSpec(n=32, order=1, seed=4, draft_epsilon=eps))
        return np.mean([overlap(a, b) for a, b in zip(t.table, d.table)])

    assert mean_overlap(1.0) < mean_overlap(0.1) < mean_overlap(0.0) == pytest.approx(1.0)


def test_low_temperature_is_nearly_deterministic():
    t, _ = synth_models(ToyModelSpec(n=32, order=1, seed=5, temperature=1e-3))
    assert max(entropy(r) for r in t.table) < 0.01


def test_bad_model_spec():
    with pytest.raises(ValueError):
        synth_models(ToyModelSpec(temperature=0.0))
    with pytest.raises(ValueError):
        synth_models(ToyModelSpec(draft_epsilon=1.5))


def test_log_perplexity_uniform():
    m = TableModel(np.full((1, 4), 0.25), 0)
    assert log_perplexity(m, [], [0, 1, 2, 3]) == pytest.approx(math.log(4))


def test_mean_stderr_examples():
    assert mean_stderr([1, 2, 3]) == pytest.approx((2.0, 0.5773502691896258), abs=1e-12)
    assert mean_stderr([4, 4, 4, 4]) == (4.0, 0.0)
    with pytest.raises(ValueError):
        mean_stderr([1.0])


def row(method, value, seq):
    return SequenceRow(method, "gamma", 1, seq, [0], [1], 1, value, value, value, value)


def test_summarize_cells():
    rows = [row("vsps", v, i) for i, v in enumerate([1.0, 2.0, 3.0])] + [row("mse", 5.0, i) for i in range(3)]
    look = summary_lookup(summarize(rows))
    s = look[("vsps", "gamma", 1, "aatps")]
    assert (s.mean, s.n_sequences) == (2.0, 3) and s.stderr == pytest.approx(0.5773502691896258)
    assert s.ci3 == pytest.approx((2 - 3 * 0.5773502691896258, 2 + 3 * 0.5773502691896258))
    assert look[("mse", "gamma", 1, "logppl")].stderr == 0.0


def test_csv_round_trip_and_exclude():
    rows = [row("vsps", v, i) for i, v in enumerate([0.1, 0.2, 0.7])]
    summary = summarize(rows)
    text = to_csv(summary)
    assert text.splitlines()[0] == "method,reweight,K,metric,mean,stderr,n_sequences"
    assert read_csv(text) == summary
    assert "ptt_ms" not in to_csv(summary, exclude=("ptt_ms",))
    with pytest.raises(ValueError):
        read_csv("a,b\n1,2\n")


def test_settings_file(tmp_path):
    path = tmp_path / "bench.cfg"
    path.write_text("# comment\nmethods = vsps, mse\nk = 1,2\nsequences = 5  # inline\nvocab = 16\nepsilon = 0.5\nkey = 00ff\n\n")
    cfg = BenchConfig.from_settings(load_settings(path))
    assert cfg.methods == (Method.VSPS, Method.MSE)
    assert cfg.ks == (1, 2) and cfg.sequences == 5 and cfg.key == b"\x00\xff"
    assert cfg.model.n == 16 and cfg.model.draft_epsilon == 0.5
    path.write_text("nonsense\n")
    with pytest.raises(ValueError):
        load_settings(path)
    with pytest.raises(ValueError):
        BenchConfig.from_settings({"colour": "blue"})


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(sequences=1)
    with pytest.raises(ValueError):
        BenchConfig(ks=(0,))
    with pytest.raises(ValueError):
        BenchConfig(methods=("nope",))


def test_worker_count(monkeypatch):
    monkeypatch.delenv("SPECWM_THREADS", raising=False)
    assert worker_count(3) == 3
    monkeypatch.setenv("SPECWM_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(None) <= 2


def test_benchmark_rows_and_metrics():
    cfg = BenchConfig(**SMALL)
    rows = run_benchmark(cfg, workers=1)
    assert len(rows) == 5 * 2 * 2 * 4
    for r in rows:
        assert len(r.tokens) >= cfg.tokens and len(r.prompt) == cfg.prompt_len
        assert r.aatps == len(r.tokens) / r.steps
        assert r.anlppt_u >= 0 and r.logppl > 0 and r.ptt_ms > 0
        if r.method in ("basic", "vuw"):
            assert r.aatps == 1.0
        else:
            assert 1.0 <= r.aatps <= r.K + 1
    by = {(r.method, r.reweight, r.K, r.seq): r.tokens for r in rows}
    # unwatermarked streams do not depend on the reweight, non-speculative ones not on K
    assert by[("basic", "gamma", 1, 0)] == by[("basic", "gumbel", 3, 0)]
    assert by[("vsps", "gamma", 3, 2)] == by[("vsps", "gumbel", 3, 2)]
    assert by[("vuw", "gamma", 1, 1)] == by[("vuw", "gamma", 3, 1)]
    table = format_table(summarize(rows))
    assert "mse" in table and "3-sigma" in table
    assert format_streams(rows[:1]).startswith("basic gumbel 1 0: ")


def test_benchmark_deterministic_across_workers():
    cfg = BenchConfig(**SMALL)
    a = run_benchmark(cfg, workers=1)
    b = run_benchmark(cfg, workers=2)
    assert format_streams(a) == format_streams(b)
    assert to_csv(summarize(a), exclude=("ptt_ms",)) == to_csv(summarize(b), exclude=("ptt_ms",))
    c = run_benchmark(BenchConfig(**{**SMALL, "seed": 1}), workers=1)
    assert format_streams(a) != format_streams(c)
