"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line.

Criterion 7 runs a scaled-down search by default (about 10 minutes on one
core); set KFORGE_ACCEPTANCE_SCALE=full for the larger configuration
(~6000 windows, N=30, 20 retraining epochs; roughly 45 minutes).
"""

import csv
import itertools
import math
import os
import time

import numpy as np
import pytest

from kforge.autodiff import Adam, Tape, Tensor, conv1d, conv_output_length, softmax_cross_entropy, stream, zero_grad
from kforge.cli import COMPARE_HEADER, main
from kforge.controller import (
    RewardBaseline,
    baseline_update,
    controller_init,
    log_prob_of,
    reinforce_update,
    sample_architecture,
    sample_architectures,
    token_log_probs,
)
from kforge.data import PAPER_RATIOS, WindowedDataset, build_splits, normalize, segment, split, synth_recordings
from kforge.search import SearchConfig, random_search_baseline, run_search, shared_train_epoch, train_from_scratch
from kforge.space import CHOICES, StructureConfig, build_child, kernel_bank_init, same_padding

import gradcheck
from test_autodiff import conv_loops


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")


# 1 -------------------------------------------------------------------------------------

def test_criterion_1_gradient_suite(capsys):
    t0 = time.perf_counter()
    worst = {name: max(gradcheck.run_case(name, s) for s in range(20)) for name in gradcheck.CASES}
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and elapsed < 120
    report(capsys, 1, ok, f"{len(worst)} primitives x 20 seeds, worst rel err "
                          f"{max(worst.values()):.2e}, {elapsed:.1f}s")
    assert ok, bad


# 2 -------------------------------------------------------------------------------------

def test_criterion_2_convolution_oracle(capsys):
    rng = np.random.default_rng(0)
    worst, cases = 0.0, 0
    for T, k, d, s, p in itertools.product(range(8, 33), (3, 5), (1, 2, 3), (1, 2), range(7)):
        if T + 2 * p < d * (k - 1) + 1:
            continue
        x, w, b = rng.standard_normal((1, 2, T)), rng.standard_normal((2, 2, k)), rng.standard_normal(2)
        got = conv1d(Tensor(x), Tensor(w), Tensor(b), s, d, p).data
        worst = max(worst, np.abs(got - conv_loops(x, w, b, s, d, p)).max())
        cases += 1
    same = all(conv_output_length(T, k, 1, d, same_padding(i)) == T
               for i, (k, d) in enumerate(CHOICES) for T in (16, 500, 1000))
    ok = worst < 1e-12 and same
    report(capsys, 2, ok, f"{cases} grid cases, max abs diff {worst:.1e}, same padding ok={same}")
    assert ok


# 3 -------------------------------------------------------------------------------------

def test_criterion_3_policy_normalization(capsys):
    errs = []
    for seed in range(10):
        state = controller_init(2, stream(seed, "controller-init"))
        rng = np.random.default_rng(seed)
        for p in state.parameters():
            p.data[...] = rng.standard_normal(p.shape)
        total = sum(math.exp(log_prob_of(state, a)) for a in itertools.product(range(6), repeat=2))
        errs.append(abs(total - 1.0))
    ok = max(errs) < 1e-9
    report(capsys, 3, ok, f"10 seeds, max |sum - 1| = {max(errs):.1e}")
    assert ok


# 4 -------------------------------------------------------------------------------------

def test_criterion_4_reinforce_sanity(capsys):
    increased = []
    for seed in range(5):
        state = controller_init(4, stream(seed, "controller-init"), lr=1e-3)
        rec = sample_architecture(state, stream(seed, "s"))
        rec.reward = 0.9
        before = log_prob_of(state, rec.architecture)
        reinforce_update(state, [rec], RewardBaseline(value=0.4, initialized=True))
        increased.append(log_prob_of(state, rec.architecture) > before)

    state = controller_init(4, stream(9, "controller-init"))
    recs = sample_architectures(state, stream(9, "s"), 10)
    for r in recs:
        r.reward = 0.37
    before = [p.data.copy() for p in state.parameters()]
    reinforce_update(state, recs, RewardBaseline(value=0.37, initialized=True))
    noop = all(np.array_equal(a, p.data) for a, p in zip(before, state.parameters()))
    ok = all(increased) and noop
    report(capsys, 4, ok, f"log-prob increased {sum(increased)}/5, zero-advantage no-op={noop}")
    assert ok


# 5 -------------------------------------------------------------------------------------

def bandit_run(seed, L=4, m=20, updates=300):
    target = tuple(int(t) for t in stream(seed, "target").integers(0, 6, L))
    state = controller_init(L, stream(seed, "controller-init"))
    baseline = RewardBaseline()
    rng = stream(seed, "controller-sample")
    for _ in range(updates):
        recs = sample_architectures(state, rng, m)
        for r in recs:
            r.reward = float(np.mean(np.array(r.architecture) == target))
        reinforce_update(state, recs, baseline)
        baseline_update(baseline, [r.reward for r in recs])
    return float(np.exp(token_log_probs(state, [target])[0]).min())


def test_criterion_5_bandit_convergence(capsys):
    t0 = time.perf_counter()
    probs = [bandit_run(seed) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    wins = sum(p > 0.9 for p in probs)
    ok = wins >= 4 and elapsed < 300
    report(capsys, 5, ok, f"min per-position target prob {np.round(probs, 3).tolist()}, "
                          f"{wins}/5 seeds > 0.9, {elapsed:.1f}s")
    assert ok


# 6 -------------------------------------------------------------------------------------

class GradSpy(Adam):
    """Adam that records which bank tensors carry a nonzero gradient at step time."""

    def __init__(self, bank, **kw):
        super().__init__(**kw)
        self.bank = bank
        self.touched = None

    def step(self, params):
        self.touched = {p.name for p in self.bank.parameters()
                        if p.grad is not None and np.any(p.grad != 0)}
        super().step(params)


def test_criterion_6_weight_sharing_identity(capsys):
    structure = StructureConfig(num_blocks=2, input_length=64)
    bank = kernel_bank_init(structure, stream(0, "bank-init"))
    x = np.random.default_rng(0).standard_normal((16, 1, 64))
    y = np.random.default_rng(1).integers(0, 6, 16)

    a, b = build_child((1, 3, 5, 0), bank), build_child((1, 3, 5, 0), bank)
    aliased = all(u is v for u, v in zip(a.layers, b.layers))
    params = a.parameters()
    with Tape() as tape:
        loss, _ = softmax_cross_entropy(a(Tensor(x), "train"), y)
    tape.backward(loss)
    Adam(lr=1e-2).step(params)
    zero_grad(params)
    same_out = np.array_equal(a(x).data, b(x).data)

    spy = GradSpy(bank, lr=1e-3)
    state = controller_init(4, stream(0, "controller-init"))
    sampled = shared_train_epoch(bank, state, WindowedDataset(x, y), spy, stream(0, "b"), stream(0, "s"),
                                 batch_size=16)[0]
    # a conv bias feeding batch norm has an identically zero gradient, so require
    # nonzero weight gradients on sampled entries and nothing anywhere else
    allowed = {f"pos{p}/choice{c}/{k}" for p, c in enumerate(sampled)
               for k in ("conv.w", "conv.b", "norm.gamma", "norm.beta")}
    weights = {f"pos{p}/choice{c}/conv.w" for p, c in enumerate(sampled)}
    searched = {n for n in spy.touched if n.startswith("pos")}
    local = weights <= searched <= allowed
    ok = aliased and same_out and local
    report(capsys, 6, ok, f"aliased={aliased}, identical outputs after training={same_out}, "
                          f"gradient only on sampled entries={local}")
    assert ok


# 7 -------------------------------------------------------------------------------------

FULL = os.environ.get("KFORGE_ACCEPTANCE_SCALE", "").lower() == "full"
C7 = dict(windows=6000, epochs=30, scratch_epochs=20) if FULL else \
    dict(windows=4000, epochs=12, scratch_epochs=6)


def scaled_search(seed):
    W = 500
    recs = synth_recordings(C7["windows"], W, 50, 0.1, stream(seed, "data"))
    splits = build_splits(recs, W, 50, PAPER_RATIOS, stream(seed, "split"))
    structure = StructureConfig(num_blocks=2, input_length=W)
    cfg = SearchConfig(epochs=C7["epochs"], archs_per_step=10, final_samples=30,
                       scratch_epochs=C7["scratch_epochs"], fig6_sample_count=10,
                       batch_size=64, child_lr=3e-3, seed=seed)
    res = run_search(splits, structure, cfg, retrain=True)
    rand = random_search_baseline(cfg.final_samples, res.bank, splits.val, stream(seed, "random-search"))
    rand_acc = train_from_scratch(rand.winner, structure, splits, cfg).test_accuracy
    acc = res.metrics.column("mean_acc")
    q = max(1, len(acc) // 4)
    return {
        "first": float(acc[:q].mean()), "last": float(acc[-q:].mean()),
        "derived": res.derivation.winner, "derived_acc": res.scratch.test_accuracy,
        "random": rand.winner, "random_acc": rand_acc,
        "rows": [{k: v for k, v in r.items() if k != "seconds"} for r in res.metrics.rows],
    }


def test_criterion_7_scaled_search(capsys):
    t0 = time.perf_counter()
    runs = [scaled_search(seed) for seed in range(5)]
    repeat = scaled_search(0)
    elapsed = time.perf_counter() - t0
    trend = sum(r["last"] > r["first"] for r in runs)
    versus = sum(r["derived_acc"] >= r["random_acc"] - 0.02 for r in runs)
    deterministic = repeat == runs[0]
    ok = trend >= 4 and versus >= 4 and deterministic
    lines = "; ".join(f"seed {i}: acc {r['first']:.3f}->{r['last']:.3f}, "
                      f"derived {r['derived_acc']:.4f} vs random {r['random_acc']:.4f}"
                      for i, r in enumerate(runs))
    report(capsys, 7, ok, f"(a) trend {trend}/5, (b) within 2pp {versus}/5, "
                          f"(c) deterministic={deterministic}; {lines}; {elapsed:.0f}s")
    assert ok


# 8 -------------------------------------------------------------------------------------

EASY = """\
[data-pipeline]
windows_total = 2400
window_length = 500
noise_sigma = 0.1
[search-space]
num_blocks = 2
[search-engine]
epochs = 3
archs_per_step = 5
final_samples = 10
fig6_sample_count = 5
scratch_epochs = 5
batch_size = 64
child_lr = 0.003
"""


def test_criterion_8_comparison_table(tmp_path, capsys):
    (tmp_path / "easy.ini").write_text(EASY)
    common = ["--config", str(tmp_path / "easy.ini"), "--out", str(tmp_path / "run"), "-q"]
    assert main(["gen-data", *common]) == 0
    assert main(["compare", *common]) == 0
    capsys.readouterr()
    text = (tmp_path / "run/compare.csv").read_text()
    rows = list(csv.reader(text.splitlines()))
    header_ok = tuple(rows[0]) == COMPARE_HEADER and text.endswith("\n")
    body = rows[1:]
    names_ok = [r[0] for r in body] == ["M1", "M2", "M3", "M4", "M5", "M6", "searched", "random-search"]
    fmt_ok = all(len(r) == 3 and len(r[1].split()) == 4 and r[2].count(".") == 1
                 and len(r[2].split(".")[1]) == 2 and 0 <= float(r[2]) <= 100 for r in body)
    presets = [float(r[2]) / 100 for r in body[:6]]
    chance = 1 / 6 + 0.30
    ok = header_ok and names_ok and fmt_ok and min(presets) > chance
    report(capsys, 8, ok, f"{len(body)} rows, schema ok={header_ok and fmt_ok}, "
                          f"M1..M6 accuracy {[round(p, 4) for p in presets]} (need > {chance:.4f})")
    assert ok


# 9 -------------------------------------------------------------------------------------

def test_criterion_9_pipeline_arithmetic(capsys):
    n_windows = len(segment(np.arange(10_000, dtype=float), 1000, 50))
    rng = np.random.default_rng(0)
    bounds = all(normalize(w).min() == -1.0 and normalize(w).max() == 1.0
                 for w in rng.standard_normal((200, 1000)) * rng.uniform(0.01, 100, (200, 1)))
    N = 31_899
    windows = np.zeros((N, 2))
    labels = np.arange(N) % 6
    sizes = [len(p) for p in split(windows, labels, PAPER_RATIOS, stream(0, "split"))]
    sizes_ok = all(abs(a - b) <= 1 for a, b in zip(sizes, (22_967, 2_552, 6_380)))
    ok = n_windows == 181 and bounds and sizes_ok
    report(capsys, 9, ok, f"segment -> {n_windows} windows, exact bounds={bounds}, split sizes {sizes}")
    assert ok
