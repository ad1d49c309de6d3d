import csv
import itertools
import math

import numpy as np
import pytest

from kforge.autodiff import Adam, CheckpointError, save_arrays, stream
from kforge.controller import RewardBaseline, controller_init, log_prob_of
from kforge.data import PAPER_RATIOS, WindowedDataset, build_splits, synth_recordings
from kforge.search import (
    METRICS_HEADER,
    SearchConfig,
    SearchCounters,
    controller_train_phase,
    derive_best,
    evaluate,
    load_model,
    predict,
    random_search_baseline,
    run_search,
    save_model,
    shared_train_epoch,
    train_from_scratch,
    train_step,
)
from kforge.space import StructureConfig, build_child, kernel_bank_init

W = 128
STRUCT = StructureConfig(num_blocks=2, input_length=W)


@pytest.fixture(scope="module")
def tiny():
    recs = synth_recordings(600, W, 32, 0.05, stream(0, "data"))
    return build_splits(recs, W, 32, PAPER_RATIOS, stream(0, "split"))


def deterministic_controller(L, token=0):
    state = controller_init(L, stream(0, "c"))
    state.head_w.data[...] = 0
    state.head_b.data[...] = -1e3
    state.head_b.data[token] = 1e3
    return state


def copy_params(params):
    return [p.data.copy() for p in params]


# -- shared training ------------------------------------------------------------------

def test_shared_epoch_accounting(tiny):
    train = tiny.train.subset(np.arange(10 * 16))
    bank = kernel_bank_init(STRUCT, stream(0, "b"))
    opt, counters = Adam(1e-3), SearchCounters()
    archs = shared_train_epoch(bank, controller_init(4, stream(0, "c")), train, opt,
                               stream(0, "x"), stream(0, "y"), batch_size=16, counters=counters)
    assert len(archs) == 10 and counters.shared_steps == 10 and opt.steps == 10


def test_shared_epoch_with_fixed_policy_equals_plain_training(tiny):
    a = kernel_bank_init(STRUCT, stream(0, "b"))
    b = kernel_bank_init(STRUCT, stream(0, "b"))
    shared_train_epoch(a, deterministic_controller(4, 2), tiny.train, Adam(1e-3),
                       stream(1, "x"), stream(1, "y"), batch_size=64)
    net, opt = build_child((2, 2, 2, 2), b), Adam(1e-3)
    for x, y in tiny.train.batches(64, stream(1, "x")):
        train_step(net, x, y, opt)
    for (ka, va), (kb, vb) in zip(a.named_arrays().items(), b.named_arrays().items()):
        assert ka == kb and np.array_equal(va, vb), ka


def test_unreferenced_bank_entries_unchanged(tiny):
    bank = kernel_bank_init(STRUCT, stream(0, "b"))
    snap = bank.snapshot()
    archs = shared_train_epoch(bank, controller_init(4, stream(2, "c")),
                               tiny.train.subset(np.arange(64)), Adam(1e-3),
                               stream(2, "x"), stream(2, "y"), batch_size=32)
    used = {(p, t) for a in archs for p, t in enumerate(a)}
    for (p, c) in bank.units:
        changed = any(not np.array_equal(v, snap[f"pos{p}/choice{c}/{k}"])
                      for k, v in bank.unit(p, c).arrays().items())
        assert changed == ((p, c) in used)


# -- controller phase -----------------------------------------------------------------

def test_controller_phase_reward_count():
    cfg = SearchConfig(controller_steps=5, archs_per_step=20)
    counters = SearchCounters()
    losses = controller_train_phase(controller_init(4, stream(0, "c")), None, None,
                                    RewardBaseline(), cfg, stream(0, "s"),
                                    reward_fn=lambda a: 0.5, counters=counters)
    assert counters.reward_evaluations == 100 and len(losses) == 5


def test_equal_rewards_only_first_batch_moves_params():
    cfg1 = SearchConfig(controller_steps=1, archs_per_step=8)
    cfg5 = SearchConfig(controller_steps=5, archs_per_step=8)
    a = controller_init(3, stream(0, "c"), momentum=0.0)
    b = controller_init(3, stream(0, "c"), momentum=0.0)
    start = copy_params(a.parameters())
    controller_train_phase(a, None, None, RewardBaseline(), cfg1, stream(0, "s"),
                           reward_fn=lambda arch: 0.7)
    controller_train_phase(b, None, None, RewardBaseline(), cfg5, stream(0, "s"),
                           reward_fn=lambda arch: 0.7)
    assert any(not np.array_equal(x, y) for x, y in zip(start, copy_params(a.parameters())))
    for x, y in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x.data, y.data)


def test_rigged_environment_raises_target_probability():
    state = controller_init(2, stream(3, "c"))
    cfg = SearchConfig(controller_steps=5, archs_per_step=20)
    baseline = RewardBaseline()
    rng = stream(3, "s")
    probs = [math.exp(log_prob_of(state, (0, 0)))]
    for _ in range(4):
        controller_train_phase(state, None, None, baseline, cfg, rng,
                               reward_fn=lambda a: 1.0 if a == (0, 0) else 0.0)
        probs.append(math.exp(log_prob_of(state, (0, 0))))
    assert all(b >= a for a, b in zip(probs, probs[1:])) and probs[-1] > 1.2 * probs[0]


# -- derivation and random search ------------------------------------------------------

def test_derive_single_sample():
    state = controller_init(3, stream(0, "c"))
    d = derive_best(state, None, None, 1, stream(0, "d"), reward_fn=lambda a: 0.3)
    assert len(d.samples) == 1 and d.winner == d.samples[0][0]


def test_derive_memoizes_duplicates():
    calls = []
    d = derive_best(deterministic_controller(3, 1), None, None, 7, stream(0, "d"),
                    reward_fn=lambda a: calls.append(a) or 0.5)
    assert calls == [(1, 1, 1)]
    assert [dup for _, _, dup in d.samples] == [False] + [True] * 6


def test_derive_with_rigged_reward():
    state = controller_init(2, stream(1, "c"))
    d = derive_best(state, None, None, 200, stream(1, "d"),
                    reward_fn=lambda a: sum(t == 0 for t in a) / len(a))
    assert (0, 0) in [a for a, _, _ in d.samples]
    assert d.winner == (0, 0) and d.winner_reward == 1.0
    assert d.winner_reward == max(r for _, r, _ in d.samples)


def test_random_search_budget_one_and_uniformity():
    d = random_search_baseline(1, None, None, stream(0, "r"), num_layers=4, reward_fn=lambda a: 0.0)
    assert len(d.samples) == 1
    d = random_search_baseline(10_000, None, None, stream(0, "r"), num_layers=6,
                               reward_fn=lambda a: 0.0)
    tokens = np.array([a for a, _, _ in d.samples])
    assert len(tokens) == 10_000
    freq = np.bincount(tokens.ravel(), minlength=6) / tokens.size
    assert np.abs(freq - 1 / 6).max() < 0.02


def test_random_search_enumerates_small_space():
    table = {a: v for a, v in zip(itertools.product(range(6), repeat=2),
                                  np.random.default_rng(0).random(36))}
    d = random_search_baseline(36, None, None, stream(0, "r"), num_layers=2,
                               reward_fn=lambda a: table[a])
    assert sorted(a for a, _, _ in d.samples) == sorted(table)
    assert d.winner == max(table, key=table.get)


# -- evaluation ---------------------------------------------------------------------

def test_evaluate_memorized_and_adversarial(tiny):
    net = build_child((0, 1, 2, 3), kernel_bank_init(STRUCT, stream(0, "b")))
    x = tiny.test.windows[:20]
    pred = predict(net, x)
    assert evaluate(net, WindowedDataset(x[:1], pred[:1])) == 1.0
    assert evaluate(net, WindowedDataset(x, (pred + 1) % 6)) == 0.0
    labels = tiny.test.labels[:20]
    confusion = np.zeros((6, 6), dtype=int)
    for t, p in zip(labels, pred):
        confusion[t, p] += 1
    assert evaluate(net, WindowedDataset(x, labels)) == np.trace(confusion) / 20


# -- from-scratch training -----------------------------------------------------------

def test_untrained_model_is_at_chance(tiny):
    res = train_from_scratch((0, 0, 0, 0), STRUCT, tiny, SearchConfig(), epochs=0)
    assert abs(res.test_accuracy - 1 / 6) <= 0.05 and res.curve == []


def test_scratch_training_is_deterministic(tiny):
    cfg = SearchConfig(batch_size=64, child_lr=3e-3, seed=4)
    a = train_from_scratch((1, 2, 3, 4), STRUCT, tiny, cfg, epochs=2)
    b = train_from_scratch((1, 2, 3, 4), STRUCT, tiny, cfg, epochs=2)
    assert a.test_accuracy == b.test_accuracy and a.curve == b.curve


@pytest.fixture(scope="module")
def easy():
    recs = synth_recordings(2400, 500, 50, 0.1, stream(0, "data"))
    return build_splits(recs, 500, 50, PAPER_RATIOS, stream(0, "split"))


@pytest.mark.parametrize("arch", [(0, 0, 0, 0), (5, 5, 5, 5), (1, 4, 2, 3)])
def test_easy_setting_reaches_ninety_percent(easy, arch):
    cfg = SearchConfig(batch_size=64, child_lr=3e-3)
    res = train_from_scratch(arch, StructureConfig(num_blocks=2, input_length=500), easy, cfg,
                             epochs=8)
    assert res.test_accuracy >= 0.9


# -- whole loop + artifacts ----------------------------------------------------------

def test_run_search_smoke_and_determinism(tiny):
    cfg = SearchConfig(epochs=2, controller_steps=2, archs_per_step=4, final_samples=4,
                       fig6_sample_count=3, scratch_epochs=1, batch_size=64, seed=3)
    a = run_search(tiny, STRUCT, cfg)
    b = run_search(tiny, STRUCT, cfg)
    assert len(a.metrics) == 2
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    assert strip(a.metrics.rows) == strip(b.metrics.rows)
    assert a.derivation.winner == b.derivation.winner
    assert a.scratch.test_accuracy == b.scratch.test_accuracy
    assert a.counters.reward_evaluations == 2 * 2 * 4
    for r in a.metrics.rows:
        assert 0 <= r["min_acc"] <= r["mean_acc"] <= r["max_acc"] <= 1


def test_metrics_csv_is_strict(tmp_path, tiny):
    cfg = SearchConfig(epochs=2, controller_steps=1, archs_per_step=2, final_samples=2,
                       fig6_sample_count=2, batch_size=64)
    res = run_search(tiny, STRUCT, cfg, retrain=False)
    path = tmp_path / "m.csv"
    res.metrics.write_csv(path)
    lines = path.read_text().splitlines()
    assert tuple(lines[0].split(",")) == METRICS_HEADER
    assert len(lines) == 3
    for row in csv.reader(lines[1:]):
        assert len(row) == len(METRICS_HEADER) and all(cell != "" for cell in row)
        [float(c) for c in row]


def test_model_checkpoint_round_trip(tmp_path, tiny):
    net = build_child((3, 1, 4, 1), kernel_bank_init(STRUCT, stream(5, "b")))
    train_step(net, tiny.train.windows[:32], tiny.train.labels[:32], Adam(1e-2))
    save_model(tmp_path / "m.kf", net)
    back = load_model(tmp_path / "m.kf")
    assert back.arch == net.arch and back.structure == net.structure
    x = tiny.val.windows[:8]
    np.testing.assert_array_equal(back(x).data, net(x).data)


def test_model_checkpoint_rejects_foreign_file(tmp_path):
    save_arrays(tmp_path / "x.kf", {"a": np.ones(3)})
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "x.kf")
