"""Central finite-difference oracle shared by the gradient tests."""

from __future__ import annotations

import numpy as np

from kforge.autodiff import (
    Tape,
    Tensor,
    add,
    batchnorm1d,
    conv1d,
    embedding_lookup,
    global_avg_pool,
    linear,
    lstm_cell,
    mul,
    relu,
    select,
    softmax_cross_entropy,
    tensor_sum,
)

H = 1e-5
TOL = 1e-4


def _project(out, weights):
    """Scalar loss sum(out * weights) so every output element contributes."""
    return tensor_sum(mul(out, Tensor(weights)))


def check(fn, arrays, seed) -> float:
    """Max over inputs of ||analytic - numeric||_inf / ||numeric||_inf.

    ``fn`` maps tensors to a tuple of output tensors; each output is
    projected onto fixed random weights so the loss is a generic scalar.
    """
    rng = np.random.default_rng(seed + 10_000)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    weights = [rng.standard_normal(o.shape) for o in probe]

    def loss_of(tensors):
        outs = fn(*tensors)
        total = _project(outs[0], weights[0])
        for o, w in zip(outs[1:], weights[1:]):
            total = add(total, _project(o, w))
        return total

    params = [Tensor(a.copy(), True) for a in arrays]
    with Tape() as tape:
        loss = loss_of(params)
    tape.backward(loss)

    worst = 0.0
    for i, a in enumerate(arrays):
        num = np.zeros_like(a)
        for j in np.ndindex(a.shape):
            vals = []
            for sign in (1.0, -1.0):
                shifted = [b.copy() for b in arrays]
                shifted[i][j] += sign * H
                vals.append(loss_of([Tensor(b) for b in shifted]).item())
            num[j] = (vals[0] - vals[1]) / (2 * H)
        ana = params[i].grad if params[i].grad is not None else np.zeros_like(a)
        scale = max(np.abs(num).max(), 1e-8)
        worst = max(worst, np.abs(ana - num).max() / scale)
    return worst


def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.sign(x) * (0.05 + np.abs(x))


def _conv_case(rng):
    k = int(rng.choice([3, 5]))
    d = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, d * (k - 1) // 2 + 2))
    T = int(rng.integers(d * (k - 1) + 1, 14))
    x = rng.standard_normal((2, 2, T))
    w = rng.standard_normal((3, 2, k))
    b = rng.standard_normal(3)
    return (lambda x, w, b: (conv1d(x, w, b, s, d, p),)), [x, w, b]


def _bn_case(mode):
    def make(rng):
        x = rng.standard_normal((3, 2, 5)) * 2 + 1
        g = rng.uniform(0.5, 1.5, 2)
        b = rng.standard_normal(2)
        rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)
        return (lambda x, g, b: (batchnorm1d(x, g, b, rm.copy(), rv.copy(), mode,
                                             update_stats=False),)), [x, g, b]
    return make


def _lstm_case(rng):
    B, I, Hd = 2, 3, 4
    x = rng.standard_normal((B, I))
    h = rng.standard_normal((B, Hd))
    c = rng.standard_normal((B, Hd))
    w = rng.standard_normal((4 * Hd, I + Hd)) * 0.5
    b = rng.standard_normal(4 * Hd) * 0.5
    return (lambda *t: lstm_cell(*t)), [x, h, c, w, b]


def _embed_case(rng):
    table = rng.standard_normal((5, 3))
    idx = rng.integers(0, 5, size=7)  # repeats exercise accumulation
    return (lambda t: (embedding_lookup(t, idx),)), [table]


def _xent_case(rng):
    logits = rng.standard_normal((4, 6)) * 2
    labels = rng.integers(0, 6, 4)
    wts = rng.standard_normal(4)
    return (lambda z: (softmax_cross_entropy(z, labels, wts)[0],)), [logits]


CASES = {
    "conv1d": _conv_case,
    "linear": lambda rng: ((lambda x, w, b: (linear(x, w, b),)),
                           [rng.standard_normal((3, 4)), rng.standard_normal((5, 4)),
                            rng.standard_normal(5)]),
    "batchnorm1d_train": _bn_case("train"),
    "batchnorm1d_eval": _bn_case("eval"),
    "relu": lambda rng: ((lambda x: (relu(x),)), [_away_from_zero(rng, (3, 4))]),
    "add": lambda rng: ((lambda a, b: (add(a, b),)),
                        [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))]),
    "mul": lambda rng: ((lambda a, b: (mul(a, b),)),
                        [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))]),
    "tensor_sum": lambda rng: ((lambda a: (tensor_sum(a),)), [rng.standard_normal((2, 3, 2))]),
    "global_avg_pool": lambda rng: ((lambda a: (global_avg_pool(a),)),
                                    [rng.standard_normal((2, 3, 5))]),
    "embedding_lookup": _embed_case,
    "select": lambda rng: ((lambda a: (select(a, 1),)), [rng.standard_normal((3, 2, 2))]),
    "lstm_cell": _lstm_case,
    "softmax_cross_entropy": _xent_case,
}


def run_case(name: str, seed: int) -> float:
    fn, arrays = CASES[name](np.random.default_rng(seed))
    return check(fn, arrays, seed)
