"""LSTM policy over kernel tokens, trained with REINFORCE and a moving-average baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    SGD,
    Tape,
    Tensor,
    add,
    categorical_sample_rows,
    clip_grad_norm,
    embedding_lookup,
    linear,
    log_softmax,
    lstm_cell,
    softmax,
    softmax_cross_entropy,
    zero_grad,
)
from .space import NUM_CHOICES, Architecture


@dataclass
class ControllerState:
    """Policy parameters: start/token embeddings, one LSTM layer, output head."""

    embed: Tensor          # [n + 1, I]; row n is the start token
    lstm_w: Tensor         # [4H, I + H]
    lstm_b: Tensor         # [4H]
    head_w: Tensor         # [n, H]
    head_b: Tensor         # [n]
    num_layers: int        # tokens per architecture (L)
    optimizer: SGD = field(default_factory=lambda: SGD(0.01, 0.9))
    grad_clip: float = 5.0

    @property
    def n(self) -> int:
        return self.head_w.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.head_w.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.embed, self.lstm_w, self.lstm_b, self.head_w, self.head_b]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"ctrl/embed": self.embed.data, "ctrl/lstm/w": self.lstm_w.data,
                "ctrl/lstm/b": self.lstm_b.data, "ctrl/head/w": self.head_w.data,
                "ctrl/head/b": self.head_b.data}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for key, dst in self.named_arrays().items():
            if arrays[key].shape != dst.shape:
                raise ValueError(f"{key}: stored shape {arrays[key].shape} != {dst.shape}")
            dst[...] = arrays[key]


def controller_init(num_layers: int, rng: np.random.Generator, n: int = NUM_CHOICES,
                    input_size: int = 64, hidden_size: int = 64, lr: float = 0.01,
                    momentum: float = 0.9, grad_clip: float = 5.0) -> ControllerState:
    # Large recurrent weights and an open output gate keep hidden states big
    # and position-dependent; at lr 0.01 the head update scales with |h|^2.
    # The head starts near zero so the initial policy is close to uniform.
    I, H = input_size, hidden_size
    lstm_w = np.concatenate([rng.uniform(-0.5, 0.5, (4 * H, I)),
                             rng.uniform(-2.0, 2.0, (4 * H, H))], axis=1)
    lstm_b = np.zeros(4 * H)
    lstm_b[3 * H:] = 2.0
    return ControllerState(
        embed=Tensor(rng.standard_normal((n + 1, I)), True, "ctrl/embed"),
        lstm_w=Tensor(lstm_w, True, "ctrl/lstm/w"),
        lstm_b=Tensor(lstm_b, True, "ctrl/lstm/b"),
        head_w=Tensor(rng.uniform(-0.01, 0.01, (n, H)), True, "ctrl/head/w"),
        head_b=Tensor(np.zeros(n), True, "ctrl/head/b"),
        num_layers=num_layers,
        optimizer=SGD(lr, momentum),
        grad_clip=grad_clip,
    )


@dataclass
class SampleRecord:
    architecture: Architecture
    log_probs: list[float]
    reward: float | None = None

    @property
    def log_prob(self) -> float:
        return float(sum(self.log_probs))


@dataclass
class RewardBaseline:
    """Exponential moving average of rewards."""

    decay: float = 0.95
    value: float = 0.0
    initialized: bool = False

    def current(self) -> float:
        # before any rewards arrive the baseline reads as zero
        return self.value if self.initialized else 0.0


def _step_logits(state: ControllerState, prev_tokens, h, c):
    x = embedding_lookup(state.embed, prev_tokens)
    h, c = lstm_cell(x, h, c, state.lstm_w, state.lstm_b)
    return linear(h, state.head_w, state.head_b), h, c


def sample_architectures(state: ControllerState, rng: np.random.Generator,
                         count: int) -> list[SampleRecord]:
    """Draw ``count`` architectures token by token, recording per-step log-probabilities."""
    H = state.hidden_size
    h = Tensor(np.zeros((count, H)))
    c = Tensor(np.zeros((count, H)))
    prev = np.full(count, state.n, dtype=np.int64)
    tokens = np.empty((count, state.num_layers), dtype=np.int64)
    logps = np.empty((count, state.num_layers))
    for l in range(state.num_layers):
        logits, h, c = _step_logits(state, prev, h, c)
        lp = log_softmax(logits.data)
        a = categorical_sample_rows(softmax(logits.data), rng)
        tokens[:, l] = a
        logps[:, l] = lp[np.arange(count), a]
        prev = a
    return [SampleRecord(tuple(int(t) for t in tokens[i]), logps[i].tolist())
            for i in range(count)]


def sample_architecture(state: ControllerState, rng: np.random.Generator) -> SampleRecord:
    return sample_architectures(state, rng, 1)[0]


def token_log_probs(state: ControllerState, archs) -> np.ndarray:
    """[m, L] teacher-forced log P(a_l | a_<l) for each architecture."""
    tokens = np.asarray(archs, dtype=np.int64).reshape(len(archs), -1)
    m, L = tokens.shape
    if L != state.num_layers:
        raise ValueError(f"architectures have {L} tokens, controller emits {state.num_layers}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= state.n):
        raise ValueError(f"token outside [0, {state.n})")
    H = state.hidden_size
    h = Tensor(np.zeros((m, H)))
    c = Tensor(np.zeros((m, H)))
    prev = np.full(m, state.n, dtype=np.int64)
    out = np.empty((m, L))
    for l in range(L):
        logits, h, c = _step_logits(state, prev, h, c)
        out[:, l] = log_softmax(logits.data)[np.arange(m), tokens[:, l]]
        prev = tokens[:, l]
    return out


def log_prob_of(state: ControllerState, arch) -> float:
    return float(token_log_probs(state, [tuple(arch)])[0].sum())


def policy_gradient(state: ControllerState, records: list[SampleRecord],
                    baseline: float) -> float:
    """Backpropagate the baseline-corrected surrogate into ``.grad``.

    surrogate = -(1/m) sum_k sum_l log P(a_l^k | a_<l^k) * (R_k - baseline)
    Returns the surrogate value.
    """
    if not records:
        raise ValueError("need at least one sampled architecture")
    if any(r.reward is None for r in records):
        raise ValueError("every record needs a reward before the update")
    m = len(records)
    tokens = np.array([r.architecture for r in records], dtype=np.int64)
    adv = np.array([r.reward for r in records], dtype=np.float64) - baseline
    H = state.hidden_size
    zero_grad(state.parameters())
    with Tape() as tape:
        h = Tensor(np.zeros((m, H)))
        c = Tensor(np.zeros((m, H)))
        prev = np.full(m, state.n, dtype=np.int64)
        # per-token negative log-likelihood weighted by advantage / m
        terms = []
        for l in range(state.num_layers):
            logits, h, c = _step_logits(state, prev, h, c)
            nll, _ = softmax_cross_entropy(logits, tokens[:, l], weights=adv / m)
            terms.append(nll)
            prev = tokens[:, l]
        loss = terms[0]
        for t in terms[1:]:
            loss = add(loss, t)
    tape.backward(loss)
    return loss.item()


def reinforce_update(state: ControllerState, records: list[SampleRecord],
                     baseline: RewardBaseline) -> float:
    """One SGD step on the surrogate using the baseline as it stands now.

    The caller updates the baseline afterwards (see ``baseline_update``).
    """
    loss = policy_gradient(state, records, baseline.current())
    params = state.parameters()
    if state.grad_clip:
        clip_grad_norm(params, state.grad_clip)
    state.optimizer.step(params)
    zero_grad(params)
    return loss


def baseline_update(baseline: RewardBaseline, rewards) -> RewardBaseline:
    rewards = list(rewards)
    if not rewards:
        raise ValueError("baseline update needs at least one reward")
    mean = float(np.mean(rewards))
    if not baseline.initialized:
        baseline.value = mean
        baseline.initialized = True
    else:
        baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * mean
    return baseline
