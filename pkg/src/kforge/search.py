"""Architecture search loop: shared-weight child training, controller updates,
derivation of the best sampled architecture and from-scratch retraining."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .autodiff import (
    Adam,
    CheckpointError,
    Tape,
    Tensor,
    cosine_annealing_lr,
    load_arrays,
    save_arrays,
    softmax_cross_entropy,
    stream,
    zero_grad,
)
from .controller import (
    ControllerState,
    RewardBaseline,
    SampleRecord,
    baseline_update,
    controller_init,
    reinforce_update,
    sample_architecture,
    sample_architectures,
)
from .data import DatasetSplits, WindowedDataset
from .space import (
    NUM_CHOICES,
    Architecture,
    ChildNetwork,
    KernelBank,
    StructureConfig,
    build_child,
    format_architecture,
    kernel_bank_init,
    space_size,
    validate_architecture,
)

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "mean_acc", "max_acc", "min_acc", "baseline", "ctrl_loss", "seconds")

RewardFn = Callable[[Architecture], float]


@dataclass
class SearchConfig:
    epochs: int = 200                  # N
    controller_steps: int = 5          # N_c
    archs_per_step: int = 20           # m
    final_samples: int = 100           # M
    batch_size: int = 128
    child_lr: float = 1e-3
    child_l2: float = 1e-4
    controller_lr: float = 0.01
    controller_momentum: float = 0.9
    controller_hidden: int = 64
    grad_clip: float = 5.0
    baseline_decay: float = 0.95
    reward_batch_size: int = 128
    reward_full_val: bool = False
    fig6_sample_count: int = 50
    scratch_epochs: int = 50
    eval_batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "controller_steps", "archs_per_step", "final_samples",
                     "batch_size", "reward_batch_size", "fig6_sample_count", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.scratch_epochs < 0:
            raise ValueError("scratch_epochs must be >= 0")


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append({k: row[k] for k in METRICS_HEADER})

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for r in self.rows:
                w.writerow([r["epoch"]] + [f"{r[k]:.6f}" for k in METRICS_HEADER[1:]])


# -- evaluation ---------------------------------------------------------------

def predict(net: ChildNetwork, x: np.ndarray, mode: str = "eval", batch_size: int = 256) -> np.ndarray:
    preds = []
    for start in range(0, len(x), batch_size):
        logits = net(Tensor(x[start:start + batch_size]), mode)
        preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def evaluate(model, dataset: WindowedDataset, mode: str = "eval", batch_size: int = 256) -> float:
    """Fraction of windows whose argmax prediction equals the label.

    ``model`` is a ChildNetwork or a (KernelBank, architecture) pair.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    net = model if isinstance(model, ChildNetwork) else build_child(model[1], model[0])
    return float(np.mean(predict(net, dataset.windows, mode, batch_size) == dataset.labels))


def batch_accuracy(net: ChildNetwork, x: np.ndarray, y: np.ndarray) -> float:
    """Accuracy on one batch using its own normalization statistics."""
    logits = net(Tensor(x), "batch")
    return float(np.mean(np.argmax(logits.data, axis=1) == y))


def train_step(net: ChildNetwork, x: np.ndarray, y: np.ndarray, optimizer: Adam) -> float:
    params = net.parameters()
    zero_grad(params)
    with Tape() as tape:
        logits = net(Tensor(x), "train")
        loss, _ = softmax_cross_entropy(logits, y)
    tape.backward(loss)
    optimizer.step(params)
    zero_grad(params)
    return loss.item()


# -- search phases ------------------------------------------------------------

@dataclass
class SearchCounters:
    shared_steps: int = 0
    reward_evaluations: int = 0
    sampled_for_training: list = field(default_factory=list)


def shared_train_epoch(bank: KernelBank, controller: ControllerState, train: WindowedDataset,
                       optimizer: Adam, batch_rng: np.random.Generator,
                       sample_rng: np.random.Generator, batch_size: int = 128,
                       counters: SearchCounters | None = None) -> list[Architecture]:
    """One pass over ``train``: each mini-batch trains one freshly sampled child.

    Gradients land directly in the bank, so the trained kernels are reused by
    every later child that picks the same (position, choice).
    """
    archs = []
    for x, y in train.batches(batch_size, batch_rng):
        arch = sample_architecture(controller, sample_rng).architecture
        train_step(build_child(arch, bank), x, y, optimizer)
        archs.append(arch)
        if counters is not None:
            counters.shared_steps += 1
            counters.sampled_for_training.append(arch)
    return archs


def _val_batch(val: WindowedDataset, size: int, rng: np.random.Generator):
    if size >= len(val):
        return val.windows, val.labels
    idx = np.sort(rng.choice(len(val), size=size, replace=False))
    return val.windows[idx], val.labels[idx]


def controller_train_phase(controller: ControllerState, bank: KernelBank | None,
                           val: WindowedDataset | None, baseline: RewardBaseline,
                           config: SearchConfig, sample_rng: np.random.Generator,
                           batch_rng: np.random.Generator | None = None,
                           reward_fn: RewardFn | None = None,
                           counters: SearchCounters | None = None) -> list[float]:
    """N_c REINFORCE updates, each on m freshly sampled architectures.

    Rewards come from ``reward_fn`` when given, otherwise from shared-weight
    accuracy on one validation mini-batch (the full set with
    ``config.reward_full_val``) drawn per step and shared by its m children.
    """
    if reward_fn is None and (val is None or len(val) == 0):
        raise ValueError("controller training needs a non-empty validation set")
    losses = []
    for _ in range(config.controller_steps):
        records = sample_architectures(controller, sample_rng, config.archs_per_step)
        if reward_fn is None:
            if config.reward_full_val:
                for r in records:
                    r.reward = evaluate((bank, r.architecture), val, "batch",
                                        config.eval_batch_size)
            else:
                x, y = _val_batch(val, config.reward_batch_size, batch_rng)
                for r in records:
                    r.reward = batch_accuracy(build_child(r.architecture, bank), x, y)
        else:
            for r in records:
                r.reward = float(reward_fn(r.architecture))
        if counters is not None:
            counters.reward_evaluations += len(records)
        losses.append(reinforce_update(controller, records, baseline))
        baseline_update(baseline, [r.reward for r in records])
    return losses


@dataclass
class Derivation:
    samples: list[tuple[Architecture, float, bool]]   # (arch, reward, duplicate?)
    winner: Architecture
    winner_reward: float
    tied: list[Architecture]

    def to_json(self) -> dict:
        return {
            "samples": [{"arch": format_architecture(a), "reward": r, "duplicate": d}
                        for a, r, d in self.samples],
            "unique_evaluated": sum(1 for _, _, d in self.samples if not d),
            "winner": format_architecture(self.winner),
            "winner_reward": self.winner_reward,
            "ties": [format_architecture(a) for a in self.tied],
        }


def _pick_best(archs: list[Architecture], reward_of: Callable[[Architecture], float]) -> Derivation:
    memo: dict[Architecture, float] = {}
    samples = []
    for a in archs:
        dup = a in memo
        if not dup:
            memo[a] = float(reward_of(a))
        samples.append((a, memo[a], dup))
    best = max(memo.values())
    tied = sorted(a for a, r in memo.items() if r == best)
    return Derivation(samples, tied[0], best, tied)


def derive_best(controller: ControllerState, bank: KernelBank | None, val: WindowedDataset | None,
                M: int, rng: np.random.Generator, reward_fn: RewardFn | None = None,
                eval_batch_size: int = 256) -> Derivation:
    """Sample M architectures, score each once on the whole validation set, keep the best.

    Ties go to the lexicographically smallest token sequence.
    """
    archs = [r.architecture for r in sample_architectures(controller, rng, M)]
    if reward_fn is None:
        def reward_fn(a):
            return evaluate((bank, a), val, "batch", eval_batch_size)
    return _pick_best(archs, reward_fn)


def random_search_baseline(budget: int, bank: KernelBank | None, val: WindowedDataset | None,
                           rng: np.random.Generator, num_layers: int | None = None,
                           reward_fn: RewardFn | None = None, n: int = NUM_CHOICES,
                           eval_batch_size: int = 256) -> Derivation:
    """Uniformly sampled architectures scored exactly like ``derive_best``.

    When the budget covers the whole space, every architecture is enumerated
    once instead of sampled.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    L = num_layers if num_layers is not None else bank.structure.num_layers
    if budget >= space_size(n, L):
        grid = np.indices((n,) * L).reshape(L, -1).T
        archs = [tuple(int(t) for t in row) for row in grid]
    else:
        archs = [tuple(int(t) for t in rng.integers(0, n, L)) for _ in range(budget)]
    if reward_fn is None:
        def reward_fn(a):
            return evaluate((bank, a), val, "batch", eval_batch_size)
    return _pick_best(archs, reward_fn)


@dataclass
class ScratchResult:
    net: ChildNetwork
    test_accuracy: float
    best_epoch: int
    curve: list[dict]


def train_from_scratch(arch, structure: StructureConfig, splits: DatasetSplits,
                       config: SearchConfig, seed: int | None = None,
                       epochs: int | None = None) -> ScratchResult:
    """Fresh weights, Adam + L2, cosine-annealed per epoch; keeps the best-validation epoch."""
    seed = config.seed if seed is None else seed
    epochs = config.scratch_epochs if epochs is None else epochs
    bank = kernel_bank_init(structure, stream(seed, "scratch-init"))
    net = build_child(arch, bank)
    opt = Adam(config.child_lr, weight_decay=config.child_l2)
    batch_rng = stream(seed, "scratch-batches")
    curve = []
    best_val, best_epoch, best_state = -1.0, -1, None
    if epochs == 0:
        best_state = bank.snapshot()
    for epoch in range(epochs):
        opt.lr = cosine_annealing_lr(epoch, epochs, config.child_lr)
        losses = [train_step(net, x, y, opt)
                  for x, y in splits.train.batches(config.batch_size, batch_rng)]
        val_acc = evaluate(net, splits.val, "eval", config.eval_batch_size)
        curve.append({"epoch": epoch + 1, "lr": opt.lr, "train_loss": float(np.mean(losses)),
                      "val_acc": val_acc})
        if val_acc > best_val:
            best_val, best_epoch, best_state = val_acc, epoch + 1, bank.snapshot()
        log.debug("scratch epoch %d loss %.4f val %.4f", epoch + 1, curve[-1]["train_loss"], val_acc)
    bank.restore(best_state)
    test_acc = evaluate(net, splits.test, "eval", config.eval_batch_size)
    return ScratchResult(net, test_acc, best_epoch, curve)


# -- full pipeline --------------------------------------------------------------

@dataclass
class SearchResult:
    metrics: MetricsLog
    derivation: Derivation
    bank: KernelBank
    controller: ControllerState
    baseline: RewardBaseline
    counters: SearchCounters
    scratch: ScratchResult | None = None


def run_search(splits: DatasetSplits, structure: StructureConfig, config: SearchConfig,
               retrain: bool = True, progress: Callable[[str], None] | None = None) -> SearchResult:
    """The whole loop: N epochs of (shared training, controller phase, metrics),
    then derive the best of M samples and optionally retrain it from scratch."""
    seed = config.seed
    bank = kernel_bank_init(structure, stream(seed, "bank-init"))
    controller = controller_init(structure.num_layers, stream(seed, "controller-init"),
                                 hidden_size=config.controller_hidden,
                                 input_size=config.controller_hidden, lr=config.controller_lr,
                                 momentum=config.controller_momentum, grad_clip=config.grad_clip)
    baseline = RewardBaseline(decay=config.baseline_decay)
    optimizer = Adam(config.child_lr, weight_decay=config.child_l2)
    sample_rng = stream(seed, "controller-sample")
    shared_batches = stream(seed, "shared-batches")
    reward_batches = stream(seed, "reward-batches")
    fig6_rng = stream(seed, "fig6")
    counters = SearchCounters()
    metrics = MetricsLog()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        optimizer.lr = cosine_annealing_lr(epoch, config.epochs, config.child_lr)
        shared_train_epoch(bank, controller, splits.train, optimizer, shared_batches, sample_rng,
                           config.batch_size, counters)
        losses = controller_train_phase(controller, bank, splits.val, baseline, config,
                                        sample_rng, reward_batches, counters=counters)
        probe = sample_architectures(controller, fig6_rng, config.fig6_sample_count)
        accs = np.array([evaluate((bank, r.architecture), splits.val, "batch",
                                  config.eval_batch_size) for r in probe])
        metrics.append(epoch=epoch + 1, mean_acc=float(accs.mean()), max_acc=float(accs.max()),
                       min_acc=float(accs.min()), baseline=baseline.current(),
                       ctrl_loss=float(np.mean(losses)), seconds=time.perf_counter() - t0)
        if progress:
            r = metrics.rows[-1]
            progress(f"epoch {epoch + 1}/{config.epochs} mean_acc {r['mean_acc']:.4f} "
                     f"max_acc {r['max_acc']:.4f} baseline {r['baseline']:.4f}")

    derivation = derive_best(controller, bank, splits.val, config.final_samples,
                             stream(seed, "derive"), eval_batch_size=config.eval_batch_size)
    result = SearchResult(metrics, derivation, bank, controller, baseline, counters)
    if retrain:
        result.scratch = train_from_scratch(derivation.winner, structure, splits, config)
        if progress:
            progress(f"derived {format_architecture(derivation.winner)} "
                     f"test_acc {result.scratch.test_accuracy:.4f}")
    return result


def write_derivation(path, derivation: Derivation, extra: dict | None = None) -> None:
    payload = derivation.to_json()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def config_dict(config: SearchConfig) -> dict:
    return asdict(config)


# -- checkpoints ----------------------------------------------------------------

_STRUCTURE_FIELDS = ("num_blocks", "layers_per_block", "base_channels", "stem_kernel",
                     "stem_stride", "down_kernel", "down_stride", "num_classes", "input_length")


def structure_array(structure: StructureConfig) -> np.ndarray:
    return np.array([getattr(structure, f) for f in _STRUCTURE_FIELDS], dtype=np.float64)


def structure_from_array(values: np.ndarray) -> StructureConfig:
    values = np.asarray(values).ravel()
    if values.shape != (len(_STRUCTURE_FIELDS),) or np.any(values != np.round(values)):
        raise CheckpointError("malformed model/structure entry")
    return StructureConfig(**{f: int(v) for f, v in zip(_STRUCTURE_FIELDS, values)})


def save_model(path, net: ChildNetwork, extra: dict[str, np.ndarray] | None = None) -> None:
    """Bank arrays plus the architecture and structure needed to rebuild the child."""
    arrays = dict(net.bank.named_arrays())
    arrays["model/arch"] = np.array(net.arch, dtype=np.float64)
    arrays["model/structure"] = structure_array(net.structure)
    arrays["model/n"] = np.array([net.bank.n], dtype=np.float64)
    arrays.update(extra or {})
    save_arrays(path, arrays)


def load_model(path) -> ChildNetwork:
    arrays = load_arrays(path)
    try:
        structure = structure_from_array(arrays["model/structure"])
        arch = tuple(int(t) for t in arrays["model/arch"])
        n = int(arrays["model/n"][0])
    except KeyError as exc:
        raise CheckpointError(f"{path}: not a model checkpoint (missing {exc.args[0]})") from None
    try:
        validate_architecture(arch, structure.num_layers)
        bank = kernel_bank_init(structure, np.random.default_rng(0), n)
        bank.restore(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: manifest does not match the stored model: {exc}") from None
    return build_child(arch, bank)


def save_search_state(path, controller: ControllerState, baseline: RewardBaseline) -> None:
    arrays = dict(controller.named_arrays())
    arrays["ctrl/baseline"] = np.array([baseline.value, float(baseline.initialized),
                                        baseline.decay])
    save_arrays(path, arrays)
