"""Vibration recordings -> normalized, windowed, split datasets.

Also provides a synthetic gearbox-like generator so the whole search can run
without the original recordings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import load_arrays, save_arrays

log = logging.getLogger(__name__)

NUM_CLASSES = 6
SPEEDS_HZ = (30.0, 35.0, 40.0, 45.0, 50.0)
LOADS = ("low", "high")
PAPER_RATIOS = (0.72, 0.08, 0.20)
SPLITS = ("train", "val", "test")


class RecordingFormatError(ValueError):
    pass


class DegenerateWindowError(ValueError):
    pass


@dataclass
class Recording:
    samples: np.ndarray
    label: int
    speed_hz: float | None = None
    load: str | None = None
    name: str = ""

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class WindowedDataset:
    windows: np.ndarray          # [N, 1, W]
    labels: np.ndarray           # [N] int64
    split: str = "train"
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim == 2:
            self.windows = self.windows[:, None, :]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.windows) != len(self.labels):
            raise ValueError("windows and labels differ in length")
        self.windows.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def window_length(self) -> int:
        return self.windows.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield (x, y) mini-batches; shuffled when ``rng`` is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.windows[idx], self.labels[idx]

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.windows[idx], self.labels[idx], self.split, self.num_classes)


# -- windowing and normalization ---------------------------------------------

def window_count(length: int, window: int, step: int) -> int:
    if length < window:
        raise ValueError(f"recording of length {length} is shorter than window {window}")
    return (length - window) // step + 1


def segment(recording, window: int = 1000, step: int = 50) -> np.ndarray:
    """Sliding windows [count, window] starting at 0, step, 2*step, ...; trailing remainder dropped."""
    x = np.asarray(recording.samples if isinstance(recording, Recording) else recording,
                   dtype=np.float64)
    if step < 1:
        raise ValueError("step must be >= 1")
    n = window_count(len(x), window, step)
    view = np.lib.stride_tricks.sliding_window_view(x, window)[::step]
    return np.array(view[:n])


def normalize(window) -> np.ndarray:
    """Min-max map of one window onto [-1, 1]."""
    w = np.asarray(window, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if not hi > lo:
        raise DegenerateWindowError("constant window cannot be normalized")
    out = (2.0 * w - (hi + lo)) / (hi - lo)
    # pin the extremes exactly; rounding can leave them one ulp inside
    out[w == lo] = -1.0
    out[w == hi] = 1.0
    return out


def normalize_windows(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row; constant rows are dropped with a warning.

    Returns (normalized windows, boolean mask of kept rows).
    """
    windows = np.asarray(windows, dtype=np.float64)
    lo = windows.min(axis=1, keepdims=True)
    hi = windows.max(axis=1, keepdims=True)
    keep = (hi > lo).ravel()
    if not keep.all():
        log.warning("dropping %d constant window(s)", int((~keep).sum()))
    w, lo, hi = windows[keep], lo[keep], hi[keep]
    out = (2.0 * w - (hi + lo)) / (hi - lo)
    out[w == lo] = -1.0
    out[w == hi] = 1.0
    return out, keep


# -- splitting ------------------------------------------------------------

def _apportion(total: int, ratios) -> np.ndarray:
    """Largest-remainder rounding of ``total * ratios`` to integers summing to ``total``."""
    quotas = total * np.asarray(ratios, dtype=np.float64)
    counts = np.floor(quotas).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _stratified_counts(class_sizes: np.ndarray, ratios) -> np.ndarray:
    """Per-class split counts whose column totals match global largest-remainder rounding."""
    r = np.asarray(ratios, dtype=np.float64)
    quotas = class_sizes[:, None] * r[None, :]
    counts = np.floor(quotas).astype(np.int64)
    frac = quotas - counts
    row_need = class_sizes - counts.sum(axis=1)
    col_need = _apportion(int(class_sizes.sum()), r) - counts.sum(axis=0)
    cells = sorted(((-frac[c, s], c, s) for c in range(len(class_sizes)) for s in range(len(r))))
    for _, c, s in cells:
        if row_need[c] > 0 and col_need[s] > 0:
            counts[c, s] += 1
            row_need[c] -= 1
            col_need[s] -= 1
    # greedy may strand a unit; place leftovers wherever both still need one
    for c in range(len(class_sizes)):
        for s in range(len(r)):
            while row_need[c] > 0 and col_need[s] > 0:
                counts[c, s] += 1
                row_need[c] -= 1
                col_need[s] -= 1
    return counts


def split(windows, labels, ratios=PAPER_RATIOS, rng: np.random.Generator | None = None,
          stratified: bool = True, groups=None,
          num_classes: int = NUM_CLASSES) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Disjoint, exhaustive train/val/test partition.

    ``groups`` (one id per window, e.g. the source recording) switches to a
    group-level split so that no recording contributes to two splits.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rng = rng or np.random.default_rng(0)
    N = len(labels)

    parts: list[list[np.ndarray]] = [[], [], []]
    if groups is not None:
        groups = np.asarray(groups)
        uniq = np.unique(groups)
        counts = _apportion(len(uniq), ratios)
        shuffled = uniq[rng.permutation(len(uniq))]
        bounds = np.cumsum(counts)[:-1]
        for s, chunk in enumerate(np.split(shuffled, bounds)):
            parts[s].append(np.flatnonzero(np.isin(groups, chunk)))
    elif stratified:
        sizes = np.bincount(labels, minlength=num_classes)
        if np.any(sizes == 0):
            missing = [c for c in range(num_classes) if sizes[c] == 0]
            raise ValueError(f"stratified split: no windows for class(es) {missing}")
        table = _stratified_counts(sizes, ratios)
        for c in range(num_classes):
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(len(idx))]
            for s, chunk in enumerate(np.split(idx, np.cumsum(table[c])[:-1])):
                parts[s].append(chunk)
    else:
        idx = rng.permutation(N)
        for s, chunk in enumerate(np.split(idx, np.cumsum(_apportion(N, ratios))[:-1])):
            parts[s].append(chunk)

    out = []
    for s, name in enumerate(SPLITS):
        idx = np.concatenate(parts[s]) if parts[s] else np.empty(0, dtype=np.int64)
        # shuffled order: evaluation with batch statistics needs mixed-class chunks
        idx = idx[rng.permutation(len(idx))]
        out.append(WindowedDataset(windows[idx], labels[idx], name, num_classes))
    return tuple(out)


# -- synthetic gearbox signals ----------------------------------------------

@dataclass(frozen=True)
class FaultSignature:
    period: float        # impulse spacing in samples at 40 Hz shaft speed
    resonance: float     # cycles per sample of the ringing after each impulse
    decay: float         # e-folding time of the ringing, samples


# Classes 4 and 5 ring at the same frequency and differ only in repetition
# period, so telling them apart needs long temporal context.
FAULTS: dict[int, FaultSignature] = {
    1: FaultSignature(period=45.0, resonance=0.31, decay=6.0),
    2: FaultSignature(period=75.0, resonance=0.22, decay=8.0),
    3: FaultSignature(period=110.0, resonance=0.38, decay=5.0),
    4: FaultSignature(period=120.0, resonance=0.14, decay=10.0),
    5: FaultSignature(period=240.0, resonance=0.14, decay=10.0),
}


def synth_generate(class_id: int, speed_hz: float, duration_samples: int, noise_sigma: float,
                   rng: np.random.Generator, load: str = "low") -> Recording:
    """Gear-mesh carrier (fundamental + 2 harmonics) plus a class-specific impulse train.

    Class 0 is healthy (no impulses). The carrier phases are drawn before any
    fault-specific randomness, so equal seeds give equal carriers across classes.
    """
    if not 0 <= class_id < NUM_CLASSES:
        raise ValueError(f"class_id {class_id} outside [0, {NUM_CLASSES})")
    if speed_hz <= 0:
        raise ValueError("speed_hz must be positive")
    if load not in LOADS:
        raise ValueError(f"load must be one of {LOADS}")
    n = np.arange(duration_samples, dtype=np.float64)
    gain = 1.0 if load == "low" else 1.25
    mesh = speed_hz / 1000.0
    phases = rng.uniform(0, 2 * np.pi, 3)
    signal = sum(amp * np.sin(2 * np.pi * (h + 1) * mesh * n + phases[h])
                 for h, amp in enumerate((1.0, 0.5, 0.25)))
    signal = gain * signal

    if class_id:
        sig = FAULTS[class_id]
        period = sig.period * 40.0 / speed_hz
        start = rng.uniform(0, period)
        onsets = np.arange(start, duration_samples, period)
        ring_len = int(math.ceil(6 * sig.decay))
        t = np.arange(ring_len, dtype=np.float64)
        ring = np.exp(-t / sig.decay) * np.sin(2 * np.pi * sig.resonance * t)
        impulses = np.zeros(duration_samples)
        for onset in onsets.astype(np.int64):
            stop = min(duration_samples, onset + ring_len)
            impulses[onset:stop] += ring[:stop - onset]
        signal = signal + 2.0 * gain * impulses

    if noise_sigma > 0:
        signal = signal + rng.normal(0.0, noise_sigma, duration_samples)
    return Recording(signal / 2.5, class_id, speed_hz, load,
                     f"class{class_id}_{speed_hz:g}hz_{load}")


def synth_recordings(windows_total: int, window: int, step: int, noise_sigma: float,
                     rng: np.random.Generator) -> list[Recording]:
    """One recording per (class, speed, load), lengths chosen to yield ``windows_total`` windows."""
    combos = [(c, s, ld) for c in range(NUM_CLASSES) for s in SPEEDS_HZ for ld in LOADS]
    per = _apportion(windows_total, np.full(len(combos), 1.0 / len(combos)))
    recs = []
    for (c, s, ld), k in zip(combos, per):
        if k < 1:
            raise ValueError(f"windows_total={windows_total} too small for {len(combos)} recordings")
        recs.append(synth_generate(c, s, window + (int(k) - 1) * step, noise_sigma, rng, ld))
    return recs


# -- recording files ----------------------------------------------------------

def write_recording(path, rec: Recording) -> None:
    lines = [f"label={rec.label}"]
    if rec.speed_hz is not None:
        lines.append(f"speed_hz={rec.speed_hz!r}")
    lines.extend(repr(float(v)) for v in rec.samples)
    Path(path).write_text("\n".join(lines) + "\n")


def read_recording(path) -> Recording:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise RecordingFormatError(f"{path.name}:1: empty file")
    head = lines[0].strip()
    if not head.startswith("label="):
        raise RecordingFormatError(f"{path.name}:1: expected header 'label=<int>', got {head!r}")
    try:
        label = int(head[len("label="):])
    except ValueError:
        raise RecordingFormatError(f"{path.name}:1: label is not an integer: {head!r}") from None
    body_start = 1
    speed = None
    if len(lines) > 1 and lines[1].strip().startswith("speed_hz="):
        try:
            speed = float(lines[1].strip()[len("speed_hz="):])
        except ValueError:
            raise RecordingFormatError(f"{path.name}:2: bad speed_hz value") from None
        body_start = 2
    samples = []
    for lineno, text in enumerate(lines[body_start:], start=body_start + 1):
        text = text.strip()
        if not text:
            continue
        try:
            samples.append(float(text))
        except ValueError:
            raise RecordingFormatError(f"{path.name}:{lineno}: non-numeric sample {text!r}") from None
    if not samples:
        raise RecordingFormatError(f"{path.name}:{body_start + 1}: no samples")
    return Recording(np.array(samples), label, speed, None, path.stem)


def load_recordings(path) -> list[Recording]:
    """Read one recording file, or every regular file in a directory (sorted by name)."""
    path = Path(path)
    if path.is_file():
        return [read_recording(path)]
    files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise RecordingFormatError(f"{path}: no recording files found")
    return [read_recording(f) for f in files]


# -- assembly and caching ----------------------------------------------------

@dataclass
class DatasetSplits:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    info: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> WindowedDataset:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def sizes(self) -> dict[str, int]:
        return {s: len(self[s]) for s in SPLITS}


def build_splits(recordings: list[Recording], window: int, step: int, ratios,
                 rng: np.random.Generator, stratified: bool = True,
                 group_by_recording: bool = False) -> DatasetSplits:
    chunks, labels, groups = [], [], []
    for gi, rec in enumerate(recordings):
        w, keep = normalize_windows(segment(rec, window, step))
        chunks.append(w)
        labels.append(np.full(len(w), rec.label, dtype=np.int64))
        groups.append(np.full(len(w), gi))
    windows = np.concatenate(chunks)
    y = np.concatenate(labels)
    g = np.concatenate(groups) if group_by_recording else None
    num_classes = max(NUM_CLASSES, int(y.max()) + 1)
    tr, va, te = split(windows, y, ratios, rng, stratified, g, num_classes)
    return DatasetSplits(tr, va, te)


def save_splits(path, splits: DatasetSplits) -> None:
    arrays = {}
    for s in SPLITS:
        arrays[f"{s}/windows"] = splits[s].windows
        arrays[f"{s}/labels"] = splits[s].labels.astype(np.float64)
    save_arrays(path, arrays)


def load_splits(path) -> DatasetSplits:
    arrays = load_arrays(path)
    parts = []
    for s in SPLITS:
        try:
            w, y = arrays[f"{s}/windows"], arrays[f"{s}/labels"]
        except KeyError as exc:
            raise ValueError(f"{path}: dataset cache lacks {exc.args[0]}") from None
        parts.append(WindowedDataset(w, y.astype(np.int64), s))
    k = max(NUM_CLASSES, max(int(p.labels.max()) + 1 for p in parts if len(p)))
    for p in parts:
        p.num_classes = k
    return DatasetSplits(*parts)
