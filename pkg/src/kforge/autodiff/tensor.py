"""Tensor values and the recording tape used for reverse-mode differentiation."""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "kforge_active_tape", default=None
)


class TapeError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array that can take part in gradient recording.

    Parameters are plain tensors with ``requires_grad=True``; optimizers
    mutate ``data`` in place so every holder of a reference sees the update.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are appended in execution order. A tape can be
    replayed backward exactly once.
    """

    entries: list[TapeEntry] = field(default_factory=list)
    consumed: bool = False
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record it if any input needs a gradient."""
    tape = _ACTIVE_TAPE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(op, inputs, out, backward)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients are summed across fan-out and added onto any existing ``.grad``
    of leaf tensors. The tape is consumed; a second call raises TapeError.
    """
    if tape.consumed:
        raise TapeError("backward() called twice on the same tape")
    if loss.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(e.output) for e in tape.entries}
    if id(loss) not in produced:
        raise TapeError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tape.consumed = True
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        gout = grads.pop(id(entry.output), None)
        if gout is None:
            continue
        entry.output.grad = gout
        gins = entry.backward(gout)
        for t, g in zip(entry.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            grads[key] = grads[key] + g if key in grads else g
    for key, t in leaves.items():
        t.accumulate_grad(grads[key])
