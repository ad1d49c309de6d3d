"""Optimizers, gradient clipping and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .tensor import Tensor


def cosine_annealing_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


class SGD:
    """Plain SGD; with ``momentum > 0`` a heavy-ball velocity buffer is kept per parameter."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.steps = 0
        self.velocity: dict[int, np.ndarray] = {}

    def step(self, params: Iterable[Tensor]) -> None:
        for p in params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {p.grad.shape} != parameter {p.data.shape}")
            if self.momentum:
                v = self.velocity.get(id(p))
                if v is None:
                    v = self.velocity[id(p)] = np.zeros_like(p.data)
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad
        self.steps += 1


class Adam:
    """Adam with L2 regularization coupled into the gradient.

    Moments and bias-correction counts are kept per parameter, so a parameter
    that receives no gradient in a step is left untouched and its own step
    count does not advance. This matters for the shared kernel bank, where
    each child touches only its own entries.
    """

    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self.state: dict[int, dict] = {}

    def step(self, params: Iterable[Tensor]) -> None:
        for p in params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape {p.grad.shape} != parameter {p.data.shape}")
            st = self.state.get(id(p))
            if st is None:
                st = self.state[id(p)] = {
                    "t": 0, "m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "ref": p,
                }
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            st["t"] += 1
            t = st["t"]
            m, v = st["m"], st["v"]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1 ** t)
            vhat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.steps += 1


def sgd_step(params: list[Tensor], grads: list[np.ndarray], state: SGD) -> list[Tensor]:
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    state.step(params)
    return params


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: Adam) -> list[Tensor]:
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    state.step(params)
    return params


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
