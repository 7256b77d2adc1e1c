"""Minimal mini-batch SGD trainer used to produce the original networks.

Plain SGD (no momentum) keeps runs bit-reproducible under a fixed seed.  The
ReLU subgradient at a kink is taken as 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .network import Layer, Network, ShapeError


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0
    loss: str = "sse"  # "sse" | "softmax_ce"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.loss not in ("sse", "softmax_ce"):
            raise ValueError(f"unknown loss {self.loss!r}")


def _forward_all(weights, biases, X):
    """Batched forward pass; returns hidden pre-activations, activations, outputs."""
    pre, acts = [], [X]
    A = X
    for W, b in zip(weights[:-1], biases[:-1]):
        Z = A @ W.T + b
        A = np.maximum(0.0, Z)
        pre.append(Z)
        acts.append(A)
    Y = A @ weights[-1].T + biases[-1]
    return pre, acts, Y


def _softmax(Y):
    E = np.exp(Y - Y.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def _loss_and_output_grad(Y, T, kind):
    n = Y.shape[0]
    if kind == "sse":
        diff = Y - T
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected later
            return float(np.sum(diff * diff)) / n, 2.0 * diff / n
    P = _softmax(Y)
    eps = 1e-12
    return float(-np.sum(T * np.log(P + eps))) / n, (P - T) / n


def _gradients(weights, biases, X, T, kind):
    pre, acts, Y = _forward_all(weights, biases, X)
    loss, delta = _loss_and_output_grad(Y, T, kind)
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    gW[-1] = delta.T @ acts[-1]
    gb[-1] = delta.sum(axis=0)
    for i in range(len(weights) - 2, -1, -1):
        delta = (delta @ weights[i + 1]) * (pre[i] > 0.0)
        gW[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
    return loss, gW, gb


def dataset_loss(net: Network, data: Dataset, kind: str = "sse") -> float:
    """Mean per-sample loss of the network on the dataset."""
    weights = [layer.weights for layer in net.layers]
    biases = [layer.bias for layer in net.layers]
    _, _, Y = _forward_all(weights, biases, data.inputs)
    loss, _ = _loss_and_output_grad(Y, data.targets, kind)
    return loss


def train(net: Network, data: Dataset, cfg: TrainConfig) -> Network:
    """Train a copy of ``net`` on ``data``; deterministic under ``cfg.seed``."""
    if data.input_dim != net.input_dim or data.target_dim != net.output_dim:
        raise ShapeError(
            f"dataset dims ({data.input_dim}->{data.target_dim}) do not match "
            f"network ({net.input_dim}->{net.output_dim})"
        )
    if cfg.batch_size > len(data):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {len(data)}")
    weights = [layer.weights.copy() for layer in net.layers]
    biases = [layer.bias.copy() for layer in net.layers]
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, gW, gb = _gradients(
                weights, biases, data.inputs[idx], data.targets[idx], cfg.loss
            )
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            for i in range(len(weights)):
                weights[i] -= cfg.learning_rate * gW[i]
                biases[i] -= cfg.learning_rate * gb[i]
    return Network([Layer(W, b) for W, b in zip(weights, biases)])


def gradient_check(net: Network, x0, t, h: float = 1e-5, kink_tol: float = 1e-4) -> float:
    """Max relative error between backprop and central finite differences.

    Uses the sum-of-squares loss on a single sample.  Returns NaN when any
    hidden pre-activation lies within ``kink_tol`` of zero: the loss is not
    differentiable there and the comparison is excluded.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, -1)
    t = np.asarray(t, dtype=np.float64).reshape(1, -1)
    weights = [layer.weights.copy() for layer in net.layers]
    biases = [layer.bias.copy() for layer in net.layers]
    pre, _, _ = _forward_all(weights, biases, x0)
    if any(np.any(np.abs(Z) < kink_tol) for Z in pre):
        return float("nan")
    _, gW, gb = _gradients(weights, biases, x0, t, "sse")

    def loss_at():
        _, _, Y = _forward_all(weights, biases, x0)
        diff = Y - t
        return float(np.sum(diff * diff))

    worst = 0.0
    for arrs, grads in ((weights, gW), (biases, gb)):
        for arr, grad in zip(arrs, grads):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ij = it.multi_index
                orig = arr[ij]
                arr[ij] = orig + h
                up = loss_at()
                arr[ij] = orig - h
                down = loss_at()
                arr[ij] = orig
                fd = (up - down) / (2.0 * h)
                scale = max(1.0, abs(fd), abs(grad[ij]))
                worst = max(worst, abs(fd - grad[ij]) / scale)
    return worst
