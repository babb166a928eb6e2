"""Shared test utilities: independent oracles used by the per-module suites
and by the acceptance gate (finite differences, scalar attention, expanded-
sample metric formulas)."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from defectvit.tensor import Tensor


def numeric_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar function f with respect to x.

    f must recompute the forward pass from x.data on every call; x.data is
    wiggled in place one element at a time.
    """
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4, atol: float = 1e-7):
    analytic = np.asarray(analytic)
    assert analytic.shape == numeric.shape, f"grad shape {analytic.shape} vs {numeric.shape}"
    tol = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    bad = np.abs(analytic - numeric) > tol
    assert not bad.any(), (
        f"gradients disagree at {bad.sum()} / {bad.size} elements; "
        f"worst |a-n| = {np.abs(analytic - numeric).max():.3e}"
    )


def check_op_gradients(
    build_loss: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    rtol: float = 1e-4,
    h: float = 1e-5,
):
    """Compare reverse-mode gradients of build_loss against central differences.

    build_loss maps the given leaf tensors to a scalar Tensor and is
    re-invoked from scratch for every finite-difference probe, so any
    randomness inside it must be seeded per call.
    """
    loss = build_loss(inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for t in inputs:
        t.zero_grad()
    for t, a in zip(inputs, analytic):
        n = numeric_grad(lambda: build_loss(inputs).item(), t, h=h)
        assert_grads_close(a, n, rtol=rtol)


def attention_oracle(q, k, v):
    """Brute-force scalar implementation of scaled dot-product attention."""
    n, d = len(q), len(q[0])
    out = [[0.0] * d for _ in range(n)]
    for i in range(n):
        scores = []
        for j in range(n):
            s = 0.0
            for a in range(d):
                s += q[i][a] * k[j][a]
            scores.append(s / math.sqrt(d))
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        z = sum(exps)
        weights = [e / z for e in exps]
        for c in range(d):
            out[i][c] = sum(weights[j] * v[j][c] for j in range(n))
    return np.array(out)


def expand_samples(counts):
    """Per-sample (truth, prediction) pairs recovered from a count matrix."""
    pairs = []
    for t in range(counts.shape[0]):
        for p in range(counts.shape[1]):
            pairs.extend([(t, p)] * int(counts[t, p]))
    return pairs


def score_oracle(counts):
    """Independent evaluation: per-class formulas on one-vs-rest tallies and
    the correlation definition of multiclass MCC over expanded one-hot samples."""
    c = counts.shape[0]
    pairs = expand_samples(counts)
    n = len(pairs)
    accuracy = sum(1 for t, p in pairs if t == p) / n

    per_class = []
    for k in range(c):
        tp = sum(1 for t, p in pairs if t == k and p == k)
        fp = sum(1 for t, p in pairs if t != k and p == k)
        fn = sum(1 for t, p in pairs if t == k and p != k)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append((precision, recall, f1))

    p_true = [sum(1 for t, _ in pairs if t == k) / n for k in range(c)]
    p_pred = [sum(1 for _, p in pairs if p == k) / n for k in range(c)]
    p_expected = sum(a * b for a, b in zip(p_true, p_pred))
    kappa = 1.0 if p_expected == 1.0 else (accuracy - p_expected) / (1.0 - p_expected)

    # Pearson correlation between the flattened one-hot truth/prediction matrices
    X = np.zeros((n, c))
    Y = np.zeros((n, c))
    for i, (t, p) in enumerate(pairs):
        X[i, t] = 1.0
        Y[i, p] = 1.0
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    cov_xy = (Xc * Yc).sum()
    cov_xx = (Xc * Xc).sum()
    cov_yy = (Yc * Yc).sum()
    mcc = cov_xy / math.sqrt(cov_xx * cov_yy) if cov_xx > 0 and cov_yy > 0 else 0.0

    return accuracy, per_class, kappa, mcc
