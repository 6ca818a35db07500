"""Dense/sparse tensor ops with explicit forward and backward passes.

Everything trainable in this package is built from the pieces in this module;
no autodiff framework is used. Layers cache what their backward pass needs on
the most recent forward call, and backward calls accumulate gradients into
``Parameter.grad`` (callers zero them between optimizer steps).

Arrays are plain numpy ndarrays. Parameters default to float32 storage;
constructors take a ``dtype`` argument so the finite-difference gradient
checks in the test suite can run everything at float64.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype):
    """Uniform init on [-b, b] with b = sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Parameter:
    """A named trainable array plus its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Linear:
    """Affine map out = x @ W + b with W of shape [in_dim, out_dim]."""

    def __init__(self, in_dim, out_dim, rng, name="linear", dtype=np.float32):
        self.W = Parameter(
            f"{name}.W", glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim), dtype)
        )
        self.b = Parameter(f"{name}.b", np.zeros(out_dim, dtype=dtype))
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, dout):
        self.W.grad += self._x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.W.value.T

    def params(self):
        return [self.W, self.b]


class ReLU:
    """max(x, 0); subgradient 0 at the kink."""

    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class LeakyReLU:
    """x for x > 0, slope * x otherwise; subgradient slope at the kink."""

    def __init__(self, slope=0.01):
        self.slope = slope
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, dout):
        return np.where(self._mask, dout, self.slope * dout)


class Dropout:
    """Inverted dropout: survivors scaled by 1/(1-rate) so E[out] = E[in].

    ``forward(x, rng)`` with a generator runs training mode; ``rng=None`` (or
    rate 0) is the identity used at inference.
    """

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._scaled_mask = None

    def forward(self, x, rng=None):
        if rng is None or self.rate == 0.0:
            self._scaled_mask = None
            return x
        keep = 1.0 - self.rate
        mask = rng.random(x.shape) < keep
        self._scaled_mask = mask.astype(x.dtype) / x.dtype.type(keep)
        return x * self._scaled_mask

    def backward(self, dout):
        if self._scaled_mask is None:
            return dout
        return dout * self._scaled_mask


class NeighborMean:
    """Row-normalized neighborhood averaging: row v = mean over {v} u N(v).

    Built once per graph (or per mini-batch subgraph) from CSR neighbor lists
    that do NOT contain self-indices; the operator always adds the self row,
    so an isolated node passes through unchanged. Forward is M @ h and
    backward is M^T @ g for the fixed sparse operator M, each entry of row v
    being 1 / (1 + |N(v)|).
    """

    def __init__(self, indptr, indices, dtype=np.float32):
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        n = len(indptr) - 1
        deg = np.diff(indptr)
        if np.any(deg < 0) or (deg.sum() != len(indices)):
            raise ValueError("malformed CSR neighbor lists")
        total = deg + 1
        out_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(total, out=out_indptr[1:])
        out_indices = np.empty(total.sum(), dtype=np.int64)
        starts = out_indptr[:-1]
        out_indices[starts] = np.arange(n)
        if len(indices):
            # shift each neighbor run one slot right to make room for self
            pos = (
                np.arange(len(indices))
                - np.repeat(indptr[:-1], deg)
                + np.repeat(starts + 1, deg)
            )
            out_indices[pos] = indices
        vals = np.repeat(1.0 / total, total).astype(dtype)
        self.n = n
        self._M = sp.csr_matrix((vals, out_indices, out_indptr), shape=(n, n))
        self._MT = self._M.T.tocsr()

    def forward(self, h):
        return self._M @ h

    def backward(self, dout):
        return self._MT @ dout


def softmax(logits):
    """Row-wise softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood over the batch.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / batch.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if len(labels) and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean(dtype=np.float64))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def mse_loss(pred, target):
    """Mean over the batch of the squared Euclidean residual norm.

    Returns (loss, dpred) with dpred = 2 (pred - target) / batch.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.shape[0]
    loss = float(np.sum(diff * diff, dtype=np.float64) / n)
    return loss, (2.0 / n) * diff


def l1_penalty(params, lam, accumulate=True):
    """lam * sum |w| over the given parameters; adds lam * sign(w) to grads.

    sign(0) is 0, so exactly-zero weights receive no gradient.
    """
    total = 0.0
    for p in params:
        total += float(np.abs(p.value).sum(dtype=np.float64))
        if accumulate:
            p.grad += (lam * np.sign(p.value)).astype(p.grad.dtype)
    return lam * total


class Adam:
    """Adam with bias correction; moments live alongside each parameter."""

    def __init__(self, params, lr=0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names passed to Adam")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.value -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.value.dtype)
