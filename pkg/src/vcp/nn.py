"""Differentiable building blocks in plain numpy.

LSTM over a full sequence, a linear dense output, flatten, mean absolute
error, Adam, and a central-difference gradient checker. Everything works on
float64 and accepts either one sequence ``(L, D)`` or a batch ``(B, L, D)``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

GATES = ("input", "forget", "output", "candidate")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmParams:
    """Weights stacked by gate in :data:`GATES` order.

    ``W`` is ``(4, H, D)``, ``U`` is ``(4, H, H)`` and ``b`` is ``(4, H)``.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[2]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = GATES.index(name)
        return self.W[k], self.U[k], self.b[k]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}

    def validate(self) -> None:
        H, D = self.W.shape[1:] if self.W.ndim == 3 else (None, None)
        if (
            self.W.shape != (4, H, D)
            or self.U.shape != (4, H, H)
            or self.b.shape != (4, H)
        ):
            raise ValueError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "LstmParams":
        return cls(
            np.zeros((4, hidden, input_dim)),
            np.zeros((4, hidden, hidden)),
            np.zeros((4, hidden)),
        )

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "LstmParams":
        """Glorot-uniform input weights, scaled-uniform recurrent weights, forget bias 1."""
        lim_w = np.sqrt(6.0 / (input_dim + 4 * hidden))
        lim_u = np.sqrt(6.0 / (hidden + 4 * hidden))
        b = np.zeros((4, hidden))
        b[1] = 1.0
        return cls(
            rng.uniform(-lim_w, lim_w, size=(4, hidden, input_dim)),
            rng.uniform(-lim_u, lim_u, size=(4, hidden, hidden)),
            b,
        )


@dataclass
class LstmCache:
    x: np.ndarray
    params: LstmParams
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    squeeze: bool


def lstm_forward(x: np.ndarray, p: LstmParams) -> tuple[np.ndarray, LstmCache]:
    """Run the recurrence from ``h_0 = c_0 = 0`` and return every ``h_t``."""
    p.validate()
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != p.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input dim {p.input_dim}")
    B, L, _ = x.shape
    H = p.hidden
    Wx = x @ p.W.reshape(4 * H, -1).T + p.b.reshape(-1)
    U = p.U.reshape(4 * H, H).T

    gates = np.empty((4, B, L, H))
    c = np.empty((B, L, H))
    h = np.empty((B, L, H))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for t in range(L):
        z = (Wx[:, t] + h_prev @ U).reshape(B, 4, H)
        i = sigmoid(z[:, 0])
        f = sigmoid(z[:, 1])
        o = sigmoid(z[:, 2])
        g = np.tanh(z[:, 3])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        gates[0, :, t], gates[1, :, t], gates[2, :, t], gates[3, :, t] = i, f, o, g
        c[:, t] = c_prev
        h[:, t] = h_prev
    cache = LstmCache(x, p, *gates, c, np.tanh(c), h, squeeze)
    return (h[0] if squeeze else h), cache


def lstm_backward(dh: np.ndarray, cache: LstmCache) -> tuple[np.ndarray, LstmParams]:
    """Backpropagate ``dL/dh_t`` for every step; returns ``(dx, param grads)``."""
    if cache.squeeze:
        dh = dh[None]
    if dh.shape != cache.h.shape:
        raise ValueError(f"upstream gradient shape {dh.shape} != output shape {cache.h.shape}")
    p = cache.params
    B, L, H = dh.shape
    U = p.U.reshape(4 * H, H)

    dz = np.empty((B, L, 4, H))
    dU = np.zeros((4 * H, H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in reversed(range(L)):
        i, f, o, g = cache.i[:, t], cache.f[:, t], cache.o[:, t], cache.g[:, t]
        tc = cache.tanh_c[:, t]
        c_prev = cache.c[:, t - 1] if t > 0 else zeros
        h_prev = cache.h[:, t - 1] if t > 0 else zeros

        dh_t = dh[:, t] + dh_next
        dc = dc_next + dh_t * o * (1.0 - tc * tc)
        dz[:, t, 0] = dc * g * i * (1.0 - i)
        dz[:, t, 1] = dc * c_prev * f * (1.0 - f)
        dz[:, t, 2] = dh_t * tc * o * (1.0 - o)
        dz[:, t, 3] = dc * i * (1.0 - g * g)
        dz_t = dz[:, t].reshape(B, 4 * H)
        dU += dz_t.T @ h_prev
        dh_next = dz_t @ U
        dc_next = dc * f

    dz_flat = dz.reshape(B * L, 4 * H)
    x_flat = cache.x.reshape(B * L, -1)
    grads = LstmParams(
        (dz_flat.T @ x_flat).reshape(p.W.shape),
        dU.reshape(p.U.shape),
        dz_flat.sum(axis=0).reshape(p.b.shape),
    )
    dx = (dz_flat @ p.W.reshape(4 * H, -1)).reshape(cache.x.shape)
    return (dx[0] if cache.squeeze else dx), grads


@dataclass
class DenseParams:
    """Single linear output unit: ``y = W . v + b``."""

    W: np.ndarray  # (F,)
    b: np.ndarray = field(default_factory=lambda: np.zeros(1))  # (1,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    @classmethod
    def zeros(cls, features: int) -> "DenseParams":
        return cls(np.zeros(features), np.zeros(1))

    @classmethod
    def init(cls, features: int, rng: np.random.Generator) -> "DenseParams":
        lim = np.sqrt(6.0 / (features + 1))
        return cls(rng.uniform(-lim, lim, size=features), np.zeros(1))


def dense_forward(v: np.ndarray, p: DenseParams) -> np.ndarray:
    if v.shape[-1] != p.W.shape[0] or p.b.shape != (1,):
        raise ValueError(f"input features {v.shape[-1]} != dense width {p.W.shape[0]}")
    return v @ p.W + p.b[0]


def dense_backward(dy: np.ndarray, v: np.ndarray, p: DenseParams) -> tuple[np.ndarray, DenseParams]:
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != v.shape[:-1]:
        raise ValueError(f"upstream shape {dy.shape} does not match batch shape {v.shape[:-1]}")
    dv = np.multiply.outer(dy, p.W)
    grads = DenseParams(np.tensordot(dy, v, axes=dy.ndim), np.array([dy.sum()]))
    return dv, grads


def flatten(m: np.ndarray) -> np.ndarray:
    """Row-major flatten of the trailing ``(L, H)`` axes."""
    return m.reshape(*m.shape[:-2], -1)


def unflatten(v: np.ndarray, rows: int) -> np.ndarray:
    return v.reshape(*v.shape[:-1], rows, -1)


def mae_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its (sub)gradient ``sign(pred - target) / N``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError(f"prediction shape {pred.shape} vs target shape {target.shape}")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    corr1 = 1.0 - beta1**state.t
    corr2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    return params, state


@dataclass
class BlockCheck:
    max_rel_error: float
    max_abs_error: float
    passed: bool


def grad_check(
    f: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-4,
    tol: float = 1e-4,
    abs_floor: float = 1e-6,
) -> dict[str, BlockCheck]:
    """Compare analytic gradients against central differences.

    ``f`` re-evaluates the scalar objective from the current contents of the
    arrays in ``params``, which are perturbed in place and restored. An entry
    passes when its relative error is within ``tol`` or its absolute error is
    within ``abs_floor``; ``max_rel_error`` only counts entries above the floor.
    """
    report = {}
    for name, p in params.items():
        numeric = np.empty_like(p)
        flat = p.reshape(-1)
        out = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = f()
            flat[k] = orig - eps
            down = f()
            flat[k] = orig
            out[k] = (up - down) / (2.0 * eps)
        a = analytic[name]
        abs_err = np.abs(a - numeric)
        scale = np.maximum(np.abs(a), np.abs(numeric))
        rel = np.where(abs_err > abs_floor, abs_err / np.where(scale > 0, scale, 1.0), 0.0)
        max_rel = float(rel.max(initial=0.0))
        report[name] = BlockCheck(max_rel, float(abs_err.max(initial=0.0)), max_rel <= tol)
    return report
