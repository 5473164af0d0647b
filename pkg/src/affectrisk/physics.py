"""Lossless Westervelt residual used as a physics regularizer.

A scalar pressure track p(t) is read off a latent trajectory h_1..T by a
small tanh MLP (the pressure operator).  With the spatial Laplacian set to
zero (plane-progressive-wave surrogate for single-channel audio), the
residual at interior step t is::

    r[t] = -(1/c0^2) * p''[t] + beta / (rho0 * c0^4) * (p^2)''[t]

with second derivatives taken by central differences.  The physics loss is
the mean of r^2 over interior steps; gradients are derived by hand.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import SeriesTooShort

OPERATOR_MAGIC = b"WVOP"
OPERATOR_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class AcousticConstants:
    c0: float = 1.0
    rho0: float = 1.0
    beta: float = 1.2
    dt: float = 1.0

    def __post_init__(self):
        if not (self.c0 > 0 and self.rho0 > 0 and self.dt > 0):
            raise ValueError("c0, rho0 and dt must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")

    @property
    def linear_coef(self) -> float:
        return -1.0 / self.c0 ** 2

    @property
    def nonlinear_coef(self) -> float:
        return self.beta / (self.rho0 * self.c0 ** 4)


def second_time_derivative(series, dt: float) -> np.ndarray:
    s = np.asarray(series, dtype=np.float64)
    if s.shape[0] < 3:
        raise SeriesTooShort(f"need at least 3 samples, got {s.shape[0]}")
    return (s[2:] - 2.0 * s[1:-1] + s[:-2]) / (dt * dt)


def _stencil_adjoint(u: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros((u.shape[0] + 2,) + u.shape[1:])
    out[2:] += u
    out[1:-1] -= 2.0 * u
    out[:-2] += u
    return out / (dt * dt)


def westervelt_residual(p, k: AcousticConstants = AcousticConstants()) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return k.linear_coef * second_time_derivative(p, k.dt) + k.nonlinear_coef * second_time_derivative(p * p, k.dt)


def pressure_loss_and_grad(p, k: AcousticConstants = AcousticConstants()) -> tuple[float, np.ndarray]:
    """Mean squared residual of a pressure track and its gradient w.r.t. p."""
    p = np.asarray(p, dtype=np.float64)
    r = westervelt_residual(p, k)
    m = r.shape[0]
    loss = float(np.dot(r, r) / m)
    back = _stencil_adjoint(2.0 * r / m, k.dt)
    return loss, k.linear_coef * back + k.nonlinear_coef * 2.0 * p * back


def total_loss(task_loss: float, phys_loss: float, lam: float) -> float:
    return task_loss + lam * phys_loss


class PressureOperator:
    """Two-layer map D -> H -> 1: ``p = w2 . tanh(W1 h + b1) + b2``."""

    def __init__(self, W1, b1, w2, b2):
        self.W1 = np.array(W1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.w2 = np.array(w2, dtype=np.float64)
        self.b2 = float(b2)
        H, D = self.W1.shape
        if self.b1.shape != (H,) or self.w2.shape != (H,):
            raise ValueError("inconsistent operator shapes")

    @classmethod
    def init(cls, dim: int, hidden: int = 16, rng=None, scale: float = 1.0):
        rng = np.random.default_rng(rng)
        return cls(
            rng.normal(0.0, scale / np.sqrt(dim), (hidden, dim)),
            np.zeros(hidden),
            rng.normal(0.0, scale / np.sqrt(hidden), hidden),
            0.0,
        )

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def __call__(self, h) -> np.ndarray:
        return np.tanh(np.asarray(h) @ self.W1.T + self.b1) @ self.w2 + self.b2

    def forward(self, h):
        a = np.tanh(h @ self.W1.T + self.b1)
        return a @ self.w2 + self.b2, a

    def backward(self, h, a, dp):
        """Gradients of a scalar loss given dL/dp; returns (param_grads, dL/dh)."""
        dz = np.outer(dp, self.w2) * (1.0 - a * a)
        grads = {
            "W1": dz.T @ h,
            "b1": dz.sum(axis=0),
            "w2": a.T @ dp,
            "b2": float(dp.sum()),
        }
        return grads, dz @ self.W1

    # flat parameter vector, order W1 (row-major), b1, w2, b2
    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_vector(cls, vec, dim: int, hidden: int):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (hidden * dim + 2 * hidden + 1,):
            raise ValueError("parameter vector has wrong length")
        i = hidden * dim
        return cls(vec[:i].reshape(hidden, dim), vec[i:i + hidden], vec[i + hidden:i + 2 * hidden], vec[-1])

    def copy(self):
        return PressureOperator(self.W1, self.b1, self.w2, self.b2)

    def to_bytes(self) -> bytes:
        return _HEADER.pack(OPERATOR_MAGIC, OPERATOR_VERSION, self.dim, self.hidden) + self.to_vector().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes):
        op, rest = cls.read_block(data)
        if rest:
            raise ValueError("trailing bytes after operator block")
        return op

    @classmethod
    def read_block(cls, data: bytes):
        magic, version, dim, hidden = _HEADER.unpack_from(data)
        if magic != OPERATOR_MAGIC or version != OPERATOR_VERSION:
            raise ValueError("not a pressure-operator block")
        n = hidden * dim + 2 * hidden + 1
        start = _HEADER.size
        vec = np.frombuffer(data, dtype="<f8", count=n, offset=start)
        return cls.from_vector(vec, dim, hidden), data[start + 8 * n:]


def phys_loss(h, op: PressureOperator, k: AcousticConstants = AcousticConstants()) -> float:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] < 3:
        raise SeriesTooShort(f"trajectory needs T >= 3, got {h.shape[0]}")
    r = westervelt_residual(op(h), k)
    return float(np.dot(r, r) / r.shape[0])


@dataclass
class PhysGradient:
    loss: float
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    h: np.ndarray

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])


def grad_phys_loss(h, op: PressureOperator, k: AcousticConstants = AcousticConstants()) -> PhysGradient:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] < 3:
        raise SeriesTooShort(f"trajectory needs T >= 3, got {h.shape[0]}")
    p, a = op.forward(h)
    loss, dp = pressure_loss_and_grad(p, k)
    g, dh = op.backward(h, a, dp)
    # b2 shifts p by a constant; the linear stencil ignores it and the squared
    # one gains 2*b2*p'', so the exact derivative needs no cancelling sum
    r = westervelt_residual(p, k)
    b2 = 4.0 * k.nonlinear_coef * float(np.dot(r, second_time_derivative(p, k.dt))) / r.shape[0]
    return PhysGradient(loss, g["W1"], g["b1"], g["w2"], b2, dh)


def _rel_err(analytic, numeric) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_diff_check(h, op: PressureOperator, k: AcousticConstants = AcousticConstants(), step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and symmetric differences,
    over every operator parameter and every latent coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    h = np.array(h, dtype=np.float64)
    grad = grad_phys_loss(h, op, k)
    theta = op.to_vector()
    num_theta = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        num_theta[i] = (
            phys_loss(h, PressureOperator.from_vector(up, op.dim, op.hidden), k)
            - phys_loss(h, PressureOperator.from_vector(dn, op.dim, op.hidden), k)
        ) / (2 * step)
    num_h = np.empty_like(h)
    for idx in np.ndindex(*h.shape):
        orig = h[idx]
        h[idx] = orig + step
        up = phys_loss(h, op, k)
        h[idx] = orig - step
        dn = phys_loss(h, op, k)
        h[idx] = orig
        num_h[idx] = (up - dn) / (2 * step)
    return max(_rel_err(grad.param_vector(), num_theta), _rel_err(grad.h, num_h))
