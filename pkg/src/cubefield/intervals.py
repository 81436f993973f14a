"""Closed-interval arithmetic and interval propagation through dense layers.

Scalar :class:`Interval` ops implement the textbook endpoint rules; the
subtraction rule is the sound one, ``[a_lo - b_hi, a_hi - b_lo]``, so that
``A - A`` always contains zero.  Vector propagation through a dense layer uses
the center/radius form::

    z = (hi + lo) / 2,  r = (hi - lo) / 2
    z' = W z + b,       r' = |W| r
    out = [z' - r', z' + r']

which costs two matrix products and is algebraically identical to taking the
per-row min/max over endpoint products.  Monotone nondecreasing activations
map the two endpoints independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import IntervalDivisionError, IntervalError, ShapeMismatchError

Array = np.ndarray


@dataclass(frozen=True)
class Interval:
    """Closed real interval [lo, hi] with finite endpoints."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise IntervalError(f"non-finite endpoints [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise IntervalError(f"lo > hi: [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol


def iadd(a: Interval, b: Interval) -> Interval:
    return Interval(a.lo + b.lo, a.hi + b.hi)


def isub(a: Interval, b: Interval) -> Interval:
    # sound rule: subtract the opposite endpoints
    return Interval(a.lo - b.hi, a.hi - b.lo)


def imul(a: Interval, b: Interval) -> Interval:
    products = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
    return Interval(min(products), max(products))


def idiv(a: Interval, b: Interval) -> Interval:
    if b.lo <= 0.0 <= b.hi:
        raise IntervalDivisionError(f"denominator [{b.lo}, {b.hi}] touches zero")
    quotients = (a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi)
    return Interval(min(quotients), max(quotients))


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box, the cartesian product of three intervals."""

    x: Interval
    y: Interval
    z: Interval

    @property
    def lo(self) -> Array:
        return np.array([self.x.lo, self.y.lo, self.z.lo])

    @property
    def hi(self) -> Array:
        return np.array([self.x.hi, self.y.hi, self.z.hi])

    @property
    def center(self) -> Array:
        return np.array([self.x.mid, self.y.mid, self.z.mid])

    def contains(self, p, tol: float = 0.0) -> bool:
        return (self.x.contains(p[0], tol) and self.y.contains(p[1], tol)
                and self.z.contains(p[2], tol))

    @staticmethod
    def from_corners(lo, hi) -> "Box3":
        return Box3(Interval(float(lo[0]), float(hi[0])),
                    Interval(float(lo[1]), float(hi[1])),
                    Interval(float(lo[2]), float(hi[2])))


class IntervalVector:
    """Per-coordinate interval bounds on a vector: lo[i] <= hi[i]."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ShapeMismatchError("interval-vector", lo.shape, hi.shape)
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise IntervalError("non-finite interval endpoints")
        if np.any(lo > hi):
            raise IntervalError("lo > hi in interval vector")
        self.lo = lo
        self.hi = hi

    def __len__(self):
        return self.lo.shape[-1]

    def __repr__(self):
        return f"IntervalVector(lo={self.lo!r}, hi={self.hi!r})"

    @property
    def mid(self) -> Array:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> Array:
        return 0.5 * (self.hi - self.lo)

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=np.float64)
        return bool(np.all(self.lo - tol <= v) and np.all(v <= self.hi + tol))


def dense_interval_arrays(w: Array, b: Array, lo: Array, hi: Array) -> tuple[Array, Array]:
    """Center/radius dense propagation on raw arrays.

    ``lo``/``hi`` may be (d,) or a batch (B, d); returns matching (m,) or (B, m).
    """
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ShapeMismatchError("dense-interval", w.shape, b.shape)
    if lo.shape[-1] != w.shape[1]:
        raise ShapeMismatchError("dense-interval", w.shape, lo.shape)
    center = 0.5 * (hi + lo)
    radius = 0.5 * (hi - lo)
    w_abs = np.abs(w)
    if lo.ndim == 1:
        c = w @ center + b
        r = w_abs @ radius
    else:
        c = center @ w.T + b
        r = radius @ w_abs.T
    return c - r, c + r


def dense_interval(w: Array, b: Array, iv: IntervalVector) -> IntervalVector:
    """Propagate an interval vector through the affine layer ``W x + b``."""
    lo, hi = dense_interval_arrays(w, b, iv.lo, iv.hi)
    return IntervalVector(lo, hi)


_ACTIVATIONS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "sigmoid": expit,
    "tanh": np.tanh,
}


def activation_interval(fn: str, iv: IntervalVector) -> IntervalVector:
    """Apply a monotone nondecreasing elementwise activation to both endpoints."""
    if fn not in _ACTIVATIONS:
        raise ValueError(f"unsupported activation {fn!r}; expected one of {sorted(_ACTIVATIONS)}")
    f = _ACTIVATIONS[fn]
    return IntervalVector(f(iv.lo), f(iv.hi))


def worst_case_output(iv: IntervalVector, label: int) -> Array:
    """Least favorable endpoint selection for a known true label.

    Multi-logit vectors take the lower bound at the true class and the upper
    bound everywhere else.  A single-output vector is treated as an occupancy
    score: label 1 (inside) selects the lower bound, label 0 the upper bound.
    """
    d = len(iv)
    if d == 1:
        if label not in (0, 1):
            raise ValueError(f"binary label must be 0 or 1, got {label}")
        return iv.lo.copy() if label == 1 else iv.hi.copy()
    if not 0 <= label < d:
        raise ValueError(f"label {label} out of range for {d} logits")
    out = iv.hi.copy()
    out[label] = iv.lo[label]
    return out
