"""Dense linear algebra primitives and elementwise nonlinearities.

Everything downstream works on float64 numpy arrays: vectors are 1-D,
matrices 2-D. Operations are pure and never mutate their inputs.
"""

import numpy as np

__all__ = [
    "ShapeError",
    "affine",
    "sigmoid",
    "tanh_vec",
    "stable_softmax",
    "make_rng",
]


class ShapeError(ValueError):
    """Raised when operand dimensions do not conform."""


def _vector(v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {v.shape}")
    return v


def _matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {a.shape}")
    return a


def affine(W, x, U, h, b):
    """W @ x + U @ h + b for W: k x d, x: d, U: k x k', h: k', b: k."""
    W = _matrix(W, "W")
    U = _matrix(U, "U")
    x = _vector(x, "x")
    h = _vector(h, "h")
    b = _vector(b, "b")
    if W.shape[1] != x.shape[0]:
        raise ShapeError(f"W {W.shape} does not conform with x {x.shape}")
    if U.shape[1] != h.shape[0]:
        raise ShapeError(f"U {U.shape} does not conform with h {h.shape}")
    if W.shape[0] != U.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(
            f"output dims disagree: W {W.shape}, U {U.shape}, b {b.shape}"
        )
    return W @ x + U @ h + b


def sigmoid(v):
    """Elementwise 1 / (1 + exp(-v)), computed without overflow."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh_vec(v):
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(v, dtype=np.float64))


def stable_softmax(v):
    """Softmax with the max subtracted first, so large logits cannot overflow."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def make_rng(seed):
    """Deterministic random source; identical seeds give identical streams."""
    return np.random.default_rng(seed)
