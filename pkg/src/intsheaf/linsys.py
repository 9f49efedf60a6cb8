"""Linear time-invariant systems and their exact affine propagation.

For a constant input u the solution of ``x' = Ax + Bu`` is the upper block of
``expm(M t) [x0; 1]`` with ``M = [[A, Bu], [0, 0]]``. A first-order hold
(input ramping linearly as ``u + r t``) adds one more augmented row. The
matrix exponential itself comes from :func:`scipy.linalg.expm`.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.linalg import expm


class NumericFailure(ArithmeticError):
    """Integration produced a nonfinite value."""


def _frozen(matrix, rows=None, name="matrix") -> np.ndarray:
    arr = np.array(matrix, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(rows if rows is not None else 1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has nonfinite entries")
    arr.setflags(write=False)
    return arr


class LinearSystem:
    """``x' = Ax + Bu``, ``y = Cx``."""

    def __init__(self, A, B, C=None, name: str = "sys", state_names=None):
        self.A = _frozen(A, name="A")
        d = self.A.shape[0]
        if self.A.shape != (d, d):
            raise ValueError(f"A must be square, got {self.A.shape}")
        B = np.array(B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(d, -1)
        self.B = _frozen(B, name="B")
        if self.B.shape[0] != d:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {d}")
        self.C = _frozen(np.eye(d) if C is None else C, name="C")
        if self.C.shape[1] != d:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {d}")
        self.name = name
        self.state_names = tuple(state_names) if state_names else tuple(f"x{i}" for i in range(d))
        if len(self.state_names) != d:
            raise ValueError("one state name per state required")
        self._key = (self.A.tobytes(), self.B.tobytes(), self.C.tobytes(), self.A.shape, self.B.shape, self.C.shape)
        self._phi = lru_cache(maxsize=8192)(self._phi_uncached)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def __eq__(self, other):
        return isinstance(other, LinearSystem) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"LinearSystem({self.name!r}, d={self.dim}, m={self.n_inputs}, k={self.n_outputs})"

    def _phi_uncached(self, t: Fraction, u: tuple, rate: tuple | None) -> np.ndarray:
        d, m = self.dim, self.n_inputs
        bu = self.B @ np.asarray(u, dtype=float).reshape(m)
        if rate is None:
            M = np.zeros((d + 1, d + 1))
            M[:d, :d] = self.A
            M[:d, d] = bu
        else:
            M = np.zeros((d + 2, d + 2))
            M[:d, :d] = self.A
            M[:d, d] = bu
            M[:d, d + 1] = self.B @ np.asarray(rate, dtype=float).reshape(m)
            M[d + 1, d] = 1.0  # the clock state s' = 1
        # overflow shows up as nonfinite entries, reported by propagate
        with np.errstate(over="ignore", invalid="ignore"):
            E = expm(M * float(t))
        E.setflags(write=False)
        return E

    def propagate(self, x0, u, t, rate=None) -> np.ndarray:
        """State after time ``t`` from ``x0`` under input ``u + rate*s``."""
        t = Fraction(t)
        if t < 0:
            raise ValueError("cannot propagate backwards")
        u = tuple(float(v) for v in u)
        rate = None if rate is None else tuple(float(v) for v in rate)
        d = self.dim
        x0 = np.asarray(x0, dtype=float)
        if t == 0:
            return x0.copy()
        E = self._phi(t, u, rate)
        with np.errstate(over="ignore", invalid="ignore"):
            x = E[:d, :d] @ x0 + E[:d, d]
        if not np.all(np.isfinite(x)):
            raise NumericFailure(f"{self.name}: nonfinite state after {t} s")
        return x

    def derivative(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)

    def output(self, x) -> np.ndarray:
        return self.C @ np.asarray(x, dtype=float)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": list(self.state_names),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
        }
