"""Finite signed sums of exponentials  x -> sum_k c_k exp(<v_k, x>).

This is the closed form shared by the chamber survival function h, its wall
derivatives, the U-functions driving the conditioned diffusions, and the
killed kernels, so it gets its own small algebra.
"""

from __future__ import annotations

import numpy as np

PRUNE_TOL = 1e-15
MERGE_TOL = 1e-12


class SignedExpSum:
    def __init__(self, coeffs, exponents):
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        exponents = np.atleast_2d(np.asarray(exponents, dtype=float))
        if coeffs.shape[0] != exponents.shape[0]:
            raise ValueError("one coefficient per exponent vector required")
        self.coeffs, self.exponents = _merge(coeffs, exponents)

    @property
    def dim(self) -> int:
        return self.exponents.shape[1]

    def __len__(self):
        return len(self.coeffs)

    def __call__(self, x):
        """Evaluate at x (shape (d,) or (n, d)); max-shifted for stability."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        ex = pts @ self.exponents.T  # (n, k)
        shift = ex.max(axis=1, keepdims=True)
        vals = np.exp(shift[:, 0]) * (self.coeffs * np.exp(ex - shift)).sum(axis=1)
        return float(vals[0]) if single else vals

    def log_terms(self, x):
        """Per-term (coefficients, exponent values) at a single point."""
        x = np.asarray(x, dtype=float)
        return self.coeffs, self.exponents @ x

    def directional_derivative(self, w) -> "SignedExpSum":
        """d/dt at t=0 of the sum evaluated at x + t w: multiplies c_k by <v_k, w>."""
        w = np.asarray(w, dtype=float)
        return SignedExpSum(self.coeffs * (self.exponents @ w), self.exponents)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        ex = self.exponents @ x
        shift = ex.max()
        weights = self.coeffs * np.exp(ex - shift)
        return np.exp(shift) * weights @ self.exponents

    def grad_log(self, x):
        """Gradient of log|sum| -- the drift field of an h-transform.

        Stable under large exponents: both numerator and denominator share the
        max-shift.  x may be (d,) or (n, d).
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        ex = pts @ self.exponents.T
        shift = ex.max(axis=1, keepdims=True)
        w = self.coeffs * np.exp(ex - shift)  # (n, k)
        denom = w.sum(axis=1)
        grad = (w @ self.exponents) / denom[:, None]
        return grad[0] if single else grad

    def __add__(self, other: "SignedExpSum") -> "SignedExpSum":
        return SignedExpSum(
            np.concatenate([self.coeffs, other.coeffs]),
            np.vstack([self.exponents, other.exponents]),
        )

    def scale(self, c: float) -> "SignedExpSum":
        return SignedExpSum(c * self.coeffs, self.exponents)

    def shift_argument(self, a) -> "SignedExpSum":
        """Signed-exp sum of x -> f(x + a)."""
        a = np.asarray(a, dtype=float)
        return SignedExpSum(self.coeffs * np.exp(self.exponents @ a), self.exponents)

    def __repr__(self):
        return f"SignedExpSum({len(self)} terms, dim {self.dim})"


def _merge(coeffs, exponents):
    order = np.lexsort(exponents.T[::-1])
    coeffs, exponents = coeffs[order], exponents[order]
    out_c, out_v = [], []
    for c, v in zip(coeffs, exponents):
        if out_v and np.max(np.abs(out_v[-1] - v)) <= MERGE_TOL:
            out_c[-1] += c
        else:
            out_c.append(c)
            out_v.append(v.copy())
    out_c = np.array(out_c)
    out_v = np.array(out_v)
    scale = np.max(np.abs(out_c)) if len(out_c) else 1.0
    keep = np.abs(out_c) > PRUNE_TOL * max(scale, 1.0)
    if not np.any(keep):  # formally zero; keep a single null term
        return np.zeros(1), np.zeros((1, exponents.shape[1]))
    return out_c[keep], out_v[keep]
