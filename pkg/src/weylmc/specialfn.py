"""Gamma-function products in log space with explicit sign tracking.

Everything downstream (Whittaker b-coefficients, Toda reflection amplitudes)
is a product of Gamma factors whose arguments routinely land on the negative
axis, so values are carried as (sign, log magnitude) pairs and poles are
detected rather than silently saturated.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, gammasgn

POLE_TOL = 1e-8


class PoleError(ArithmeticError):
    """A Gamma factor (or the l-function) was evaluated at a pole."""


def _check_gamma_arg(x: float, what: str = "Gamma"):
    if x <= POLE_TOL and abs(x - round(x)) < POLE_TOL:
        raise PoleError(f"{what} argument {x} is within {POLE_TOL} of a nonpositive integer")


def log_gamma_signed(x: float) -> tuple[float, float]:
    """(sign, log|Gamma(x)|) for real non-pole x."""
    x = float(x)
    _check_gamma_arg(x)
    return float(gammasgn(x)), float(gammaln(x))


def gamma_product(factors) -> tuple[float, float]:
    """Product of Gamma(x) over factors, as (sign, log magnitude)."""
    sign, logmag = 1.0, 0.0
    for x in factors:
        s, l = log_gamma_signed(x)
        sign *= s
        logmag += l
    return sign, logmag


class SignedLog:
    """Tiny accumulator for products of signed quantities in log space."""

    __slots__ = ("sign", "log")

    def __init__(self, sign: float = 1.0, log: float = 0.0):
        self.sign = float(sign)
        self.log = float(log)

    @classmethod
    def from_value(cls, v: float) -> "SignedLog":
        v = float(v)
        if v == 0.0:
            return cls(0.0, -math.inf)
        return cls(math.copysign(1.0, v), math.log(abs(v)))

    @classmethod
    def from_gamma(cls, x: float) -> "SignedLog":
        s, l = log_gamma_signed(x)
        return cls(s, l)

    def mul(self, other: "SignedLog") -> "SignedLog":
        return SignedLog(self.sign * other.sign, self.log + other.log)

    def div(self, other: "SignedLog") -> "SignedLog":
        return SignedLog(self.sign * other.sign, self.log - other.log)

    def pow(self, p: float) -> "SignedLog":
        if self.sign <= 0:
            raise ValueError("real power of a nonpositive quantity")
        return SignedLog(1.0, p * self.log)

    def value(self) -> float:
        return self.sign * math.exp(self.log)


def special_l(x: float) -> float:
    """l(x) = Gamma(x) / Gamma(1 - x); satisfies l(x) l(1-x) = 1."""
    x = float(x)
    _check_gamma_arg(x, "l numerator")
    _check_gamma_arg(1.0 - x, "l denominator")
    num = SignedLog.from_gamma(x)
    den = SignedLog.from_gamma(1.0 - x)
    return num.div(den).value()


def log_special_l(x: float) -> SignedLog:
    x = float(x)
    _check_gamma_arg(x, "l numerator")
    _check_gamma_arg(1.0 - x, "l denominator")
    return SignedLog.from_gamma(x).div(SignedLog.from_gamma(1.0 - x))


def gamma(x: float) -> float:
    s, l = log_gamma_signed(x)
    return s * math.exp(l)
