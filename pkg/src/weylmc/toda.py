"""Toda and Liouville reflection coefficients: exact Gamma-product formulas,
their algebraic identities (cocycle, duality, product form), and the Monte
Carlo route through GMC-weighted exponential functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chamber import DomainError
from .mc import MCEstimate, SimConfig
from .rootsystem import RootSystem, WeylElement, generate_weyl_group, hat_action
from .specialfn import PoleError, SignedLog, log_special_l, special_l

GAMMA_MAX = math.sqrt(2.0)
AGREE_TOL = 1e-10


@dataclass(frozen=True)
class TodaParams:
    """Coupling gamma in (0, sqrt 2), positive weights mu_i per simple root,
    background charge Q = gamma rho + (2/gamma) rho∨."""

    rs: RootSystem
    gamma: float
    mus: np.ndarray
    allow_out_of_range: bool = False

    def __post_init__(self):
        mus = np.atleast_1d(np.asarray(self.mus, dtype=float))
        if mus.shape == (1,) and self.rs.rank > 1:
            mus = np.full(self.rs.rank, mus[0])
        object.__setattr__(self, "mus", mus)
        if mus.shape != (self.rs.rank,):
            raise DomainError("one cosmological constant per simple root")
        if not self.allow_out_of_range:
            if not (0.0 < self.gamma < GAMMA_MAX):
                raise DomainError(f"gamma must lie in (0, sqrt(2)); got {self.gamma}")
            if np.any(mus <= 0):
                raise DomainError("cosmological constants must be positive")

    @property
    def gmc_valid(self) -> bool:
        return 0.0 < self.gamma < GAMMA_MAX and bool(np.all(self.mus > 0))

    @cached_property
    def q_vector(self) -> np.ndarray:
        return self.gamma * self.rs.weyl_vector + (2.0 / self.gamma) * self.rs.dual_weyl_vector

    @cached_property
    def group(self) -> list[WeylElement]:
        return generate_weyl_group(self.rs)

    def hat(self, s: WeylElement, alpha) -> np.ndarray:
        return hat_action(self.rs, s, alpha, self.q_vector)

    def weight_hypothesis_ok(self, alpha) -> bool:
        """Probabilistic-regime check: alpha - Q in C_- and
        <hat s alpha - alpha, w_i∨> < gamma for every s, i."""
        alpha = np.asarray(alpha, dtype=float)
        nu = alpha - self.q_vector
        if not self.rs.in_chamber(-nu):
            return False
        for s in self.group:
            d = self.hat(s, alpha) - alpha
            if np.any(self.rs.coweights @ d >= self.gamma):
                return False
        return True


def _prefactor_base(tp: TodaParams, i: int) -> SignedLog:
    """mu_i pi l(gamma^2 <e_i,e_i>/4) as a signed-log value."""
    v = float(tp.rs.simple_roots[i] @ tp.rs.simple_roots[i])
    base = log_special_l(0.25 * tp.gamma ** 2 * v)
    base = base.mul(SignedLog.from_value(math.pi * tp.mus[i]))
    return base


def A_func(tp: TodaParams, v) -> float:
    """Reflection amplitude at a (shifted) weight argument v:

    prod_i (mu_i pi l(g^2 <e_i,e_i>/4))^{<v, w_i∨>/g}
      * prod_{a in Phi+} Gamma(1 - (g/2) <v,a>) Gamma(1 - (1/g) <v,a∨>).
    """
    v = np.asarray(v, dtype=float)
    g = tp.gamma
    acc = SignedLog()
    for i in range(tp.rs.rank):
        base = _prefactor_base(tp, i)
        if base.sign <= 0:
            raise PoleError("nonpositive prefactor base in the reflection amplitude")
        acc = acc.mul(base.pow(float(v @ tp.rs.coweights[i]) / g))
    for a in tp.rs.positive_roots:
        av = 2.0 * a / (a @ a)
        acc = acc.mul(SignedLog.from_gamma(1.0 - 0.5 * g * float(v @ a)))
        acc = acc.mul(SignedLog.from_gamma(1.0 - float(v @ av) / g))
    return acc.value()


def product_form_covered(s: WeylElement) -> bool:
    """The alternative product formula covers products of distinct simple
    reflections (in particular every s_sigma(1)...s_sigma(r))."""
    return len(set(s.word)) == len(s.word)


def refl_coeff_product_form(tp: TodaParams, s: WeylElement, alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    d = tp.hat(s, alpha) - alpha
    g = tp.gamma
    acc = SignedLog.from_value(float(s.signature))
    for i in range(tp.rs.rank):
        base = _prefactor_base(tp, i)
        if base.sign <= 0:
            raise PoleError("nonpositive prefactor base in the reflection amplitude")
        cw = float(d @ tp.rs.coweights[i])
        w = float(d @ tp.rs.weights[i])
        acc = acc.mul(base.pow(cw / g))
        acc = acc.mul(SignedLog.from_gamma(1.0 - 0.5 * g * w))
        acc = acc.mul(SignedLog.from_gamma(1.0 - cw / g))
        acc = acc.div(SignedLog.from_gamma(1.0 + 0.5 * g * w))
        acc = acc.div(SignedLog.from_gamma(1.0 + cw / g))
    return acc.value()


def refl_coeff(tp: TodaParams, s: WeylElement, alpha, cross_check: bool = True) -> float:
    """Reflection coefficient R_s(alpha) = sign(s) A(s(alpha-Q)) / A(alpha-Q).

    When the product formula covers s, both routes are evaluated and must
    agree to AGREE_TOL (relative).
    """
    alpha = np.asarray(alpha, dtype=float)
    nu = alpha - tp.q_vector
    val = float(s.signature) * A_func(tp, s.apply(nu)) / A_func(tp, nu)
    if cross_check and product_form_covered(s):
        alt = refl_coeff_product_form(tp, s, alpha)
        if abs(alt - val) > AGREE_TOL * max(1.0, abs(val)):
            raise ArithmeticError(
                f"amplitude-ratio and product forms disagree: {val} vs {alt}")
    return val


def unit_volume_refl(tp: TodaParams, s: WeylElement, alpha) -> float:
    """Tail-expansion constant: R_s at unit cosmological constants, divided by
    sign(s) prod_i Gamma(1 - <hat s alpha - alpha, w_i∨>/gamma)."""
    unit = TodaParams(tp.rs, tp.gamma, np.ones(tp.rs.rank),
                      allow_out_of_range=tp.allow_out_of_range)
    r = refl_coeff(unit, s, alpha)
    alpha = np.asarray(alpha, dtype=float)
    d = unit.hat(s, alpha) - alpha
    acc = SignedLog.from_value(float(s.signature) * r)
    for i in range(tp.rs.rank):
        acc = acc.div(SignedLog.from_gamma(1.0 - float(d @ tp.rs.coweights[i]) / tp.gamma))
    return acc.value()


# ---------------------------------------------------------------------------
# Liouville specialization
# ---------------------------------------------------------------------------

def liouville_refl(gamma: float, mu: float, alpha: float) -> float:
    """Liouville reflection coefficient in the root-pairing normalization:

        R(a) = -(pi mu l(g^2/2))^{(Q-a)/g} G((a-Q)/g) G((g/2)(a-Q))
                 / [G((Q-a)/g) G((g/2)(Q-a))],   Q = g/2 + 2/g,

    valid for a - Q in (-2/g, 0).
    """
    q = 0.5 * gamma + 2.0 / gamma
    dlt = alpha - q
    if not (-2.0 / gamma < dlt < 0.0):
        raise DomainError(f"alpha - Q = {dlt} outside (-2/gamma, 0)")
    base = log_special_l(0.5 * gamma ** 2).mul(SignedLog.from_value(math.pi * mu))
    if base.sign <= 0:
        raise PoleError("nonpositive prefactor base")
    acc = SignedLog.from_value(-1.0).mul(base.pow(-dlt / gamma))
    acc = acc.mul(SignedLog.from_gamma(dlt / gamma))
    acc = acc.mul(SignedLog.from_gamma(0.5 * gamma * dlt))
    acc = acc.div(SignedLog.from_gamma(-dlt / gamma))
    acc = acc.div(SignedLog.from_gamma(-0.5 * gamma * dlt))
    return acc.value()


def liouville_refl_normalized(gamma: float, mu: float, alpha: float) -> float:
    """Same coefficient in the unit-variance field normalization:

        R(a) = -(pi mu l(g^2/4))^{2(Q-a)/g} G(2(a-Q)/g) G((g/2)(a-Q))
                 / [G(2(Q-a)/g) G((g/2)(Q-a))],   Q = g/2 + 2/g.

    The two conventions are related by g <-> g sqrt 2 with the weight gap
    scaled by 1/sqrt 2 (see liouville_from_root_pairing).
    """
    q = 0.5 * gamma + 2.0 / gamma
    dlt = alpha - q
    if dlt >= 0.0:
        raise DomainError("alpha must lie below Q")
    base = log_special_l(0.25 * gamma ** 2).mul(SignedLog.from_value(math.pi * mu))
    if base.sign <= 0:
        raise PoleError("nonpositive prefactor base")
    acc = SignedLog.from_value(-1.0).mul(base.pow(-2.0 * dlt / gamma))
    acc = acc.mul(SignedLog.from_gamma(2.0 * dlt / gamma))
    acc = acc.mul(SignedLog.from_gamma(0.5 * gamma * dlt))
    acc = acc.div(SignedLog.from_gamma(-2.0 * dlt / gamma))
    acc = acc.div(SignedLog.from_gamma(-0.5 * gamma * dlt))
    return acc.value()


def liouville_from_root_pairing(gamma: float, alpha_rp: float):
    """Map (gamma, alpha) from the root-pairing convention to the normalized
    one: gamma_n = sqrt 2 gamma, alpha_n - Q_n = (alpha - Q_rp)/sqrt 2."""
    q_rp = 0.5 * gamma + 2.0 / gamma
    g_n = math.sqrt(2.0) * gamma
    q_n = 0.5 * g_n + 2.0 / g_n
    return g_n, q_n + (alpha_rp - q_rp) / math.sqrt(2.0)


def liouville_embedding(tp: TodaParams, alpha, i: int):
    """Scalar Liouville data hosting the wall-i Toda coefficient exactly:
    gamma_L = gamma sqrt(<e_i,e_i>), alpha_L = Q_L + <alpha - Q, e_i*>.

    For squared length 2 this is alpha_L = <alpha, e_i>/sqrt 2.
    """
    alpha = np.asarray(alpha, dtype=float)
    e = tp.rs.simple_roots[i]
    v = float(e @ e)
    g_l = tp.gamma * math.sqrt(v)
    q_l = 0.5 * g_l + 2.0 / g_l
    a_l = q_l + float((alpha - tp.q_vector) @ e) / math.sqrt(v)
    return g_l, a_l


def expected_J_power(gamma: float, nu: float) -> float:
    """E[J^{-2 nu/gamma}] for the GMC-weighted exponential functional:

        (pi l(g^2/4))^{-2 nu/g} G(1 + (g/2) nu) / [G(1 - (2/g) nu) G(1 - (g/2) nu)]

    for nu in (-2/gamma, 0), gamma in (0, 2).
    """
    if not (0.0 < gamma < 2.0):
        raise DomainError("gamma must lie in (0, 2)")
    if not (-2.0 / gamma < nu < 0.0):
        raise DomainError(f"nu = {nu} outside (-2/gamma, 0)")
    base = log_special_l(0.25 * gamma ** 2).mul(SignedLog.from_value(math.pi))
    if base.sign <= 0:
        raise PoleError("nonpositive prefactor base")
    acc = base.pow(-2.0 * nu / gamma)
    acc = acc.mul(SignedLog.from_gamma(1.0 + 0.5 * gamma * nu))
    acc = acc.div(SignedLog.from_gamma(1.0 - 2.0 * nu / gamma))
    acc = acc.div(SignedLog.from_gamma(1.0 - 0.5 * gamma * nu))
    return acc.value()


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------

def dual_params(tp: TodaParams) -> TodaParams:
    """Dual parameters (gamma <-> 2/gamma, e_i <-> e_i∨, mu_i <-> mu_i∨).

    Only realizations with all roots of equal length are self-dual as stored;
    for those the root system is reused directly.  The dual gamma generally
    leaves the GMC range, so the result is flagged for identity testing only.
    """
    norms = np.einsum("ij,ij->i", tp.rs.simple_roots, tp.rs.simple_roots)
    if not np.allclose(norms, norms[0]):
        raise DomainError(
            "exact duality check requires the equal-root-length realization "
            "(use the dihedral construction for B2/G2 shapes)")
    g = tp.gamma
    mus_dual = np.empty(tp.rs.rank)
    for i in range(tp.rs.rank):
        v = float(norms[i])
        base = _prefactor_base(tp, i)  # mu_i pi l(g^2 v/4)
        if base.sign <= 0:
            raise PoleError("nonpositive prefactor base under duality")
        expo = 4.0 / (g * g * v)
        denom = log_special_l(expo).mul(SignedLog.from_value(math.pi))
        mus_dual[i] = base.pow(expo).div(denom).value()
    return TodaParams(tp.rs, 2.0 / g, mus_dual, allow_out_of_range=True)


# ---------------------------------------------------------------------------
# Monte Carlo route
# ---------------------------------------------------------------------------

def refl_coeff_mc(tp: TodaParams, i: int, alpha, cfg: SimConfig,
                  gmc_cfg=None) -> MCEstimate:
    """Simple-reflection coefficient via the GMC-weighted functional:

        R_{s_i} = mu_i^p (-(Gamma(1 - p))) E[J^p],  p = -<alpha - Q, e_i∨>/gamma,

    with J the two-sided integral of e^{gamma <path, e_i>} Z^i around the
    running maximum.  Requires <alpha - Q, e_i∨> in (-gamma, 0).
    """
    from .gmcfield import GmcConfig, stationary_z_source
    from .sde import estimate_J

    alpha = np.asarray(alpha, dtype=float)
    nu = alpha - tp.q_vector
    e = tp.rs.simple_roots[i]
    v = float(e @ e)
    zvee = float(nu @ (2.0 * e / v))
    if not (-tp.gamma < zvee < 0.0):
        raise DomainError(
            f"requires <alpha - Q, e_i∨> in (-gamma, 0); got {zvee}")
    p = -zvee / tp.gamma
    drift = abs(float(nu @ e))
    if gmc_cfg is None:
        gmc_cfg = GmcConfig(gamma=tp.gamma, n_modes=32, n_theta=128,
                            t_max=cfg.t_max, dt=1.0 / 32.0, seed=cfg.seed)
    z_src = stationary_z_source(tp.rs, gmc_cfg, i)
    est = estimate_J(drift, tp.gamma, cfg, z_source=z_src, variance=v, power=p,
                     stop_exponent=16.0)
    pref = -(tp.mus[i] ** p) * SignedLog.from_gamma(1.0 - p).value()
    mean = pref * est.mean
    return MCEstimate(mean=mean, stderr=abs(pref) * est.stderr, n=est.n,
                      seed=est.seed, truncation_bound=est.truncation_bound)
