"""Class-one Whittaker functions: exact coefficient products, Monte Carlo
evaluation of the exponential-functional representation, chamber-infinity
expansions, and the associated reflection coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chamber import DomainError
from .mc import MCEstimate, SimConfig, combine_mean, stream
from .rootsystem import RootSystem, WeylElement
from .sde import Y_STOP, _schedule
from .specialfn import SignedLog, gamma, log_gamma_signed


@dataclass(frozen=True)
class WhittakerParams:
    rs: RootSystem
    mu: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if not self.rs.in_chamber(self.mu):
            raise DomainError("spectral parameter must lie inside the chamber")


def b_coeff(rs: RootSystem, mu, variant: str = "plain") -> float:
    """prod over positive roots of Gamma(<mu, a∨>); the 'norm' variant carries
    the extra (2/<a,a>)^(-<mu,a∨>/2) length factors."""
    mu = np.asarray(mu, dtype=float)
    acc = SignedLog()
    for a in rs.positive_roots:
        av = 2.0 * a / (a @ a)
        z = float(mu @ av)
        acc = acc.mul(SignedLog.from_gamma(z))
        if variant == "norm":
            acc = acc.mul(SignedLog.from_value((2.0 / (a @ a)) ** (-z / 2.0)))
    return acc.value()


def whittaker_refl(rs: RootSystem, mu, s: WeylElement) -> float:
    """Reflection coefficient b'(s mu)/b'(mu) (length-normalized variant)."""
    mu = np.asarray(mu, dtype=float)
    return b_coeff(rs, s.apply(mu), "norm") / b_coeff(rs, mu, "norm")


def simple_refl_closed(rs: RootSystem, mu, i: int) -> float:
    """Closed form of the wall-i reflection coefficient:
    -(2/<e_i,e_i>)^{<mu,e_i∨>} Gamma(1 - <mu,e_i∨>) / Gamma(1 + <mu,e_i∨>)."""
    mu = np.asarray(mu, dtype=float)
    e = rs.simple_roots[i]
    z = float(mu @ (2.0 * e / (e @ e)))
    num = SignedLog.from_gamma(1.0 - z)
    den = SignedLog.from_gamma(1.0 + z)
    pref = SignedLog.from_value((2.0 / (e @ e)) ** z)
    return -pref.mul(num.div(den)).value()


def moment_closed(mu: float, p: float, conditioned: bool = False) -> float:
    """Exact moments of the exponential functional of drifted Brownian motion.

    Unconditioned: 2^p Gamma(2 mu - p)/Gamma(2 mu), p < 2 mu.
    Conditioned (process seen from its minimum, power 2 mu): 2^(2 mu)/Gamma(1 + 2 mu).
    """
    if conditioned:
        return 2.0 ** (2 * mu) / gamma(1.0 + 2.0 * mu)
    if p >= 2 * mu:
        raise DomainError(f"p={p} >= 2*mu={2 * mu}: moment is infinite")
    return 2.0 ** p * gamma(2.0 * mu - p) / gamma(2.0 * mu)


# ---------------------------------------------------------------------------
# Monte Carlo evaluation
# ---------------------------------------------------------------------------

def exp_integrals(rs: RootSystem, drifts, n: int, cfg: SimConfig, seed_index: int = 0):
    """I_i = integral_0^inf exp(-<B_t, e_i>) dt for each drift in `drifts`.

    All drifts share the same Brownian increments (common random numbers), so
    Weyl-invariance comparisons are paired.  Returns a list of (n, r) arrays.
    """
    r = rs.rank
    e = rs.simple_roots
    drifts = [np.asarray(m, dtype=float) for m in drifts]
    rng = stream(cfg.seed, 1000 + seed_index)
    out = [np.zeros((n, r)) for _ in drifts]
    w_pair = np.zeros((n, r))  # <W_t, e_i>
    t = 0.0
    g_old = [np.exp(-np.zeros((n, r))) for _ in drifts]
    alive = np.ones(n, dtype=bool)
    for dt_b, t_end in _schedule(cfg.dt, cfg.t_max):
        scale = math.sqrt(dt_b)
        while t < t_end - 1e-12 and np.any(alive):
            idx = np.nonzero(alive)[0]
            dw = scale * rng.standard_normal((len(idx), r))
            w_pair[idx] += dw @ e.T
            t += dt_b
            still = np.zeros(len(idx), dtype=bool)
            for k, m in enumerate(drifts):
                c = w_pair[idx] + t * (e @ m)[None, :]
                g_new = np.exp(-np.minimum(c, 700.0))
                out[k][idx] += 0.5 * dt_b * (g_old[k][idx] + g_new)
                g_old[k][idx] = g_new
                still |= np.any(c < Y_STOP, axis=1)
            alive[idx] = still
    return out


def whittaker_value_from_integrals(rs: RootSystem, mu, x, integrals) -> np.ndarray:
    """Per-sample values of the Whittaker functional at x given I-samples."""
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    e = rs.simple_roots
    v = np.einsum("ij,ij->i", e, e)
    coef = 0.5 * v * np.exp(-(e @ x))
    inner = np.exp(-(integrals @ coef))
    return b_coeff(rs, mu) * math.exp(mu @ x) * inner


def whittaker_mc(params: WhittakerParams, cfg: SimConfig) -> MCEstimate:
    ints = exp_integrals(params.rs, [params.mu], cfg.n_samples, cfg)[0]
    vals = whittaker_value_from_integrals(params.rs, params.mu, params.x, ints)
    return combine_mean(vals, cfg.seed)


def weyl_invariance_gap(rs: RootSystem, mu, s: WeylElement, x, cfg: SimConfig) -> MCEstimate:
    """Paired estimate of Psi_mu(x) - Psi_{s mu}(x) (zero in law)."""
    mu = np.asarray(mu, dtype=float)
    ints = exp_integrals(rs, [mu, s.apply(mu)], cfg.n_samples, cfg)
    a = whittaker_value_from_integrals(rs, mu, x, ints[0])
    b = whittaker_value_from_integrals(rs, s.apply(mu), x, ints[1])
    return combine_mean(a - b, cfg.seed)


def whittaker_asymptotic(rs: RootSystem, mu, x, order: int,
                         second_order_word=(0, 1), warn=None) -> float:
    """Partial sums of the chamber-infinity expansion.

    order 1: leading term b(mu) e^{<mu,x>};
    order 2: + the r single-reflection terms;
    order 3: + the chosen length-two term (default s_1 s_2).

    Uses the length-normalized coefficients so non-simply-laced systems get
    the correct single-reflection weights.
    """
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    r = rs.rank
    lead = b_coeff(rs, mu) * math.exp(mu @ x)
    if order <= 1:
        return lead
    # shift absorbing the <e_i,e_i>/2 weights for non-unit root lengths
    e = rs.simple_roots
    v = np.einsum("ij,ij->i", e, e)
    delta = -np.log(v / 2.0) @ rs.coweights
    total = lead
    mats = {(): np.eye(r)}
    elements = []
    for i in range(r):
        elements.append(((i,), rs.reflection_matrix(i)))
    if order >= 3:
        w = tuple(second_order_word)
        m = np.eye(r)
        for i in w:
            m = m @ rs.reflection_matrix(i)
        elements.append((w, m))
        if warn is not None:
            s2mu = m @ mu
            for (ww, mm) in _length_two_mats(rs):
                if ww != w and (s2mu - mm @ mu) @ x <= 0:
                    warn(f"regime ordering violated against length-2 word {ww}")
    for word, m in elements:
        if order == 2 and len(word) > 1:
            continue
        smu = m @ mu
        ratio = b_coeff(rs, smu, "norm") / b_coeff(rs, mu, "norm")
        total += b_coeff(rs, mu) * ratio * math.exp(smu @ x - (smu - mu) @ delta)
    return total


def _length_two_mats(rs: RootSystem):
    r = rs.rank
    out = []
    for i in range(r):
        for j in range(r):
            if i != j:
                out.append(((i, j), rs.reflection_matrix(i) @ rs.reflection_matrix(j)))
    return out
