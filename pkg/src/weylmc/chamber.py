"""Closed-form laws for Brownian motion with drift relative to a Weyl chamber.

For drift nu strictly inside the chamber C:

    h(x) = sum_{s in W} sign(s) exp(<s nu - nu, x>)

is the probability that the process started at x never leaves C.  Its wall
derivatives, taken in the coordinates m_i = <., e_i> (dual basis: the
fundamental coweights), stay in the same signed-exponential family:

    d_S h(x) = sum_s sign(s) [prod_{i in S} <s nu - nu, w_i∨>] exp(<s nu - nu, x>)

Multiplying by the drift martingale exp(<nu, x>) turns d_S h into

    U_S(x) = sum_{s in W_S} sign(s) lam_S(s) exp(<s nu, x>),

whose log-gradient is the full drift field of the conditioned segment with
active wall set S.  The killed transition kernel, first-hitting densities and
exit-wall probabilities below are all finite alternating sums over the group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .expsum import SignedExpSum
from .rootsystem import RootSystem, WeylElement, generate_weyl_group, weyl_subset


class DomainError(ValueError):
    """Input outside the formula's domain of validity."""


@dataclass(frozen=True)
class DriftSpec:
    """Root system + drift strictly inside the fundamental chamber."""

    rs: RootSystem
    nu: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        object.__setattr__(self, "nu", nu)
        if not self.rs.in_chamber(nu):
            raise DomainError("drift must lie strictly inside the chamber")

    @cached_property
    def group(self) -> list[WeylElement]:
        return generate_weyl_group(self.rs)

    def subset(self, walls) -> list[WeylElement]:
        return weyl_subset(self.rs, self.group, walls)

    def lam(self, s: WeylElement, walls) -> float:
        """prod_{i in walls} <s nu - nu, w_i∨>."""
        d = s.apply(self.nu) - self.nu
        return float(np.prod([d @ self.rs.coweights[i] for i in walls]))

    @cached_property
    def h_sum(self) -> SignedExpSum:
        coeffs = [float(s.signature) for s in self.group]
        exps = [s.apply(self.nu) - self.nu for s in self.group]
        return SignedExpSum(coeffs, exps)

    def partial_h_sum(self, walls) -> SignedExpSum:
        walls = tuple(sorted(set(int(i) for i in walls)))
        coeffs, exps = [], []
        for s in self.group:
            d = s.apply(self.nu) - self.nu
            c = s.signature * np.prod([d @ self.rs.coweights[i] for i in walls]) if walls else s.signature
            coeffs.append(float(c))
            exps.append(d)
        return SignedExpSum(coeffs, exps)

    def u_sum(self, walls) -> SignedExpSum:
        """exp(<nu, x>) * d_S h(x) as a signed-exp sum in <s nu, x>."""
        walls = tuple(sorted(set(int(i) for i in walls)))
        coeffs, exps = [], []
        for s in self.group:
            d = s.apply(self.nu) - self.nu
            c = s.signature * (np.prod([d @ self.rs.coweights[i] for i in walls]) if walls else 1.0)
            coeffs.append(float(c))
            exps.append(s.apply(self.nu))
        return SignedExpSum(coeffs, exps)


def h_eval(d: DriftSpec, x) -> float:
    """Chamber survival probability from x (0 on walls, -> 1 deep inside)."""
    return d.h_sum(np.asarray(x, dtype=float))


def partial_h(d: DriftSpec, walls, x) -> float:
    """Mixed wall derivative d_S h at x; S = walls (0-based indices)."""
    return d.partial_h_sum(walls)(np.asarray(x, dtype=float))


def min_law_survival(d: DriftSpec, m_coords) -> float:
    """P(inf_t <B_t, e_i> >= m_i for all i), start at the origin.

    m_coords are the pairing coordinates; the survival equals h(-m) with
    m = sum m_i w_i∨, and vanishes whenever some m_i > 0.
    """
    m = np.asarray(m_coords, dtype=float)
    if m.shape != (d.rs.rank,):
        raise DomainError("one coordinate per simple root required")
    if np.any(m > 0):
        return 0.0
    mv = m @ d.rs.coweights
    return float(np.clip(d.h_sum(-mv), 0.0, 1.0))


def min_density(d: DriftSpec, m_coords) -> float:
    """Density of the minimum vector in the m_i coordinates, on m <= 0."""
    m = np.asarray(m_coords, dtype=float)
    if np.any(m > 0):
        return 0.0
    mv = m @ d.rs.coweights
    full = tuple(range(d.rs.rank))
    return float(d.partial_h_sum(full)(-mv))


def _gauss(diff, t):
    """Standard heat kernel on R^r at time t; diff of shape (..., r)."""
    r = diff.shape[-1]
    return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * t)) / (2.0 * math.pi * t) ** (r / 2.0)


def reflect_about(rs: RootSystem, s: WeylElement, center, x):
    """Group element s acting as the reflection-group copy centered at `center`."""
    center = np.asarray(center, dtype=float)
    return center + (np.asarray(x, dtype=float) - center) @ s.matrix.T


def killed_kernel(d: DriftSpec, M, t: float, x, y) -> float:
    """Transition density of the drifted motion killed on the walls of M + C.

    Alternating reflection sum: exp Girsanov factor times
    sum_s sign(s) p_t(M + s(x - M), y).
    """
    if t <= 0:
        raise DomainError("time must be positive")
    M = np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    for p, name in ((x, "x"), (y, "y")):
        if np.any(d.rs.chamber_coords(p - M) < 0):
            raise DomainError(f"{name} must lie in M + C")
    nu = d.nu
    girsanov = math.exp(nu @ (y - x) - 0.5 * (nu @ nu) * t)
    total = 0.0
    for s in d.group:
        sx = reflect_about(d.rs, s, M, x)
        total += s.signature * _gauss(y - sx, t)
    return girsanov * float(total)


def killed_kernel_grid(d: DriftSpec, M, t: float, x, ys) -> np.ndarray:
    """Vectorized killed kernel over an (n, r) array of endpoints."""
    M = np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nu = d.nu
    girs = np.exp(ys @ nu - x @ nu - 0.5 * (nu @ nu) * t)
    total = np.zeros(len(ys))
    for s in d.group:
        sx = reflect_about(d.rs, s, M, x)
        total += s.signature * _gauss(ys - sx, t)
    return girs * total


def killed_kernel_dM(d: DriftSpec, M, wall: int, t: float, x, ys) -> np.ndarray:
    """Wall derivative of the killed kernel: -(d/d<M, e_wall>) p_t^M(x, y).

    The M-dependence sits in the reflected starting points M + s(x - M); the
    identity term does not move, matching the renewal identity it feeds.
    """
    M = np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    nu = d.nu
    w = d.rs.coweights[wall]
    girs = np.exp(ys @ nu - x @ nu - 0.5 * (nu @ nu) * t)
    total = np.zeros(len(ys))
    for s in d.group:
        sx = reflect_about(d.rs, s, M, x)
        dsx = w - s.apply(w)  # d(center shift)/d m_wall
        total += s.signature * _gauss(ys - sx, t) * ((ys - sx) @ dsx) / t
    return -girs * total


def base_hitting_density(d: DriftSpec, x, y, wall: int, t, z) -> float:
    """Joint density of (first hit time of y + dC, location) for the *raw*
    drifted motion, on the wall piece y + dC_wall.

    Alternating half-sum over the group of half-space first-passage kernels.
    """
    return _hitting_scalar(d, x, y, wall, t, z, conditioned=False)


def hitting_density(d: DriftSpec, x, y, wall: int, t, z) -> float:
    """Same functional for the chamber-conditioned process (minimum at the
    origin): the raw density reweighted by U(z)/U(x)."""
    return _hitting_scalar(d, x, y, wall, t, z, conditioned=True)


def _hitting_scalar(d, x, y, wall, t, z, conditioned):
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    e = d.rs.simple_roots[wall]
    if abs((z - y) @ e) > 1e-9 * max(1.0, float(np.linalg.norm(z - y))):
        return 0.0
    out = hitting_density_grid(d, x, y, wall, np.atleast_1d(np.asarray(t, dtype=float)),
                               z[None, :], conditioned=conditioned)
    return float(out[0, 0]) if np.ndim(t) == 0 else out[:, 0]


def hitting_density_grid(d: DriftSpec, x, y, wall: int, ts, zs, conditioned=True) -> np.ndarray:
    """Hitting density on a (time grid) x (wall point grid), shape (n_t, n_z).

    zs must lie on the wall hyperplane {<z - y, e_wall> = 0}; this is not
    re-checked here.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ts = np.asarray(ts, dtype=float)
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    rs = d.rs
    if np.any(rs.chamber_coords(x - y) <= 0):
        raise DomainError("start x must lie strictly above y on every wall")
    e = rs.simple_roots[wall]
    estar = e / math.sqrt(e @ e)
    r = rs.rank
    nu2 = d.nu @ d.nu
    total = np.zeros((len(ts), len(zs)))
    inv_2t = 1.0 / (2.0 * ts)
    for s in d.group:
        sxy = s.apply(x - y)
        a = sxy @ estar
        if abs(a) < 1e-300:
            continue
        diff2 = np.sum((sxy + y - zs) ** 2, axis=1)  # (n_z,)
        total += s.signature * a * np.exp(-np.outer(inv_2t, diff2))
    pref = np.exp(-0.5 * nu2 * ts) / (ts * (2.0 * math.pi * ts) ** (r / 2.0))
    dens = 0.5 * total * pref[:, None]
    if conditioned:
        if not rs.in_chamber(x):
            raise DomainError("conditioned process starts inside the chamber")
        u = d.u_sum(tuple(range(rs.rank)))
        ux = u(x)
        if ux <= 0:
            raise DomainError("U(x) <= 0: outside the formula's domain")
        return dens * (u(zs) / ux)[None, :]
    return dens * np.exp(zs @ d.nu - x @ d.nu)[None, :]


def _wall_direction(rs: RootSystem, wall: int):
    """Unit vector spanning the wall piece of dC for rank-2 systems."""
    other = 1 - wall
    w = rs.coweights[other]
    return w / np.linalg.norm(w)


def hitting_mass(d: DriftSpec, x, y=None, wall: int | None = None,
                 n_t: int = 160, n_u: int = 400) -> float:
    """Quadrature of the conditioned hitting density over (t, wall position).

    With y = 0 and summed over all walls this is the total first-hit mass,
    which equals 1.  Rank-2 only (the wall is one-dimensional).
    """
    rs = d.rs
    x = np.asarray(x, dtype=float)
    if rs.rank == 1:
        # the wall is a single point; integrate over t only
        y = np.zeros(1) if y is None else np.asarray(y, dtype=float)
        ts, wts = _log_time_grid(d, x, y, n_t)
        vals = hitting_density_grid(d, x, y, 0, ts, y[None, :])[:, 0]
        return float(np.sum(vals * wts))
    if rs.rank != 2:
        raise DomainError("hitting mass quadrature implemented for rank <= 2")
    y = np.zeros(2) if y is None else np.asarray(y, dtype=float)
    walls = [wall] if wall is not None else [0, 1]
    total = 0.0
    for i in walls:
        direction = _wall_direction(rs, i)
        span = float(np.linalg.norm(x - y)) + 12.0 * math.sqrt(_t_scale(d, x, y)) + 12.0
        us = np.linspace(0.0, span, n_u)
        ts, wts = _log_time_grid(d, x, y, n_t)
        zs = y[None, :] + us[:, None] * direction[None, :]
        grid = hitting_density_grid(d, x, y, i, ts, zs)  # (n_t, n_z)
        line = np.sum(grid * wts[:, None], axis=0)
        total += float(np.trapezoid(line, us))
    return total


def _t_scale(d, x, y):
    gap = float(np.min(d.rs.chamber_coords(np.asarray(x) - np.asarray(y))))
    drift = float(np.linalg.norm(d.nu))
    return max(gap / max(drift, 1e-6), 0.1)


def _log_time_grid(d, x, y, n_t):
    t0 = _t_scale(d, x, y)
    ts = np.geomspace(1e-4 * t0, 400.0 * t0, n_t)
    wts = np.gradient(ts)
    return ts, wts


def exit_wall_prob(d: DriftSpec, x, wall: int, **quad_kw):
    """Exact probability of first exiting through a given wall (level y = 0)
    plus the single-exponential asymptotic prediction.

    Rank-2.  The prediction for wall i is lam(s_i s_j) exp(<s_i s_j nu, x>)/U(x).
    """
    rs = d.rs
    if rs.rank != 2:
        raise DomainError("exit wall probabilities are a rank-2 operation")
    exact = hitting_mass(d, x, y=None, wall=wall, **quad_kw)
    other = 1 - wall
    s_lead = None
    for s in d.group:
        if s.word == (wall, other):
            s_lead = s
    full = (0, 1)
    u = d.u_sum(full)
    pred = d.lam(s_lead, full) * math.exp(s_lead.apply(d.nu) @ np.asarray(x, dtype=float)) / u(np.asarray(x, dtype=float))
    return {"exact": exact, "prediction": float(pred), "wall": wall}
