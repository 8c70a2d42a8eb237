"""Log-correlated angular field on the cylinder, correlated chaos circle
averages, the disk integrals they build, vertex-operator estimates, and tail
slope fits.

The angular part of the field is synthesized from independent
Ornstein-Uhlenbeck Fourier modes: mode n relaxes at rate n with stationary
variance 1/n per (cos, sin) pair and component, which resums to the kernel

    ln [ (e^{-t} v e^{-t'}) / |e^{-t+i th} - e^{-t'+i th'}| ]
        = sum_{n>=1} e^{-n|t-t'|} cos(n (th - th')) / n.

The Wick factor of the circle averages uses the truncated variance
sum_{n<=N} 1/n, so E[Z_t] = 2 pi holds exactly at every truncation level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chamber import DomainError
from .mc import MCEstimate, SimConfig, combine_mean, stream
from .rootsystem import RootSystem

TWO_PI = 2.0 * math.pi


class SimulationDataError(RuntimeError):
    """Not enough tail data to fit a slope."""


@dataclass(frozen=True)
class GmcConfig:
    gamma: float
    n_modes: int = 64
    n_theta: int = 256
    t_max: float = 40.0
    dt: float = 1.0 / 64.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma < math.sqrt(2.0)):
            raise DomainError(f"gamma must lie in (0, sqrt 2); got {self.gamma}")
        if self.n_theta < 4 * self.n_modes:
            raise DomainError("need n_theta >= 4 * n_modes")

    @property
    def truncated_variance(self) -> float:
        return float(np.sum(1.0 / np.arange(1, self.n_modes + 1)))


def angular_kernel_exact(t1, th1, t2, th2):
    """Covariance multiplier between (t1, th1) and (t2, th2)."""
    z1 = np.exp(-np.asarray(t1, dtype=float)) * np.exp(1j * np.asarray(th1, dtype=float))
    z2 = np.exp(-np.asarray(t2, dtype=float)) * np.exp(1j * np.asarray(th2, dtype=float))
    top = np.maximum(np.exp(-np.asarray(t1, dtype=float)), np.exp(-np.asarray(t2, dtype=float)))
    return np.log(top / np.abs(z1 - z2))


def angular_kernel_modes(n_modes, dtau, dtheta):
    """Mode-sum approximation sum_{n<=N} e^{-n |dtau|} cos(n dtheta)/n."""
    n = np.arange(1, n_modes + 1)
    dtau = np.abs(np.asarray(dtau, dtype=float))[..., None]
    dtheta = np.asarray(dtheta, dtype=float)[..., None]
    return np.sum(np.exp(-n * dtau) * np.cos(n * dtheta) / n, axis=-1)


def verify_mode_covariance(cfg: GmcConfig, n_probe: int = 20, seed: int = 0):
    """Relative error of the mode expansion at random probe point pairs.

    Probes keep a minimum separation so the exact kernel is finite and the
    truncated sum has converged at the configured mode count.
    """
    rng = stream(seed, 0)
    errs = []
    pairs = []
    while len(pairs) < n_probe:
        t1, t2 = rng.uniform(0.0, 3.0, 2)
        th1, th2 = rng.uniform(0.0, TWO_PI, 2)
        sep = math.hypot(t1 - t2, min(abs(th1 - th2), TWO_PI - abs(th1 - th2)))
        if sep < 0.5:
            continue
        pairs.append((t1, th1, t2, th2))
    for (t1, th1, t2, th2) in pairs:
        exact = float(angular_kernel_exact(t1, th1, t2, th2))
        approx = float(angular_kernel_modes(cfg.n_modes, t1 - t2, th1 - th2))
        errs.append(abs(approx - exact) / max(abs(exact), 1e-12))
    return float(np.max(errs)), pairs


@dataclass
class AngularField:
    """One replica of the lateral field on a (t, theta) grid, r components."""

    t_grid: np.ndarray
    theta_grid: np.ndarray
    values: np.ndarray  # (n_t, n_theta, r)

    def circle_averages(self) -> np.ndarray:
        return self.values.mean(axis=1)


class _ModeState:
    """OU mode bank for a batch of independent scalar fields.

    variance_mult scales the stationary variance (the <e_i, e_i> multiplier of
    a projected component).  The discrete update is the exact OU transition,
    so mode values at grid times carry no time-step error.
    """

    def __init__(self, n_batch, n_modes, variance_mult, rng):
        self.n = np.arange(1, n_modes + 1)
        self.var = variance_mult / self.n
        self.rng = rng
        sd0 = np.sqrt(self.var)
        noise = rng.standard_normal((2, n_batch, n_modes))
        self.a = noise[0] * sd0
        self.b = noise[1] * sd0
        self._dt = None
        self._spec = None

    def _coeffs(self, dt):
        if self._dt != dt:
            rho = np.exp(-self.n * dt)
            self._rho = rho
            self._sd = np.sqrt(self.var * (1.0 - rho * rho))
            self._dt = dt
        return self._rho, self._sd

    def step(self, dt):
        rho, sd = self._coeffs(dt)
        noise = self.rng.standard_normal((2,) + self.a.shape)
        self.a *= rho
        self.a += sd * noise[0]
        self.b *= rho
        self.b += sd * noise[1]

    def field_values(self, n_theta) -> np.ndarray:
        """Evaluate the fields on the uniform theta grid via irfft."""
        n_batch, n_modes = self.a.shape
        if self._spec is None or self._spec.shape != (n_batch, n_theta // 2 + 1):
            self._spec = np.zeros((n_batch, n_theta // 2 + 1), dtype=complex)
        self._spec[:, 1:n_modes + 1] = 0.5 * n_theta * (self.a - 1j * self.b)
        return np.fft.irfft(self._spec, n=n_theta, axis=1)


def sample_angular_field(cfg: GmcConfig, r: int = 1, rng=None) -> AngularField:
    """Single replica of the r-component field on the configured grid."""
    rng = rng if rng is not None else stream(cfg.seed, 1)
    n_t = int(round(cfg.t_max / cfg.dt)) + 1
    t_grid = np.arange(n_t) * cfg.dt
    theta_grid = TWO_PI * np.arange(cfg.n_theta) / cfg.n_theta
    vals = np.empty((n_t, cfg.n_theta, r))
    states = [_ModeState(1, cfg.n_modes, 1.0, rng) for _ in range(r)]
    for k in range(n_t):
        if k:
            for st in states:
                st.step(cfg.dt)
        for c, st in enumerate(states):
            vals[k, :, c] = st.field_values(cfg.n_theta)[0]
    return AngularField(t_grid=t_grid, theta_grid=theta_grid, values=vals)


def circle_average_Z(field: AngularField, cfg: GmcConfig, rs: RootSystem, i: int) -> np.ndarray:
    """Z_t for wall i from a sampled field: Wick-normalized circle average."""
    e = rs.simple_roots[i]
    v = float(e @ e)
    proj = field.values @ e  # (n_t, n_theta)
    wick = 0.5 * cfg.gamma ** 2 * v * cfg.truncated_variance
    return (TWO_PI / cfg.n_theta) * np.exp(cfg.gamma * proj - wick).sum(axis=1)


class ZBatch:
    """Batch of independent Z_t paths for one wall, on a uniform grid.

    Generated once over [t_lo, t_hi]; lookup snaps to the nearest grid time.
    """

    def __init__(self, rs: RootSystem, cfg: GmcConfig, i: int, n_batch: int,
                 rng, t_lo: float = 0.0, t_hi: float | None = None):
        e = rs.simple_roots[i]
        v = float(e @ e)
        t_hi = cfg.t_max if t_hi is None else t_hi
        self.dt = cfg.dt
        self.t_lo = t_lo
        n_t = int(round((t_hi - t_lo) / cfg.dt)) + 1
        wick = 0.5 * cfg.gamma ** 2 * v * cfg.truncated_variance
        state = _ModeState(n_batch, cfg.n_modes, v, rng)
        self.z = np.empty((n_batch, n_t))
        w = TWO_PI / cfg.n_theta
        buf = np.empty((n_batch, cfg.n_theta), dtype=np.float32)
        for k in range(n_t):
            if k:
                state.step(cfg.dt)
            y = state.field_values(cfg.n_theta)
            np.multiply(y, cfg.gamma, out=buf, casting="unsafe")
            buf -= np.float32(wick)
            np.exp(buf, out=buf)
            self.z[:, k] = w * buf.sum(axis=1, dtype=np.float64)
        self.n_t = n_t

    def at(self, t: float, idx) -> np.ndarray:
        k = int(round((t - self.t_lo) / self.dt))
        k = min(max(k, 0), self.n_t - 1)
        return self.z[idx, k]


def stationary_z_source(rs: RootSystem, cfg: GmcConfig, i: int):
    """Factory for the two-sided J estimator: per batch, one stationary Z path
    over [-t_max, t_max] exposed as forward/backward lookup callables."""

    def make(rng, n_batch):
        zb = ZBatch(rs, cfg, i, n_batch, rng, t_lo=-cfg.t_max, t_hi=cfg.t_max)

        def forward(t, idx):
            return zb.at(t, idx)

        def backward(t, idx):
            return zb.at(-t, idx)

        return forward, backward

    return make


# ---------------------------------------------------------------------------
# disk integrals
# ---------------------------------------------------------------------------

def disk_integrals(rs: RootSystem, nu_pair, cfg: GmcConfig, n: int, seed: int,
                   walls=None, seed_offset: int = 2) -> np.ndarray:
    """I_i = integral_0^inf exp(gamma <B^nu_t, e_i>) Z^i_t dt, jointly across
    walls (shared field), by direct time stepping on the Z grid.

    nu_pair[i] must be negative (integrability); returns (n, n_walls).
    """
    walls = list(range(rs.rank)) if walls is None else list(walls)
    if np.any(np.asarray(nu_pair, dtype=float)[walls] >= 0):
        raise DomainError("need <nu, e_i> < 0 on every requested wall")
    e = rs.simple_roots
    v = np.einsum("ij,ij->i", e, e)
    n_t = int(round(cfg.t_max / cfg.dt)) + 1
    out = np.empty((n, len(walls)))
    done = 0
    batch = 2048
    cov = e[walls] @ e[walls].T  # increments of <B, e_i> are correlated
    chol = np.linalg.cholesky(cov + 1e-14 * np.eye(len(walls)))
    while done < n:
        k = min(batch, n - done)
        rng = stream(seed, seed_offset * 1000003 + done)
        # one shared vector field: r independent orthonormal components
        comps = [_ModeState(k, cfg.n_modes, 1.0, rng) for _ in range(rs.rank)]
        pair = np.zeros((k, len(walls)))  # <B_t, e_i>
        acc = np.zeros((k, len(walls)))
        g_old = None
        w = TWO_PI / cfg.n_theta
        for step in range(n_t):
            t = step * cfg.dt
            if step:
                for st in comps:
                    st.step(cfg.dt)
                dw = rng.standard_normal((k, len(walls))) @ chol.T * math.sqrt(cfg.dt)
                pair += dw + cfg.dt * np.asarray(nu_pair, dtype=float)[walls][None, :]
            y = np.stack([st.field_values(cfg.n_theta) for st in comps], axis=2)
            g_new = np.empty((k, len(walls)))
            for col, i in enumerate(walls):
                proj = y @ e[i]
                wick = 0.5 * cfg.gamma ** 2 * v[i] * cfg.truncated_variance
                z = w * np.exp(cfg.gamma * proj - wick).sum(axis=1)
                g_new[:, col] = np.exp(np.minimum(cfg.gamma * pair[:, col], 700.0)) * z
            if g_old is not None:
                acc += 0.5 * cfg.dt * (g_old + g_new)
            g_old = g_new
        out[done:done + k] = acc
        done += k
    return out


def estimate_I(rs: RootSystem, gamma: float, alpha, q_vector, cfg: GmcConfig,
               n: int, seed: int, wall: int = 0) -> MCEstimate:
    """Monte Carlo disk integral with insertion weight alpha at wall i."""
    alpha = np.asarray(alpha, dtype=float)
    nu = alpha - np.asarray(q_vector, dtype=float)
    nu_pair = rs.simple_roots @ nu
    vals = disk_integrals(rs, nu_pair, cfg, n, seed, walls=[wall])[:, 0]
    drift = gamma * float(nu_pair[wall])
    tail = math.exp(drift * cfg.t_max) * TWO_PI / max(-drift, 1e-9)
    return combine_mean(vals, seed, truncation_bound=tail)


# ---------------------------------------------------------------------------
# maximum-decomposition sampling of the disk integral (rank 1)
# ---------------------------------------------------------------------------

def _offset_lookup(zb: ZBatch, offsets):
    """Z lookup shifted per path by `offsets` (vectorized nearest-grid)."""

    def fun(t, idx):
        k = np.rint((t + offsets[idx] - zb.t_lo) / zb.dt).astype(int)
        np.clip(k, 0, zb.n_t - 1, out=k)
        return zb.z[idx, k]

    return fun


def tilted_disk_samples(rs: RootSystem, nu_pair_i: float, cfg: GmcConfig,
                        i: int, n: int, seed: int, tilt_frac: float = 1.0,
                        sim_dt: float = 2e-3, sim_tmax: float = 60.0,
                        saturate_above: float | None = None):
    """Importance-weighted samples of I_i = integral e^{gamma <B_t,e_i>} Z dt
    (rank-1 route): the running maximum of the exponent is exponentially
    tilted, the path around it is the welded ascent/descent pair.

    Returns (values, weights).  tilt_frac = 1 keeps the true maximum law;
    smaller values oversample large maxima for tail estimation.  Maxima above
    saturate_above short-circuit to value = +inf (their functionals are
    saturated there; only use with threshold/decay payoffs).
    """
    from .mc import SimConfig
    from .sde import conditioned_ascent_integrals, descent_integrals

    e = rs.simple_roots[i]
    v_i = float(e @ e)
    a = cfg.gamma * float(nu_pair_i)  # exponent drift, negative
    if a >= 0:
        raise DomainError("exponent drift must be negative")
    v_exp = cfg.gamma ** 2 * v_i  # exponent variance rate
    q0 = 2.0 * abs(a) / v_exp  # maximum ~ Exp(q0)
    qt = max(tilt_frac * q0, 1e-3)

    vals = np.empty(n)
    wts = np.empty(n)
    done = 0
    batch = 2048
    while done < n:
        k = min(batch, n - done)
        rng = stream(seed, 7000001 + done)
        m_all = rng.exponential(1.0 / qt, k)
        wts[done:done + k] = (q0 / qt) * np.exp(-(q0 - qt) * m_all)
        keep = np.ones(k, dtype=bool)
        if saturate_above is not None:
            keep = m_all <= saturate_above
            vals[done:done + k][~keep] = np.inf
        m = m_all[keep]
        kk = int(keep.sum())
        if kk:
            t_need = float(np.max(m)) / abs(a) * 1.6 + 20.0
            sim_b = SimConfig(dt=sim_dt, t_max=max(sim_tmax, t_need),
                              n_samples=kk, seed=seed)
            zb = ZBatch(rs, cfg, i, kk, rng, t_lo=0.0,
                        t_hi=sim_b.t_max + 16.0 / abs(a) + 10.0)
            pre, t_pre, _ = descent_integrals(
                abs(a), v_exp, m, np.zeros(kk), sim_b, rng, gamma_eff=1.0,
                z_source=lambda t, idx: zb.at(t, idx))
            t_pre = np.where(np.isnan(t_pre), sim_b.t_max, t_pre)
            post, _ = conditioned_ascent_integrals(
                abs(a), v_exp, kk, sim_b, rng, gamma_eff=1.0,
                z_source=_offset_lookup(zb, t_pre), stop_exponent=16.0)
            block = vals[done:done + k]
            block[keep] = np.exp(m) * (pre + post)
            vals[done:done + k] = block
        done += k
    return vals, wts


def gmc_disk_mass(rs: RootSystem, cfg: GmcConfig, q_vector, n: int, seed: int,
                  wall: int = 0) -> MCEstimate:
    """E-estimate of the total chaos mass of the unit disk for one wall, via
    the tilted maximum decomposition (tilt flattening the e^m payoff)."""
    e = rs.simple_roots[wall]
    v_i = float(e @ e)
    nu_pair = -float(np.asarray(q_vector, dtype=float) @ e)
    a = cfg.gamma * nu_pair
    v_exp = cfg.gamma ** 2 * v_i
    q0 = 2.0 * abs(a) / v_exp
    tilt_frac = max((q0 - 1.0) / q0, 0.05)  # payoff e^{m}: flatten by one unit
    vals, wts = tilted_disk_samples(rs, nu_pair, cfg, wall, n, seed,
                                    tilt_frac=tilt_frac,
                                    sim_dt=4e-3, sim_tmax=30.0)
    return combine_mean(vals * wts, seed)


def tail_slope(rs: RootSystem, cfg: GmcConfig, alpha, q_vector, n: int,
               seed: int, wall: int = 0, decades: float = 1.5,
               n_thresholds: int = 12, min_tail_count: int = 100) -> dict:
    """Log-log slope of P(I > u) over `decades` of u, with the exponent-tilted
    estimator; returns the fit, its CI, and the target power.

    The predicted exponent is <alpha - Q, e_wall∨>/gamma.
    """
    alpha = np.asarray(alpha, dtype=float)
    nu = alpha - np.asarray(q_vector, dtype=float)
    e = rs.simple_roots[wall]
    nu_pair = float(nu @ e)
    kappa = -float(nu @ (2.0 * e / (e @ e))) / cfg.gamma  # target: P ~ u^-kappa
    cap = decades * math.log(10.0) + 8.0 / kappa + 14.0
    vals, wts = tilted_disk_samples(rs, nu_pair, cfg, wall, n, seed,
                                    tilt_frac=0.25, sim_dt=4e-3, sim_tmax=40.0,
                                    saturate_above=cap)
    # threshold range: upper end where the raw tail still has support
    lo = float(np.quantile(vals, 0.70))
    hi = lo * 10.0 ** decades
    us = np.geomspace(lo, hi, n_thresholds)
    last_count = int(np.sum(vals > us[-1]))
    if last_count < min_tail_count:
        raise SimulationDataError(
            f"only {last_count} samples beyond the last threshold "
            f"(needs {min_tail_count}); increase n or lower the range")
    p_hat = np.array([float(np.mean(wts * (vals > u))) for u in us])
    se = np.array([float(np.std(wts * (vals > u)) / math.sqrt(n)) for u in us])
    x = np.log(us)
    y = np.log(p_hat)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    dof = max(len(x) - 2, 1)
    resid = y - A @ coef
    s2 = float(resid @ resid) / dof
    slope_se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    return {
        "slope": slope,
        "slope_se": slope_se,
        "intercept": intercept,
        "target": -kappa,
        "thresholds": us,
        "tail_prob": p_hat,
        "tail_prob_se": se,
        "last_bin_count": last_count,
    }


# ---------------------------------------------------------------------------
# vertex operators
# ---------------------------------------------------------------------------

def vertex_values(rs: RootSystem, gamma: float, mus, alpha, q_vector, cs,
                  integrals) -> np.ndarray:
    """psi(c) for each c in cs from pre-sampled disk integrals (n, r):
    e^{<alpha-Q, c>} mean over exp(-sum_i mu_i e^{gamma <c,e_i>} I_i)."""
    alpha = np.asarray(alpha, dtype=float)
    nu = alpha - np.asarray(q_vector, dtype=float)
    cs = np.atleast_2d(np.asarray(cs, dtype=float))
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    out = np.empty(len(cs))
    for k, c in enumerate(cs):
        coef = mus * np.exp(gamma * (rs.simple_roots @ c))
        out[k] = math.exp(nu @ c) * float(np.mean(np.exp(-(integrals @ coef))))
    return out


def vertex_refl_fit(rs: RootSystem, cfg: GmcConfig, alpha, q_vector, mu_1: float,
                    scales, n: int, seed: int, wall: int = 0) -> dict:
    """Extract the reflected-term coefficient from the vertex expansion,
    rank 1: R_hat(c) = (psi(c)/e^{<alpha-Q,c>} - 1) e^{-<hat s alpha - alpha, c>}
    at c = -scale * w_wall∨, using tilted I-samples for tail coverage."""
    alpha = np.asarray(alpha, dtype=float)
    q_vector = np.asarray(q_vector, dtype=float)
    nu = alpha - q_vector
    e = rs.simple_roots[wall]
    nu_pair = float(nu @ e)
    cap = cfg.gamma * float(np.max(scales)) + 14.0
    vals, wts = tilted_disk_samples(rs, nu_pair, cfg, wall, n, seed,
                                    tilt_frac=0.3, sim_dt=4e-3, sim_tmax=40.0,
                                    saturate_above=cap)
    shat_gap = -float(nu @ (2.0 * e / (e @ e))) * e  # hat s alpha - alpha
    fits = []
    for s in scales:
        c = -float(s) * rs.coweights[wall]
        eps = mu_1 * math.exp(cfg.gamma * float(e @ c))
        d_hat = float(np.mean(wts * np.expm1(-eps * vals)))
        d_se = float(np.std(wts * np.expm1(-eps * vals)) / math.sqrt(n))
        gap = math.exp(-float(shat_gap @ c))
        fits.append({"scale": float(s), "coef": d_hat * gap, "coef_se": d_se * gap})
    return {"fits": fits, "shat_gap": shat_gap}


def vertex_operator_mc(rs: RootSystem, gamma: float, mus, alpha, q_vector, c,
                       cfg: GmcConfig, n: int, seed: int) -> MCEstimate:
    """Monte Carlo vertex operator at constant mode c (boundary field zero)."""
    alpha = np.asarray(alpha, dtype=float)
    nu = alpha - np.asarray(q_vector, dtype=float)
    nu_pair = rs.simple_roots @ nu
    ints = disk_integrals(rs, nu_pair, cfg, n, seed)
    c = np.asarray(c, dtype=float)
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    coef = mus * np.exp(gamma * (rs.simple_roots @ c))
    vals = math.exp(nu @ c) * np.exp(-(ints @ coef))
    return combine_mean(vals, seed)
