"""Path simulation: drifted Brownian motion, conditioned segments, the welded
minimum-first sampler, and the one-dimensional exponential functionals.

All batch engines step every path of a cohort with a shared clock and vector
operations; per-path adaptivity (smaller steps near repelling walls, retries
on forbidden crossings, bridge-corrected wall hits) happens inside one global
step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chamber import DomainError, DriftSpec
from .mc import MCEstimate, PathSample, SimConfig, combine_mean, stream

ENTRANCE_FRAC = 0.5  # wall entrance offset, in units of sqrt(v * dt)
NEAR_WALL_FACTOR = 10.0
MAX_RETRIES = 64


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# minimum vector
# ---------------------------------------------------------------------------

def min_exponents(d: DriftSpec):
    """Coefficient data of the minimum's density in the m_i coordinates.

    Density over u = -m in R_+^r:  sum_s sign(s) lam_s exp(-sum_i u_i |c_si|),
    with c_si = <s nu - nu, w_i∨> < 0 on the contributing subset.
    """
    full = tuple(range(d.rs.rank))
    subset = d.subset(full)
    rows = []
    for s in subset:
        c = np.array([(s.apply(d.nu) - d.nu) @ d.rs.coweights[i] for i in full])
        lam = float(np.prod(c))
        rows.append((s, float(s.signature) * lam, -c))  # rates |c| > 0
    return rows


def sample_min(d: DriftSpec, n: int, rng: np.random.Generator,
               min_acceptance: float = 1e-3) -> np.ndarray:
    """Draw n minimum vectors; returns coordinates m_i <= 0, shape (n, r).

    Rejection from the positive part of the exponential mixture; each positive
    component has unit mixture mass, so the mean acceptance is 1/#positive.
    """
    rows = min_exponents(d)
    pos = [(w, rates) for (_, w, rates) in rows if w > 0]
    if not pos:
        raise SimulationError("no positive component in the minimum density")
    pos_w = np.array([w for (w, _) in pos])
    pos_rates = np.array([rates for (_, rates) in pos])  # (k, r)
    mix = pos_w / np.prod(pos_rates, axis=1)
    mix = mix / mix.sum()
    coeff = np.array([w for (_, w, _) in rows])
    allrates = np.array([rates for (_, _, rates) in rows])  # (m, r)
    out = np.empty((0, d.rs.rank))
    tried = accepted = 0
    while len(out) < n:
        k = max(4 * (n - len(out)), 64)
        comp = rng.choice(len(pos), size=k, p=mix)
        u = rng.exponential(1.0, size=(k, d.rs.rank)) / pos_rates[comp]
        dens = np.maximum((coeff[None, :] * np.exp(-u @ allrates.T)).sum(axis=1), 0.0)
        env = (pos_w[None, :] * np.exp(-u @ pos_rates.T)).sum(axis=1)
        acc = rng.random(k) < dens / env
        tried += k
        accepted += int(acc.sum())
        out = np.vstack([out, -u[acc]])
        if tried > 1000 and accepted / tried < min_acceptance:
            raise SimulationError(
                f"rejection acceptance {accepted / tried:.2e} below {min_acceptance}; "
                "retune the envelope")
    return out[:n]


def min_coords_to_vector(d: DriftSpec, m_coords: np.ndarray) -> np.ndarray:
    return np.atleast_2d(m_coords) @ d.rs.coweights


# ---------------------------------------------------------------------------
# drifted Brownian motion
# ---------------------------------------------------------------------------

def sample_drifted_bm(d: DriftSpec, x0, cfg: SimConfig, rng=None) -> PathSample:
    rng = rng if rng is not None else stream(cfg.seed, 0)
    r = d.rs.rank
    n_steps = int(round(cfg.t_max / cfg.dt))
    times = np.arange(n_steps + 1) * cfg.dt
    incr = (d.nu[None, :] * cfg.dt
            + math.sqrt(cfg.dt) * rng.standard_normal((n_steps, r)))
    pos = np.vstack([np.asarray(x0, dtype=float)[None, :], incr]).cumsum(axis=0)
    return PathSample(times=times, positions=pos,
                      segment_labels=np.zeros(n_steps + 1, dtype=int))


def drifted_bm_marginals(d: DriftSpec, x0, ts, n: int, rng) -> np.ndarray:
    """Exact samples of the drifted motion at the given times; (n, len(ts), r)."""
    ts = np.asarray(ts, dtype=float)
    r = d.rs.rank
    dts = np.diff(np.concatenate([[0.0], ts]))
    out = np.empty((n, len(ts), r))
    cur = np.broadcast_to(np.asarray(x0, dtype=float), (n, r)).copy()
    for k, dt in enumerate(dts):
        cur = cur + d.nu[None, :] * dt + math.sqrt(dt) * rng.standard_normal((n, r))
        out[:, k, :] = cur
    return out


# ---------------------------------------------------------------------------
# welded sampler core
# ---------------------------------------------------------------------------

class _SegmentFields:
    """Drift fields grad log U_S for every active-wall set S, cached."""

    def __init__(self, d: DriftSpec):
        self.d = d
        r = d.rs.rank
        self.fields = {}
        for mask in range(1 << r):
            walls = tuple(i for i in range(r) if mask & (1 << i))
            self.fields[mask] = d.u_sum(walls)

    def drift(self, mask: int, y: np.ndarray) -> np.ndarray:
        return self.fields[mask].grad_log(y)


def _substep(field, y, e, v, dt, rng, forb):
    """One Euler substep; forbidden-wall crossings are resampled, then folded."""
    drift = field.grad_log(y)
    base = y + drift * dt
    cur = base + math.sqrt(dt) * rng.standard_normal(y.shape)
    if forb:
        for _ in range(MAX_RETRIES):
            bad = np.any((cur @ e.T)[:, forb] <= 0, axis=1)
            if not np.any(bad):
                break
            nb = int(bad.sum())
            cur[bad] = base[bad] + math.sqrt(dt) * rng.standard_normal((nb, y.shape[1]))
        else:
            for i in forb:
                c = cur @ e[i]
                neg = c <= 0
                cur[neg] -= (2.0 * c[neg] / v[i])[:, None] * e[i][None, :]
    return cur


def _advance_mask(field, mask, y, e, v, dt, cfg, rng):
    """One global step for a cohort sharing active set `mask`.

    Returns (y_new, hit_wall, c_min_seen): hit_wall[p] is the first active
    wall hit during the step (-1 if none); positions of hitters are projected
    onto the wall and offset into the chamber.  Bridge correction samples
    within-substep crossings of active walls from the Euler bridge.
    """
    r = e.shape[0]
    act = [i for i in range(r) if mask & (1 << i)]
    forb = [i for i in range(r) if not (mask & (1 << i))]
    n = len(y)
    hit = np.full(n, -1, dtype=np.int64)
    c_min = (y @ e.T).copy()

    near = np.zeros(n, dtype=bool)
    if forb:
        thresh = NEAR_WALL_FACTOR * np.sqrt(v * dt)
        near = np.any((y @ e.T)[:, forb] < thresh[forb][None, :], axis=1)

    y_out = y.copy()
    for flag, k_sub in ((False, 1), (True, max(int(cfg.wall_refine), 2))):
        rows = np.nonzero(near == flag)[0]
        if len(rows) == 0:
            continue
        cur = y[rows]
        undecided = np.ones(len(rows), dtype=bool)
        dts = dt / k_sub
        for _ in range(k_sub):
            if not np.any(undecided):
                break
            live = np.nonzero(undecided)[0]
            c_old = cur[live] @ e.T
            stepped = _substep(field, cur[live], e, v, dts, rng, forb)
            c_new = stepped @ e.T
            c_min[rows[live]] = np.minimum(c_min[rows[live]], c_new)
            if act:
                over = np.full((len(live), r), -np.inf)
                for i in act:
                    over[:, i] = -c_new[:, i] / math.sqrt(v[i])
                crossed = np.zeros((len(live), r), dtype=bool)
                for i in act:
                    crossed[:, i] = c_new[:, i] <= 0
                    if cfg.bridge_correction:
                        open_ = ~crossed[:, i]
                        if np.any(open_):
                            a = np.maximum(c_old[open_, i], 1e-300)
                            b = c_new[open_, i]
                            p_cross = np.exp(-2.0 * a * b / (v[i] * dts))
                            u = rng.random(int(open_.sum()))
                            bridge = u < p_cross
                            sel = np.nonzero(open_)[0][bridge]
                            crossed[sel, i] = True
                            over[sel, i] = 0.0
                any_hit = np.any(crossed, axis=1)
                if np.any(any_hit):
                    rows_hit = np.nonzero(any_hit)[0]
                    wall_hit = np.argmax(np.where(crossed[rows_hit], over[rows_hit], -np.inf), axis=1)
                    for rr, i in zip(rows_hit, wall_hit):
                        p = live[rr]
                        z = stepped[rr] - (c_new[rr, i] / v[i]) * e[i]
                        offset = ENTRANCE_FRAC * math.sqrt(v[i] * dts)
                        stepped[rr] = z + (offset / v[i]) * e[i]
                        hit[rows[p]] = i
                        c_min[rows[p], i] = min(c_min[rows[p], i], 0.0)
                    cur[live] = stepped
                    undecided[live[rows_hit]] = False
                else:
                    cur[live] = stepped
            else:
                cur[live] = stepped
        y_out[rows] = cur
    return y_out, hit, c_min


@dataclass
class WeldedBatch:
    """Summary of a cohort of welded paths."""

    snapshots: dict  # record time -> (n, r) absolute positions
    min_coords: np.ndarray  # (n, r) running min of <X, e_i> along the path
    m_coords: np.ndarray  # (n, r) pre-sampled minimum coordinates
    hit_times: np.ndarray  # (n, r) wall-hit times (nan if not hit)
    truncated: np.ndarray  # (n,) paths that ran out of time with walls left


def simulate_welded(d: DriftSpec, cfg: SimConfig, record_times=(),
                    rng=None, m_coords=None, x0=None,
                    stop_when_done: bool = True) -> WeldedBatch:
    """Run cfg.n_samples welded paths started at x0 (default: the origin).

    The active wall set starts full; each first hit of an active wall freezes
    it and switches the drift to the next conditioned field, ending with the
    chamber-conditioned segment.  Already-hit walls repel and may not be
    crossed again.
    """
    rng = rng if rng is not None else stream(cfg.seed, 1)
    rs, r, n = d.rs, d.rs.rank, cfg.n_samples
    fields = _SegmentFields(d)
    e = rs.simple_roots
    v = np.einsum("ij,ij->i", e, e)

    if m_coords is None:
        m_coords = sample_min(d, n, rng)
    m_vec = min_coords_to_vector(d, m_coords)
    start = np.zeros((n, r)) if x0 is None else np.broadcast_to(
        np.asarray(x0, dtype=float), (n, r)).copy()
    y = start - m_vec
    if np.any(y @ e.T <= 0):
        raise DomainError("start must lie strictly inside M + C")
    full_mask = (1 << r) - 1
    active = np.full(n, full_mask, dtype=np.int64)
    min_c = y @ e.T
    hit_times = np.full((n, r), np.nan)

    record_times = sorted(float(t) for t in record_times)
    snapshots = {}
    next_rec = 0
    n_steps = int(round(cfg.t_max / cfg.dt))
    alive = np.ones(n, dtype=bool)

    for step in range(n_steps):
        if not np.any(alive):
            break
        t_next = (step + 1) * cfg.dt
        idx_alive = np.nonzero(alive)[0]
        for mask in np.unique(active[idx_alive]):
            idx = idx_alive[active[idx_alive] == mask]
            y_new, hit, c_min_step = _advance_mask(
                fields.fields[int(mask)], int(mask), y[idx], e, v, cfg.dt, cfg, rng)
            y[idx] = y_new
            min_c[idx] = np.minimum(min_c[idx], c_min_step)
            hitters = hit >= 0
            if np.any(hitters):
                ph = idx[hitters]
                wh = hit[hitters]
                active[ph] = active[ph] & ~(np.int64(1) << wh)
                hit_times[ph, wh] = t_next
        while next_rec < len(record_times) and t_next >= record_times[next_rec] - 1e-12:
            snapshots[record_times[next_rec]] = y + m_vec
            next_rec += 1
        if stop_when_done and next_rec >= len(record_times):
            alive = active != 0
    truncated = active != 0
    return WeldedBatch(snapshots=snapshots, min_coords=min_c + m_coords,
                       m_coords=m_coords, hit_times=hit_times, truncated=truncated)


# ---------------------------------------------------------------------------
# public single-path wrappers
# ---------------------------------------------------------------------------

def sample_segment(d: DriftSpec, walls, x0, m_vector, cfg: SimConfig, rng=None):
    """One conditioned segment: drift grad log U_S(x - M), run until a wall in
    S is hit (exit event) or t_max (truncation).

    Returns (PathSample, event); event is (wall, time, location) or None.
    """
    rng = rng if rng is not None else stream(cfg.seed, 2)
    rs, r = d.rs, d.rs.rank
    walls = tuple(sorted(set(int(i) for i in walls)))
    mask = 0
    for i in walls:
        mask |= 1 << i
    fields = _SegmentFields(d)
    e = rs.simple_roots
    v = np.einsum("ij,ij->i", e, e)
    m_vector = np.asarray(m_vector, dtype=float)
    y = (np.asarray(x0, dtype=float) - m_vector)[None, :].copy()
    if np.any(y @ e.T <= 0):
        raise DomainError("segment must start strictly inside M + C")
    if fields.fields[mask](y[0]) < 1e-300:
        raise SimulationError("segment h-function underflow at the start point")

    n_steps = int(round(cfg.t_max / cfg.dt))
    times = [0.0]
    positions = [y[0] + m_vector]
    event = None
    for step in range(n_steps):
        y, hit, _ = _advance_mask(fields.fields[mask], mask, y, e, v, cfg.dt, cfg, rng)
        t_now = (step + 1) * cfg.dt
        times.append(t_now)
        positions.append(y[0] + m_vector)
        if hit[0] >= 0:
            event = (int(hit[0]), t_now, y[0] + m_vector)
            break
    path = PathSample(times=np.array(times), positions=np.array(positions),
                      events=[event] if event else [],
                      segment_labels=np.zeros(len(times), dtype=int))
    return path, event


def sample_williams_path(d: DriftSpec, cfg: SimConfig, rng=None) -> PathSample:
    """Single welded path with segment labels and wall-hit events."""
    rng = rng if rng is not None else stream(cfg.seed, 3)
    r = d.rs.rank
    m = sample_min(d, 1, rng)
    m_vec = min_coords_to_vector(d, m)[0]
    x = np.zeros(r)
    times_all = [0.0]
    pos_all = [x.copy()]
    labels = [0]
    events = []
    remaining = set(range(r))
    seg = 0
    t0 = 0.0
    while cfg.t_max - t0 > cfg.dt:
        walls = tuple(sorted(remaining))
        seg_cfg = SimConfig(dt=cfg.dt, wall_refine=cfg.wall_refine,
                            t_max=cfg.t_max - t0, n_samples=1, seed=cfg.seed,
                            bridge_correction=cfg.bridge_correction)
        path, event = sample_segment(d, walls, x, m_vec, seg_cfg, rng)
        times_all.extend((path.times[1:] + t0).tolist())
        pos_all.extend(path.positions[1:].tolist())
        labels.extend([seg] * (len(path.times) - 1))
        if event is None:
            break
        i, te, z = event
        events.append((i, te + t0, z))
        remaining.discard(i)
        t0 += te
        x = z
        seg += 1
        if not remaining:
            rest = SimConfig(dt=cfg.dt, wall_refine=cfg.wall_refine,
                             t_max=cfg.t_max - t0, n_samples=1, seed=cfg.seed,
                             bridge_correction=cfg.bridge_correction)
            if rest.t_max > cfg.dt:
                path, _ = sample_segment(d, (), x, m_vec, rest, rng)
                times_all.extend((path.times[1:] + t0).tolist())
                pos_all.extend(path.positions[1:].tolist())
                labels.extend([seg] * (len(path.times) - 1))
            break
    return PathSample(times=np.array(times_all), positions=np.array(pos_all),
                      events=events, segment_labels=np.array(labels))


# ---------------------------------------------------------------------------
# one-dimensional conditioned processes and exponential functionals
# ---------------------------------------------------------------------------

Y_STOP = 34.0  # stop integrating e^{-gamma X} once gamma X exceeds this


def _coth_drift(x, mu, v):
    """Drift of BM(drift mu, variance v) conditioned to stay positive."""
    z = mu * x / v
    out = np.empty_like(x)
    small = z < 1e-4
    if np.any(small):
        out[small] = v / x[small] + (mu * z[small]) / 3.0
    big = ~small
    out[big] = mu / np.tanh(z[big])
    return out


def _chi3(rng, n):
    """Chi(3) draws: entrance profile of a Bessel-like start at the origin."""
    return np.sqrt(rng.chisquare(3, n))


def _schedule(dt, t_max):
    """Step-size schedule: fine early, coarser later."""
    blocks = []
    t1 = min(2.0, t_max)
    blocks.append((dt, t1))
    if t_max > t1:
        t2 = min(10.0, t_max)
        blocks.append((5 * dt, t2))
    if t_max > 10.0:
        blocks.append((20 * dt, t_max))
    return blocks


def conditioned_ascent_integrals(mu, v, n, cfg, rng, gamma_eff=1.0, z_source=None,
                                 stop_exponent=Y_STOP):
    """integral_0^inf e^{-gamma X} Z dt for the positive-conditioned diffusion
    started at the origin (chi(3) entrance), batch of n paths.

    Paths stop contributing once gamma X exceeds stop_exponent.  Returns
    (values, truncation_bound_mean).
    """
    x = _chi3(rng, n) * math.sqrt(v * cfg.dt)
    acc = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    t = cfg.dt
    zfun = z_source if z_source is not None else (lambda tt, k: 1.0)
    zvals = zfun(t, np.arange(n))
    g_old = np.exp(-gamma_eff * x) * zvals
    acc += 0.5 * cfg.dt * (np.exp(-gamma_eff * 0.0) * zfun(0.0, np.arange(n)) + g_old)
    for dt_b, t_end in _schedule(cfg.dt, cfg.t_max):
        while t < t_end - 1e-12 and np.any(alive):
            idx = np.nonzero(alive)[0]
            xi = x[idx]
            near = xi < NEAR_WALL_FACTOR * math.sqrt(v * dt_b)
            new = np.empty_like(xi)
            if np.any(~near):
                sub = ~near
                new[sub] = (xi[sub] + _coth_drift(xi[sub], mu, v) * dt_b
                            + math.sqrt(v * dt_b) * rng.standard_normal(int(sub.sum())))
            if np.any(near):
                sub = np.nonzero(near)[0]
                k = max(int(cfg.wall_refine), 4)
                dts = dt_b / k
                cur = xi[sub]
                for _ in range(k):
                    prop = (cur + _coth_drift(cur, mu, v) * dts
                            + math.sqrt(v * dts) * rng.standard_normal(len(cur)))
                    bad = prop <= 0
                    tries = 0
                    while np.any(bad) and tries < MAX_RETRIES:
                        nb = int(bad.sum())
                        prop[bad] = (cur[bad] + _coth_drift(cur[bad], mu, v) * dts
                                     + math.sqrt(v * dts) * rng.standard_normal(nb))
                        bad = prop <= 0
                        tries += 1
                    prop = np.abs(prop)
                    cur = prop
                new[sub] = cur
            x[idx] = new
            t += dt_b
            g_new = np.exp(-np.minimum(gamma_eff * x[idx], 700.0)) * zfun(t, idx)
            acc[idx] += 0.5 * dt_b * (g_old[idx] + g_new)
            g_old[idx] = g_new
            alive[idx] = gamma_eff * x[idx] < stop_exponent
    tail = float(np.mean(np.exp(-np.minimum(gamma_eff * x, 700.0)) / (gamma_eff * mu)))
    return acc, tail


def descent_integrals(mu, v, x0, levels, cfg, rng, gamma_eff=1.0, z_source=None):
    """integral e^{-gamma X} Z dt for BM(drift -mu, variance v) from x0 until
    first hitting per-path `levels` (absorbed, bridge-corrected).

    Returns (values, hit_times, unfinished_mask).
    """
    n = len(levels)
    x = np.full(n, float(x0)) if np.isscalar(x0) else np.asarray(x0, dtype=float).copy()
    acc = np.zeros(n)
    hit_t = np.full(n, np.nan)
    alive = np.ones(n, dtype=bool)
    zfun = z_source if z_source is not None else (lambda tt, k: 1.0)
    t = 0.0
    g_old = np.exp(-np.minimum(gamma_eff * x, 700.0)) * zfun(0.0, np.arange(n))
    for dt_b, t_end in _schedule(cfg.dt, cfg.t_max):
        while t < t_end - 1e-12 and np.any(alive):
            idx = np.nonzero(alive)[0]
            xi = x[idx]
            prop = xi - mu * dt_b + math.sqrt(v * dt_b) * rng.standard_normal(len(idx))
            lev = levels[idx]
            crossed = prop <= lev
            if cfg.bridge_correction:
                open_ = ~crossed
                if np.any(open_):
                    a = np.maximum(xi[open_] - lev[open_], 1e-300)
                    b = prop[open_] - lev[open_]
                    pc = np.exp(-2.0 * a * b / (v * dt_b))
                    hit_b = rng.random(int(open_.sum())) < pc
                    sel = np.nonzero(open_)[0][hit_b]
                    crossed[sel] = True
                    prop[sel] = lev[sel]
            prop = np.maximum(prop, lev)
            t_new = t + dt_b
            g_new = np.exp(-np.minimum(gamma_eff * prop, 700.0)) * zfun(t_new, idx)
            acc[idx] += 0.5 * dt_b * (g_old[idx] + g_new)
            g_old[idx] = g_new
            x[idx] = prop
            if np.any(crossed):
                hit_t[idx[crossed]] = t_new
                alive[idx[crossed]] = False
            t = t_new
    return acc, hit_t, alive


def sample_conditioned_1d(mu, variance, x0, cfg: SimConfig, rng=None) -> PathSample:
    """Weld of BM(drift -mu, variance) until first hitting 0 with the
    positive-conditioned diffusion started at the origin afterwards."""
    if mu <= 0 or variance <= 0:
        raise DomainError("mu > 0 and variance > 0 required")
    rng = rng if rng is not None else stream(cfg.seed, 4)
    n_steps = int(round(cfg.t_max / cfg.dt))
    times = np.arange(n_steps + 1) * cfg.dt
    xs = np.empty(n_steps + 1)
    labels = np.zeros(n_steps + 1, dtype=int)
    xs[0] = x0
    x = float(x0)
    phase = 0 if x0 > 0 else 1
    events = []
    v = variance
    for k in range(n_steps):
        if phase == 0:
            prop = x - mu * cfg.dt + math.sqrt(v * cfg.dt) * rng.standard_normal()
            hit = prop <= 0
            if not hit and cfg.bridge_correction and x > 0:
                if rng.random() < math.exp(-2.0 * x * max(prop, 0.0) / (v * cfg.dt)):
                    hit = True
            if hit:
                phase = 1
                events.append((0, times[k + 1], np.array([0.0])))
                x = _chi3(rng, 1)[0] * math.sqrt(v * cfg.dt)
            else:
                x = prop
        else:
            if x < NEAR_WALL_FACTOR * math.sqrt(v * cfg.dt):
                k_sub = max(int(cfg.wall_refine), 4)
                dts = cfg.dt / k_sub
                for _ in range(k_sub):
                    x = abs(x + _coth_drift(np.array([x]), mu, v)[0] * dts
                            + math.sqrt(v * dts) * rng.standard_normal())
            else:
                x = (x + _coth_drift(np.array([x]), mu, v)[0] * cfg.dt
                     + math.sqrt(v * cfg.dt) * rng.standard_normal())
        xs[k + 1] = x
        labels[k + 1] = phase
    return PathSample(times=times, positions=xs[:, None], events=events,
                      segment_labels=labels)


def estimate_exp_functional(mu: float, p: float, cfg: SimConfig,
                            tilt: float | None = None) -> MCEstimate:
    """E[(integral_0^inf e^{-B_t} dt)^p] for B with drift mu > 0, variance 1.

    Sampling goes through the minimum: -m with m ~ Exp(2 mu), a descent to -m
    and a conditioned ascent.  The minimum is importance-tilted (default rate
    2 mu - p, the tilt that flattens the e^{p m} payoff), which keeps the
    estimator square-integrable for p against the inverse-gamma tail.
    """
    if mu <= 0:
        raise DomainError("drift must be positive")
    if p >= 2 * mu:
        raise DomainError(f"moment p={p} does not exist: requires p < 2*mu = {2 * mu}")
    rate = 2.0 * mu
    q = rate - max(p, 0.0) if tilt is None else tilt
    q = max(q, 0.05 * rate)
    rng = stream(cfg.seed, 5)
    n = cfg.n_samples
    vals = np.empty(n)
    trunc = 0.0
    done = 0
    batch = 8192
    while done < n:
        k = min(batch, n - done)
        m = rng.exponential(1.0 / q, k)
        w = (rate / q) * np.exp(-(rate - q) * m)
        i_desc, hit_t, unfinished = descent_integrals(mu, 1.0, 0.0, -m, cfg, rng)
        i_asc, tail = conditioned_ascent_integrals(mu, 1.0, k, cfg, rng)
        total = i_desc + np.exp(m) * i_asc
        vals[done:done + k] = w * np.power(total, p)
        trunc = max(trunc, tail * float(np.exp(m).max()))
        done += k
    return combine_mean(vals, cfg.seed, truncation_bound=trunc)


def estimate_J(mu: float, gamma_eff: float, cfg: SimConfig, z_source=None,
               variance: float = 1.0, power: float = 1.0,
               stop_exponent: float = Y_STOP) -> MCEstimate:
    """E[J^power] with J = two-sided integral of e^{-gamma_eff X} Z for the
    positive-conditioned process with drift mu, variance `variance`, seen from
    its minimum (equivalently: started from infinity).

    z_source(rng, n) must return a (forward, backward) pair of lookup
    callables over one stationary Z path per sample; None means Z = 1.
    """
    if mu <= 0:
        raise DomainError("drift must be positive")
    rng = stream(cfg.seed, 6)
    n = cfg.n_samples
    vals = np.empty(n)
    trunc = 0.0
    done = 0
    batch = 8192 if z_source is None else 4096
    while done < n:
        k = min(batch, n - done)
        if z_source is None:
            zf, zb = None, None
        else:
            zf, zb = z_source(rng, k)
        i_fwd, tail_f = conditioned_ascent_integrals(mu, variance, k, cfg, rng,
                                                     gamma_eff=gamma_eff, z_source=zf,
                                                     stop_exponent=stop_exponent)
        i_bwd, tail_b = conditioned_ascent_integrals(mu, variance, k, cfg, rng,
                                                     gamma_eff=gamma_eff, z_source=zb,
                                                     stop_exponent=stop_exponent)
        vals[done:done + k] = np.power(i_fwd + i_bwd, power)
        trunc = max(trunc, tail_f + tail_b)
        done += k
    return combine_mean(vals, cfg.seed, truncation_bound=trunc)


# ---------------------------------------------------------------------------
# exponential-functional factorization across walls
# ---------------------------------------------------------------------------

def welded_exp_integrals(d: DriftSpec, cfg: SimConfig, x0, rng=None,
                         m_coords=None) -> tuple[np.ndarray, np.ndarray]:
    """J_i = integral_0^inf e^{-<X_t, e_i>} dt along welded paths from x0
    (minimum pinned at the origin unless m_coords given).

    Returns (J, truncated) with J of shape (n, r).
    """
    rng = rng if rng is not None else stream(cfg.seed, 7)
    rs, r, n = d.rs, d.rs.rank, cfg.n_samples
    fields = _SegmentFields(d)
    e = rs.simple_roots
    v = np.einsum("ij,ij->i", e, e)
    if m_coords is None:
        m_coords = np.zeros((n, r))
    m_vec = min_coords_to_vector(d, m_coords)
    y = np.broadcast_to(np.asarray(x0, dtype=float), (n, r)).copy() - m_vec
    if np.any(y @ e.T <= 0):
        raise DomainError("start must lie strictly inside M + C")
    full_mask = (1 << r) - 1
    active = np.full(n, full_mask, dtype=np.int64)
    acc = np.zeros((n, r))
    g_old = np.exp(-np.minimum((y + m_vec) @ e.T, 700.0))
    n_steps = int(round(cfg.t_max / cfg.dt))
    alive = np.ones(n, dtype=bool)
    for step in range(n_steps):
        if not np.any(alive):
            break
        idx_alive = np.nonzero(alive)[0]
        for mask in np.unique(active[idx_alive]):
            idx = idx_alive[active[idx_alive] == mask]
            y_new, hit, _ = _advance_mask(
                fields.fields[int(mask)], int(mask), y[idx], e, v, cfg.dt, cfg, rng)
            y[idx] = y_new
            hitters = hit >= 0
            if np.any(hitters):
                ph = idx[hitters]
                wh = hit[hitters]
                active[ph] = active[ph] & ~(np.int64(1) << wh)
        g_new = np.exp(-np.minimum((y[idx_alive] + m_vec[idx_alive]) @ e.T, 700.0))
        acc[idx_alive] += 0.5 * cfg.dt * (g_old[idx_alive] + g_new)
        g_old[idx_alive] = g_new
        cc = (y[idx_alive] + m_vec[idx_alive]) @ e.T
        alive[idx_alive] = (active[idx_alive] != 0) | np.any(cc < Y_STOP, axis=1)
    return acc, active != 0


def factorization_check(d: DriftSpec, fs, x, cfg: SimConfig) -> dict:
    """Compare the joint law of the wall exponential functionals from a deep
    start against the product of decoupled single-wall limits.

    fs: list of r scalar callables (bounded test functions), applied to J_i.
    The single-wall limit for wall i uses drift <s_{i+1}..s_r nu, e_i> and
    variance <e_i, e_i>.
    """
    rs, r = d.rs, d.rs.rank
    J, truncated = welded_exp_integrals(d, cfg, x)
    prod_lhs = np.ones(cfg.n_samples)
    for i, f in enumerate(fs):
        prod_lhs = prod_lhs * np.asarray(f(J[:, i]), dtype=float)
    lhs = combine_mean(prod_lhs, cfg.seed)

    group = d.group
    words = {s.word: s for s in group}
    rhs_mean, rhs_var_rel = 1.0, 0.0
    factors = []
    for i in range(r):
        w = tuple(range(i + 1, r))
        mat = np.eye(r)
        for j in w:
            mat = mat @ d.rs.reflection_matrix(j)
        drift_i = float((mat @ d.nu) @ rs.simple_roots[i])
        v_i = float(rs.simple_roots[i] @ rs.simple_roots[i])
        rng = stream(cfg.seed, 100 + i)
        k = cfg.n_samples
        a, _ = conditioned_ascent_integrals(drift_i, v_i, k, cfg, rng)
        b, _ = conditioned_ascent_integrals(drift_i, v_i, k, cfg, rng)
        fi = np.asarray(fs[i](a + b), dtype=float)
        est = combine_mean(fi, cfg.seed)
        factors.append(est)
        rhs_mean *= est.mean
        rhs_var_rel += (est.stderr / est.mean) ** 2 if est.mean != 0 else 0.0
    rhs_stderr = abs(rhs_mean) * math.sqrt(rhs_var_rel)
    disc = lhs.mean - rhs_mean
    comb = math.sqrt(lhs.stderr ** 2 + rhs_stderr ** 2)
    return {
        "lhs": lhs,
        "rhs_mean": rhs_mean,
        "rhs_stderr": rhs_stderr,
        "discrepancy": disc,
        "combined_stderr": comb,
        "normalized_discrepancy": disc / comb if comb > 0 else 0.0,
        "truncated_fraction": float(np.mean(truncated)),
        "factors": factors,
    }
