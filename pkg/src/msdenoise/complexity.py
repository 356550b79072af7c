"""Monte-Carlo survival functions of the localization variable and the
multi-scale complexity summaries built from them.

For a measure ``m`` and SNR ``r`` the random variable ``L_r(Y_r)`` is
sampled, its survival function ``s_r(u) = P(L_r > u)`` is tabulated on a
``u`` grid, and the integrated tail ``h(delta) = int_{1-delta}^inf s_r(u) du``
is obtained by trapezoidal integration of that table.  One sample set per
``r`` is reused for every ``u`` and ``delta``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .measures import MeasureError, localization, sample_smoothed, snr_schedule

U_STEP = 0.005
DELTA_STEP = 0.002
DEFAULT_SAMPLES = 1_000_000
MIN_SAMPLES = 10_000
TIE_RTOL = 1e-9


def default_u_grid(l_max=0.0, step=U_STEP):
    """``0, step, ...`` up to at least ``max(2, l_max)``."""
    top = max(2.0, float(l_max))
    k = int(math.ceil(top / step - 1e-9))
    grid = np.arange(k + 1) * step
    if grid[-1] < top:
        grid = np.append(grid, grid[-1] + step)
    return grid


def default_delta_grid(step=DELTA_STEP):
    k = int(round(1.0 / step))
    return np.arange(1, k + 1) / k


def thread_count():
    """Worker cap from ``MSD_THREADS``, else the machine's CPU count."""
    raw = os.environ.get("MSD_THREADS")
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"MSD_THREADS must be >= 1, got {raw}")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SurvivalCurve:
    """Tabulated empirical survival function of ``L_r(Y_r)``."""

    r: float
    u_grid: np.ndarray
    s_values: np.ndarray
    n_samples: int
    seed: int
    L_max_observed: float

    def __post_init__(self):
        u = np.array(self.u_grid, dtype=float)
        s = np.array(self.s_values, dtype=float)
        if u.ndim != 1 or u.shape != s.shape or len(u) < 2:
            raise ValueError("u_grid and s_values must be matching 1-D arrays of length >= 2")
        if u[0] != 0.0 or np.any(np.diff(u) <= 0):
            raise ValueError("u_grid must start at 0 and increase strictly")
        if np.any(np.diff(s) > 0) or s.min() < 0 or s.max() > 1:
            raise ValueError("s_values must be non-increasing in [0, 1]")
        u.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "u_grid", u)
        object.__setattr__(self, "s_values", s)

    def bands(self, z=1.96):
        """Pointwise binomial normal-approximation band ``(s_lo, s_hi)``."""
        s = self.s_values
        half = z * np.sqrt(s * (1.0 - s) / self.n_samples)
        return np.clip(s - half, 0.0, 1.0), np.clip(s + half, 0.0, 1.0)

    def at(self, u):
        """Linear interpolation of the table; zero beyond the grid."""
        return np.interp(u, self.u_grid, self.s_values, right=0.0)


@dataclass
class ComplexityProfile:
    """Per-SNR ``(r, m_star, delta_star)`` rows and per-time ``(t, r, M, zeta_star)`` rows."""

    snr_rows: list = field(default_factory=list)
    time_rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def sort(self):
        self.snr_rows.sort(key=lambda row: row[0])
        self.time_rows.sort(key=lambda row: (row[0], row[2]))
        return self


def localization_samples(m, r, n=DEFAULT_SAMPLES, seed=0, stream=0):
    """Draws of ``L_r(Y_r)`` with ``Y_r`` from ``sample_smoothed``."""
    y = sample_smoothed(m, r, n, seed, stream)
    try:
        return localization(m, r, y)
    except (MeasureError, RuntimeError, FloatingPointError) as exc:
        raise type(exc)(f"localization failed on a sample of Y_r (r={r}): {exc}") from exc


def survival_from_samples(loc, r, u_grid=None, seed=0):
    loc = np.sort(np.asarray(loc, dtype=float))
    n = len(loc)
    l_max = float(loc[-1])
    if u_grid is None:
        u_grid = default_u_grid(l_max)
    u_grid = np.asarray(u_grid, dtype=float)
    if u_grid[-1] < l_max:
        raise ValueError(f"u grid ends at {u_grid[-1]} below the largest observed L={l_max}")
    # P(L > u) = fraction strictly above u
    above = n - np.searchsorted(loc, u_grid, side="right")
    return SurvivalCurve(r=float(r), u_grid=u_grid, s_values=above / n,
                         n_samples=n, seed=seed, L_max_observed=l_max)


def survival_curve(m, r, n=DEFAULT_SAMPLES, u_grid=None, seed=0, stream=0):
    """Empirical survival function of ``L_r(Y_r)`` from ``n`` Monte-Carlo draws."""
    if n < MIN_SAMPLES:
        raise ValueError(f"survival_curve needs at least {MIN_SAMPLES} samples, got {n}")
    if u_grid is not None and float(np.asarray(u_grid)[0]) != 0.0:
        raise ValueError("u grid must start at 0")
    loc = localization_samples(m, r, n, seed, stream)
    return survival_from_samples(loc, r, u_grid, seed)


def survival_two_point_exact(rmu, u):
    """Exact ``s_r(u)`` for the symmetric two-point law with ``a = r * mu``.

    ``L_r(y) = a^2 sech^2(a y)`` exceeds ``u`` exactly on ``|y| < y0`` with
    ``cosh(a y0) = a / sqrt(u)``.
    """
    a = float(rmu)
    if not a > 0:
        raise ValueError(f"r*mu must be positive, got {a}")
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0):
        raise ValueError("u must be nonnegative")
    out = np.zeros_like(u_arr)
    inside = u_arr < a * a
    zero = u_arr == 0
    ui = u_arr[inside & ~zero]
    y0 = np.arccosh(a / np.sqrt(ui)) / a
    out[inside & ~zero] = ndtr(y0 + a) + ndtr(y0 - a) - 1.0
    out[zero] = 1.0
    return float(out) if np.ndim(u) == 0 else out


def two_point_integrated_tail_exact(rmu, delta):
    """``h(delta)`` for the two-point law by adaptive quadrature of the exact survival."""
    a2 = float(rmu) ** 2

    def one(d):
        c = 1.0 - d
        if c >= a2:
            return 0.0
        val, _ = integrate.quad(lambda u: survival_two_point_exact(rmu, u), c, a2,
                                limit=200, epsabs=1e-12)
        return val

    d_arr = np.asarray(delta, dtype=float)
    out = np.array([one(d) for d in d_arr.ravel()]).reshape(d_arr.shape)
    return float(out) if np.ndim(delta) == 0 else out


def _check_deltas(delta, allow_zero=True):
    d = np.asarray(delta, dtype=float)
    lo_ok = d >= 0 if allow_zero else d > 0
    if not np.all(lo_ok & (d <= 1)):
        raise ValueError(f"delta must lie in {'[0' if allow_zero else '(0'}, 1]")
    return d


def integrated_tail(curve, delta):
    """``h(delta) = int_{1-delta}^inf s(u) du`` of the piecewise-linear table.

    ``delta = 0`` gives the tail beyond ``u = 1``.  The table is zero past
    its last grid point, which lies at or above ``L_max_observed``.
    """
    d = _check_deltas(delta)
    u, s = curve.u_grid, curve.s_values
    seg = 0.5 * (s[1:] + s[:-1]) * np.diff(u)
    tail = np.append(np.cumsum(seg[::-1])[::-1], 0.0)
    c = 1.0 - d
    # snap 1 - delta onto grid points it misses only by roundoff
    near = np.clip(np.searchsorted(u, c), 0, len(u) - 1)
    c = np.where(np.abs(u[near] - c) < 1e-12, u[near], c)
    j = np.clip(np.searchsorted(u, c, side="right") - 1, 0, len(u) - 2)
    s_c = np.interp(c, u, s, right=0.0)
    h = tail[j + 1] + 0.5 * (s_c + s[j + 1]) * (u[j + 1] - c)
    h = np.where(c >= u[-1], 0.0, h)
    return float(h) if np.ndim(delta) == 0 else h


def m_curve(curve, delta_grid=None):
    """``(delta, h(delta)/delta)`` over a grid in ``(0, 1]``."""
    d = default_delta_grid() if delta_grid is None else _check_deltas(delta_grid, allow_zero=False)
    return d, integrated_tail(curve, d) / d


def minimize_m(curve, delta_grid=None):
    """Grid minimum ``m_star`` of ``h/delta`` and its largest minimizer ``delta_star``.

    ``delta_star`` is resolved only to the grid spacing (plus the ``u`` grid
    spacing through the table interpolation).
    """
    d, m = m_curve(curve, delta_grid)
    if len(d) < 100:
        raise ValueError(f"delta grid needs at least 100 points, got {len(d)}")
    m_star = float(m.min())
    ties = m <= m_star + TIE_RTOL * abs(m_star)
    return m_star, float(d[ties].max())


def zeta_from_tail(tail, deltas, t, M):
    """``sup_delta [delta - M h(delta)] / (1 - e^{-2t})`` from tabulated ``h``.

    ``M = inf`` uses the constrained form: the largest ``delta`` with
    ``h(delta) = 0``, or ``-inf`` when there is none.
    """
    M = float(M)
    if math.isnan(M) or M < 1:
        raise ValueError(f"M must be >= 1 or inf, got {M}")
    denom = -math.expm1(-2.0 * float(t))
    deltas = np.asarray(deltas, dtype=float)
    tail = np.asarray(tail, dtype=float)
    if math.isinf(M):
        free = deltas[tail == 0.0]
        return float(free.max()) / denom if len(free) else -math.inf
    return float(np.max(deltas - M * tail)) / denom


def zeta_star(m, t, M, beta=1.0, n=DEFAULT_SAMPLES, seed=0, delta_grid=None, curve=None,
              stream=0):
    """Effective curvature ``zeta*_M(t)`` at OU time ``t``.

    ``beta`` enters only through ``r(t)``.  Pass ``curve`` to reuse a
    survival table already computed at ``r(t)``.
    """
    sched = snr_schedule(t, beta)
    if curve is None:
        curve = survival_curve(m, sched.r, n=n, seed=seed, stream=stream)
    d = default_delta_grid() if delta_grid is None else _check_deltas(delta_grid)
    d = np.union1d([0.0], d)
    return zeta_from_tail(integrated_tail(curve, d), d, t, M)


def _map(fn, items):
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [fn(i, x) for i, x in enumerate(items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(items)), items))


def complexity_profile(m, r_grid, n=DEFAULT_SAMPLES, seed=0, delta_grid=None):
    """``(r, m_star, delta_star)`` for each SNR; job ``i`` uses sample stream ``i``."""
    def job(i, r):
        curve = survival_curve(m, r, n=n, seed=seed, stream=i)
        return (float(r),) + minimize_m(curve, delta_grid)

    rows = _map(job, list(r_grid))
    return ComplexityProfile(snr_rows=rows, metadata={"seed": seed, "n": n}).sort()


def zeta_profile(m, t_grid, M_list, beta=1.0, n=DEFAULT_SAMPLES, seed=0, delta_grid=None):
    """``(t, r(t), M, zeta*_M(t))`` rows; one survival table per ``t`` shared by all ``M``."""
    def job(i, t):
        sched = snr_schedule(t, beta)
        curve = survival_curve(m, sched.r, n=n, seed=seed, stream=i)
        return [(float(t), sched.r, float(M),
                 zeta_star(m, t, M, beta, delta_grid=delta_grid, curve=curve))
                for M in M_list]

    rows = [row for chunk in _map(job, list(t_grid)) for row in chunk]
    return ComplexityProfile(time_rows=rows, metadata={"seed": seed, "n": n, "beta": beta}).sort()


def snr_threshold(m, r_grid, n=DEFAULT_SAMPLES, seed=0):
    """Largest grid SNR whose sampled ``L_r`` never exceeds 1 (the log-concave edge)."""
    def job(i, r):
        loc = localization_samples(m, r, n, seed, stream=i)
        return float(r), bool(np.all(loc <= 1.0))

    flags = _map(job, list(r_grid))
    ok = [r for r, flat in flags if flat]
    return max(ok) if ok else None
