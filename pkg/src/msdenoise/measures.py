"""One-dimensional measures with closed-form Gaussian smoothing.

Every measure ``m`` here induces a family of smoothed laws
``Y_r = r * X + Z`` with ``X ~ m`` and ``Z ~ N(0, 1)`` independent.  The
functions below evaluate the density, score, curvature and localization
(the conditional variance ``Var[r X | Y_r = y]``) of those laws in closed
form, draw reproducible samples, and evolve measures under the
Ornstein-Uhlenbeck semigroup with potential ``x**2 / 2``.

Pointwise functions accept a scalar or an array for ``y`` and return the
same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

#: Smallest time at which scores along the OU chain are evaluated.
T_MIN = 1e-6

#: Negative localization values above this are treated as roundoff.
CLAMP_TOL = 1e-10

_WEIGHT_TOL = 1e-9
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class MeasureError(ValueError):
    """Invalid measure parameters or evaluation arguments."""


class FarTailError(MeasureError):
    """The smoothed density underflows at the requested point."""


@dataclass(frozen=True)
class MixtureMeasure:
    """Finite mixture of Gaussians; a zero variance component is a Dirac atom."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        mu = tuple(float(x) for x in self.means)
        var = tuple(float(x) for x in self.variances)
        if not (len(w) == len(mu) == len(var)):
            raise MeasureError("weights, means and variances differ in length")
        if not w:
            raise MeasureError("a mixture needs at least one component")
        if not all(math.isfinite(x) for x in w + mu + var):
            raise MeasureError("mixture parameters must be finite")
        if any(x <= 0 for x in w):
            raise MeasureError(f"weights must be positive, got {w}")
        if abs(math.fsum(w) - 1.0) > _WEIGHT_TOL:
            raise MeasureError(f"weights sum to {math.fsum(w):.12g}, not 1")
        if any(x < 0 for x in var):
            raise MeasureError(f"variances must be nonnegative, got {var}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @classmethod
    def from_components(cls, components):
        """Build from an iterable of ``(weight, mean, variance)`` triples."""
        w, mu, var = zip(*components)
        return cls(w, mu, var)

    @classmethod
    def dirac(cls, x=0.0):
        return cls((1.0,), (x,), (0.0,))

    @classmethod
    def normal(cls, mean=0.0, variance=1.0):
        return cls((1.0,), (mean,), (variance,))

    @property
    def components(self):
        return list(zip(self.weights, self.means, self.variances))

    def arrays(self):
        return (np.array(self.weights), np.array(self.means), np.array(self.variances))

    @property
    def mean(self):
        return math.fsum(w * m for w, m in zip(self.weights, self.means))


@dataclass(frozen=True)
class UniformMeasure:
    """Uniform law on ``[lower, upper]``."""

    lower: float
    upper: float

    def __post_init__(self):
        a, b = float(self.lower), float(self.upper)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise MeasureError("uniform endpoints must be finite")
        if not a < b:
            raise MeasureError(f"uniform needs lower < upper, got {a} >= {b}")
        object.__setattr__(self, "lower", a)
        object.__setattr__(self, "upper", b)

    @property
    def mean(self):
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class ScaledNoised:
    """Law of ``scale * X + noise * Z`` with ``X ~ base`` and ``Z ~ N(0, 1)``.

    This is how ``evolve`` represents OU marginals of a uniform start.  The
    law is already a Gaussian smoothing of ``base``, so the pointwise
    functions ignore their ``r`` argument and describe this law itself.
    """

    base: "Measure"
    scale: float
    noise: float

    def __post_init__(self):
        if isinstance(self.base, ScaledNoised):
            raise MeasureError("ScaledNoised cannot wrap another ScaledNoised")
        c, s = float(self.scale), float(self.noise)
        if not (0.0 < c <= 1.0):
            raise MeasureError(f"scale must lie in (0, 1], got {c}")
        if not (s >= 0.0 and math.isfinite(s)):
            raise MeasureError(f"noise must be finite and nonnegative, got {s}")
        object.__setattr__(self, "scale", c)
        object.__setattr__(self, "noise", s)

    @property
    def mean(self):
        return self.scale * self.base.mean

    def _induced(self):
        if self.noise == 0.0:
            raise MeasureError("ScaledNoised with zero noise has no smooth density")
        return self.scale / self.noise, self.noise


Measure = Union[MixtureMeasure, UniformMeasure, ScaledNoised]


@dataclass(frozen=True)
class SmoothingScale:
    """SNR ``r``, inverse-noise scale ``s`` at OU time ``t`` and inverse temperature ``beta``."""

    r: float
    s: float
    t: float
    beta: float


def snr_schedule(t, beta=1.0):
    """OU time to smoothing scale: ``s = 1/sqrt((1 - e^{-2t}) / beta)`` and ``r = e^{-t} s``."""
    t = float(t)
    beta = float(beta)
    if not beta > 0:
        raise MeasureError(f"beta must be positive, got {beta}")
    if not t >= T_MIN:
        raise MeasureError(f"t={t} is below t_min={T_MIN}; the chain is singular there")
    noise_var = -math.expm1(-2.0 * t) / beta
    s = 1.0 / math.sqrt(noise_var)
    return SmoothingScale(r=math.exp(-t) * s, s=s, t=t, beta=beta)


# -- internal helpers -------------------------------------------------------


def _check_y(y):
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = arr[~np.isfinite(arr)].ravel()[0]
        raise MeasureError(f"evaluation point must be finite, got {bad}")
    return arr


def _check_r(r):
    r = float(r)
    if not (r >= 0 and math.isfinite(r)):
        raise MeasureError(f"SNR must be finite and nonnegative, got {r}")
    return r


def _log_phi(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


def _log1mexp(x):
    # log(1 - exp(x)) for x <= 0
    return np.where(x > -math.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _log_gauss_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for lo < hi, accurate in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    out = np.empty_like(lo)
    left = hi < 0
    right = lo > 0
    mid = ~(left | right)
    if np.any(left):
        a, b = log_ndtr(lo[left]), log_ndtr(hi[left])
        out[left] = b + _log1mexp(a - b)
    if np.any(right):
        a, b = log_ndtr(-hi[right]), log_ndtr(-lo[right])
        out[right] = b + _log1mexp(a - b)
    if np.any(mid):
        out[mid] = np.log1p(-ndtr(lo[mid]) - ndtr(-hi[mid]))
    return out


def _gm_terms(y, log_w, centers, comp_var):
    """Log density, score and responsibilities of a Gaussian mixture at ``y``."""
    diff = y[..., None] - centers
    log_c = log_w - 0.5 * diff * diff / comp_var - 0.5 * np.log(comp_var) - _LOG_SQRT_2PI
    logp = logsumexp(log_c, axis=-1)
    resp = np.exp(log_c - logp[..., None])
    a = -diff / comp_var
    score = np.sum(resp * a, axis=-1)
    spread = np.sum(resp * (a - score[..., None]) ** 2, axis=-1)
    return logp, score, spread, resp


def _mixture_smoothed(m, r, y):
    w, mu, var = m.arrays()
    signal = r * r * var
    v2 = signal + 1.0
    logp, score, spread, resp = _gm_terms(y, np.log(w), r * mu, v2)
    # law of total variance: within-component plus between-component
    loc = np.sum(resp * (signal / v2), axis=-1) + spread
    return logp, score, loc


# narrow intervals: posterior of rX is a tilted uniform, integrated on Legendre nodes
_NARROW_WIDTH = 0.1
_MAX_TILT = 50.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)
_GL_NODES = 0.5 * _GL_NODES
_GL_LOG_WEIGHTS = np.log(0.5 * _GL_WEIGHTS)


def _narrow_uniform(c, w, y):
    d = y - c
    expo = (d * w)[..., None] * _GL_NODES - 0.5 * w * w * _GL_NODES**2 + _GL_LOG_WEIGHTS
    log_int = logsumexp(expo, axis=-1)
    p = np.exp(expo - log_int[..., None])
    mean_s = p @ _GL_NODES
    var_s = np.sum(p * (_GL_NODES - mean_s[..., None]) ** 2, axis=-1)
    return _log_phi(d) + log_int, -(d - w * mean_s), w * w * var_s


def _uniform_smoothed(m, r, y):
    if r == 0.0:
        return _log_phi(y), -y, np.zeros_like(y)
    w = r * (m.upper - m.lower)
    c = r * 0.5 * (m.lower + m.upper)
    if w < _NARROW_WIDTH and np.all(np.abs(y - c) * w <= _MAX_TILT):
        return _narrow_uniform(c, w, y)
    hi = y - r * m.lower
    lo = y - r * m.upper
    log_mass = _log_gauss_mass(lo, hi)
    if not np.all(np.isfinite(log_mass)):
        bad = y[~np.isfinite(log_mass)].ravel()[0]
        raise FarTailError(f"far-tail evaluation: smoothed density underflows at y={bad}")
    logp = log_mass - math.log(r * (m.upper - m.lower))
    p_hi = np.exp(_log_phi(hi) - log_mass)
    p_lo = np.exp(_log_phi(lo) - log_mass)
    score = p_hi - p_lo
    second = -hi * p_hi + lo * p_lo
    loc = 1.0 + second - score * score
    return logp, score, loc


def _smoothed(m, r, y):
    """(log density, score, raw localization) of the smoothed law, unit noise scale."""
    if isinstance(m, MixtureMeasure):
        out = _mixture_smoothed(m, r, y)
    elif isinstance(m, UniformMeasure):
        out = _uniform_smoothed(m, r, y)
    else:
        raise TypeError(f"not a base measure: {m!r}")
    if not all(np.all(np.isfinite(v)) for v in out):
        bad = y[~(np.isfinite(out[0]) & np.isfinite(out[1]) & np.isfinite(out[2]))].ravel()[0]
        raise FarTailError(f"far-tail evaluation: non-finite result at y={bad}")
    return out


def _terms(m, r, y):
    """Returns (log density, score, curvature, localization) for any measure."""
    if isinstance(m, ScaledNoised):
        r_ind, sigma = m._induced()
        logp, score, loc = _smoothed(m.base, r_ind, y / sigma)
        return logp - math.log(sigma), score / sigma, (loc - 1.0) / sigma**2, loc
    r = _check_r(r)
    logp, score, loc = _smoothed(m, r, y)
    return logp, score, loc - 1.0, loc


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _clamp(loc, y):
    if np.any(loc < -CLAMP_TOL):
        idx = np.argmin(loc)
        raise RuntimeError(
            f"negative conditional variance {loc.ravel()[idx]:.3g} at y={np.ravel(y)[idx]}"
        )
    return np.maximum(loc, 0.0)


# -- pointwise API ----------------------------------------------------------


def smoothed_log_density(m, r, y):
    y_arr = _check_y(y)
    return _out(_terms(m, r, y_arr)[0], y)


def smoothed_density(m, r, y):
    """Density of ``Y_r = r X + Z`` at ``y``; evaluated through its logarithm."""
    y_arr = _check_y(y)
    return _out(np.exp(_terms(m, r, y_arr)[0]), y)


def score(m, r, y):
    """``d/dy log p_{Y_r}(y)``."""
    y_arr = _check_y(y)
    return _out(_terms(m, r, y_arr)[1], y)


def curvature(m, r, y):
    """``d^2/dy^2 log p_{Y_r}(y)``, equal to ``localization - 1`` for unit noise."""
    y_arr = _check_y(y)
    return _out(_terms(m, r, y_arr)[2], y)


def localization(m, r, y):
    """Conditional variance ``Var[r X | Y_r = y]``.

    Roundoff negatives down to ``-CLAMP_TOL`` are clamped to zero; anything
    more negative raises, since a variance cannot be negative.
    """
    y_arr = _check_y(y)
    loc = _clamp(np.asarray(_terms(m, r, y_arr)[3]), y_arr)
    return _out(loc, y)


def posterior_mean(m, r, y):
    """Tweedie denoiser ``E[r X | Y_r = y] = y + score``.

    For a ``ScaledNoised`` law ``W = c X + sigma Z`` this is ``E[c X | W = y]``.
    """
    y_arr = _check_y(y)
    sc = _terms(m, r, y_arr)[1]
    if isinstance(m, ScaledNoised):
        return _out(y_arr + m.noise**2 * sc, y)
    return _out(y_arr + sc, y)


def law_log_density(m, x):
    """Log density of the measure itself (requires a smooth law)."""
    x_arr = _check_y(x)
    return _out(_law_terms(m, x_arr)[0], x)


def law_score(m, x):
    """Score of the measure itself, e.g. of an evolved mixture."""
    x_arr = _check_y(x)
    return _out(_law_terms(m, x_arr)[1], x)


def _law_terms(m, x):
    if isinstance(m, MixtureMeasure):
        w, mu, var = m.arrays()
        if np.any(var == 0):
            raise MeasureError("mixture with a Dirac component has no density")
        logp, sc, _, _ = _gm_terms(x, np.log(w), mu, var)
        return logp, sc
    if isinstance(m, ScaledNoised):
        logp, sc, _, _ = _terms(m, None, x)
        return logp, sc
    raise MeasureError("a uniform law has no differentiable density")


# -- sampling ---------------------------------------------------------------


def _generators(seed, stream):
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise MeasureError(f"seed must be a nonnegative integer, got {seed!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return [np.random.default_rng(c) for c in ss.spawn(4)]


def _check_n(n):
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise MeasureError(f"sample size must be a positive integer, got {n!r}")
    return int(n)


def _draw(m, n, gens):
    if isinstance(m, MixtureMeasure):
        w, mu, var = m.arrays()
        if len(w) == 1:
            comp = np.zeros(n, dtype=int)
        else:
            cdf = np.cumsum(w)
            comp = np.minimum(np.searchsorted(cdf, gens[0].random(n), side="right"), len(w) - 1)
        return mu[comp] + np.sqrt(var[comp]) * gens[1].standard_normal(n)
    if isinstance(m, UniformMeasure):
        return m.lower + (m.upper - m.lower) * gens[0].random(n)
    if isinstance(m, ScaledNoised):
        return m.scale * _draw(m.base, n, gens) + m.noise * gens[2].standard_normal(n)
    raise TypeError(f"not a measure: {m!r}")


def sample(m, n, seed=0, stream=0):
    """``n`` i.i.d. draws of ``X ~ m``.

    Draws for a fixed ``(seed, stream)`` form a prefix-consistent stream:
    the first ``k`` values do not depend on ``n``.  Parallel callers should
    use distinct ``stream`` indices.
    """
    n = _check_n(n)
    return _draw(m, n, _generators(seed, stream))


def sample_smoothed(m, r, n, seed=0, stream=0):
    """Draws of ``Y_r = r X + Z``, sharing ``X`` with ``sample(m, n, seed, stream)``.

    For a ``ScaledNoised`` law ``r`` is ignored and draws of the law itself
    are returned.
    """
    n = _check_n(n)
    gens = _generators(seed, stream)
    x = _draw(m, n, gens)
    if isinstance(m, ScaledNoised):
        return x
    r = _check_r(r)
    return r * x + gens[3].standard_normal(n)


def smoothing_noise(n, seed=0, stream=0):
    """The standard normal ``Z`` that ``sample_smoothed`` adds for the same seed and stream."""
    n = _check_n(n)
    return _generators(seed, stream)[3].standard_normal(n)


# -- OU evolution -----------------------------------------------------------


def evolve(m, t, beta=1.0):
    """Law at time ``t`` of the OU process ``dX = -X dt + sqrt(2/beta) dB`` started at ``m``."""
    t = float(t)
    beta = float(beta)
    if not t >= 0:
        raise MeasureError(f"time must be nonnegative, got {t}")
    if not beta > 0:
        raise MeasureError(f"beta must be positive, got {beta}")
    if t == 0.0:
        return m
    decay = math.exp(-t)
    noise_var = -math.expm1(-2.0 * t) / beta
    if isinstance(m, MixtureMeasure):
        return MixtureMeasure(
            m.weights,
            tuple(decay * mu for mu in m.means),
            tuple(decay * decay * v + noise_var for v in m.variances),
        )
    if isinstance(m, UniformMeasure):
        return ScaledNoised(m, decay, math.sqrt(noise_var))
    if isinstance(m, ScaledNoised):
        if decay * m.scale == 0.0:
            return MixtureMeasure.normal(0.0, noise_var + (decay * m.noise) ** 2)
        return ScaledNoised(m.base, decay * m.scale, math.sqrt((decay * m.noise) ** 2 + noise_var))
    raise TypeError(f"not a measure: {m!r}")


def score_at_time(m, t, beta, x, route=None):
    """Score of the OU marginal ``mu_t`` at ``x``.

    ``route="evolve"`` differentiates the evolved law directly (mixtures and
    already-smoothed laws); ``route="rescaled"`` uses ``s * score(m, r, s * x)``
    with ``(r, s)`` from ``snr_schedule``.  The default picks ``evolve`` for
    mixtures and ``rescaled`` otherwise.
    """
    sched = snr_schedule(t, beta)
    if route is None:
        route = "evolve" if isinstance(m, MixtureMeasure) else "rescaled"
    if route == "evolve" or isinstance(m, ScaledNoised):
        return law_score(evolve(m, sched.t, beta), x)
    if route != "rescaled":
        raise ValueError(f"unknown route {route!r}")
    x_arr = _check_y(x)
    return _out(sched.s * np.asarray(score(m, sched.r, sched.s * x_arr)), x)
