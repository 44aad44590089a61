"""Admissible noise for smooth-sensitivity mechanisms.

The family implemented here has density ``h(z) = C / (1 + |z|**gamma)`` for
``gamma > 1`` together with its restriction to ``z >= 0`` (renormalised).
Gumbel and exponential samplers used by the global-sensitivity baselines
live here too, as do the seeded random streams every mechanism consumes.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicHermiteSpline

from smoothsel.errors import ParameterError

# Number of knots in the inverse-CDF table and the largest tail exponent
# -log P(|Z| > z) it covers. Uniforms from numpy have 53 bits, so
# -log(2**-53) ~= 36.7 is the deepest tail ever requested.
TABLE_KNOTS = 4096
TABLE_X_MAX = 38.0

# Slack allowed on top of eps/2 by the admissibility verifier.
ADMISSIBILITY_SLACK = 1e-9


class Sidedness(str, enum.Enum):
    TWO_SIDED = "two_sided"
    ONE_SIDED = "one_sided"


def make_rng(seed=None, *keys: int) -> np.random.Generator:
    """Return a counter-based (Philox) generator.

    Extra integer ``keys`` select an independent sub-stream of ``seed``, so
    ``make_rng(7, 3)`` and ``make_rng(7, 4)`` never overlap. Identical
    arguments always reproduce the same sequence.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``rng`` into ``n`` independent child streams."""
    return [np.random.Generator(np.random.Philox(s))
            for s in rng.bit_generator.seed_seq.spawn(n)]


def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    # numpy doubles lie on a 2**-53 lattice in [0, 1); shift by half a step
    # so that logs below are always finite.
    return rng.random(size) + 2.0 ** -54


def normalization_constant(gamma: float) -> float:
    """C such that C / (1 + |z|**gamma) integrates to one over the real line."""
    if not gamma > 1:
        raise ParameterError(f"gamma must exceed 1, got {gamma}")
    return gamma * math.sin(math.pi / gamma) / (2.0 * math.pi)


def admissible_params(spec: "NoiseSpec", epsilon: float) -> tuple[float, float]:
    """(alpha, beta) for which the gamma-family is admissible at ``epsilon``.

    ``beta = eps / (2 (gamma - 1))`` for ``gamma >= 2``. Below 2 it is capped
    at ``eps / 2``: shrinking by ``e^lam`` (lam < 0) costs exactly ``|lam|``
    at ``z = 0``, so no larger beta can be admissible there.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    g = spec.gamma
    if not g > 1:
        raise ParameterError(f"gamma must exceed 1, got {g}")
    alpha = epsilon / (2.0 * (g - 1.0) ** ((g - 1.0) / g))
    beta = epsilon / (2.0 * max(g - 1.0, 1.0))
    return alpha, beta


def classic_admissible_params(gamma: float, epsilon: float) -> tuple[float, float]:
    """The older, looser pair eps/(2(gamma+1)) used for both parameters."""
    v = epsilon / (2.0 * (gamma + 1.0))
    return v, v


@dataclass(frozen=True)
class NoiseSpec:
    """Descriptor of one member of the ``1/(1+|z|^gamma)`` family.

    ``normalization`` is the two-sided constant; the one-sided density is
    twice the two-sided one on ``z >= 0``.
    """

    gamma: float = 4.0
    sidedness: Sidedness = Sidedness.TWO_SIDED
    normalization: float = field(init=False)

    def __post_init__(self):
        if not self.gamma > 1:
            raise ParameterError(f"gamma must exceed 1, got {self.gamma}")
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))
        object.__setattr__(self, "normalization", normalization_constant(self.gamma))

    @property
    def one_sided(self) -> bool:
        return self.sidedness is Sidedness.ONE_SIDED

    def alpha_of(self, epsilon: float) -> float:
        return admissible_params(self, epsilon)[0]

    def beta_of(self, epsilon: float) -> float:
        return admissible_params(self, epsilon)[1]

    def with_sidedness(self, sidedness) -> "NoiseSpec":
        return NoiseSpec(self.gamma, Sidedness(sidedness))


def log_density(spec: NoiseSpec, z):
    """Log of the two-sided density, stable for very large ``|z|``."""
    z = np.abs(np.asarray(z, dtype=float))
    with np.errstate(divide="ignore", over="ignore"):
        logzg = spec.gamma * np.log(z)
    return math.log(spec.normalization) - np.logaddexp(0.0, logzg)


def density(spec: NoiseSpec, z):
    """Density of ``spec`` at ``z`` (scalar or array)."""
    z_arr = np.asarray(z, dtype=float)
    out = np.exp(log_density(spec, z_arr))
    if spec.one_sided:
        out = np.where(z_arr < 0, 0.0, 2.0 * out)
    return out if out.ndim else float(out)


def survival_magnitude(gamma: float, z):
    """P(|Z| > z) for the two-sided density, via the regularised incomplete beta."""
    z = np.abs(np.asarray(z, dtype=float))
    a = 1.0 / gamma
    with np.errstate(divide="ignore", over="ignore"):
        zg = z ** gamma
        v = 1.0 / (1.0 + zg)
        w = zg / (1.0 + zg)
    # For z < 1, v rounds to 1 when z^gamma is tiny; use the complement in w there.
    out = np.where(z < 1.0, special.betaincc(a, 1.0 - a, np.where(z < 1.0, w, 0.5)),
                   special.betainc(1.0 - a, a, v))
    return out if out.ndim else float(out)


def cdf(spec: NoiseSpec, z):
    """Closed-form distribution function of ``spec``."""
    z = np.asarray(z, dtype=float)
    tail = survival_magnitude(spec.gamma, z)
    if spec.one_sided:
        out = np.where(z < 0, 0.0, 1.0 - tail)
    else:
        out = np.where(z < 0, 0.5 * tail, 1.0 - 0.5 * tail)
    return out if out.ndim else float(out)


def _magnitude_for_tail_exponent(gamma: float, x: np.ndarray) -> np.ndarray:
    """log1p(z) where P(|Z| > z) = exp(-x); exact up to betaincinv accuracy."""
    a = 1.0 / gamma
    q = np.exp(-x)
    out = np.empty_like(x)
    upper = q <= 0.5
    # Deep tail: solve for v = 1/(1+z^gamma), small and well conditioned.
    v = special.betaincinv(1.0 - a, a, q[upper])
    logz = (np.log1p(-v) - np.log(v)) / gamma
    out[upper] = np.logaddexp(0.0, logz)
    # Bulk: solve for w = z^gamma/(1+z^gamma) from 1 - q.
    w = special.betaincinv(a, 1.0 - a, -np.expm1(-x[~upper]))
    with np.errstate(divide="ignore"):
        logz = (np.log(w) - np.log1p(-w)) / gamma
    out[~upper] = np.logaddexp(0.0, logz)
    return out


def _tail_exponent_slope(gamma: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # y = log1p(z), x = -log q(z), dq/dz = -2 h(z)  =>  dy/dx = q / (2 h (1 + z)).
    # Written in logs so the deep tail does not overflow.
    with np.errstate(divide="ignore"):
        logz = np.where(y > 0, y + np.log(-np.expm1(-y)), -np.inf)
    c = normalization_constant(gamma)
    log_h = math.log(c) - np.logaddexp(0.0, gamma * logz)
    return np.exp(-x - math.log(2.0) - log_h - y)


class InverseCdfTable:
    """Tabulated inverse of ``P(|Z| > z)`` on a uniform tail-exponent grid.

    Knots are placed at ``x_i = i * TABLE_X_MAX / (TABLE_KNOTS - 1)`` and hold
    ``log1p(z)`` for the magnitude with ``P(|Z| > z) = exp(-x_i)``, together
    with the exact slope ``dy/dx = P(|Z| > z) / (2 h(z) (1 + z))``; in between
    the cubic Hermite interpolant is evaluated. The grid is uniform, so the
    interval lookup is an integer division rather than a search. Tail
    exponents past the table, and those in the first two intervals (where the
    magnitude is tiny and relative accuracy would suffer), are inverted
    exactly.
    """

    def __init__(self, gamma: float, knots: int = TABLE_KNOTS, x_max: float = TABLE_X_MAX):
        self.gamma = float(gamma)
        self.x = np.linspace(0.0, x_max, knots)
        self.y = _magnitude_for_tail_exponent(self.gamma, self.x)
        slope = _tail_exponent_slope(self.gamma, self.x, self.y)
        interp = CubicHermiteSpline(self.x, self.y, slope)
        self._coef = interp.c  # shape (4, knots - 1)
        self._step = self.x[1] - self.x[0]
        self._x_max = x_max
        self._exact_below = self.x[2]

    def log1p_magnitude(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pos = x / self._step
        idx = np.minimum(pos.astype(np.int64), self._coef.shape[1] - 1)
        t = (pos - idx) * self._step
        c = self._coef
        y = ((c[0, idx] * t + c[1, idx]) * t + c[2, idx]) * t + c[3, idx]
        beyond = (x > self._x_max) | (x < self._exact_below)
        if np.any(beyond):
            y[beyond] = _magnitude_for_tail_exponent(self.gamma, x[beyond])
        return y

    def magnitude(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.expm1(self.log1p_magnitude(x))


@functools.lru_cache(maxsize=32)
def inverse_cdf_table(gamma: float) -> InverseCdfTable:
    return InverseCdfTable(gamma)


def sample(spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Draw from ``spec`` by inverse transform on the tabulated CDF.

    One-sided draws are the magnitudes of two-sided ones, which is exact
    because the two-sided density is symmetric.
    """
    table = inverse_cdf_table(spec.gamma)
    n = 1 if size is None else size
    x = -np.log(_open_uniform(rng, n))
    z = table.magnitude(x)
    if not spec.one_sided:
        sign = rng.integers(0, 2, size=n) * 2 - 1
        z = z * sign
    return float(z[0]) if size is None else z


def cauchy_quantile(u):
    """Closed-form quantile of the gamma=2 member (standard Cauchy)."""
    return np.tan(np.pi * (np.asarray(u, dtype=float) - 0.5))


def _tail_integral(gamma: float, z0: float, terms: int = 60) -> float:
    # Integral of 1/(1+t^g) over [z0, inf) for z0 > 1 via the alternating
    # series sum_k (-1)^k z0^(1 - g(k+1)) / (g(k+1) - 1).
    total = 0.0
    for k in range(terms):
        p = gamma * (k + 1) - 1.0
        term = (-1) ** k * math.exp(-p * math.log(z0)) / p
        total += term
        if abs(term) < 1e-18 * max(abs(total), 1e-300):
            break
    return total


def total_mass(spec: NoiseSpec, z_max: float = 1e6) -> float:
    """Numerically integrated mass of the two-sided density.

    Adaptive quadrature covers ``[-z_max, z_max]`` on log-spaced panels; the
    remainder beyond ``z_max`` is added from its convergent series.
    """
    g = spec.gamma
    edges = np.concatenate([[0.0], np.logspace(-3, math.log10(z_max), 61)])
    body = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda t: 1.0 / (1.0 + t ** g), lo, hi,
                                epsabs=1e-14, epsrel=1e-13, limit=200)
        body += val
    tail = _tail_integral(g, z_max)
    return 2.0 * spec.normalization * (body + tail)


def quadrature_cdf_table(spec: NoiseSpec, z_grid: Sequence[float]) -> np.ndarray:
    """Distribution function on an increasing non-negative grid, by quadrature.

    Independent of :func:`cdf` and of the sampler table; used as an oracle.
    Two-sided values refer to ``P(Z <= z)``; one-sided to ``P(Z <= z)`` under
    the restricted density.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    if np.any(z_grid < 0) or np.any(np.diff(z_grid) < 0):
        raise ParameterError("z_grid must be non-negative and increasing")
    c = spec.normalization
    g = spec.gamma
    pieces = np.empty(len(z_grid))
    prev = 0.0
    acc = 0.0
    for i, z in enumerate(z_grid):
        val, _ = integrate.quad(lambda t: c / (1.0 + t ** g), prev, z,
                                epsabs=1e-12, epsrel=1e-12, limit=200)
        acc += val
        pieces[i] = acc
        prev = z
    return 2.0 * pieces if spec.one_sided else 0.5 + pieces


def sample_gumbel(scale: float, rng: np.random.Generator, size=None):
    """Gumbel(0, scale) by inverse transform."""
    if not scale > 0:
        raise ParameterError(f"Gumbel scale must be positive, got {scale}")
    u = _open_uniform(rng, 1 if size is None else size)
    z = -scale * np.log(-np.log(u))
    return float(z[0]) if size is None else z


def sample_exponential(rate: float, rng: np.random.Generator, size=None):
    """Exponential(rate) by inverse transform."""
    if not rate > 0:
        raise ParameterError(f"exponential rate must be positive, got {rate}")
    u = _open_uniform(rng, 1 if size is None else size)
    z = -np.log(u) / rate
    return float(z[0]) if size is None else z


@dataclass
class AdmissibilityReport:
    passed: bool
    epsilon: float
    alpha: float
    beta: float
    max_sliding: float
    max_dilation: float
    # (property, z, shift) of the largest log-ratio found, if it breaches eps/2
    witness: Optional[tuple[str, float, float]] = None

    @property
    def bound(self) -> float:
        return self.epsilon / 2.0

    @property
    def margin(self) -> float:
        return max(self.max_sliding, self.max_dilation)


def verify_admissibility(spec: NoiseSpec, epsilon: float, alpha: Optional[float] = None,
                         beta: Optional[float] = None, *, z_max: float = 1e3,
                         n_z: int = 1000, n_shift: int = 41) -> AdmissibilityReport:
    """Check sliding and dilation pointwise on a grid.

    For every grid ``z`` and shift ``delta`` in ``[-alpha, alpha]`` the log
    ratio ``log h(z) - log h(z + delta)`` must stay within ``eps/2``; likewise
    ``log h(z) - lam - log h(e^lam z)`` for ``lam`` in ``[-beta, beta]``.
    Pointwise domination of densities implies the set-wise inequalities, so
    passing is sufficient (not necessary) for admissibility. ``alpha`` and
    ``beta`` default to :func:`admissible_params`.
    """
    a0, b0 = admissible_params(spec, epsilon)
    alpha = a0 if alpha is None else alpha
    beta = b0 if beta is None else beta
    half = np.logspace(-3, math.log10(z_max), n_z // 2)
    z = np.concatenate([-half[::-1], [0.0], half])[:, None]
    deltas = np.linspace(-alpha, alpha, n_shift)[None, :]
    lams = np.linspace(-beta, beta, n_shift)[None, :]

    lz = log_density(spec, z)
    sliding = lz - log_density(spec, z + deltas)
    dilation = lz - lams - log_density(spec, np.exp(lams) * z)

    i_s = np.unravel_index(np.argmax(sliding), sliding.shape)
    i_d = np.unravel_index(np.argmax(dilation), dilation.shape)
    max_s = float(sliding[i_s])
    max_d = float(dilation[i_d])
    limit = epsilon / 2.0 + ADMISSIBILITY_SLACK
    witness = None
    if max_s > limit and max_s >= max_d:
        witness = ("sliding", float(z[i_s[0], 0]), float(deltas[0, i_s[1]]))
    elif max_d > limit:
        witness = ("dilation", float(z[i_d[0], 0]), float(lams[0, i_d[1]]))
    elif max_s > limit:
        witness = ("sliding", float(z[i_s[0], 0]), float(deltas[0, i_s[1]]))
    return AdmissibilityReport(passed=witness is None, epsilon=epsilon, alpha=alpha,
                               beta=beta, max_sliding=max_s, max_dilation=max_d,
                               witness=witness)
