"""Private selection mechanisms.

Global-sensitivity baselines (exponential mechanism, permute-and-flip) and
smooth private selection, which scales admissible noise by the largest
smooth upper bound over the candidates. Every mechanism returns the first
maximiser in candidate order when noisy scores tie.

Each public mechanism takes one :class:`ScoreTable`. The ``*_indices``
kernels take a ``(trials, m)`` score matrix and return one selected column
per row; experiment harnesses use them to run many independent selections at
once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from smoothsel import noise
from smoothsel.errors import BudgetError, ParameterError, PreconditionError
from smoothsel.noise import NoiseSpec, Sidedness, sample_exponential, sample_gumbel
from smoothsel.sensitivity import Ceiling, is_unbounded

BUDGET_RTOL = 1e-12
# (4/27)^(1/4): one-sided gamma=4 noise beats permute-and-flip in expectation
# when max_r S(x, r) is below this multiple of k * GS.
EXPECTED_NOISE_THRESHOLD = (4.0 / 27.0) ** 0.25
DEFAULT_K_MIN = 0.5


@dataclass(frozen=True)
class ScoreTable:
    """Scores of the candidate set for one dataset.

    ``smooth_bound_max`` is ``max_r S(x, r)`` for a smooth upper bound ``S``;
    ``smooth_beta`` records the smoothness parameter that bound was built for,
    so a mechanism can refuse a budget it does not support.
    """

    candidates: tuple
    scores: np.ndarray
    global_sensitivity: float
    smooth_bound_max: Optional[float] = None
    smooth_beta: Optional[float] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 1:
            raise ParameterError("empty candidate set")
        if scores.shape != (len(self.candidates),):
            raise ParameterError("one score per candidate is required")
        if not self.global_sensitivity > 0:
            raise ParameterError("global sensitivity must be positive")
        if self.smooth_bound_max is not None:
            if not self.smooth_bound_max > 0:
                raise ParameterError("smooth bound must be positive")
            if self.smooth_bound_max > self.global_sensitivity * (1 + 1e-12):
                raise ParameterError("smooth bound exceeds the global sensitivity")

    @classmethod
    def from_scores(cls, scores: Sequence[float], global_sensitivity: float,
                    candidates: Optional[Sequence] = None, **kwargs) -> "ScoreTable":
        if candidates is None:
            candidates = range(len(scores))
        return cls(tuple(candidates), np.asarray(scores, dtype=float), global_sensitivity,
                   **kwargs)

    @property
    def m(self) -> int:
        return len(self.candidates)

    def _label(self, idx):
        if np.ndim(idx) == 0:
            return self.candidates[int(idx)]
        return [self.candidates[i] for i in idx]


@dataclass(frozen=True)
class BudgetSplit:
    """Fractions ``k`` (noise scale) and ``l`` (smoothing) of a target epsilon."""

    epsilon: float
    k: float
    l: float
    sidedness: Sidedness = Sidedness.ONE_SIDED

    def __post_init__(self):
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))
        if not (self.epsilon > 0 and self.k > 0 and self.l > 0):
            raise ParameterError("epsilon, k and l must all be positive")

    def width(self, m: int) -> float:
        """Coefficient of ``l`` in the privacy constraint for ``m`` candidates."""
        return m / 2.0 if self.sidedness is Sidedness.TWO_SIDED else (m - 1) / 2.0

    def achieved_epsilon(self, m: int) -> float:
        return (self.k + self.width(m) * self.l) * self.epsilon

    def check(self, m: int) -> None:
        total = self.k + self.width(m) * self.l
        if total > 1 + BUDGET_RTOL:
            side = "|R|/2" if self.sidedness is Sidedness.TWO_SIDED else "(|R|-1)/2"
            raise BudgetError(
                f"k + {side} * l = {total:.12g} > 1 for |R|={m} ({self.sidedness.value}): "
                f"split delivers {self.achieved_epsilon(m):.6g}-DP, not {self.epsilon:g}-DP")

    def alpha_prime(self, spec: NoiseSpec) -> float:
        return spec.alpha_of(self.k * self.epsilon)

    def beta_prime(self, spec: NoiseSpec) -> float:
        return spec.beta_of(self.l * self.epsilon)


def choose_budget(m: int, sidedness, gamma: float, epsilon: float, beta_ceiling: Ceiling,
                  k_min: float = DEFAULT_K_MIN) -> BudgetSplit:
    """Default (k, l) policy for smooth private selection.

    ``l`` is the largest value whose smoothing parameter the bound supports
    (``l_sat = ceiling / beta(epsilon)``), capped so that ``k`` stays
    at least ``k_min``; ``k`` takes the rest, so the privacy constraint holds
    with equality. With a single candidate and no ceiling ``l`` is set to 1.
    """
    sidedness = Sidedness(sidedness)
    if m < 1:
        raise ParameterError("need at least one candidate")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if not 0 < k_min < 1:
        raise ParameterError("k_min must lie in (0, 1)")
    if not is_unbounded(beta_ceiling) and not beta_ceiling > 0:
        raise ParameterError("beta ceiling must be positive")
    width = m / 2.0 if sidedness is Sidedness.TWO_SIDED else (m - 1) / 2.0
    # beta(l * eps) is linear in l, so the saturating l is ceiling / beta(eps).
    l_sat = (math.inf if is_unbounded(beta_ceiling)
             else beta_ceiling / NoiseSpec(gamma, sidedness).beta_of(epsilon))
    l_cap = (1.0 - k_min) / width if width > 0 else math.inf
    l = min(l_sat, l_cap)
    if math.isinf(l):
        l = 1.0
    k = 1.0 - width * l
    if not k > 0:
        raise BudgetError(f"infeasible budget: k = {k} for m={m}")
    return BudgetSplit(epsilon=epsilon, k=k, l=l, sidedness=sidedness)


def _argmax_rows(noisy: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximiser, i.e. ties go to candidate order.
    return np.argmax(noisy, axis=-1)


def _as_matrix(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    return s[None, :] if s.ndim == 1 else s


def exponential_mechanism_indices(scores, global_sensitivity: float, epsilon: float,
                                  rng: np.random.Generator) -> np.ndarray:
    s = _as_matrix(scores)
    g = sample_gumbel(2.0 * global_sensitivity / epsilon, rng, size=s.shape)
    return _argmax_rows(s + g)


def permute_and_flip_indices(scores, global_sensitivity: float, epsilon: float,
                             rng: np.random.Generator) -> np.ndarray:
    """Random permutation, then accept each candidate with prob. exp(eps (u - u*) / 2GS)."""
    s = _as_matrix(scores)
    n, m = s.shape
    p = np.exp(epsilon / (2.0 * global_sensitivity) * (s - s.max(axis=1, keepdims=True)))
    order = np.argsort(rng.random((n, m)), axis=1)
    rows = np.arange(n)[:, None]
    accept = rng.random((n, m)) < p[rows, order]
    # The top-scoring candidate has p = 1 and is always accepted when reached.
    first = np.argmax(accept, axis=1)
    return order[np.arange(n), first]


def permute_and_flip_noise_indices(scores, global_sensitivity: float, epsilon: float,
                                   rng: np.random.Generator) -> np.ndarray:
    s = _as_matrix(scores)
    e = sample_exponential(epsilon / (2.0 * global_sensitivity), rng, size=s.shape)
    return _argmax_rows(s + e)


def smooth_private_selection_indices(scores, smooth_bound_max, alpha_prime: float,
                                     spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Noisy argmax with noise ``(max_r S(x, r) / alpha') * Z``; bound may vary by row."""
    s = _as_matrix(scores)
    scale = np.asarray(smooth_bound_max, dtype=float).reshape(-1, 1) / alpha_prime
    z = noise.sample(spec, rng, size=s.shape)
    return _argmax_rows(s + scale * z)


def _check_epsilon(epsilon):
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")


def exponential_mechanism(table: ScoreTable, epsilon: float, rng: np.random.Generator,
                          size=None):
    """Select with probability proportional to exp(eps * u / (2 GS)), via Gumbel noise."""
    _check_epsilon(epsilon)
    scores = np.broadcast_to(table.scores, (1 if size is None else size, table.m))
    idx = exponential_mechanism_indices(scores, table.global_sensitivity, epsilon, rng)
    return table._label(idx[0] if size is None else idx)


def permute_and_flip(table: ScoreTable, epsilon: float, rng: np.random.Generator,
                     size=None):
    """Permute-and-flip as a literal loop over a random permutation.

    With ``size`` set, the same procedure runs for many independent trials
    in vectorised form.
    """
    _check_epsilon(epsilon)
    gs = table.global_sensitivity
    if size is not None:
        scores = np.broadcast_to(table.scores, (size, table.m))
        return table._label(permute_and_flip_indices(scores, gs, epsilon, rng))
    u_star = table.scores.max()
    for r in rng.permutation(table.m):
        p = math.exp(epsilon / (2.0 * gs) * (table.scores[r] - u_star))
        if rng.random() < p:
            return table.candidates[r]
    raise AssertionError("unreachable: the best candidate is always accepted")


def permute_and_flip_noise(table: ScoreTable, epsilon: float, rng: np.random.Generator,
                           size=None):
    """Permute-and-flip in its report-noisy-max form with exponential noise."""
    _check_epsilon(epsilon)
    scores = np.broadcast_to(table.scores, (1 if size is None else size, table.m))
    idx = permute_and_flip_noise_indices(scores, table.global_sensitivity, epsilon, rng)
    return table._label(idx[0] if size is None else idx)


def smooth_private_selection(table: ScoreTable, budget: BudgetSplit, spec: NoiseSpec,
                             rng: np.random.Generator, size=None):
    """Argmax of ``u(x, r) + (max_r S(x, r) / alpha') * Z_r``.

    ``alpha' = alpha(k * eps)``. The table's smooth bound must be smooth for
    ``beta' = beta(l * eps)`` (checked when ``table.smooth_beta`` is set) and
    the split must satisfy the privacy constraint for the noise sidedness.
    """
    if table.smooth_bound_max is None:
        raise ParameterError("score table carries no smooth upper bound")
    if budget.sidedness is not spec.sidedness:
        raise ParameterError(f"budget is {budget.sidedness.value} but noise is "
                             f"{spec.sidedness.value}")
    budget.check(table.m)
    beta_p = budget.beta_prime(spec)
    if table.smooth_beta is not None and table.smooth_beta > beta_p * (1 + 1e-12):
        raise PreconditionError(
            f"bound is {table.smooth_beta}-smooth but the split only allows beta'={beta_p}",
            beta_p)
    scores = np.broadcast_to(table.scores, (1 if size is None else size, table.m))
    idx = smooth_private_selection_indices(scores, table.smooth_bound_max,
                                           budget.alpha_prime(spec), spec, rng)
    return table._label(idx[0] if size is None else idx)


def numeric_smoothness(k: float, epsilon: float, spec: NoiseSpec) -> float:
    """Smoothness ``beta((2 - k) eps)`` required of the bound in the numeric mechanism."""
    if not 0 < k < 2:
        raise ParameterError(f"k must lie in (0, 2), got {k}")
    return spec.beta_of((2.0 - k) * epsilon)


def smooth_numeric_mechanism(value: float, smooth_bound: float, k: float, epsilon: float,
                             spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Release ``value + (S / alpha(k eps)) * Z`` with two-sided noise.

    ``smooth_bound`` must be a ``numeric_smoothness(k, eps, spec)``-smooth
    upper bound on the local sensitivity at the input; k = 1 recovers the
    even split between the two admissibility parameters.
    """
    if not 0 < k < 2:
        raise ParameterError(f"k must lie in (0, 2), got {k}")
    _check_epsilon(epsilon)
    if spec.one_sided:
        raise ParameterError("numeric release needs two-sided noise")
    if not smooth_bound > 0:
        raise ParameterError("smooth bound must be positive")
    alpha_p = spec.alpha_of(k * epsilon)
    return value + (smooth_bound / alpha_p) * noise.sample(spec, rng, size)


def expected_noise_advantage(smooth_bound_max: float, k: float, gs_u: float) -> bool:
    """True when one-sided gamma=4 noise has smaller mean than permute-and-flip's."""
    if not (smooth_bound_max > 0 and k > 0 and gs_u > 0):
        raise ParameterError("all inputs must be positive")
    return smooth_bound_max < EXPECTED_NOISE_THRESHOLD * k * gs_u
