"""Local, global and smooth sensitivity over small finite domains.

A domain is a finite list of points with an integer distance whose value-1
pairs are the neighbouring datasets. Two routes to the smooth sensitivity are
provided and are meant to be checked against each other:

* :func:`smooth_sensitivity_oracle` enumerates every point and uses the
  domain's distance function directly.
* :func:`smooth_sensitivity_thm4` / :func:`smooth_upper_bound_thm5` use only
  the graph distance (breadth-first search over neighbour edges) to the set
  where the local sensitivity is maximal, or exceeds a threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Hashable, Iterable, Optional, Sequence, Union

import numpy as np

from smoothsel.errors import (ConfigurationError, DomainError, ParameterError,
                              PreconditionError, SizeError)

logger = logging.getLogger(__name__)

ORACLE_CAP = 10 ** 6
# Relative tolerance for "LS(x) equals GS"; local sensitivities reached by
# different arithmetic paths can differ in the last few ulps.
GS_RTOL = 1e-12


class _Unbounded:
    """Ceiling sentinel meaning "every beta > 0 is valid"."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    def __reduce__(self):
        return (_Unbounded, ())


UNBOUNDED = _Unbounded()
Ceiling = Union[float, _Unbounded]


def is_unbounded(value) -> bool:
    return value is UNBOUNDED


class FiniteDomain:
    """Finite set of datasets with a neighbour structure and a score.

    Args:
      points: ordered domain points (any hashable objects).
      distance: ``distance(x, y)`` returning a non-negative integer.
      score: ``score(x)`` for a numeric query, or ``score(x, r)`` for a
        selection score; pass ``candidate=r`` to the functions below in the
        latter case.
      neighbors: optional ``neighbors(x)`` yielding the points at distance 1.
        Derived from ``distance`` by a full scan when omitted.
    """

    def __init__(self, points: Sequence[Hashable], distance: Callable[[Any, Any], int],
                 score: Callable[..., float],
                 neighbors: Optional[Callable[[Any], Iterable[Hashable]]] = None):
        self.points = list(points)
        self.distance = distance
        self.score = score
        self._neighbors = neighbors
        self.index = {p: i for i, p in enumerate(self.points)}
        if len(self.index) != len(self.points):
            raise DomainError("domain points must be distinct")

    def __len__(self):
        return len(self.points)

    def __contains__(self, x):
        return x in self.index

    def index_of(self, x) -> int:
        try:
            return self.index[x]
        except (KeyError, TypeError):
            raise DomainError(f"point {x!r} is not in the domain") from None

    def neighbors(self, x) -> list:
        self.index_of(x)
        if self._neighbors is not None:
            return [y for y in self._neighbors(x) if y in self.index and y != x]
        return [y for y in self.points if self.distance(x, y) == 1]

    def value(self, x, candidate=None) -> float:
        return float(self.score(x) if candidate is None else self.score(x, candidate))

    def values(self, candidate=None) -> np.ndarray:
        return np.array([self.value(p, candidate) for p in self.points], dtype=float)

    def distances_from(self, x) -> np.ndarray:
        """``distance(x, y)`` for every domain point ``y``."""
        return np.array([self.distance(x, y) for y in self.points], dtype=float)

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour graph in CSR form ``(indptr, indices)``."""
        indptr = [0]
        indices: list[int] = []
        for p in self.points:
            indices.extend(self.index[q] for q in self.neighbors(p))
            indptr.append(len(indices))
        return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


def local_sensitivity(domain: FiniteDomain, x, candidate=None) -> float:
    """Largest score change between ``x`` and any of its neighbours."""
    fx = domain.value(x, candidate)
    nbrs = domain.neighbors(x)
    if not nbrs:
        logger.debug("point %r has no neighbours; local sensitivity is 0", x)
        return 0.0
    return max(abs(fx - domain.value(y, candidate)) for y in nbrs)


def local_sensitivities(domain: FiniteDomain, candidate=None,
                        values: Optional[np.ndarray] = None) -> np.ndarray:
    """Local sensitivity of every point, vectorised over the neighbour graph."""
    indptr, indices = domain.adjacency
    f = domain.values(candidate) if values is None else np.asarray(values, dtype=float)
    rows = np.repeat(np.arange(len(domain)), np.diff(indptr))
    diffs = np.abs(f[rows] - f[indices])
    out = np.zeros(len(domain))
    np.maximum.at(out, rows, diffs)
    return out


def global_sensitivity(domain: FiniteDomain, candidate=None) -> float:
    if len(domain) == 0:
        raise DomainError("global sensitivity of an empty domain")
    return float(np.max(local_sensitivities(domain, candidate)))


def smooth_sensitivity_oracle(domain: FiniteDomain, x, beta: float, *, candidate=None,
                              local: Optional[np.ndarray] = None,
                              cap: int = ORACLE_CAP) -> float:
    """``max_y LS(y) * exp(-beta * d(y, x))`` by full enumeration.

    ``local`` may carry precomputed local sensitivities (in point order) when
    the oracle is evaluated at many ``x``.
    """
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    if len(domain) > cap:
        raise SizeError(f"domain has {len(domain)} points, oracle cap is {cap}")
    domain.index_of(x)
    if local is None:
        local = np.array([local_sensitivity(domain, y, candidate) for y in domain.points])
    d = domain.distances_from(x)
    return float(np.max(local * np.exp(-beta * d)))


def multi_source_bfs(adjacency: tuple[np.ndarray, np.ndarray], sources: np.ndarray) -> np.ndarray:
    """Graph distance from the nearest source; -1 where unreachable."""
    indptr, indices = adjacency
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int64)
    frontier = np.flatnonzero(sources) if sources.dtype == bool else np.asarray(sources)
    dist[frontier] = 0
    level = 0
    while frontier.size:
        level += 1
        starts, ends = indptr[frontier], indptr[frontier + 1]
        counts = ends - starts
        # Gather all neighbour ids of the frontier without a Python loop.
        offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
        nbrs = indices[offsets + np.arange(counts.sum())]
        nbrs = np.unique(nbrs[dist[nbrs] < 0])
        dist[nbrs] = level
        frontier = nbrs
    return dist


def _ceiling(local: np.ndarray, gs: float, dist: np.ndarray, constrained: np.ndarray) -> Ceiling:
    mask = constrained & (local > 0)
    if not np.any(mask):
        return UNBOUNDED
    if np.any(dist[mask] < 0):
        raise DomainError("neighbour graph is disconnected; distances are unbounded")
    return float(np.min(np.log(gs / local[mask]) / dist[mask]))


@dataclass(frozen=True)
class SensitivityProfile:
    """Per-point sensitivity data with both beta ceilings cached.

    Arrays are indexed like ``points``. ``ud`` and ``beta_ceiling_thm5`` are
    ``None`` when the profile was built without a threshold.
    """

    points: list
    global_sensitivity: float
    local: np.ndarray
    gd: np.ndarray
    beta_ceiling_thm4: Ceiling
    threshold_T: Optional[float] = None
    ud: Optional[np.ndarray] = None
    beta_ceiling_thm5: Optional[Ceiling] = None
    index: dict = field(default=None, repr=False, compare=False)
    domain: Optional[FiniteDomain] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, "index", {p: i for i, p in enumerate(self.points)})

    def __len__(self):
        return len(self.points)

    def index_of(self, x) -> int:
        try:
            return self.index[x]
        except (KeyError, TypeError):
            raise DomainError(f"point {x!r} is not in the profile") from None

    @property
    def at_global(self) -> np.ndarray:
        """Mask of points whose local sensitivity equals the global one."""
        return np.isclose(self.local, self.global_sensitivity, rtol=GS_RTOL, atol=0.0)

    @property
    def in_U(self) -> np.ndarray:
        if self.threshold_T is None:
            raise ConfigurationError("profile has no threshold T")
        return self.local > self.threshold_T

    def thm4_bounds(self, beta: float) -> np.ndarray:
        _check_beta(beta, self.beta_ceiling_thm4, "exact smooth-sensitivity")
        return self.global_sensitivity * np.exp(-beta * self.gd)

    def thm5_bounds(self, beta: float) -> np.ndarray:
        if self.ud is None:
            raise ConfigurationError("profile has no threshold T; thresholded bound unavailable")
        _check_beta(beta, self.beta_ceiling_thm5, "thresholded upper-bound")
        return self.global_sensitivity * np.exp(-beta * self.ud)


def _check_beta(beta: float, ceiling: Ceiling, name: str):
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    if not is_unbounded(ceiling) and beta > ceiling * (1 + 1e-12):
        raise PreconditionError(f"beta={beta} exceeds the {name} ceiling {ceiling}", ceiling)


def build_profile(domain: FiniteDomain, threshold_T: Optional[float] = None, *,
                  local: Optional[np.ndarray] = None, candidate=None) -> SensitivityProfile:
    """Compute local sensitivities, gd, ud and both beta ceilings.

    ``threshold_T`` must be below the global sensitivity; ``U`` is the set of
    points whose local sensitivity exceeds it.
    """
    if len(domain) == 0:
        raise DomainError("cannot profile an empty domain")
    if local is None:
        local = local_sensitivities(domain, candidate)
    local = np.asarray(local, dtype=float)
    gs = float(local.max())
    adjacency = domain.adjacency
    at_gs = np.isclose(local, gs, rtol=GS_RTOL, atol=0.0)
    gd = multi_source_bfs(adjacency, at_gs)
    c4 = _ceiling(local, gs, gd, ~at_gs)

    ud = None
    c5 = None
    if threshold_T is not None:
        if not threshold_T < gs:
            raise ConfigurationError(
                f"threshold T={threshold_T} must be below the global sensitivity {gs}; "
                "lower T")
        in_u = local > threshold_T
        ud = multi_source_bfs(adjacency, in_u)
        c5 = _ceiling(local, gs, ud, ~in_u)
    return SensitivityProfile(points=domain.points, global_sensitivity=gs, local=local,
                              gd=gd, beta_ceiling_thm4=c4, threshold_T=threshold_T,
                              ud=ud, beta_ceiling_thm5=c5, index=domain.index,
                              domain=domain)


def beta_ceiling_thm4(profile: SensitivityProfile) -> Ceiling:
    """Largest beta for which ``GS * exp(-beta * gd)`` is the exact smooth sensitivity."""
    return _ceiling(profile.local, profile.global_sensitivity, profile.gd, ~profile.at_global)


def beta_ceiling_thm5(profile: SensitivityProfile) -> Ceiling:
    """Largest beta for which ``GS * exp(-beta * ud)`` is a smooth upper bound."""
    if profile.ud is None:
        raise ConfigurationError("profile has no threshold T")
    in_u = profile.in_U
    if not np.any(in_u):
        raise ConfigurationError("U is empty; lower T")
    return _ceiling(profile.local, profile.global_sensitivity, profile.ud, ~in_u)


def smooth_sensitivity_thm4(profile: SensitivityProfile, x, beta: float) -> float:
    _check_beta(beta, profile.beta_ceiling_thm4, "exact smooth-sensitivity")
    i = profile.index_of(x)
    return float(profile.global_sensitivity * math.exp(-beta * profile.gd[i]))


def smooth_upper_bound_thm5(profile: SensitivityProfile, x, beta: float) -> float:
    if profile.ud is None:
        raise ConfigurationError("profile has no threshold T")
    _check_beta(beta, profile.beta_ceiling_thm5, "thresholded upper-bound")
    i = profile.index_of(x)
    return float(profile.global_sensitivity * math.exp(-beta * profile.ud[i]))
