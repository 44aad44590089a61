"""Transmission disequilibrium test (TDT) tables as a sensitivity domain.

A table summarises the 2N parents of N families by two counts: ``b``
(transmitted A1, non-transmitted A2) and ``c`` (transmitted A2,
non-transmitted A1). Replacing one family reclassifies its two parents; each
parent can enter or leave the b or c cell, or switch between them. The sum of
two such single-parent moves gives the set of one-family edits below.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np

from smoothsel import sensitivity
from smoothsel.errors import ConfigurationError, DomainError, ParameterError
from smoothsel.sensitivity import UNBOUNDED, SensitivityProfile

logger = logging.getLogger(__name__)

PROFILE_CACHE_VERSION = 1

_PARENT_MOVES = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))
FAMILY_EDITS = tuple(sorted({(p[0] + q[0], p[1] + q[1])
                             for p in _PARENT_MOVES for q in _PARENT_MOVES}))


@dataclass(frozen=True)
class TdtTable:
    b: int
    c: int
    n_families: int

    def __post_init__(self):
        if self.n_families < 1:
            raise ParameterError(f"n_families must be at least 1, got {self.n_families}")
        if self.b < 0 or self.c < 0 or self.b + self.c > 2 * self.n_families:
            raise DomainError(f"invalid TDT table (b={self.b}, c={self.c}) "
                              f"for N={self.n_families}")


def chi2(b, c):
    """Vectorised TDT statistic ``(b - c)^2 / (b + c)``, zero at b = c = 0."""
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    s = b + c
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0, (b - c) ** 2 / np.where(s > 0, s, 1.0), 0.0)
    return out if out.ndim else float(out)


def tdt_statistic(t: TdtTable) -> float:
    return chi2(t.b, t.c)


def tdt_global_sensitivity(n_families: int) -> float:
    """Closed-form global sensitivity ``8 (N - 1) / N`` of the TDT statistic.

    For N = 1 the grid is so small that enumeration gives 2, not 0; the
    profile builder always uses the enumerated maximum.
    """
    if n_families < 1:
        raise ParameterError(f"n_families must be at least 1, got {n_families}")
    return 8.0 * (n_families - 1) / n_families


def table_distance(b1, c1, b2, c2):
    """Vectorised family distance between tables (same N assumed)."""
    db = np.asarray(b1) - np.asarray(b2)
    dc = np.asarray(c1) - np.asarray(c2)
    same = db * dc >= 0
    # ceil(k / 2) for non-negative integers k is (k + 1) // 2
    d_same = (np.abs(db + dc) + 1) // 2
    d_cross = (np.maximum(np.abs(db), np.abs(dc)) + 1) // 2
    return np.where(same, d_same, d_cross)


def tdt_distance(t1: TdtTable, t2: TdtTable) -> int:
    if t1.n_families != t2.n_families:
        raise DomainError("tables describe different numbers of families")
    return int(table_distance(t1.b, t1.c, t2.b, t2.c))


def high_ls_region(t: Union[TdtTable, tuple]):
    """Sufficient condition for a local sensitivity above 6."""
    b, c = (t.b, t.c) if isinstance(t, TdtTable) else t
    return _high_ls(np.asarray(b), np.asarray(c))


def _high_ls(b, c):
    out = (((0 <= c) & (c < (b - 8) / 7)) | ((2 <= b) & (b < (c + 8) / 7))
           | ((0 <= b) & (b < (c - 8) / 7)) | ((2 <= c) & (c < (b + 8) / 7)))
    return bool(out) if np.ndim(out) == 0 else out


class TdtDomain(sensitivity.FiniteDomain):
    """All tables with ``b + c <= 2N`` as a :class:`FiniteDomain`.

    Points are ``(b, c)`` tuples ordered by ``b`` then ``c``; use
    :meth:`grid_index` to map count arrays to positions.
    """

    def __init__(self, n_families: int):
        if n_families < 1:
            raise ParameterError(f"n_families must be at least 1, got {n_families}")
        self.n_families = n = int(n_families)
        bb, cc = np.meshgrid(np.arange(2 * n + 1), np.arange(2 * n + 1), indexing="ij")
        valid = bb + cc <= 2 * n
        self.b = bb[valid]
        self.c = cc[valid]
        points = list(zip(self.b.tolist(), self.c.tolist()))
        row_len = 2 * n + 1 - np.arange(2 * n + 1)
        self._offset = np.concatenate([[0], np.cumsum(row_len)[:-1]])
        super().__init__(points, distance=self._distance, score=lambda p: chi2(*p),
                         neighbors=self._edit_neighbors)

    def _distance(self, x, y) -> int:
        return int(table_distance(x[0], x[1], y[0], y[1]))

    def _edit_neighbors(self, x):
        two_n = 2 * self.n_families
        for db, dc in FAMILY_EDITS:
            b, c = x[0] + db, x[1] + dc
            if (db, dc) != (0, 0) and b >= 0 and c >= 0 and b + c <= two_n:
                yield (b, c)

    def grid_index(self, b, c):
        b = np.asarray(b)
        c = np.asarray(c)
        if np.any(b < 0) or np.any(c < 0) or np.any(b + c > 2 * self.n_families):
            raise DomainError(f"table outside the N={self.n_families} grid")
        return self._offset[b] + c

    def values(self, candidate=None) -> np.ndarray:
        return chi2(self.b, self.c)

    def distances_from(self, x) -> np.ndarray:
        return table_distance(self.b, self.c, x[0], x[1]).astype(float)

    @cached_property
    def adjacency(self):
        two_n = 2 * self.n_families
        n = len(self.points)
        src, dst = [], []
        for db, dc in FAMILY_EDITS:
            if (db, dc) == (0, 0):
                continue
            b2, c2 = self.b + db, self.c + dc
            ok = (b2 >= 0) & (c2 >= 0) & (b2 + c2 <= two_n)
            src.append(np.flatnonzero(ok))
            dst.append(self._offset[b2[ok]] + c2[ok])
        src = np.concatenate(src)
        dst = np.concatenate(dst)
        order = np.argsort(src, kind="stable")
        indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))])
        return indptr.astype(np.int64), dst[order].astype(np.int64)


def build_profile(n_families: int, threshold_T: Optional[float] = 6.0) -> SensitivityProfile:
    """Enumerate the N-family grid and compute its sensitivity profile.

    Local sensitivities come from the one-family edit neighbourhood. Membership
    of U is decided by the enumerated local sensitivity; when ``T <= 6`` the
    high-sensitivity predicate is also checked to land inside U.
    """
    domain = TdtDomain(n_families)
    local = sensitivity.local_sensitivities(domain)
    gs = float(local.max())
    if threshold_T is not None and not threshold_T < gs:
        raise ConfigurationError(
            f"threshold T={threshold_T} must be below the global sensitivity "
            f"{gs:.6g} for N={n_families}")
    if threshold_T is not None and threshold_T <= 6:
        flagged = _high_ls(domain.b, domain.c)
        if np.any(flagged & ~(local > threshold_T)):
            raise DomainError("high-sensitivity predicate disagrees with enumeration")
    profile = sensitivity.build_profile(domain, threshold_T, local=local)
    logger.debug("TDT profile N=%d T=%s: GS=%g, ceilings %s / %s", n_families, threshold_T,
                 gs, profile.beta_ceiling_thm4, profile.beta_ceiling_thm5)
    return profile


def profile_domain(profile: SensitivityProfile) -> TdtDomain:
    domain = profile.domain
    if not isinstance(domain, TdtDomain):
        raise ConfigurationError("profile was not built from a TDT grid")
    return domain


def _ceiling_to_float(c):
    return math.inf if c is UNBOUNDED else (math.nan if c is None else float(c))


def _float_to_ceiling(v):
    v = float(v)
    return UNBOUNDED if math.isinf(v) else (None if math.isnan(v) else v)


def save_profile(profile: SensitivityProfile, path) -> Path:
    """Write a TDT profile to ``path`` (``.npz``)."""
    domain = profile_domain(profile)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, version=PROFILE_CACHE_VERSION, n_families=domain.n_families,
                 threshold_T=np.nan if profile.threshold_T is None else profile.threshold_T,
                 global_sensitivity=profile.global_sensitivity, local=profile.local,
                 gd=profile.gd, ud=np.array([]) if profile.ud is None else profile.ud,
                 ceiling4=_ceiling_to_float(profile.beta_ceiling_thm4),
                 ceiling5=_ceiling_to_float(profile.beta_ceiling_thm5))
    return path


def load_profile(path) -> SensitivityProfile:
    with np.load(path) as data:
        if int(data["version"]) != PROFILE_CACHE_VERSION:
            raise ConfigurationError(f"profile cache {path} has version {int(data['version'])}, "
                                     f"expected {PROFILE_CACHE_VERSION}")
        domain = TdtDomain(int(data["n_families"]))
        t = float(data["threshold_T"])
        ud = data["ud"]
        profile = SensitivityProfile(
            points=domain.points, global_sensitivity=float(data["global_sensitivity"]),
            local=data["local"], gd=data["gd"],
            beta_ceiling_thm4=_float_to_ceiling(data["ceiling4"]),
            threshold_T=None if math.isnan(t) else t,
            ud=ud if ud.size else None,
            beta_ceiling_thm5=_float_to_ceiling(data["ceiling5"]),
            index=domain.index, domain=domain)
    return profile


def cache_path(cache_dir, n_families: int, threshold_T: Optional[float]) -> Path:
    key = f"N{n_families}_T{'none' if threshold_T is None else repr(float(threshold_T))}"
    digest = hashlib.sha1(key.encode()).hexdigest()[:8]
    return Path(cache_dir) / f"tdt_profile_v{PROFILE_CACHE_VERSION}_{key}_{digest}.npz"


def cached_profile(n_families: int, threshold_T: Optional[float] = 6.0,
                   cache_dir=None) -> SensitivityProfile:
    """Build a profile, reusing an on-disk copy keyed by (N, T) when available."""
    if cache_dir is None:
        return build_profile(n_families, threshold_T)
    path = cache_path(cache_dir, n_families, threshold_T)
    if path.exists():
        try:
            return load_profile(path)
        except (OSError, ValueError, KeyError, ConfigurationError) as exc:
            logger.warning("ignoring unreadable profile cache %s: %s", path, exc)
    profile = build_profile(n_families, threshold_T)
    save_profile(profile, path)
    return profile
