"""Self-checks run by ``smoothsel verify``: noise admissibility and bound oracles."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from smoothsel import noise, sensitivity, tdt
from smoothsel.noise import NoiseSpec

ADMISSIBILITY_GAMMAS = (2.0, 4.0, 6.0, 10.0)
ADMISSIBILITY_EPSILONS = (1.0, 3.0, 21.0)
ORACLE_SIZES = (3, 5, 8)
ORACLE_RTOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - start
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_admissibility(gammas=ADMISSIBILITY_GAMMAS, epsilons=ADMISSIBILITY_EPSILONS,
                        inflation: float = 1.1) -> CheckResult:
    """Default parameters pass; inflating alpha or beta by ``inflation`` yields a witness."""
    failures = []
    witnessed = []
    for g, eps in itertools.product(gammas, epsilons):
        spec = NoiseSpec(g)
        a, b = noise.admissible_params(spec, eps)
        if not noise.verify_admissibility(spec, eps).passed:
            failures.append(f"gamma={g:g} eps={eps:g}")
        for label, kw in (("alpha", {"alpha": a * inflation}), ("beta", {"beta": b * inflation})):
            rep = noise.verify_admissibility(spec, eps, **kw)
            if not rep.passed:
                witnessed.append((label, g, eps, rep.witness))
    alpha_hit = any(w[0] == "alpha" for w in witnessed)
    beta_hit = any(w[0] == "beta" for w in witnessed)
    passed = not failures and alpha_hit and beta_hit
    detail = (f"{len(gammas) * len(epsilons) - len(failures)}/{len(gammas) * len(epsilons)} "
              f"default pairs pass; inflated alpha witnessed={alpha_hit}, beta={beta_hit}")
    if failures:
        detail += f"; failing: {', '.join(failures)}"
    return CheckResult("noise admissibility", passed, detail)


def _betas(ceiling):
    # With no ceiling any beta is allowed; probe a moderate and a large one.
    return (1.0, 10.0) if sensitivity.is_unbounded(ceiling) else (ceiling, ceiling / 2)


def exact_bound_mismatch(profile, beta: float) -> float:
    """Worst relative gap between the closed-form exact bound and enumeration."""
    domain = tdt.profile_domain(profile)
    closed = profile.thm4_bounds(beta)
    worst = 0.0
    for i, x in enumerate(domain.points):
        oracle = sensitivity.smooth_sensitivity_oracle(domain, x, beta, local=profile.local)
        worst = max(worst, abs(closed[i] - oracle) / oracle)
    return worst


def smooth_bound_violations(profile, beta: float) -> tuple[int, int]:
    """Count breaches of ``LS <= S`` and ``S(x) <= e^beta S(y)`` over neighbour pairs."""
    bounds = profile.thm5_bounds(beta)
    below = int(np.sum(profile.local > bounds * (1 + 1e-12)))
    indptr, indices = tdt.profile_domain(profile).adjacency
    src = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    smooth = int(np.sum(bounds[src] > np.exp(beta) * bounds[indices] * (1 + 1e-12)))
    return below, smooth


@_timed
def check_exact_bound(sizes=ORACLE_SIZES) -> CheckResult:
    """Closed-form exact smooth sensitivity equals the brute-force oracle."""
    worst = 0.0
    for n in sizes:
        profile = tdt.build_profile(n, threshold_T=None)
        for beta in _betas(profile.beta_ceiling_thm4):
            worst = max(worst, exact_bound_mismatch(profile, beta))
    return CheckResult("exact smooth sensitivity vs oracle", worst <= ORACLE_RTOL,
                       f"N in {list(sizes)}, worst relative gap {worst:.2e}")


def _thresholds(n: int):
    gs = tdt.build_profile(n, threshold_T=None).global_sensitivity
    ts = [gs / 2]
    if 6.0 < gs:
        ts.insert(0, 6.0)
    return ts


@_timed
def check_thresholded_bound(sizes=ORACLE_SIZES) -> CheckResult:
    """Thresholded bound dominates LS and is beta-smooth on every neighbour pair."""
    total = 0
    cases = []
    for n in sizes:
        for t in _thresholds(n):
            profile = tdt.build_profile(n, threshold_T=t)
            for beta in _betas(profile.beta_ceiling_thm5):
                below, smooth = smooth_bound_violations(profile, beta)
                total += below + smooth
            cases.append(f"N={n},T={t:g}")
    return CheckResult("thresholded upper bound", total == 0,
                       f"{total} violations over {'; '.join(cases)}")


def run_all() -> list[CheckResult]:
    return [check_admissibility(), check_exact_bound(), check_thresholded_bound()]
