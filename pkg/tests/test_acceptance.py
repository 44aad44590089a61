"""Acceptance criteria 1-10. Each test records a PASS/FAIL line via ``report``.

Run only this suite with ``pytest tests/test_acceptance.py -v``; the summary
block at the end of the pytest output lists one line per criterion. Running
the file directly (``python3 tests/test_acceptance.py``) does the same.
"""

import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.special import roots_legendre

sys.path.insert(0, str(Path(__file__).resolve().parent))
from conftest import report  # noqa: E402

from smoothsel import mechanisms as mech  # noqa: E402
from smoothsel import noise, sensitivity, tdt  # noqa: E402
from smoothsel.bench import experiments  # noqa: E402
from smoothsel.bench.config import ExperimentConfig, SpsCase  # noqa: E402
from smoothsel.mechanisms import ScoreTable  # noqa: E402
from smoothsel.noise import NoiseSpec, make_rng  # noqa: E402

ORACLE_SIZES = (3, 5, 8)


def _generic_local(domain):
    """LS by looping over explicit neighbours, independent of the CSR path."""
    return np.array([sensitivity.local_sensitivity(domain, p) for p in domain.points])


def _thresholds(gs):
    return ([6.0] if 6.0 < gs else []) + [gs / 2]


# -- 1 ---------------------------------------------------------------------

def test_criterion_1_exact_bound_equals_oracle():
    start = time.perf_counter()
    worst = 0.0
    for n in ORACLE_SIZES:
        prof = tdt.build_profile(n, threshold_T=None)
        dom = tdt.profile_domain(prof)
        local = _generic_local(dom)
        ceiling = prof.beta_ceiling_thm4
        for beta in (ceiling, ceiling / 2):
            for x in dom.points:
                closed = sensitivity.smooth_sensitivity_thm4(prof, x, beta)
                oracle = sensitivity.smooth_sensitivity_oracle(dom, x, beta, local=local)
                worst = max(worst, abs(closed - oracle) / oracle)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    report(1, ok, f"N in {ORACLE_SIZES}, beta in (ceiling, ceiling/2): worst rel gap "
                  f"{worst:.2e} (tol 1e-12), {elapsed:.2f}s (limit 10s)")
    assert ok


# -- 2 ---------------------------------------------------------------------

def test_criterion_2_thresholded_bound_is_smooth_upper_bound():
    start = time.perf_counter()
    violations = 0
    checked = 0
    cases = []
    for n in ORACLE_SIZES:
        dom = tdt.TdtDomain(n)
        local = _generic_local(dom)
        gs = local.max()
        for t in _thresholds(gs):
            prof = tdt.build_profile(n, threshold_T=t)
            ceiling = prof.beta_ceiling_thm5
            for beta in (ceiling, ceiling / 2):
                s = prof.thm5_bounds(beta)
                violations += int(np.sum(local > s * (1 + 1e-12)))
                for i, (b, c) in enumerate(dom.points):
                    for db, dc in tdt.FAMILY_EDITS:
                        y = (b + db, c + dc)
                        if y == (b, c) or y not in dom.index:
                            continue
                        checked += 1
                        if s[i] > math.exp(beta) * s[dom.index[y]] * (1 + 1e-12):
                            violations += 1
            cases.append(f"N={n},T={t:.3g}")
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 10
    report(2, ok, f"{violations} violations over {checked} neighbour checks "
                  f"({'; '.join(cases)}), {elapsed:.2f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------

def test_criterion_3_admissibility():
    start = time.perf_counter()
    failures = []
    witnesses = []
    for g, eps in itertools.product((2.0, 4.0, 6.0, 10.0), (1.0, 3.0, 21.0)):
        spec = NoiseSpec(g)
        rep = noise.verify_admissibility(spec, eps)
        if not rep.passed:
            failures.append((g, eps, rep.witness))
        a, b = noise.admissible_params(spec, eps)
        for name, kw in (("alpha", {"alpha": 1.1 * a}), ("beta", {"beta": 1.1 * b})):
            inflated = noise.verify_admissibility(spec, eps, **kw)
            if not inflated.passed:
                witnesses.append((name, g, eps))
    elapsed = time.perf_counter() - start
    alpha_w = sum(w[0] == "alpha" for w in witnesses)
    beta_w = sum(w[0] == "beta" for w in witnesses)
    ok = not failures and alpha_w > 0 and beta_w > 0 and elapsed < 30
    report(3, ok, f"{12 - len(failures)}/12 (gamma, eps) pass; 10% inflation witnessed for "
                  f"alpha in {alpha_w}/12, beta in {beta_w}/12 cases; {elapsed:.2f}s")
    assert ok


# -- 4 ---------------------------------------------------------------------

DP_N, DP_M, DP_EPS, DP_SAMPLES = 3, 3, 3.0, 1_000_000
DP_TOP_PAIRS, DP_RANDOM_PAIRS, DP_QUAD_NODES = 40, 20, 1000


def _quantile(spec, u):
    """Exact quantile function of the noise (independent of the sampler table)."""
    if spec.one_sided:
        return np.expm1(noise._magnitude_for_tail_exponent(spec.gamma, -np.log1p(-u)))
    lo = u < 0.5
    q = np.where(lo, 2 * u, 2 * (1 - u))
    mag = np.expm1(noise._magnitude_for_tail_exponent(spec.gamma, -np.log(q)))
    return np.where(lo, -mag, mag)


def _exact_selection_probs(spec, scores, scale, nodes=DP_QUAD_NODES):
    """P(argmax_r u_r + scale * Z_r = r) by Gauss-Legendre over the quantile of Z_r."""
    x, w = roots_legendre(nodes)
    u = (x + 1) / 2
    w = w / 2
    z = _quantile(spec, u)
    m = scores.shape[1]
    out = np.zeros_like(scores)
    for r in range(m):
        acc = np.ones((scores.shape[0], nodes))
        for j in range(m):
            if j != r:
                acc *= noise.cdf(spec, ((scores[:, r] - scores[:, j]) / scale)[:, None] + z)
        out[:, r] = acc @ w
    return out


class _DpSetup:
    """All datasets of three SNP tables over N=3 families, with their SPS inputs."""

    def __init__(self, sided):
        self.spec = NoiseSpec(4.0, sided)
        dom = tdt.TdtDomain(DP_N)
        self.dom = dom
        gs = sensitivity.global_sensitivity(dom)
        self.profile = tdt.build_profile(DP_N, threshold_T=gs / 2)
        ceiling = self.profile.beta_ceiling_thm5
        self.budget = mech.choose_budget(DP_M, sided, 4.0, DP_EPS, ceiling)
        self.beta = min(self.budget.beta_prime(self.spec), ceiling)
        self.bounds = self.profile.thm5_bounds(self.beta)
        p = len(dom.points)
        self.n_points = p
        self.datasets = np.array(list(itertools.product(range(p), repeat=DP_M)))
        self.table_scores = dom.values()
        self.scores = self.table_scores[self.datasets]
        self.smax = self.bounds[self.datasets].max(axis=1)
        # neighbour of each table under each one-family edit (-1 when off-grid)
        self.edit_map = np.full((p, len(tdt.FAMILY_EDITS)), -1)
        for i, (b, c) in enumerate(dom.points):
            for e, (db, dc) in enumerate(tdt.FAMILY_EDITS):
                y = (b + db, c + dc)
                if y in dom.index:
                    self.edit_map[i, e] = dom.index[y]

    def table(self, d):
        return ScoreTable.from_scores(self.scores[d], self.profile.global_sensitivity,
                                      smooth_bound_max=float(self.smax[d]),
                                      smooth_beta=self.beta)

    def exact_probs(self):
        scale = self.smax / self.budget.alpha_prime(self.spec)
        key = np.column_stack([self.scores, scale])
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        probs = _exact_selection_probs(self.spec, uniq[:, :DP_M], uniq[:, DP_M])
        return probs[inv.ravel()]

    def all_pairs_worst(self, probs, top):
        """Exact worst log-ratio over every neighbour pair; also the ``top`` worst pairs."""
        logp = np.log(probs)
        p = self.n_points
        e_count = len(tdt.FAMILY_EDITS)
        best = []
        worst = 0.0
        n_pairs = 0
        for edits in itertools.product(range(e_count), repeat=DP_M):
            nbr = [self.edit_map[self.datasets[:, k], e] for k, e in enumerate(edits)]
            ok = np.all(np.stack(nbr) >= 0, axis=0)
            j = (nbr[0] * p + nbr[1]) * p + nbr[2]
            src = np.flatnonzero(ok)
            dst = j[ok]
            keep = src != dst
            src, dst = src[keep], dst[keep]
            n_pairs += src.size
            if src.size == 0:
                continue
            d = np.abs(logp[src] - logp[dst]).max(axis=1)
            worst = max(worst, float(d.max()))
            k = min(top, d.size)
            sel = np.argpartition(-d, k - 1)[:k]
            best.extend(zip(d[sel], src[sel], dst[sel]))
            best = sorted(best, reverse=True)[:4 * top]
        pairs = []
        seen = set()
        for _, a, b in best:
            key = (min(a, b), max(a, b))
            if key not in seen:
                seen.add(key)
                pairs.append((int(a), int(b)))
            if len(pairs) == top:
                break
        return worst, n_pairs, pairs

    def random_pairs(self, count, rng):
        pairs = []
        while len(pairs) < count:
            d = int(rng.integers(len(self.datasets)))
            edits = rng.integers(len(tdt.FAMILY_EDITS), size=DP_M)
            nbr = [self.edit_map[self.datasets[d, k], e] for k, e in enumerate(edits)]
            if min(nbr) >= 0:
                j = (nbr[0] * self.n_points + nbr[1]) * self.n_points + nbr[2]
                if j != d:
                    pairs.append((d, int(j)))
        return pairs


def _empirical(setup, d, stream, noise_divisor=1.0):
    """Selection frequencies of the public SPS entry point over DP_SAMPLES runs."""
    rng = make_rng(20240, stream, d)
    table = setup.table(d)
    if noise_divisor == 1.0:
        picks = mech.smooth_private_selection(table, setup.budget, setup.spec, rng,
                                              size=DP_SAMPLES)
        picks = np.asarray(picks)
    else:
        # deliberately broken mechanism: noise shrunk by ``noise_divisor``
        alpha = setup.budget.alpha_prime(setup.spec) * noise_divisor
        scores = np.broadcast_to(table.scores, (DP_SAMPLES, DP_M))
        picks = mech.smooth_private_selection_indices(scores, table.smooth_bound_max, alpha,
                                                      setup.spec, rng)
    return np.bincount(picks, minlength=DP_M) / DP_SAMPLES


def _max_excess(p, q, eps, n=DP_SAMPLES, p_min=1e-3):
    """Largest |log p - log q| - eps - 3 SE over candidates with both p, q >= p_min."""
    mask = (p >= p_min) & (q >= p_min)
    if not mask.any():
        return -np.inf, 0.0
    se = np.sqrt((1 - p[mask]) / (n * p[mask]) + (1 - q[mask]) / (n * q[mask]))
    ratio = np.abs(np.log(p[mask]) - np.log(q[mask]))
    return float(np.max(ratio - eps - 3 * se)), float(ratio.max())


def test_criterion_4_empirical_privacy():
    start = time.perf_counter()
    lines = []
    ok = True
    for stream, sided in enumerate(("one_sided", "two_sided")):
        setup = _DpSetup(sided)
        exact = setup.exact_probs()
        worst_exact, n_pairs, top = setup.all_pairs_worst(exact, DP_TOP_PAIRS)
        pairs = top + setup.random_pairs(DP_RANDOM_PAIRS, make_rng(99, stream))
        cache = {}
        worst_emp = 0.0
        worst_excess = -np.inf
        worst_fit = 0.0
        for a, b in pairs:
            for d in (a, b):
                if d not in cache:
                    cache[d] = _empirical(setup, d, stream)
                    # the sampler must agree with the exact probabilities
                    sd = np.sqrt(exact[d] * (1 - exact[d]) / DP_SAMPLES) + 1e-12
                    worst_fit = max(worst_fit, float(np.max(np.abs(cache[d] - exact[d]) / sd)))
            excess, ratio = _max_excess(cache[a], cache[b], DP_EPS)
            worst_excess = max(worst_excess, excess)
            worst_emp = max(worst_emp, ratio)
        # power check: the same harness flags a mechanism with 5x less noise
        a, b = top[0]
        broken = _max_excess(_empirical(setup, a, 10 + stream, 5.0),
                             _empirical(setup, b, 10 + stream, 5.0), DP_EPS)[0]
        side_ok = (worst_excess <= 0 and worst_exact <= DP_EPS and worst_fit < 6
                   and broken > 0)
        ok &= side_ok
        lines.append(f"{sided}: exact worst log-ratio {worst_exact:.3f} over {n_pairs} pairs; "
                     f"empirical worst {worst_emp:.3f} on {len(pairs)} pairs "
                     f"(max excess over eps+3SE {worst_excess:+.3f}); sampler vs exact "
                     f"{worst_fit:.1f} sd; 5x-less-noise control flagged={broken > 0}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    report(4, ok, " | ".join(lines) + f" | {elapsed:.0f}s (limit 600s)")
    assert ok


# -- 5 ---------------------------------------------------------------------

def test_criterion_5_mechanism_distributions():
    start = time.perf_counter()
    n = 1_000_000
    em_worst = 0.0
    for k, (scores, gs, eps) in enumerate((([0.0, 1.0], 1.0, 2.0), ([3.0, 1.5], 2.0, 3.0),
                                           ([0.0, 0.2], 1.0, 1.0))):
        t = ScoreTable.from_scores(scores, gs)
        picks = np.asarray(mech.exponential_mechanism(t, eps, make_rng(50, k), size=n))
        freq = np.bincount(picks, minlength=2) / n
        w = np.exp(eps * np.asarray(scores) / (2 * gs))
        em_worst = max(em_worst, float(np.max(np.abs(freq / (w / w.sum()) - 1))))
    tv_worst = 0.0
    for k, (scores, gs, eps) in enumerate((([0.0, 1.0, 2.0], 1.0, 2.0),
                                           ([5.0, 4.5, 1.0], 2.0, 1.0))):
        t = ScoreTable.from_scores(scores, gs)
        alg = np.bincount(np.asarray(mech.permute_and_flip(t, eps, make_rng(60, k), size=n)),
                          minlength=3) / n
        nz = np.bincount(np.asarray(mech.permute_and_flip_noise(t, eps, make_rng(61, k), size=n)),
                         minlength=3) / n
        tv_worst = max(tv_worst, 0.5 * float(np.abs(alg - nz).sum()))
    elapsed = time.perf_counter() - start
    ok = em_worst <= 0.03 and tv_worst <= 0.01
    report(5, ok, f"EM worst relative gap to softmax {em_worst:.4f} (tol 0.03); PF sequential "
                  f"vs noise form worst TV {tv_worst:.4f} (tol 0.01); 10^6 runs each, "
                  f"{elapsed:.1f}s")
    assert ok


# -- 6 and 7 -----------------------------------------------------------------

FIG_CONFIG = dict(n_families=150, m_values=(5, 10, 20), epsilon_values=(3.0, 9.0, 15.0, 21.0),
                  gamma=4.0, trials_per_cell=200, repetitions=5, seed=0)


@pytest.fixture(scope="module")
def fig_selector():
    return experiments.TdtSelector(150, 6.0)


def test_criterion_6_accuracy_curves(fig_selector):
    start = time.perf_counter()
    cfg = ExperimentConfig(**FIG_CONFIG, mechanisms=("em", "pf", "sps"),
                           sps_cases=(SpsCase.THM5_ONE_SIDED,))
    res = experiments.run_accuracy_experiment(cfg, fig_selector)
    cells = {}
    for r in res:
        cells.setdefault((r.m, r.epsilon), {})[r.mechanism] = np.mean(r.accuracies)
    wins = sum(c["sps"] >= c["em"] and c["sps"] >= c["pf"] for c in cells.values())
    agg = {k: np.mean([c[k] for c in cells.values()]) for k in ("em", "pf", "sps")}
    elapsed = time.perf_counter() - start
    ok = (wins >= 10 and agg["sps"] > agg["em"] and agg["sps"] > agg["pf"]
          and elapsed < 900)
    report(6, ok, f"SPS (thresholded, one-sided) >= EM and PF in {wins}/12 cells (need 10); "
                  f"aggregate SPS {agg['sps']:.3f} vs EM {agg['em']:.3f}, PF {agg['pf']:.3f}; "
                  f"{elapsed:.1f}s")
    assert ok


def test_criterion_7_gamma_sweep(fig_selector):
    start = time.perf_counter()
    cfg = ExperimentConfig(**FIG_CONFIG, gamma_values=(2.0, 4.0, 6.0, 10.0))
    res = experiments.run_gamma_sweep(cfg, fig_selector)
    cells = {}
    for r in res:
        cells.setdefault((r.m, r.epsilon), {})[r.gamma] = np.mean(r.accuracies)
    agg = {g: np.mean([c[g] for c in cells.values()]) for g in cfg.gamma_values}
    best = max(agg, key=agg.get)
    gamma2_max = sum(c[2.0] >= max(c.values()) for c in cells.values())
    elapsed = time.perf_counter() - start
    ok = best == 4.0 and gamma2_max <= 1 and elapsed < 1800
    report(7, ok, "aggregate " + ", ".join(f"g{g:g}={a:.3f}" for g, a in agg.items())
           + f"; best gamma {best:g}; gamma=2 is cell maximum in {gamma2_max}/12 cells "
             f"(max 1); {elapsed:.1f}s")
    assert ok


# -- 8 ---------------------------------------------------------------------

def test_criterion_8_runtime_scaling(fig_selector):
    cfg = ExperimentConfig(timing_m_values=(20, 50, 100, 200, 500, 1000), timing_runs=10,
                           epsilon_values=(9.0,))
    res = experiments.run_timing(cfg, fig_selector)
    slopes = {}
    for name, case in experiments.TIMED:
        rows = [r for r in res if r.mechanism == name and r.case == case]
        x = np.log([r.m for r in rows])
        y = np.log([r.seconds for r in rows])
        slopes[case.value if case else name] = float(np.polyfit(x, y, 1)[0])
    thm5_1000 = [r.seconds for r in res if r.case == SpsCase.THM5_ONE_SIDED and r.m == 1000][0]
    ok = all(abs(slopes[k] - 1.0) <= 0.3 for k in ("em", "pf", "thm4_one_sided"))
    ok &= thm5_1000 < 300
    report(8, ok, "log-log slopes " + ", ".join(f"{k}={v:.2f}" for k, v in slopes.items())
           + f" (EM, PF, exact-bound SPS need 1.0+-0.3); thresholded SPS at m=1000 "
             f"{thm5_1000 * 1e3:.1f} ms per selection (limit 300 s)")
    assert ok


# -- 9 ---------------------------------------------------------------------

def _independent_mass(gamma):
    c = noise.normalization_constant(gamma)
    inner, _ = integrate.quad(lambda z: 1 / (1 + z ** gamma), 0, 1, epsabs=1e-14, epsrel=1e-13)
    # z = 1/t maps [1, inf) to (0, 1]: integrand t^(gamma-2) / (1 + t^gamma)
    outer, _ = integrate.quad(lambda t: 1 / (1 + t ** gamma), 0, 1, weight="alg",
                              wvar=(gamma - 2, 0), epsabs=1e-14, epsrel=1e-13)
    return 2 * c * (inner + outer)


def test_criterion_9_sampler_moments():
    n = 1_000_000
    z = noise.sample(NoiseSpec(4.0, "one_sided"), make_rng(90), n)
    mean = float(z.mean())
    rate = 0.75
    e = noise.sample_exponential(rate, make_rng(91), n)
    e_rel = abs(float(e.mean()) * rate - 1)
    masses = {g: _independent_mass(g) for g in (1.5, 2.0, 3.0, 4.0, 6.0, 10.0)}
    mass_dev = max(abs(v - 1) for v in masses.values())
    ok = abs(mean - 1 / math.sqrt(2)) <= 0.01 and e_rel <= 0.01 and mass_dev <= 1e-8
    report(9, ok, f"one-sided gamma=4 mean {mean:.4f} (target {1 / math.sqrt(2):.4f} +-0.01); "
                  f"exponential mean rel err {e_rel:.4f} (tol 0.01); worst mass deviation "
                  f"{mass_dev:.1e} over gamma {sorted(masses)} (tol 1e-8)")
    assert ok


# -- 10 --------------------------------------------------------------------

def _edit_bfs(n, start):
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for b, c in frontier:
            for db, dc in tdt.FAMILY_EDITS:
                y = (b + db, c + dc)
                if y[0] >= 0 and y[1] >= 0 and sum(y) <= 2 * n and y not in dist:
                    dist[y] = dist[(b, c)] + 1
                    nxt.append(y)
        frontier = nxt
    return dist


def test_criterion_10_distance_and_high_ls_region():
    mismatches = 0
    pairs = 0
    for n in (1, 2, 3, 4):
        points = [(b, c) for b in range(2 * n + 1) for c in range(2 * n + 1 - b)]
        for x in points:
            dist = _edit_bfs(n, x)
            for y in points:
                pairs += 1
                mismatches += tdt.tdt_distance(tdt.TdtTable(*x, n), tdt.TdtTable(*y, n)) != dist[y]
    bad = 0
    flagged = 0
    for n in range(1, 11):
        dom = tdt.TdtDomain(n)
        local = _generic_local(dom)
        for i, p in enumerate(dom.points):
            if tdt.high_ls_region(p):
                flagged += 1
                bad += not local[i] > 6
    ok = mismatches == 0 and bad == 0
    report(10, ok, f"distance formula vs edit BFS: {mismatches} mismatches over {pairs} pairs "
                   f"(N<=4); high-LS predicate: {flagged} flagged points, {bad} with LS<=6 (N<=10)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
