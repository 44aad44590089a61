"""Selection experiments on synthetic and fixed TDT data.

Every cell is identified by (mechanism, case, gamma, m, epsilon) and draws
its randomness from streams derived from the configured seed, so a cell can
be replayed on its own and results do not depend on execution order. Data
streams depend only on (m, repetition): all mechanisms, cases, epsilons and
gammas in a sweep see the same synthetic tables.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from smoothsel import mechanisms as mech
from smoothsel import tdt
from smoothsel.bench.config import ExperimentConfig, SpsCase
from smoothsel.errors import BudgetError, ConfigurationError, SmoothselError
from smoothsel.mechanisms import BudgetSplit, ScoreTable
from smoothsel.noise import NoiseSpec, make_rng
from smoothsel.sensitivity import is_unbounded

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("mechanism", "case", "gamma", "m", "epsilon", "N", "T", "k", "l", "rep",
               "accuracy_mean", "accuracy_min", "accuracy_max", "seed")
TIMING_COLUMNS = ("mechanism", "case", "m", "runs", "seconds_per_selection",
                  "ratio_to_em", "seed")

_DATA_STREAM = 0
_NOISE_STREAM = 1
_MECH_KEYS = {"em": 1, "pf": 2, "pf_noise": 3}
_MECH_KEYS.update({c.value: 10 + i for i, c in enumerate(SpsCase)})


def _key(x: float) -> int:
    return int(round(float(x) * 1_000_000))


@dataclass
class SyntheticSnps:
    """Tables for ``trials`` independent draws of ``m`` SNPs."""

    b: np.ndarray
    c: np.ndarray
    scores: np.ndarray

    @property
    def best_mask(self) -> np.ndarray:
        return self.scores >= self.scores.max(axis=-1, keepdims=True)

    @property
    def best(self) -> np.ndarray:
        """Index of the top SNP (first one on exact ties)."""
        return np.argmax(self.scores, axis=-1)

    def correct(self, selected: np.ndarray) -> np.ndarray:
        # Any candidate attaining the top score counts as a correct extraction.
        rows = np.arange(self.scores.shape[0])
        return self.best_mask[rows, selected]


def generate_scores(n_families: int, m: int, rng: np.random.Generator,
                    trials: Optional[int] = None) -> SyntheticSnps:
    """Draw ``s ~ Binomial(2N, 2/3)``, ``b ~ Binomial(s, 1/2)``, ``c = s - b`` per SNP.

    Arrays have shape ``(m,)`` or ``(trials, m)``.
    """
    shape = (m,) if trials is None else (trials, m)
    s = rng.binomial(2 * n_families, 2.0 / 3.0, size=shape)
    b = rng.binomial(s, 0.5)
    c = s - b
    return SyntheticSnps(b=b, c=c, scores=tdt.chi2(b, c))


class TdtSelector:
    """Builds score tables and runs mechanisms on TDT data for one (N, T) profile."""

    def __init__(self, n_families: int, threshold_T: Optional[float] = 6.0,
                 k_min: float = mech.DEFAULT_K_MIN, cache_dir=None, profile=None):
        self.n_families = n_families
        self.threshold_T = threshold_T
        self.k_min = k_min
        self.profile = profile or tdt.cached_profile(n_families, threshold_T, cache_dir)
        self.domain = tdt.profile_domain(self.profile)
        self.global_sensitivity = self.profile.global_sensitivity
        self._bound_cache: dict = {}

    def ceiling(self, case: SpsCase):
        case = SpsCase(case)
        if case.thresholded:
            if self.profile.beta_ceiling_thm5 is None:
                raise ConfigurationError("profile was built without a threshold T")
            return self.profile.beta_ceiling_thm5
        return self.profile.beta_ceiling_thm4

    def budget(self, case: SpsCase, m: int, gamma: float, epsilon: float) -> BudgetSplit:
        case = SpsCase(case)
        return mech.choose_budget(m, case.sidedness, gamma, epsilon, self.ceiling(case),
                                  self.k_min)

    def smoothing(self, case: SpsCase, budget: BudgetSplit, spec: NoiseSpec) -> float:
        """Smoothness the bound is built for: beta(l eps), clipped to the ceiling for rounding."""
        beta = budget.beta_prime(spec)
        ceiling = self.ceiling(case)
        return beta if is_unbounded(ceiling) else min(beta, ceiling)

    def bound_grid(self, case: SpsCase, beta: float) -> np.ndarray:
        key = (SpsCase(case), beta)
        grid = self._bound_cache.get(key)
        if grid is None:
            grid = (self.profile.thm5_bounds(beta) if key[0].thresholded
                    else self.profile.thm4_bounds(beta))
            if len(self._bound_cache) > 64:
                self._bound_cache.clear()
            self._bound_cache[key] = grid
        return grid

    def smooth_bound_max(self, case: SpsCase, beta: float, b, c) -> np.ndarray:
        grid = self.bound_grid(case, beta)
        return grid[self.domain.grid_index(b, c)].max(axis=-1)

    def score_table(self, tables: Sequence[tdt.TdtTable], case: Optional[SpsCase] = None,
                    epsilon: Optional[float] = None, gamma: float = 4.0,
                    candidates=None) -> tuple[ScoreTable, Optional[BudgetSplit]]:
        """Score table for a list of tables; with ``case`` it also carries the smooth bound."""
        for t in tables:
            if t.n_families != self.n_families:
                raise ConfigurationError("table N differs from the selector's N")
        scores = [tdt.tdt_statistic(t) for t in tables]
        if candidates is None:
            candidates = range(len(tables))
        if case is None:
            return ScoreTable.from_scores(scores, self.global_sensitivity, candidates), None
        case = SpsCase(case)
        spec = NoiseSpec(gamma, case.sidedness)
        budget = self.budget(case, len(tables), gamma, epsilon)
        beta = self.smoothing(case, budget, spec)
        grid = self.bound_grid(case, beta)
        smax = max(grid[self.domain.index_of((t.b, t.c))] for t in tables)
        table = ScoreTable.from_scores(scores, self.global_sensitivity, candidates,
                                       smooth_bound_max=float(smax), smooth_beta=beta)
        return table, budget

    def select(self, tables: Sequence[tdt.TdtTable], mechanism: str, epsilon: float,
               rng: np.random.Generator, case: Optional[SpsCase] = None, gamma: float = 4.0):
        """One end-to-end selection from raw tables (scores, bounds, noisy choice)."""
        if mechanism == "sps":
            table, budget = self.score_table(tables, case, epsilon, gamma)
            spec = NoiseSpec(gamma, SpsCase(case).sidedness)
            return mech.smooth_private_selection(table, budget, spec, rng)
        table, _ = self.score_table(tables)
        if mechanism == "em":
            return mech.exponential_mechanism(table, epsilon, rng)
        if mechanism == "pf":
            return mech.permute_and_flip(table, epsilon, rng)
        raise ConfigurationError(f"unknown mechanism {mechanism!r}")

    def run_batch(self, data: SyntheticSnps, mechanism: str, epsilon: float,
                  rng: np.random.Generator, case: Optional[SpsCase] = None,
                  gamma: float = 4.0, budget: Optional[BudgetSplit] = None) -> np.ndarray:
        """Selected column per row of ``data``."""
        gs = self.global_sensitivity
        if mechanism == "em":
            return mech.exponential_mechanism_indices(data.scores, gs, epsilon, rng)
        if mechanism == "pf":
            return mech.permute_and_flip_indices(data.scores, gs, epsilon, rng)
        if mechanism != "sps":
            raise ConfigurationError(f"unknown mechanism {mechanism!r}")
        case = SpsCase(case)
        spec = NoiseSpec(gamma, case.sidedness)
        m = data.scores.shape[-1]
        if budget is None:
            budget = self.budget(case, m, gamma, epsilon)
        budget.check(m)
        beta = self.smoothing(case, budget, spec)
        smax = self.smooth_bound_max(case, beta, data.b, data.c)
        return mech.smooth_private_selection_indices(data.scores, smax,
                                                     budget.alpha_prime(spec), spec, rng)


@dataclass
class CellResult:
    mechanism: str
    case: Optional[SpsCase]
    gamma: Optional[float]
    m: int
    epsilon: float
    accuracies: list = field(default_factory=list)
    budget: Optional[BudgetSplit] = None
    infeasible: Optional[str] = None

    def row(self, config: ExperimentConfig) -> dict:
        acc = np.asarray(self.accuracies, dtype=float)
        if self.infeasible:
            stats = ("infeasible",) * 3
        else:
            stats = (f"{acc.mean():.6f}", f"{acc.min():.6f}", f"{acc.max():.6f}")
        return {
            "mechanism": self.mechanism,
            "case": "" if self.case is None else self.case.value,
            "gamma": "" if self.gamma is None else f"{self.gamma:g}",
            "m": str(self.m),
            "epsilon": f"{self.epsilon:g}",
            "N": str(config.n_families),
            "T": f"{config.threshold_T:g}",
            "k": "" if self.budget is None else f"{self.budget.k:.10g}",
            "l": "" if self.budget is None else f"{self.budget.l:.10g}",
            "rep": str(config.repetitions),
            "accuracy_mean": stats[0],
            "accuracy_min": stats[1],
            "accuracy_max": stats[2],
            "seed": str(config.seed),
        }


def run_cell(config: ExperimentConfig, selector: TdtSelector, mechanism: str,
             m: int, epsilon: float, case: Optional[SpsCase] = None,
             gamma: Optional[float] = None) -> CellResult:
    """Run ``repetitions x trials_per_cell`` selections for one cell."""
    case = None if case is None else SpsCase(case)
    if mechanism == "sps":
        gamma = config.gamma if gamma is None else gamma
    else:
        gamma = None
    result = CellResult(mechanism, case, gamma, m, epsilon)
    if mechanism == "sps":
        try:
            result.budget = selector.budget(case, m, gamma, epsilon)
        except (BudgetError, ConfigurationError) as exc:
            result.infeasible = str(exc)
            logger.warning("cell %s/%s m=%d eps=%g infeasible: %s", mechanism, case.value,
                           m, epsilon, exc)
            return result
    mkey = _MECH_KEYS[case.value if case is not None else mechanism]
    gkey = 0 if gamma is None else _key(gamma)
    for rep in range(config.repetitions):
        data_rng = make_rng(config.seed, _DATA_STREAM, m, rep)
        data = generate_scores(config.n_families, m, data_rng, config.trials_per_cell)
        noise_rng = make_rng(config.seed, _NOISE_STREAM, m, rep, mkey, gkey, _key(epsilon))
        selected = selector.run_batch(data, mechanism, epsilon, noise_rng, case, gamma or 4.0,
                                      result.budget)
        result.accuracies.append(float(np.mean(data.correct(selected))))
    return result


def _cells(config: ExperimentConfig, cases: Iterable[SpsCase], gammas: Iterable[float],
           mechanisms: Iterable[str]):
    for m in config.m_values:
        for eps in config.epsilon_values:
            for name in mechanisms:
                if name == "sps":
                    for case in cases:
                        for g in gammas:
                            yield ("sps", m, eps, case, g)
                else:
                    yield (name, m, eps, None, None)


_WORKER_SELECTORS: dict = {}


def _selector_for(config: ExperimentConfig) -> TdtSelector:
    key = (config.n_families, config.threshold_T, config.k_min, config.cache_dir)
    sel = _WORKER_SELECTORS.get(key)
    if sel is None:
        sel = TdtSelector(config.n_families, config.threshold_T, config.k_min, config.cache_dir)
        _WORKER_SELECTORS[key] = sel
    return sel


def _run_cell_job(args):
    config, cell = args
    name, m, eps, case, g = cell
    return run_cell(config, _selector_for(config), name, m, eps, case, g)


def _run_cells(config: ExperimentConfig, cells: list, workers: int,
               selector: Optional[TdtSelector]) -> list[CellResult]:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map() yields in submission order, so output is order-deterministic.
            return list(pool.map(_run_cell_job, [(config, c) for c in cells]))
    selector = selector or _selector_for(config)
    return [run_cell(config, selector, name, m, eps, case, g)
            for name, m, eps, case, g in cells]


def run_accuracy_experiment(config: ExperimentConfig, selector: Optional[TdtSelector] = None,
                            workers: int = 1) -> list[CellResult]:
    """Accuracy of every configured mechanism and case across (m, epsilon)."""
    cells = list(_cells(config, config.sps_cases, (config.gamma,), config.mechanisms))
    return _run_cells(config, cells, workers, selector)


def run_gamma_sweep(config: ExperimentConfig, selector: Optional[TdtSelector] = None,
                    workers: int = 1) -> list[CellResult]:
    """Thresholded-bound, one-sided selection across the configured gamma values."""
    cells = list(_cells(config, (SpsCase.THM5_ONE_SIDED,), config.gamma_values, ("sps",)))
    return _run_cells(config, cells, workers, selector)


@dataclass
class TimingResult:
    mechanism: str
    case: Optional[SpsCase]
    m: int
    runs: int
    seconds: float
    ratio_to_em: float = math.nan

    def row(self, config: ExperimentConfig) -> dict:
        return {"mechanism": self.mechanism,
                "case": "" if self.case is None else self.case.value,
                "m": str(self.m), "runs": str(self.runs),
                "seconds_per_selection": f"{self.seconds:.6e}",
                "ratio_to_em": f"{self.ratio_to_em:.4f}",
                "seed": str(config.seed)}


TIMED = (("em", None), ("pf", None), ("sps", SpsCase.THM4_ONE_SIDED),
         ("sps", SpsCase.THM5_ONE_SIDED))


def run_timing(config: ExperimentConfig, selector: Optional[TdtSelector] = None,
               epsilon: Optional[float] = None) -> list[TimingResult]:
    """Wall-clock seconds per end-to-end selection from ``m`` raw tables.

    Each run times score computation, smooth-bound lookup (from the cached
    profile) and the noisy choice; table generation is not timed.
    """
    selector = selector or _selector_for(config)
    eps = config.epsilon_values[0] if epsilon is None else epsilon
    n = config.n_families
    results = []
    for m in config.timing_m_values:
        rng = make_rng(config.seed, 2, m)
        batches = [generate_scores(n, m, rng) for _ in range(config.timing_runs)]
        table_sets = [[tdt.TdtTable(int(b), int(c), n) for b, c in zip(d.b, d.c)]
                      for d in batches]
        row = []
        for name, case in TIMED:
            # Warm caches (bound grid for this cell) outside the timed region.
            selector.select(table_sets[0], name, eps, rng, case, config.gamma)
            start = time.perf_counter()
            for tables in table_sets:
                selector.select(tables, name, eps, rng, case, config.gamma)
            elapsed = (time.perf_counter() - start) / config.timing_runs
            row.append(TimingResult(name, case, m, config.timing_runs, elapsed))
        em_time = row[0].seconds
        for r in row:
            r.ratio_to_em = r.seconds / em_time
        results.extend(row)
    return results


@dataclass
class FixedScores:
    n_families: int
    candidates: list
    scores: np.ndarray
    b: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    @property
    def has_tables(self) -> bool:
        return self.b is not None

    def data(self, trials: int) -> SyntheticSnps:
        m = len(self.candidates)
        b = np.broadcast_to(self.b if self.has_tables else np.zeros(m, int), (trials, m))
        c = np.broadcast_to(self.c if self.has_tables else np.zeros(m, int), (trials, m))
        return SyntheticSnps(b=b, c=c, scores=np.broadcast_to(self.scores, (trials, m)))


def run_fixed_scores(fixed: FixedScores, config: ExperimentConfig,
                     selector: Optional[TdtSelector] = None) -> list[CellResult]:
    """Per-epsilon accuracy of every mechanism on one fixed score vector."""
    m = len(fixed.candidates)
    if selector is None and fixed.has_tables:
        selector = TdtSelector(fixed.n_families, config.threshold_T, config.k_min,
                               config.cache_dir)
    gs = tdt.tdt_global_sensitivity(fixed.n_families) if selector is None \
        else selector.global_sensitivity
    if not gs > 0:
        raise ConfigurationError(f"global sensitivity is zero for N={fixed.n_families}")
    data = fixed.data(config.trials_per_cell)
    results = []
    for eps in config.epsilon_values:
        for name, case in [("em", None), ("pf", None)] + [("sps", c) for c in config.sps_cases]:
            if name not in config.mechanisms:
                continue
            gamma = config.gamma if name == "sps" else None
            res = CellResult(name, case, gamma, m, eps)
            if name == "sps":
                if not fixed.has_tables:
                    res.infeasible = "score file has no b,c columns"
                    results.append(res)
                    continue
                try:
                    res.budget = selector.budget(case, m, gamma, eps)
                except (BudgetError, ConfigurationError) as exc:
                    res.infeasible = str(exc)
                    results.append(res)
                    continue
            mkey = _MECH_KEYS[case.value if case is not None else name]
            for rep in range(config.repetitions):
                rng = make_rng(config.seed, 3, rep, mkey, _key(eps))
                if name == "em":
                    sel = mech.exponential_mechanism_indices(data.scores, gs, eps, rng)
                elif name == "pf":
                    sel = mech.permute_and_flip_indices(data.scores, gs, eps, rng)
                else:
                    sel = selector.run_batch(data, "sps", eps, rng, case, gamma, res.budget)
                res.accuracies.append(float(np.mean(data.correct(sel))))
            results.append(res)
    return results
