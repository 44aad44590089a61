"""Command-line entry point: ``smoothsel <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from smoothsel import tdt
from smoothsel.bench import experiments, io, verify
from smoothsel.bench.config import ExperimentConfig, load_config
from smoothsel.errors import SmoothselError
from smoothsel.sensitivity import is_unbounded

logger = logging.getLogger("smoothsel")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _strs(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _common(p: argparse.ArgumentParser, gamma_list: bool = False):
    p.add_argument("--config", help="JSON file of ExperimentConfig fields")
    p.add_argument("--n-families", type=int, help="families per dataset (N)")
    p.add_argument("--m", type=_ints, help="comma-separated candidate counts")
    p.add_argument("--epsilon", type=_floats, help="comma-separated privacy budgets")
    if gamma_list:
        p.add_argument("--gamma", type=_floats, help="comma-separated noise exponents")
    else:
        p.add_argument("--gamma", type=float, help="noise exponent (> 1)")
    p.add_argument("--case", type=_strs, help="comma-separated SPS cases, e.g. thm5_one_sided")
    p.add_argument("--mechanisms", type=_strs, help="subset of em,pf,sps")
    p.add_argument("--trials", type=int, help="trials per repetition")
    p.add_argument("--reps", type=int, help="repetitions per cell")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold-t", type=float, help="threshold T of the high-LS set")
    p.add_argument("--k-min", type=float, help="smallest noise share k in the budget policy")
    p.add_argument("--cache-dir", help="directory for cached sensitivity profiles")
    p.add_argument("--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--gnuplot", action="store_true", help="also write <out>.dat")
    p.add_argument("--plot", action="store_true", help="also write <out>.png (needs matplotlib)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothsel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("accuracy", help="accuracy vs epsilon for EM, PF and SPS cases")
    _common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("gamma-sweep", help="thresholded one-sided SPS across gamma values")
    _common(p, gamma_list=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("timing", help="seconds per selection vs m")
    _common(p)
    p.add_argument("--runs", type=int, help="timed selections per (mechanism, m)")

    p = sub.add_parser("fixed", help="accuracy on a fixed score file")
    p.add_argument("score_file", nargs="?",
                   help="CSV 'candidate,score[,b,c]' with a '# N=<int>' line "
                        "(default: bundled synthetic fixture)")
    _common(p)

    p = sub.add_parser("profile", help="build and cache a TDT sensitivity profile")
    p.add_argument("--n-families", type=int, default=150)
    p.add_argument("--threshold-t", type=float, default=6.0)
    p.add_argument("--cache-dir", help="write the profile here (default: do not save)")
    p.add_argument("--out", help="write a per-point CSV (b,c,ls,gd,ud)")

    p = sub.add_parser("verify", help="admissibility and sensitivity-oracle self-checks")
    return parser


def _overrides(args) -> dict:
    keys = {"n_families": "n_families", "m": "m_values", "epsilon": "epsilon_values",
            "case": "sps_cases", "mechanisms": "mechanisms", "trials": "trials_per_cell",
            "reps": "repetitions", "seed": "seed", "threshold_t": "threshold_T",
            "k_min": "k_min", "cache_dir": "cache_dir"}
    out = {dst: getattr(args, src, None) for src, dst in keys.items()}
    gamma = getattr(args, "gamma", None)
    if args.command == "gamma-sweep":
        out["gamma_values"] = gamma
    else:
        out["gamma"] = gamma
    if args.command == "timing":
        out["timing_m_values"] = out.pop("m_values")
        out["timing_runs"] = getattr(args, "runs", None)
    return out


def _emit(args, rows, columns, gnuplot_writer, plotter, title=""):
    text = io.rows_to_csv(rows, columns)
    if not args.out:
        sys.stdout.write(text)
        if args.gnuplot or args.plot:
            logger.warning("--gnuplot/--plot need --out; skipped")
        return
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    logger.info("wrote %s", out)
    if args.gnuplot:
        logger.info("wrote %s", gnuplot_writer(out.with_suffix(".dat"), rows))
    if args.plot:
        from smoothsel.bench import plotting
        logger.info("wrote %s", plotter(rows, out.with_suffix(".png"), **(
            {"title": title} if title else {})))


def _accuracy_rows(results, config):
    return [r.row(config) for r in results]


def cmd_accuracy(args, config: ExperimentConfig):
    results = experiments.run_accuracy_experiment(config, workers=args.workers)
    rows = _accuracy_rows(results, config)
    _emit(args, rows, io.CSV_COLUMNS, io.write_gnuplot, _plot_accuracy,
          f"N={config.n_families}, gamma={config.gamma:g}")


def cmd_gamma_sweep(args, config: ExperimentConfig):
    results = experiments.run_gamma_sweep(config, workers=args.workers)
    rows = _accuracy_rows(results, config)
    _emit(args, rows, io.CSV_COLUMNS, io.write_gnuplot, _plot_accuracy,
          f"N={config.n_families}, thm5_one_sided")


def cmd_timing(args, config: ExperimentConfig):
    results = experiments.run_timing(config)
    rows = [r.row(config) for r in results]
    _emit(args, rows, io.TIMING_COLUMNS, io.write_timing_gnuplot, _plot_timing)


def cmd_fixed(args, config: ExperimentConfig):
    path = args.score_file or io.bundled_fixture_path()
    fixed = io.load_score_file(path)
    config = config.replace(n_families=fixed.n_families)
    results = experiments.run_fixed_scores(fixed, config)
    rows = _accuracy_rows(results, config)
    _emit(args, rows, io.CSV_COLUMNS, io.write_gnuplot, _plot_accuracy,
          f"fixed scores, N={fixed.n_families}")


def _plot_accuracy(rows, path, **kw):
    from smoothsel.bench import plotting
    return plotting.plot_accuracy(rows, path, **kw)


def _plot_timing(rows, path, **kw):
    from smoothsel.bench import plotting
    return plotting.plot_timing(rows, path)


def _fmt_ceiling(c):
    return "unbounded" if is_unbounded(c) else f"{c:.6g}"


def cmd_profile(args):
    profile = tdt.cached_profile(args.n_families, args.threshold_t, args.cache_dir)
    domain = tdt.profile_domain(profile)
    print(f"N={args.n_families} points={len(profile)} GS={profile.global_sensitivity:.6g} "
          f"|U|={int(profile.in_U.sum())} T={args.threshold_t:g}")
    print(f"beta ceiling (exact bound)       = {_fmt_ceiling(profile.beta_ceiling_thm4)}")
    print(f"beta ceiling (thresholded bound) = {_fmt_ceiling(profile.beta_ceiling_thm5)}")
    if args.cache_dir:
        print(f"cached at {tdt.cache_path(args.cache_dir, args.n_families, args.threshold_t)}")
    if args.out:
        rows = [{"b": str(b), "c": str(c), "ls": f"{ls:.12g}", "gd": str(g), "ud": str(u)}
                for b, c, ls, g, u in zip(domain.b, domain.c, profile.local, profile.gd,
                                          profile.ud)]
        io.write_rows(args.out, rows, ("b", "c", "ls", "gd", "ud"))
    return 0


def cmd_verify(args):
    results = verify.run_all()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "profile":
            return cmd_profile(args)
        if args.command == "verify":
            return cmd_verify(args)
        config = load_config(args.config, _overrides(args))
        {"accuracy": cmd_accuracy, "gamma-sweep": cmd_gamma_sweep, "timing": cmd_timing,
         "fixed": cmd_fixed}[args.command](args, config)
    except SmoothselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
