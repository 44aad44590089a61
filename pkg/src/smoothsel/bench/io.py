"""Result CSV, gnuplot data and score-file I/O."""

from __future__ import annotations

import csv
import io
import math
import re
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from smoothsel import tdt
from smoothsel.bench.experiments import CSV_COLUMNS, TIMING_COLUMNS, FixedScores
from smoothsel.errors import ScoreFileError

_META = re.compile(r"#\s*N\s*=\s*(\S+)\s*$")
SCORE_RTOL = 1e-6


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_rows(path, rows: Iterable[dict], columns: Sequence[str] = CSV_COLUMNS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows, columns))
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def series_key(row: dict) -> str:
    """Label of the curve a row belongs to, e.g. ``sps:thm5_one_sided:g4``."""
    if row["mechanism"] != "sps":
        return row["mechanism"]
    return f"sps:{row['case']}:g{row['gamma']}"


def write_gnuplot(path, rows: Sequence[dict]) -> Path:
    """One indexed block per (series, m): ``epsilon mean min max``.

    Blocks are separated by two blank lines, so ``plot 'f.dat' index i``
    selects a curve; a comment names each block.
    """
    blocks = defaultdict(list)
    for row in rows:
        if row["accuracy_mean"] == "infeasible":
            continue
        blocks[(series_key(row), int(row["m"]))].append(row)
    out = []
    for (series, m), block in blocks.items():
        out.append(f"# {series} m={m}")
        out.append("# epsilon accuracy_mean accuracy_min accuracy_max")
        for row in sorted(block, key=lambda r: float(r["epsilon"])):
            out.append(f"{row['epsilon']} {row['accuracy_mean']} {row['accuracy_min']} "
                       f"{row['accuracy_max']}")
        out.append("\n")
    path = Path(path)
    path.write_text("\n".join(out))
    return path


def write_timing_gnuplot(path, rows: Sequence[dict]) -> Path:
    blocks = defaultdict(list)
    for row in rows:
        key = row["mechanism"] if row["mechanism"] != "sps" else f"sps:{row['case']}"
        blocks[key].append(row)
    out = []
    for series, block in blocks.items():
        out.append(f"# {series}")
        out.append("# m seconds_per_selection ratio_to_em")
        for row in sorted(block, key=lambda r: int(r["m"])):
            out.append(f"{row['m']} {row['seconds_per_selection']} {row['ratio_to_em']}")
        out.append("\n")
    path = Path(path)
    path.write_text("\n".join(out))
    return path


def _parse_int(text, lineno, what):
    try:
        value = int(text)
    except ValueError:
        raise ScoreFileError(f"{what} must be an integer, got {text!r}", lineno) from None
    return value


def parse_score_file(text: str, n_families: Optional[int] = None) -> FixedScores:
    """Parse a score file.

    Format::

        # N=215
        candidate,score[,b,c]
        rs123,17.86,95,45

    Comment lines start with ``#``; one of them must give ``N`` unless
    ``n_families`` is passed. The optional ``b,c`` columns hold the TDT
    counts and are needed for smooth private selection; when present the
    score must match the statistic they imply.
    """
    n = n_families
    header = None
    candidates, scores, bs, cs, linenos = [], [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = _META.match(line)
            if match:
                n = _parse_int(match.group(1), lineno, "N")
            continue
        fields = [f.strip() for f in next(csv.reader([line]))]
        if header is None:
            header = [f.lower() for f in fields]
            if header[:2] != ["candidate", "score"] or header[2:] not in ([], ["b", "c"]):
                raise ScoreFileError("header must be 'candidate,score' or "
                                     f"'candidate,score,b,c', got {line!r}", lineno)
            continue
        if len(fields) != len(header):
            raise ScoreFileError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        try:
            score = float(fields[1])
        except ValueError:
            raise ScoreFileError(f"score must be a number, got {fields[1]!r}", lineno) from None
        if not math.isfinite(score) or score < 0:
            raise ScoreFileError(f"score must be finite and non-negative, got {score}", lineno)
        if fields[0] in candidates:
            raise ScoreFileError(f"duplicate candidate {fields[0]!r}", lineno)
        if len(header) == 4:
            b = _parse_int(fields[2], lineno, "b")
            c = _parse_int(fields[3], lineno, "c")
            if n is not None and (b < 0 or c < 0 or b + c > 2 * n):
                raise ScoreFileError(f"counts b={b}, c={c} are not a valid table for N={n}",
                                     lineno)
            implied = tdt.chi2(b, c)
            if not math.isclose(implied, score, rel_tol=SCORE_RTOL, abs_tol=SCORE_RTOL):
                raise ScoreFileError(f"score {score} does not match the statistic {implied:.6g} "
                                     f"of b={b}, c={c}", lineno)
            bs.append(b)
            cs.append(c)
        candidates.append(fields[0])
        scores.append(score)
        linenos.append(lineno)
    if header is None:
        raise ScoreFileError("missing header line", 1)
    if n is None:
        raise ScoreFileError("missing '# N=<int>' metadata line", 1)
    if n < 2:
        raise ScoreFileError(f"N must be at least 2, got {n}", 1)
    if not candidates:
        raise ScoreFileError("no candidate rows", 1)
    has_tables = len(header) == 4
    # N may be declared after the rows, so the grid check is repeated here.
    for b, c, lineno in zip(bs, cs, linenos):
        if b < 0 or c < 0 or b + c > 2 * n:
            raise ScoreFileError(f"counts b={b}, c={c} are not a valid table for N={n}", lineno)
    return FixedScores(n_families=n, candidates=candidates, scores=np.asarray(scores),
                       b=np.asarray(bs) if has_tables else None,
                       c=np.asarray(cs) if has_tables else None)


def load_score_file(path, n_families: Optional[int] = None) -> FixedScores:
    return parse_score_file(Path(path).read_text(), n_families)


def bundled_fixture_path() -> Path:
    """Path of the synthetic six-candidate score file shipped with the package."""
    return Path(__file__).resolve().parent.parent / "data" / "six_snps.csv"


__all__ = ["CSV_COLUMNS", "TIMING_COLUMNS", "rows_to_csv", "write_rows", "read_rows",
           "write_gnuplot", "write_timing_gnuplot", "parse_score_file", "load_score_file",
           "bundled_fixture_path"]
