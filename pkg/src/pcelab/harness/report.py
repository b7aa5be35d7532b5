"""Aggregate run outputs into summary tables.

Regret CSVs become per-episode mean and standard error of cumulative regret,
plus a log-log slope of final regret against K across runs with different K.
Bandit run CSVs become per-(T, algorithm) means.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..distributions import complexity_measure
from ..serialization import read_csv, write_csv
from .config import ExperimentConfig, build_instance

REGRET_COLUMNS = ["seed", "test_draw", "episode", "phase", "pair_index", "return", "inst_regret", "cum_regret"]
BANDIT_COLUMNS = ["T", "seed", "algorithm", "pseudo_regret"]
SUMMARY_HEADER = ["K", "episode", "mean_cum_regret", "stderr", "n"]
SCALING_HEADER = ["K", "mean_total_regret", "stderr", "n", "complexity_at_delta"]
BANDIT_SUMMARY_HEADER = ["T", "algorithm", "mean_pseudo_regret", "stderr", "n"]


class SchemaError(ValueError):
    """An input CSV does not have the expected columns."""


def mean_stderr(x: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(x, dtype=float)
    if len(a) == 0:
        return math.nan, math.nan
    se = float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
    return float(a.mean()), se


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two points for a slope")
    return float(np.polyfit(x, y, 1)[0])


def _resolve(inputs: Iterable[str | Path], name: str) -> list[Path]:
    out = []
    for p in map(Path, inputs):
        if p.is_dir():
            if (p / name).is_file():
                out.append(p / name)
        elif p.name == name:
            out.append(p)
    return sorted(out)


def _complexity_for(csv_path: Path, K: int):
    meta = csv_path.parent / "metadata.json"
    if not meta.is_file():
        return ""
    cfg = dict(json.loads(meta.read_text())["config"])
    cfg.pop("overrides", None)
    try:
        dist = build_instance(ExperimentConfig(**cfg))
    except Exception:
        return ""
    return complexity_measure(dist, 1 / math.sqrt(K))


def summarize_regret(paths: Sequence[Path]):
    """Returns (per-episode rows, per-K scaling rows, slope or None)."""
    by_K: dict[int, dict] = {}
    for path in paths:
        cols, rows = read_csv(path)
        if cols != REGRET_COLUMNS:
            raise SchemaError(f"{path}: columns {cols} != {REGRET_COLUMNS}")
        curves = defaultdict(dict)
        for r in rows:
            curves[(r["seed"], r["test_draw"])][int(r["episode"])] = float(r["cum_regret"])
        if not curves:
            continue
        K = max(max(c) for c in curves.values())
        entry = by_K.setdefault(K, {"curves": [], "path": path})
        entry["curves"] += [np.array([c[k] for k in sorted(c)]) for c in curves.values()]
    summary, scaling = [], []
    for K in sorted(by_K):
        mat = np.stack(by_K[K]["curves"])
        n = len(mat)
        means = mat.mean(0)
        ses = mat.std(0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(mat.shape[1])
        summary += [(K, k + 1, float(means[k]), float(ses[k]), n) for k in range(mat.shape[1])]
        m, se = mean_stderr(mat[:, -1])
        scaling.append((K, m, se, n, _complexity_for(by_K[K]["path"], K)))
    slope = None
    if len(scaling) >= 2 and all(r[1] > 0 for r in scaling):
        slope = loglog_slope([r[0] for r in scaling], [r[1] for r in scaling])
    return summary, scaling, slope


def summarize_bandits(paths: Sequence[Path]):
    groups = defaultdict(list)
    for path in paths:
        cols, rows = read_csv(path)
        if cols != BANDIT_COLUMNS:
            raise SchemaError(f"{path}: columns {cols} != {BANDIT_COLUMNS}")
        for r in rows:
            groups[(int(r["T"]), r["algorithm"])].append(float(r["pseudo_regret"]))
    return [(T, alg, *mean_stderr(v), len(v)) for (T, alg), v in sorted(groups.items())]


def report(inputs: Sequence[str | Path], out: str | Path | None = None) -> dict:
    """Build all summary tables from the given run directories or CSV files.

    Writes ``summary.csv``, ``scaling.csv`` and ``bandit_summary.csv`` into
    ``out`` when given. Returns the tables and the fitted slope.
    """
    summary, scaling, slope = summarize_regret(_resolve(inputs, "regret.csv"))
    bandit_paths = _resolve(inputs, "bandit_runs.csv")
    bandit = summarize_bandits(bandit_paths)
    notes = []
    for p in bandit_paths:
        meta = p.parent / "metadata.json"
        if meta.is_file():
            notes += [n for n in json.loads(meta.read_text()).get("notes", []) if n not in notes]
    if out is not None:
        o = Path(out)
        o.mkdir(parents=True, exist_ok=True)
        write_csv(o / "summary.csv", SUMMARY_HEADER, summary)
        write_csv(o / "scaling.csv", SCALING_HEADER, scaling)
        write_csv(o / "bandit_summary.csv", BANDIT_SUMMARY_HEADER, bandit)
    return {"summary": summary, "scaling": scaling, "slope": slope, "bandit": bandit, "notes": notes}


def format_report(res: dict) -> str:
    lines = [f"note: {n}" for n in res.get("notes", [])]
    if res["scaling"]:
        lines.append("K        mean_regret     stderr    n   C(D) at delta=1/sqrt(K)")
        for K, m, se, n, c in res["scaling"]:
            lines.append(f"{K:<8d} {m:<15.4f} {se:<9.4f} {n:<3d} {c}")
    if res["slope"] is not None:
        lines.append(f"log-log slope of mean regret vs K: {res['slope']:.4f}")
    if res["bandit"]:
        lines.append("T        algorithm   mean_pseudo_regret  stderr     n")
        for T, alg, m, se, n in res["bandit"]:
            lines.append(f"{T:<8d} {alg:<11s} {m:<19.4f} {se:<10.4f} {n}")
    if not lines:
        lines.append("no regret or bandit runs found")
    return "\n".join(lines)
