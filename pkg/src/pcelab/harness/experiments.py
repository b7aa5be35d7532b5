"""Experiment runners: each writes its CSVs and a ``metadata.json`` into the output directory.

CSV bytes depend only on the effective config; timings live in the metadata.
"""

from __future__ import annotations

import logging
import math
import subprocess
import time
from pathlib import Path

import numpy as np

from ..bandits import BanditInstance, as_bandits, asymptotic_ratio_experiment, pseudo_regret, ucb_run
from ..distributions import MdpDistribution, sample_indices
from ..mdp import InvalidMdpError, policy_value, validate_mdp
from ..omerm import (ENUMERATION_CAP, default_iterations, expected_suboptimality, omerm_high_prob,
                     omerm_train)
from ..oracles import SampleOracles, WhiteBoxOracles
from ..env import EnvHandle
from ..pce import pretrain, run_pce_experiment
from ..rng import child_stream
from ..serialization import dumps, load_json, mdp_from_dict, pvset_to_dict, save_json, write_csv
from .config import ConfigError, ExperimentConfig, RunMetadata, build_instance

log = logging.getLogger(__name__)

REGRET_HEADER = ["seed", "test_draw", "episode", "phase", "pair_index", "return", "inst_regret", "cum_regret"]
PRETRAIN_HEADER = ["seed", "phase", "num_mdps", "cover_size", "estimation_error", "episodes"]
OMERM_LOG_HEADER = ["iter_k", "mdp_index", "avg_optimistic_value", "episode_return"]
OMERM_SUMMARY_HEADER = ["seed", "num_tasks", "num_runs", "iterations", "expected_value", "suboptimality"]
BANDIT_HEADER = ["T", "seed", "algorithm", "pseudo_regret"]
RATIO_HEADER = ["T", "mean_informed", "mean_ucb", "ratio"]
VALIDATION_HEADER = ["member", "kind", "location", "message"]


class RunFailure(RuntimeError):
    """A run crashed; the message carries the run key (CLI exit code 3)."""


class ValidationFailed(RuntimeError):
    """``validate`` found violations (CLI exit code 3)."""


def _git_rev() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _guard(key: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:
        log.error("run %s failed: %s", key, e)
        raise RunFailure(f"run {key} failed: {type(e).__name__}: {e}") from e


def _expected_value(dist: MdpDistribution, policy) -> float:
    return float(sum(p * policy_value(m, policy) for p, m in zip(dist.probs, dist.support)))


def run_pce(cfg: ExperimentConfig, out: Path, meta: RunMetadata) -> list[str]:
    dist = build_instance(cfg)
    seeds = cfg.run_seeds()
    K = cfg.K

    def factory(seed):
        return WhiteBoxOracles() if cfg.white_box else SampleOracles(child_stream(seed, 3), cfg.c_o)

    files = []
    pvsets, pre_rows = {}, []
    for seed in seeds:
        t0 = time.perf_counter()
        pv = _guard(f"seed={seed}", pretrain, dist, K, factory(seed), child_stream(seed, 0), n_cap=cfg.n_cap)
        meta.timings[f"pretrain/{seed}"] = time.perf_counter() - t0
        meta.seeds[str(seed)] = {"pretrain": [seed, 0], "test_draw": [seed, 1, "d"], "env": [seed, 2, "d"]}
        meta.deviations += [f"seed {seed}: {d}" for d in dict.fromkeys(pv.deviations)]
        pvsets[seed] = pv
        for i, ph in enumerate(pv.phases, 1):
            pre_rows.append((seed, i, ph.num_mdps, ph.cover_size, ph.estimation_error, ph.episodes))
        name = f"pvset_{seed}.json"
        save_json(out / name, pvset_to_dict(pv))
        files.append(name)
    write_csv(out / "pretrain.csv", PRETRAIN_HEADER, pre_rows)
    files.append("pretrain.csv")
    if cfg.num_test_draws == 0:
        return files
    t0 = time.perf_counter()
    res = _guard("finetune", run_pce_experiment, dist, K, cfg.num_test_draws, seeds, factory, pvsets=pvsets)
    meta.timings["finetune"] = time.perf_counter() - t0

    def rows():
        for (seed, d) in sorted(res.traces):
            tr = res.traces[(seed, d)]
            cum = tr.cum_regret
            for k in range(len(tr)):
                yield (seed, d, k + 1, tr.phase[k], tr.pair_index[k], tr.returns[k], tr.inst_regret[k], cum[k])

    write_csv(out / "regret.csv", REGRET_HEADER, rows())
    fallbacks = [f"seed {s} draw {d}: all pairs eliminated, from-scratch learner from episode {t.fallback_episode}"
                 for (s, d), t in sorted(res.traces.items()) if t.fallback_episode is not None]
    meta.notes += fallbacks
    return files + ["regret.csv"]


def run_omerm(cfg: ExperimentConfig, out: Path, meta: RunMetadata) -> list[str]:
    dist = build_instance(cfg)
    S, A, H = dist.num_states, dist.num_actions, dist.horizon
    eps = cfg.epsilon
    enumerable = A ** (S * H) <= ENUMERATION_CAP
    if cfg.iterations is not None:
        sched = default_iterations(S, A, H, eps / 2 if cfg.delta else eps, cfg.c2)
        meta.deviations.append(f"iterations set to {cfg.iterations} (schedule asks for {sched})")
    if cfg.num_tasks is not None and cfg.delta is not None:
        meta.deviations.append(f"number of tasks set to {cfg.num_tasks}")
    if cfg.eval_episodes is not None:
        meta.deviations.append(f"evaluation episodes set to {cfg.eval_episodes}")
    if cfg.delta is None and cfg.num_tasks is None:
        raise ConfigError("omerm without delta needs num_tasks")
    files, summary = [], []
    for seed in cfg.run_seeds():
        t0 = time.perf_counter()
        if cfg.delta is not None:
            res = _guard(f"seed={seed}", omerm_high_prob, dist, eps, cfg.delta, child_stream(seed, 0),
                         c1=cfg.c1, c2=cfg.c2, num_tasks=cfg.num_tasks, iterations=cfg.iterations,
                         eval_episodes=cfg.eval_episodes, mode=cfg.mode)
            policy, n_tasks, runs, iters = res.policy, res.num_tasks, res.num_runs, res.iterations
        else:
            rng = child_stream(seed, 0)
            idx = sample_indices(dist, cfg.num_tasks, rng)
            handles = [EnvHandle(dist.support[j], child_stream(seed, 1, i)) for i, j in enumerate(idx)]
            res = _guard(f"seed={seed}", omerm_train, handles, eps, rng, c2=cfg.c2,
                         iterations=cfg.iterations, mode=cfg.mode, record_log=True)
            name = f"omerm_log_{seed}.csv"
            write_csv(out / name, OMERM_LOG_HEADER, res.log)
            files.append(name)
            policy, n_tasks, runs, iters = res.policy, cfg.num_tasks, 1, res.iterations
        meta.timings[f"omerm/{seed}"] = time.perf_counter() - t0
        meta.seeds[str(seed)] = {"train": [seed, 0], "tasks": [seed, 1, "i"]}
        sub = expected_suboptimality(dist, policy) if enumerable else math.nan
        summary.append((seed, n_tasks, runs, iters, _expected_value(dist, policy), sub))
        name = f"policy_{seed}.json"
        save_json(out / name, policy.probs.tolist())
        files.append(name)
    write_csv(out / "omerm_summary.csv", OMERM_SUMMARY_HEADER, summary)
    return files + ["omerm_summary.csv"]


def run_bandit_ucb(cfg: ExperimentConfig, out: Path, meta: RunMetadata) -> list[str]:
    if cfg.instance:
        dist = build_instance(cfg)
        bandits = as_bandits(dist)
    else:
        bandits = [BanditInstance(np.asarray(cfg.arms, dtype=float))]
        dist = MdpDistribution.uniform(tuple(b.to_mdp() for b in bandits))
    grid = cfg.T_grid or [cfg.T]
    rows = []
    for T in grid:
        for seed in cfg.run_seeds():
            i = int(sample_indices(dist, 1, child_stream(seed, T, 0))[0])
            rec = _guard(f"T={T} seed={seed}", ucb_run, bandits[i], T, child_stream(seed, T, 2))
            rows.append((T, seed, "ucb", pseudo_regret(rec, bandits[i])))
    write_csv(out / "bandit_runs.csv", BANDIT_HEADER, rows)
    return ["bandit_runs.csv"]


def run_bandit_ratio(cfg: ExperimentConfig, out: Path, meta: RunMetadata) -> list[str]:
    dist = build_instance(cfg)
    res = _guard("ratio", asymptotic_ratio_experiment, dist, cfg.T_grid, cfg.run_seeds())
    write_csv(out / "bandit_runs.csv", BANDIT_HEADER, res.runs)
    write_csv(out / "ratio.csv", RATIO_HEADER, res.table)
    meta.notes.append(res.note)
    return ["bandit_runs.csv", "ratio.csv"]


def run_validate(cfg: ExperimentConfig, out: Path, meta: RunMetadata) -> list[str]:
    rows = []
    inst = cfg.instance
    if "file" in inst:
        doc = load_json(Path(cfg.base_dir) / inst["file"])
        docs = doc["mdps"] if "mdps" in doc else [doc]
        base = (Path(cfg.base_dir) / inst["file"]).parent
        for m, d in enumerate(docs):
            if isinstance(d, str):
                d = load_json(base / d)
            try:
                report = validate_mdp(mdp_from_dict(d))
            except (InvalidMdpError, ValueError, KeyError) as e:
                rows.append((m, "construction", "", str(e)))
                continue
            rows += [(m, v.kind, ":".join(map(str, v.location)), v.message) for v in report.violations]
    else:
        for m, mdp in enumerate(build_instance(cfg).support):
            rows += [(m, v.kind, ":".join(map(str, v.location)), v.message) for v in validate_mdp(mdp).violations]
    write_csv(out / "validation.csv", VALIDATION_HEADER, rows)
    if rows:
        raise ValidationFailed(f"{len(rows)} violation(s); see {out / 'validation.csv'}")
    return ["validation.csv"]


RUNNERS = {
    "pce": run_pce,
    "omerm": run_omerm,
    "bandit-ucb": run_bandit_ucb,
    "bandit-ratio": run_bandit_ratio,
    "validate": run_validate,
}


def run(cfg: ExperimentConfig) -> list[str]:
    """Dispatch to the named experiment and write its outputs plus ``metadata.json``.

    Returns the output file names. Metadata is written even when the run fails.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = RunMetadata(cfg.to_dict())
    meta.version = f"{meta.version}+{_git_rev()}"
    t0 = time.perf_counter()
    files: list[str] = []
    try:
        files = RUNNERS[cfg.experiment](cfg, out, meta)
    finally:
        meta.timings["total"] = time.perf_counter() - t0
        (out / "metadata.json").write_text(dumps(dict(meta.to_dict(), files=files)) + "\n")
    return files


__all__ = ["run", "RUNNERS", "RunFailure", "ValidationFailed"]
