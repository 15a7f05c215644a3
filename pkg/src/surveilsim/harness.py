"""Experiment orchestration: replicated trajectories, summaries, and CSV export.

Replicates are independent tasks with RNG streams derived deterministically
from (base seed, strategy name, replicate index), so results are identical
regardless of worker count.  All summary statistics are recomputable from the
exported logs; ``replay`` does exactly that.
"""

from __future__ import annotations

import csv
import hashlib
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_as_dict
from .epidemic import EpidemicState
from .population import build_static_layers, synthesize_population
from .selectors import TrajectoryRecord, run_surveillance_loop

TIME_BUCKET_DAYS = 20

TRAJECTORY_HEADER = ["strategy", "replicate", "t", "cumulative_incidence"]
FINALS_HEADER = ["strategy", "mean", "ci_lo", "ci_hi"]
DESIGNS_HEADER = ["selector", "design", "time_bucket", "frequency"]
SELECTOR_LOG_HEADER = ["strategy", "replicate", "t", "design", "psi", "sigma",
                       "ci_lo", "ci_hi", "window_loss", "chosen_flag"]
LEARNER_LOG_HEADER = ["strategy", "replicate", "t", "candidate",
                      "cumulative_risk", "is_winner"]


def replicate_seed(base_seed: int, strategy: str, rep: int) -> np.random.SeedSequence:
    """Stable per-task stream: independent of strategy order and worker count."""
    return np.random.SeedSequence([base_seed, zlib.crc32(strategy.encode()), rep])


def run_trajectory(cfg: ExperimentConfig, strategy: str, rep: int) -> TrajectoryRecord:
    """One full trajectory: fresh population, network, epidemic, and loop."""
    cfg.validate()
    rng = np.random.default_rng(replicate_seed(cfg.base_seed, strategy, rep))
    pop = synthesize_population(cfg.population, rng)
    layers = build_static_layers(pop, cfg.population, rng)
    state = EpidemicState(pop)
    return run_surveillance_loop(cfg, strategy, pop, layers, state, rng, replicate=rep)


def _task(args: tuple[ExperimentConfig, str, int]) -> TrajectoryRecord:
    return run_trajectory(*args)


@dataclass
class MonteCarloSummary:
    """Aggregates over replicates for each strategy."""

    cfg: ExperimentConfig
    records: list[TrajectoryRecord]
    mean_curves: dict[str, np.ndarray] = field(default_factory=dict)
    finals: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    design_freq: dict[tuple[str, str, int], float] = field(default_factory=dict)

    def __post_init__(self):
        by_strategy: dict[str, list[TrajectoryRecord]] = {}
        for r in self.records:
            by_strategy.setdefault(r.strategy, []).append(r)
        for s, recs in by_strategy.items():
            recs.sort(key=lambda r: r.replicate)
            curves = np.stack([r.cumulative_curve() for r in recs])
            self.mean_curves[s] = curves.mean(axis=0)
            self.finals[s] = mc_interval(curves[:, -1])
            counts: dict[tuple[str, int], int] = {}
            totals: dict[int, int] = {}
            for r in recs:
                for row in r.selector_rows:
                    if not row.chosen:
                        continue
                    b = (row.day - 1) // TIME_BUCKET_DAYS
                    counts[(row.design, b)] = counts.get((row.design, b), 0) + 1
                    totals[b] = totals.get(b, 0) + 1
            for (design, b), c in counts.items():
                self.design_freq[(s, design, b)] = c / totals[b]


def mc_interval(finals: np.ndarray) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval over replicate finals."""
    m = float(finals.mean())
    if len(finals) < 2:
        return m, m, m
    half = 1.96 * float(finals.std(ddof=1)) / np.sqrt(len(finals))
    return m, m - half, m + half


def run_monte_carlo(cfg: ExperimentConfig) -> MonteCarloSummary:
    cfg.validate()
    tasks = [(cfg, s, r) for s in cfg.strategies for r in range(cfg.n_replicates)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(_task, tasks, chunksize=1))
    else:
        records = [_task(t) for t in tasks]
    records.sort(key=lambda r: (cfg.strategies.index(r.strategy), r.replicate))
    return MonteCarloSummary(cfg, records)


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def summarize_and_export(summary: MonteCarloSummary, outdir: str | Path) -> dict[str, str]:
    """Write trajectory/finals/designs/selector-log CSVs plus a run manifest.

    Returns the sha256 content hash per exported file.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = summary.cfg

    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for r in summary.records:
            for d in r.days:
                w.writerow([r.strategy, r.replicate, d.day,
                            _fmt(d.cumulative_infections / r.n)])

    with open(out / "finals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FINALS_HEADER)
        for s in cfg.strategies:
            if s in summary.finals:
                m, lo, hi = summary.finals[s]
                w.writerow([s, _fmt(m), _fmt(lo), _fmt(hi)])

    with open(out / "designs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DESIGNS_HEADER)
        for (s, design, b), f in sorted(summary.design_freq.items()):
            w.writerow([s, design, b, _fmt(f)])

    with open(out / "selector_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SELECTOR_LOG_HEADER)
        for r in summary.records:
            for row in r.selector_rows:
                w.writerow([r.strategy, r.replicate, row.day, row.design,
                            _fmt(row.psi), _fmt(row.sigma), _fmt(row.ci_lo),
                            _fmt(row.ci_hi), _fmt(row.window_loss),
                            int(row.chosen)])

    with open(out / "learner_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEARNER_LOG_HEADER)
        for r in summary.records:
            for row in r.ledger_rows:
                w.writerow([r.strategy, r.replicate, row.day, row.candidate,
                            _fmt(row.cumulative_risk), int(row.is_winner)])

    if any(r.test_log or r.state_log for r in summary.records):
        with open(out / "test_log.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "replicate", "t", "agent", "design", "g", "result"])
            for r in summary.records:
                for t, agent, design, g, result in r.test_log:
                    w.writerow([r.strategy, r.replicate, t, agent, design,
                                _fmt(g), result])
        with open(out / "state_dump.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "replicate", "t", "agent", "compartment",
                        "isolated"])
            for r in summary.records:
                for t, agent, comp, iso in r.state_log:
                    w.writerow([r.strategy, r.replicate, t, agent, comp, iso])

    hashes = {}
    for name in ("trajectory.csv", "finals.csv", "designs.csv",
                 "selector_log.csv", "learner_log.csv"):
        hashes[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()

    manifest = {
        "version": __version__,
        "config": config_as_dict(cfg),
        "replicate_seeds": {
            s: [replicate_seed(cfg.base_seed, s, r).entropy
                for r in range(cfg.n_replicates)]
            for s in cfg.strategies
        },
        "content_hashes": hashes,
        "psi_tau": {s: [r.psi_tau for r in summary.records if r.strategy == s]
                    for s in cfg.strategies},
    }
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, allow_nan=True)
    return hashes


def replay_summary(outdir: str | Path) -> dict[str, Path]:
    """Recompute finals.csv and designs.csv from the raw logs in ``outdir``."""
    out = Path(outdir)
    finals_rows: dict[str, list[float]] = {}
    strategy_order: list[str] = []
    last_t: dict[tuple[str, int], float] = {}
    with open(out / "trajectory.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory.csv columns: {reader.fieldnames}")
        for row in reader:
            key = (row["strategy"], int(row["replicate"]))
            last_t[key] = float(row["cumulative_incidence"])
            if row["strategy"] not in strategy_order:
                strategy_order.append(row["strategy"])
    for (s, _), v in sorted(last_t.items(), key=lambda kv: kv[0][1]):
        finals_rows.setdefault(s, []).append(v)

    finals_path = out / "finals.replay.csv"
    with open(finals_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FINALS_HEADER)
        for s in strategy_order:
            m, lo, hi = mc_interval(np.array(finals_rows[s]))
            w.writerow([s, _fmt(m), _fmt(lo), _fmt(hi)])

    counts: dict[tuple[str, str, int], int] = {}
    totals: dict[tuple[str, int], int] = {}
    with open(out / "selector_log.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SELECTOR_LOG_HEADER:
            raise ValueError(f"unexpected selector_log.csv columns: {reader.fieldnames}")
        for row in reader:
            if row["chosen_flag"] != "1":
                continue
            b = (int(row["t"]) - 1) // TIME_BUCKET_DAYS
            key = (row["strategy"], row["design"], b)
            counts[key] = counts.get(key, 0) + 1
            totals[(row["strategy"], b)] = totals.get((row["strategy"], b), 0) + 1
    designs_path = out / "designs.replay.csv"
    with open(designs_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DESIGNS_HEADER)
        for (s, design, b), c in sorted(counts.items()):
            w.writerow([s, design, b, _fmt(c / totals[(s, b)])])
    return {"finals": finals_path, "designs": designs_path}


def run_sweep(cfg: ExperimentConfig, outdir: str | Path) -> list[dict]:
    """Cross product over budget fractions and risk scales; one subdir per cell."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for bf in cfg.sweep_budget_fracs:
        for rs in cfg.sweep_risk_scales:
            sub = replace(cfg, budget_tests=int(round(bf * cfg.population.n)),
                          risk_scale=rs)
            cell_dir = out / f"k{bf:g}_rs{rs:g}"
            summary = run_monte_carlo(sub)
            summarize_and_export(summary, cell_dir)
            cells.append({"budget_frac": bf, "risk_scale": rs,
                          "path": cell_dir.name})
    with open(out / "sweep_manifest.json", "w") as fh:
        json.dump({"cells": cells}, fh, indent=2, sort_keys=True)
    return cells


def validate_battery(threads: int = 1) -> list[tuple[str, bool, str]]:
    """Fast self-checks of the core invariants; returns (name, ok, detail)."""
    from .config import PopulationConfig

    checks: list[tuple[str, bool, str]] = []
    small = ExperimentConfig(
        population=PopulationConfig(n=300, rng_seed=7), tau=20, budget_tests=12,
        strategies=("no_testing", "random", "osl_tmle_ci"), n_replicates=2,
        base_seed=99, threads=threads)

    summary = run_monte_carlo(small)
    again = run_monte_carlo(small)
    same = all(np.array_equal(a.cumulative_curve(), b.cumulative_curve())
               for a, b in zip(summary.records, again.records))
    checks.append(("determinism", same, "re-run produced identical curves"))

    ok_budget = all(d.tests <= small.budget_tests for r in summary.records
                    for d in r.days)
    checks.append(("budget_audit", ok_budget, "daily tests never exceed k"))

    ok_conserve = all(int(d.counts.sum()) == small.population.n
                      for r in summary.records for d in r.days)
    checks.append(("compartment_conservation", ok_conserve, "counts sum to n"))

    ok_mono = all(all(r.days[i].cumulative_infections <= r.days[i + 1].cumulative_infections
                      for i in range(len(r.days) - 1)) for r in summary.records)
    checks.append(("incidence_monotone", ok_mono, "cumulative incidence non-decreasing"))

    eif = max(r.eif_abs_max for r in summary.records)
    checks.append(("eif_solved", eif < 1e-8, f"max |EIF mean| = {eif:.2e}"))

    ens_cfg = replace(small, use_ensemble=True, strategies=("osl_tmle",),
                      n_replicates=1)
    rec = run_trajectory(ens_cfg, "osl_tmle", 0)
    gap = max(rec.ensemble_gaps) if rec.ensemble_gaps else 0.0
    checks.append(("ensemble_dominance", gap <= 1e-12,
                   f"ensemble risk - winner risk = {gap:.2e}"))
    return checks
