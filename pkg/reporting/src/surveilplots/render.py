"""Render simulation CSV exports into the three standard figure styles.

Inputs are the exact CSV schemas written by the simulation harness:

* ``trajectory.csv``: strategy, replicate, t, cumulative_incidence
* ``finals.csv``: strategy, mean, ci_lo, ci_hi
* ``designs.csv``: selector, design, time_bucket, frequency

A directory holding ``sweep_manifest.json`` (cells with budget_frac and
risk_scale) renders as one panel per cell of the chosen facet variable;
a plain run directory renders a single panel.  This package never links
against the simulation code: the CSVs are the whole interface.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

TRAJECTORY_COLUMNS = ["strategy", "replicate", "t", "cumulative_incidence"]
FINALS_COLUMNS = ["strategy", "mean", "ci_lo", "ci_hi"]
DESIGNS_COLUMNS = ["selector", "design", "time_bucket", "frequency"]

# Stable ordering and styling; benchmarks are visually set apart.
STRATEGY_ORDER = ("perfect", "osl_loss", "osl_tmle", "osl_tmle_ci", "glm_risk",
                  "risk_based", "symptomatic_contact", "contact_tracing",
                  "symptomatic", "random", "no_testing")
BENCHMARKS = {"perfect": ("black", "--"), "no_testing": ("dimgray", ":")}
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#17becf", "#bcbd22")


class SchemaError(ValueError):
    """An input CSV does not match the documented harness schema."""


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: which CSVs, which figure kind, how to facet."""

    in_dir: str | Path
    kind: str                      # trajectory | finals | design_freq
    out_path: str | Path
    facet: str = "k"               # k | risk_scale (sweep inputs only)
    strategies: tuple[str, ...] = ()  # optional subset filter
    image_format: str = "png"


def _read_csv(path: Path, expected: list[str]) -> list[dict]:
    if not path.is_file():
        raise SchemaError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        got = reader.fieldnames or []
        for col in expected:
            if col not in got:
                raise SchemaError(f"{path.name}: missing column '{col}' (found {got})")
        for col in got:
            if col not in expected:
                raise SchemaError(f"{path.name}: unexpected column '{col}'")
        return list(reader)


def _panels(spec: FigureSpec) -> list[tuple[str, Path]]:
    """(label, run directory) per panel, resolved from a sweep or single run."""
    root = Path(spec.in_dir)
    manifest = root / "sweep_manifest.json"
    if not manifest.is_file():
        return [("", root)]
    cells = json.loads(manifest.read_text())["cells"]
    if spec.facet == "k":
        var, other = "budget_frac", "risk_scale"
    elif spec.facet == "risk_scale":
        var, other = "risk_scale", "budget_frac"
    else:
        raise SchemaError(f"unknown facet variable '{spec.facet}'")
    other_vals = sorted({c[other] for c in cells})
    if len(other_vals) > 1:
        # hold the non-facet variable at its first value
        cells = [c for c in cells if c[other] == other_vals[0]]
    out = []
    for c in sorted(cells, key=lambda c: c[var]):
        label = f"k={c[var]:.0%}" if var == "budget_frac" else f"risk scale {c[var]:g}"
        out.append((label, root / c["path"]))
    return out


def _strategy_style(name: str, fallback_idx: int):
    if name in BENCHMARKS:
        color, ls = BENCHMARKS[name]
    else:
        color, ls = PALETTE[fallback_idx % len(PALETTE)], "-"
    return color, ls


def _ordered_strategies(found: set[str], subset: tuple[str, ...]) -> list[str]:
    if subset:
        missing_all = [s for s in subset if s in found]
        if not missing_all:
            raise SchemaError(f"strategy filter {list(subset)} matches nothing "
                              f"(available: {sorted(found)})")
        found = set(missing_all)
    ordered = [s for s in STRATEGY_ORDER if s in found]
    ordered += sorted(found - set(ordered))
    return ordered


def build_figure(spec: FigureSpec) -> plt.Figure:
    """Build the matplotlib figure for a spec (no file output)."""
    panels = _panels(spec)
    n_panels = len(panels)
    if spec.kind == "trajectory":
        fig, axes = plt.subplots(1, n_panels, figsize=(4.2 * n_panels, 3.6),
                                 sharey=True, squeeze=False)
        for ax, (label, run_dir) in zip(axes[0], panels):
            rows = _read_csv(run_dir / "trajectory.csv", TRAJECTORY_COLUMNS)
            by_strategy: dict[str, dict[int, list[float]]] = {}
            for r in rows:
                t = int(r["t"])
                by_strategy.setdefault(r["strategy"], {}).setdefault(t, []).append(
                    float(r["cumulative_incidence"]))
            names = _ordered_strategies(set(by_strategy), spec.strategies)
            for i, s in enumerate(names):
                ts = sorted(by_strategy[s])
                mean = [float(np.mean(by_strategy[s][t])) for t in ts]
                color, ls = _strategy_style(s, i)
                ax.plot(ts, mean, label=s, color=color, linestyle=ls, lw=1.6)
            ax.set_title(label or "cumulative incidence")
            ax.set_xlabel("day")
        axes[0][0].set_ylabel("mean cumulative incidence")
        axes[0][-1].legend(fontsize=7, frameon=False)
    elif spec.kind == "finals":
        fig, axes = plt.subplots(1, n_panels, figsize=(3.8 * n_panels, 3.6),
                                 sharey=True, squeeze=False)
        for ax, (label, run_dir) in zip(axes[0], panels):
            rows = _read_csv(run_dir / "finals.csv", FINALS_COLUMNS)
            data = {r["strategy"]: (float(r["mean"]), float(r["ci_lo"]),
                                    float(r["ci_hi"])) for r in rows}
            names = _ordered_strategies(set(data), spec.strategies)
            xs = np.arange(len(names))
            for i, s in enumerate(names):
                m, lo, hi = data[s]
                color, _ = _strategy_style(s, i)
                ax.bar(xs[i], m, color=color,
                       yerr=[[m - lo], [hi - m]], capsize=3)
            ax.set_xticks(xs)
            ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
            ax.set_title(label or "final cumulative incidence")
        axes[0][0].set_ylabel("final cumulative incidence")
    elif spec.kind == "design_freq":
        fig, axes = plt.subplots(1, n_panels, figsize=(4.2 * n_panels, 3.6),
                                 sharey=True, squeeze=False)
        for ax, (label, run_dir) in zip(axes[0], panels):
            rows = _read_csv(run_dir / "designs.csv", DESIGNS_COLUMNS)
            if spec.strategies:
                rows = [r for r in rows if r["selector"] in spec.strategies]
                if not rows:
                    raise SchemaError(f"strategy filter {list(spec.strategies)} "
                                      "matches no selector in designs.csv")
            buckets = sorted({int(r["time_bucket"]) for r in rows})
            designs = sorted({r["design"] for r in rows})
            freq = {(r["design"], int(r["time_bucket"])): float(r["frequency"])
                    for r in rows}
            bottom = np.zeros(len(buckets))
            for i, d in enumerate(designs):
                vals = np.array([freq.get((d, b), 0.0) for b in buckets])
                ax.bar(range(len(buckets)), vals, bottom=bottom, label=d,
                       color=PALETTE[i % len(PALETTE)])
                bottom += vals
            ax.set_xticks(range(len(buckets)))
            ax.set_xticklabels([f"{b * 20 + 1}-{(b + 1) * 20}" for b in buckets],
                               fontsize=7)
            ax.set_xlabel("days")
            ax.set_title(label or "selected designs")
        axes[0][0].set_ylabel("selection frequency")
        axes[0][-1].legend(fontsize=6, frameon=False)
    else:
        raise SchemaError(f"unknown figure kind '{spec.kind}'")
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> Path:
    """Render the figure to spec.out_path and return the path."""
    fig = build_figure(spec)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=spec.image_format, dpi=150, metadata={})
    plt.close(fig)
    return out
