"""The tree-indexed series: per-tree terms, Picard iterates, partial sums.

The per-tree term phi(tree; h) is defined by the recursion

    phi(leaf)      = D(S h, S h)
    phi([t])       = 2 D(S h, phi(t))
    phi([t1 t2])   = 2 D(phi(t1), phi(t2))

where D is the Duhamel-convolved symmetrized bilinear operator and S h
the free evolution of the initial datum.  Evaluation is bottom-up with
memoization keyed on the canonical tree encoding; with the 1/sigma
weights the sum over the depth-(n-1) class reproduces the n-th Picard
iterate exactly (same discrete operators on both sides), which is the
module's central correctness test.

phi(tree; lambda h) = lambda^theta(tree) phi(tree; h) holds exactly in
floating point for power-of-two lambda, and to roundoff otherwise; the
reports exploit this to sweep amplitudes without re-evaluation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from nstrees import bounds as bounds_mod
from nstrees import trees as trees_mod
from nstrees.spectral import (
    Field,
    Grid,
    Trajectory,
    duhamel_bilinear,
    semigroup_trajectory,
)


class Evaluator:
    """Memoized per-tree term evaluation for one (grid, datum) session."""

    def __init__(self, grid: Grid, datum: Field, memoize: bool = True):
        if datum.grid is not grid and datum.grid != grid:
            raise ValueError("datum lives on a different grid")
        self.grid = grid
        self.datum = datum
        self.memoize = memoize
        self.base = semigroup_trajectory(datum)
        self._zero_datum = datum.sup_norm() == 0.0
        self._memo: dict[str, Trajectory] = {}

    def phi(self, tree: trees_mod.Tree) -> Trajectory:
        if self._zero_datum:
            return Trajectory.zero(self.grid)
        if self.memoize and tree.encoding in self._memo:
            return self._memo[tree.encoding]
        kids = tree.children
        if not kids:
            value = duhamel_bilinear(self.base, self.base)
        elif len(kids) == 1:
            value = 2.0 * duhamel_bilinear(self.base, self.phi(kids[0]))
        else:
            value = 2.0 * duhamel_bilinear(self.phi(kids[0]), self.phi(kids[1]))
        if self.memoize:
            self._memo[tree.encoding] = value
        return value

    def clear(self) -> None:
        self._memo.clear()


def picard(grid: Grid, datum: Field, n: int) -> Trajectory:
    """n-th Picard iterate; stage 0 is the free evolution."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    base = semigroup_trajectory(datum)
    u = base
    for _ in range(n):
        u = base + duhamel_bilinear(u, u)
    return u


def tree_sum(
    grid: Grid,
    datum: Field,
    depth_cap: int,
    evaluator: Evaluator | None = None,
) -> Trajectory:
    """Free evolution plus the weighted sum over the depth class.

    depth_cap = -1 sums over the empty class (the 0-th Picard stage);
    depth_cap = n - 1 reproduces the n-th Picard iterate.
    """
    ev = evaluator if evaluator is not None else Evaluator(grid, datum)
    total = ev.base
    for tree in trees_mod.enumerate_depth_class(depth_cap):
        total = total + (1.0 / tree.symmetry) * ev.phi(tree)
    return total


@dataclass
class SeriesTerm:
    """One tree's contribution: the raw term, its exact weight, and
    reductions used by the bound checks."""

    tree: trees_mod.Tree
    weight: Fraction
    trajectory: Trajectory | None
    sup_profile: np.ndarray           # per-time sup_k |phi_t|
    envelope_profile: np.ndarray      # per-time sup_k |phi_t| e^{+|k|^2 t/(n+1)}


@dataclass
class SeriesReport:
    """Partial sum over all trees up to a size cap, with diagnostics."""

    size_cap: int
    h_norm: float
    alpha: float
    times: np.ndarray
    terms: list[SeriesTerm]
    partial: Trajectory | None
    per_size: dict[int, np.ndarray]   # weighted aggregate sup profiles
    counts: dict[int, int]
    envelope_fit: bounds_mod.EnvelopeFit | None
    d_fit: float
    tail_bound: float
    regime: str
    warnings: list[str] = field(default_factory=list)
    class_filter: str = "all"

    def aggregate_at(self, size: int, amplitude: float | None = None) -> np.ndarray:
        """Per-size aggregate profile, optionally rescaled to another
        amplitude via exact theta-homogeneity (theta = size + 1)."""
        profile = self.per_size[size]
        if amplitude is None or self.h_norm == 0.0:
            return profile
        return profile * (amplitude / self.h_norm) ** (size + 1)


def _term_for(ev: Evaluator, tree: trees_mod.Tree, keep: bool) -> SeriesTerm:
    traj = ev.phi(tree)
    mags = np.sqrt((np.abs(traj.frames) ** 2).sum(axis=2))
    sup_profile = mags.max(axis=1)
    boost = np.exp(
        np.outer(ev.grid.times, ev.grid.ksq) / (tree.size + 1)
    )
    envelope_profile = (mags * boost).max(axis=1)
    return SeriesTerm(
        tree=tree,
        weight=Fraction(1, tree.symmetry),
        trajectory=traj if keep else None,
        sup_profile=sup_profile,
        envelope_profile=envelope_profile,
    )


def _assemble_report(
    grid: Grid,
    datum: Field,
    size_cap: int,
    members: list[trees_mod.Tree],
    *,
    evaluator: Evaluator | None,
    keep_trajectories: bool,
    class_filter: str,
) -> SeriesReport:
    ev = evaluator if evaluator is not None else Evaluator(grid, datum)
    h_norm = datum.sup_norm()
    terms: list[SeriesTerm] = []
    per_size: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    partial = ev.base if keep_trajectories else None
    for tree in members:
        term = _term_for(ev, tree, keep_trajectories)
        terms.append(term)
        w = float(term.weight)
        agg = per_size.setdefault(tree.size, np.zeros(grid.time_nodes))
        agg += w * term.sup_profile
        counts[tree.size] = counts.get(tree.size, 0) + 1
        if keep_trajectories and term.trajectory is not None:
            partial = partial + w * term.trajectory

    warnings: list[str] = []
    envelope_fit = None
    d_fit = bounds_mod.census_growth_fit(trees_mod.census(min(size_cap, 12)))
    if h_norm == 0.0:
        regime = "zero"
        tail = 0.0
    else:
        records = []
        eps = grid.eps
        for term in terms:
            n = term.tree.size
            with np.errstate(divide="ignore"):
                tpow = np.where(grid.times > 0, grid.times ** (n * eps / 2.0), np.inf)
            normalized = np.where(
                grid.times > 0,
                term.envelope_profile / tpow / h_norm**term.tree.homogeneity,
                0.0,
            )
            peak = float(normalized.max())
            records.append((n, term.tree.factorial, peak))
        try:
            envelope_fit = bounds_mod.envelope_constant_fit(records, eps)
        except ValueError:
            warnings.append("all terms vanished; envelope fit skipped")
        b_fit = envelope_fit.a_max if envelope_fit else 1.0
        params = bounds_mod.BoundParams(
            alpha=grid.alpha, a_fit=b_fit, d_fit=d_fit, h_norm=h_norm
        )
        tail = bounds_mod.series_tail_bound(size_cap, grid.time_horizon, params)
        ratio = bounds_mod.geometric_ratio(params, grid.time_horizon)
        if ratio >= 1.0:
            regime = "divergent-majorant"
            warnings.append(
                f"geometric ratio {ratio:.3g} >= 1 at the horizon: outside the "
                "convergence regime, the tail bound is +inf"
            )
        elif grid.eps == 0.0:
            critical = bounds_mod.convergence_threshold(params, "critical")
            regime = "global" if h_norm < critical else "local"
        else:
            regime = "local"
    return SeriesReport(
        size_cap=size_cap,
        h_norm=h_norm,
        alpha=grid.alpha,
        times=grid.times.copy(),
        terms=terms,
        partial=partial,
        per_size=per_size,
        counts=counts,
        envelope_fit=envelope_fit,
        d_fit=d_fit,
        tail_bound=tail,
        regime=regime,
        warnings=warnings,
        class_filter=class_filter,
    )


def series_sum(
    grid: Grid,
    datum: Field,
    size_cap: int,
    *,
    evaluator: Evaluator | None = None,
    keep_trajectories: bool = True,
) -> SeriesReport:
    """Partial sum over every tree with size <= size_cap."""
    groups = trees_mod.enumerate_trees(size_cap)
    members = [t for n in sorted(groups) for t in groups[n]]
    return _assemble_report(
        grid,
        datum,
        size_cap,
        members,
        evaluator=evaluator,
        keep_trajectories=keep_trajectories,
        class_filter="all",
    )


def class_sum(
    grid: Grid,
    datum: Field,
    size_cap: int,
    class_filter: str = "simple",
    params: trees_mod.TreeClassParams | None = None,
    *,
    evaluator: Evaluator | None = None,
    keep_trajectories: bool = True,
) -> SeriesReport:
    """Partial sum restricted to the simple or short class."""
    groups = trees_mod.enumerate_trees(size_cap)
    if class_filter == "simple":
        members = [t for n in sorted(groups) for t in groups[n] if t.simple]
    elif class_filter == "short":
        if params is None:
            raise ValueError("the short class needs TreeClassParams")
        members = [
            t
            for n in sorted(groups)
            for t in groups[n]
            if trees_mod.is_short(t, params)
        ]
    else:
        raise ValueError(f"unknown class filter {class_filter!r}")
    return _assemble_report(
        grid,
        datum,
        size_cap,
        members,
        evaluator=evaluator,
        keep_trajectories=keep_trajectories,
        class_filter=class_filter,
    )


def residual(u: Trajectory, datum: Field) -> float:
    """sup over time and grid nodes of |u - S h - D(u, u)|: the defect of
    the mild fixed-point equation."""
    base = semigroup_trajectory(datum)
    rhs = base + duhamel_bilinear(u, u)
    return (u - rhs).sup_norm()


# ---------------------------------------------------------------------------
# report export
# ---------------------------------------------------------------------------

def report_to_json(report: SeriesReport) -> dict:
    return {
        "size_cap": report.size_cap,
        "class_filter": report.class_filter,
        "h_norm": report.h_norm,
        "alpha": report.alpha,
        "regime": report.regime,
        "tail_bound": report.tail_bound,
        "d_fit": report.d_fit,
        "envelope_fit": (
            {
                "a_max": report.envelope_fit.a_max,
                "a_lsq": report.envelope_fit.a_lsq,
                "residuals": report.envelope_fit.residuals,
            }
            if report.envelope_fit
            else None
        ),
        "warnings": report.warnings,
        "times": report.times.tolist(),
        "terms": [
            {
                "encoding": term.tree.encoding,
                "size": term.tree.size,
                "gamma": term.tree.factorial,
                "sigma": term.tree.symmetry,
                "theta": term.tree.homogeneity,
                "weight": str(term.weight),
                "sup_profile": term.sup_profile.tolist(),
            }
            for term in report.terms
        ],
    }


def report_summary_rows(report: SeriesReport) -> list[list]:
    rows = [["size", "count", "aggregate_sup", "tail_bound"]]
    for n in sorted(report.per_size):
        rows.append(
            [
                n,
                report.counts[n],
                float(report.per_size[n].max()),
                report.tail_bound if n == report.size_cap else "",
            ]
        )
    return rows


def save_report_json(report: SeriesReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_json(report), fh, sort_keys=True, indent=1)


def save_report_csv(report: SeriesReport, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(report_summary_rows(report))
