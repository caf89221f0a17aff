"""Per-tree terms, Picard iterates, and the depth-class identity."""

from fractions import Fraction

import numpy as np
import pytest

from nstrees.series import (
    Evaluator,
    class_sum,
    picard,
    report_summary_rows,
    report_to_json,
    residual,
    series_sum,
    tree_sum,
)
from nstrees.spectral import (
    Field,
    Grid,
    Trajectory,
    duhamel_bilinear,
    make_initial,
    semigroup_trajectory,
)
from nstrees.trees import TreeClassParams, enumerate_depth_class, enumerate_trees, graft, leaf


@pytest.fixture(scope="module")
def grid():
    return Grid(2.0, 7, time_horizon=1.0, time_nodes=9, alpha=2.0)


@pytest.fixture(scope="module")
def h(grid):
    return make_initial(grid, "random_divfree", 0.1, seed=7)


@pytest.fixture(scope="module")
def ev(grid, h):
    return Evaluator(grid, h)


# ---------------------------------------------------------------------------
# phi basics
# ---------------------------------------------------------------------------

def test_phi_of_zero_datum(grid):
    ev = Evaluator(grid, Field.zero(grid))
    assert ev.phi(leaf()).sup_norm() == 0.0
    assert ev.phi(graft([leaf(), leaf()])).sup_norm() == 0.0


def test_phi_vanishes_at_time_zero(ev):
    out = ev.phi(leaf())
    assert np.abs(out.frames[0]).max() == 0.0


def test_phi_memo_transparent(grid, h):
    tree = graft([graft([leaf()]), graft([leaf(), leaf()])])
    with_memo = Evaluator(grid, h, memoize=True).phi(tree)
    without = Evaluator(grid, h, memoize=False).phi(tree)
    assert np.array_equal(with_memo.frames, without.frames)


def test_phi_homogeneity_exact_for_doubling(grid, h, ev):
    groups = enumerate_trees(4)
    doubled = Evaluator(grid, 2.0 * h)
    for n in groups:
        for tree in groups[n]:
            lhs = doubled.phi(tree)
            rhs = (2.0 ** tree.homogeneity) * ev.phi(tree)
            scale = max(np.abs(rhs.frames).max(), 1e-300)
            assert np.abs(lhs.frames - rhs.frames).max() <= 1e-12 * scale


def test_phi_homogeneity_halving(grid, h, ev):
    halved = Evaluator(grid, 0.5 * h)
    tree = graft([leaf(), leaf()])
    lhs = halved.phi(tree)
    rhs = (0.5 ** tree.homogeneity) * ev.phi(tree)
    scale = np.abs(rhs.frames).max()
    assert np.abs(lhs.frames - rhs.frames).max() <= 1e-12 * scale


# ---------------------------------------------------------------------------
# Picard iterates and the depth-class identity
# ---------------------------------------------------------------------------

def test_picard_stage_zero_is_free_evolution(grid, h):
    u0 = picard(grid, h, 0)
    assert np.array_equal(u0.frames, semigroup_trajectory(h).frames)


def test_picard_of_zero_datum(grid):
    z = Field.zero(grid)
    for n in (0, 2):
        assert picard(grid, z, n).sup_norm() == 0.0


def test_picard_initial_value(grid, h):
    u3 = picard(grid, h, 3)
    assert np.abs(u3.frames[0] - h.values).max() <= 1e-14 * h.sup_norm()


def test_tree_sum_empty_class_is_stage_zero(grid, h, ev):
    lhs = tree_sum(grid, h, -1, evaluator=ev)
    assert np.array_equal(lhs.frames, picard(grid, h, 0).frames)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tree_sum_matches_picard(grid, h, ev, n):
    lhs = tree_sum(grid, h, n - 1, evaluator=ev)
    rhs = picard(grid, h, n)
    rel = (lhs - rhs).sup_norm() / rhs.sup_norm()
    assert rel <= 1e-10


def test_picard_contracts_at_small_amplitude(grid):
    hs = make_initial(grid, "random_divfree", 0.01, seed=13)
    increments = []
    prev = picard(grid, hs, 0)
    for n in range(1, 5):
        cur = picard(grid, hs, n)
        increments.append((cur - prev).sup_norm())
        prev = cur
    ratios = [b / a for a, b in zip(increments, increments[1:]) if a > 0]
    assert all(r < 0.5 for r in ratios)


# ---------------------------------------------------------------------------
# mutation sensitivity: the identity test must catch bookkeeping bugs
# ---------------------------------------------------------------------------

def _phi_mutated(ev, tree, unary_factor=2.0, binary_factor=2.0):
    """The per-tree recursion with tweakable prefactors (test-local)."""
    kids = tree.children
    if not kids:
        return duhamel_bilinear(ev.base, ev.base)
    if len(kids) == 1:
        return unary_factor * duhamel_bilinear(
            ev.base, _phi_mutated(ev, kids[0], unary_factor, binary_factor)
        )
    return binary_factor * duhamel_bilinear(
        _phi_mutated(ev, kids[0], unary_factor, binary_factor),
        _phi_mutated(ev, kids[1], unary_factor, binary_factor),
    )


def _tree_sum_mutated(ev, depth_cap, use_sigma=True, unary_factor=2.0):
    total = ev.base
    for tree in enumerate_depth_class(depth_cap):
        weight = 1.0 / tree.symmetry if use_sigma else 1.0
        total = total + weight * _phi_mutated(ev, tree, unary_factor=unary_factor)
    return total


@pytest.mark.parametrize(
    "mutation", [{"unary_factor": 1.0}, {"use_sigma": False}]
)
def test_identity_detects_mutations(grid, mutation):
    # the break size scales like the datum amplitude to the tree order,
    # so probe well inside the nonlinear regime (the clean identity is
    # amplitude-independent); the acceptance suite pins the full-size run
    h_big = make_initial(grid, "random_divfree", 2.0, seed=7)
    ev_big = Evaluator(grid, h_big)
    for n in (2, 3):
        lhs = _tree_sum_mutated(ev_big, n - 1, **mutation)
        rhs = picard(grid, h_big, n)
        rel = (lhs - rhs).sup_norm() / rhs.sup_norm()
        assert rel > 1e-4
    # stage 1 has no unary vertex and no repeated branch: both mutations
    # leave it intact
    lhs1 = _tree_sum_mutated(ev_big, 0, **mutation)
    rel1 = (lhs1 - picard(grid, h_big, 1)).sup_norm() / picard(grid, h_big, 1).sup_norm()
    assert rel1 <= 1e-12


# ---------------------------------------------------------------------------
# residual
# ---------------------------------------------------------------------------

def test_residual_of_picard_is_next_increment(grid, h):
    u2 = picard(grid, h, 2)
    u3 = picard(grid, h, 3)
    assert residual(u2, h) == pytest.approx((u3 - u2).sup_norm(), rel=1e-12)


def test_residual_of_zero(grid):
    z = Field.zero(grid)
    assert residual(Trajectory.zero(grid), z) == 0.0


# ---------------------------------------------------------------------------
# series and class reports
# ---------------------------------------------------------------------------

def test_series_sum_size_one(grid, h, ev):
    report = series_sum(grid, h, 1, evaluator=ev)
    assert report.counts == {1: 1}
    expected = ev.base + 1.0 * ev.phi(leaf())
    assert np.array_equal(report.partial.frames, expected.frames)
    assert report.terms[0].weight == Fraction(1, 1)


def test_series_report_aggregates_are_weighted_sums(grid, h, ev):
    report = series_sum(grid, h, 4, evaluator=ev)
    for n, profile in report.per_size.items():
        manual = np.zeros_like(profile)
        for term in report.terms:
            if term.tree.size == n:
                manual += float(term.weight) * term.sup_profile
        assert np.allclose(profile, manual, rtol=1e-13)
    assert report.counts == {1: 1, 2: 1, 3: 2, 4: 3}


def test_series_report_zero_datum(grid):
    report = series_sum(grid, Field.zero(grid), 2)
    assert report.regime == "zero"
    assert report.tail_bound == 0.0
    assert all(t.sup_profile.max() == 0.0 for t in report.terms)


def test_series_report_regime_flag(grid, h, ev):
    report = series_sum(grid, h, 3, evaluator=ev)
    assert report.regime in {"global", "local", "divergent-majorant"}
    assert report.envelope_fit is not None
    assert report.envelope_fit.a_max > 0


def test_class_sum_simple_counts(grid, h, ev):
    report = class_sum(grid, h, 5, "simple", evaluator=ev)
    assert all(report.counts[n] == 1 for n in range(1, 6))


def test_class_sum_short_needs_params(grid, h):
    with pytest.raises(ValueError):
        class_sum(grid, h, 3, "short")


def test_class_sum_short_members(grid, h, ev):
    params = TreeClassParams(ratio=0.45, tolerance=0.06)
    report = class_sum(grid, h, 7, "short", params, evaluator=ev)
    # balanced binary trees only: sizes 1, 3, 7
    assert set(report.counts) == {1, 3, 7}


def test_aggregate_rescaling_matches_homogeneity(grid, h, ev):
    report = series_sum(grid, h, 3, evaluator=ev)
    base = report.aggregate_at(3)
    scaled = report.aggregate_at(3, amplitude=2.0 * report.h_norm)
    assert np.allclose(scaled, base * 2.0**4, rtol=1e-13)


def test_report_export_round_trip(grid, h, ev):
    report = series_sum(grid, h, 3, evaluator=ev)
    payload = report_to_json(report)
    assert payload["size_cap"] == 3
    assert len(payload["terms"]) == sum(report.counts.values())
    rows = report_summary_rows(report)
    assert rows[0][0] == "size"
    assert len(rows) == 1 + len(report.per_size)
