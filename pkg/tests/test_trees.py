"""Combinatorics of the canonical rooted-tree module."""

import io
import math
from itertools import product

import pytest

from nstrees.trees import (
    Tree,
    TreeClassParams,
    TreeParseError,
    census,
    classify,
    decode,
    encode,
    enumerate_depth_class,
    enumerate_trees,
    gamma_lower_envelope,
    graft,
    is_short,
    leaf,
    path_tree,
    perfect_tree,
    stats,
    trees_to_csv,
)

# counts of unordered rooted trees with <= 2 children per vertex,
# frozen from the brute-force oracle below
EXPECTED_COUNTS = [1, 1, 2, 3, 6, 11, 23, 46, 98, 207, 451, 983]

MAX_ORACLE_SIZE = 12


# ---------------------------------------------------------------------------
# independent oracle: generate all *ordered* <=2-ary trees, canonicalize by
# sorted nested tuples (a representation unrelated to the library's), dedupe
# ---------------------------------------------------------------------------

def _ordered_trees(n):
    if n == 1:
        return [("leaf",)]
    out = []
    for sub in _ordered_trees(n - 1):
        out.append(("node", sub))
    for n1 in range(1, n - 1):
        n2 = n - 1 - n1
        for a, b in product(_ordered_trees(n1), _ordered_trees(n2)):
            out.append(("node", a, b))
    return out


def _canon(t):
    if t == ("leaf",):
        return ("leaf",)
    return ("node",) + tuple(sorted((_canon(c) for c in t[1:]), key=repr))


def _oracle_census(max_size):
    counts = []
    for n in range(1, max_size + 1):
        counts.append(len({_canon(t) for t in _ordered_trees(n)}))
    return counts


@pytest.fixture(scope="module")
def groups():
    return enumerate_trees(MAX_ORACLE_SIZE)


@pytest.fixture(scope="module")
def all_trees(groups):
    return [t for n in sorted(groups) for t in groups[n]]


# ---------------------------------------------------------------------------
# enumeration / census
# ---------------------------------------------------------------------------

def test_census_matches_brute_force_oracle(groups):
    oracle = _oracle_census(9)  # oracle is exponential; 9 is plenty to anchor
    assert [len(groups[n]) for n in range(1, 10)] == oracle
    assert oracle == EXPECTED_COUNTS[:9]


def test_census_full_range(groups):
    assert [len(groups[n]) for n in range(1, MAX_ORACLE_SIZE + 1)] == EXPECTED_COUNTS


def test_census_recursion_inequality(groups):
    z = {n: len(groups[n]) for n in groups}
    for n in range(1, MAX_ORACLE_SIZE):
        pair_sum = sum(
            z[n1] * z[n - n1] for n1 in range(1, n) if n - n1 in z
        )
        assert z[n + 1] <= z[n] + pair_sum


def test_enumeration_has_no_duplicates(all_trees):
    encodings = [t.encoding for t in all_trees]
    assert len(encodings) == len(set(encodings))


def test_enumeration_ceiling_guard():
    with pytest.raises(ValueError, match="ceiling"):
        enumerate_trees(17)
    # explicit opt-in works
    assert len(enumerate_trees(17, ceiling=17)[17]) > 0


def test_census_helper():
    assert census(7) == [1, 1, 2, 3, 6, 11, 23]


# ---------------------------------------------------------------------------
# construction and canonical form
# ---------------------------------------------------------------------------

def test_leaf_basics():
    t = leaf()
    assert t.size == 1
    assert t.depth == 0
    assert t.factorial == 1
    assert t.homogeneity == 2
    assert t.children == ()


def test_graft_unordered_equality():
    a = graft([leaf(), graft([leaf()])])
    b = graft([graft([leaf()]), leaf()])
    assert a == b
    assert a.encoding == b.encoding


def test_graft_rejects_bad_arity():
    with pytest.raises(ValueError):
        graft([])
    with pytest.raises(ValueError):
        graft([leaf(), leaf(), leaf()])
    with pytest.raises(ValueError):
        Tree((leaf(), leaf(), leaf()))


def test_graft_size_additivity(groups):
    for n1 in range(1, 5):
        for n2 in range(1, 5):
            for a in groups[n1]:
                for b in groups[n2]:
                    assert graft([a, b]).size == 1 + a.size + b.size


def test_canonicalization_idempotent(all_trees):
    for t in all_trees:
        assert Tree(t.children) == t
        assert Tree(tuple(reversed(t.children))) == t


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def test_stats_cherry():
    t = graft([leaf(), leaf()])
    s = stats(t)
    assert (s.size, s.factorial, s.symmetry, s.homogeneity) == (3, 3, 2, 4)
    assert s.depth == 1


def test_stats_path3():
    t = graft([graft([leaf()])])
    s = stats(t)
    assert (s.size, s.factorial, s.symmetry, s.homogeneity) == (3, 6, 1, 4)
    assert s.depth == 2


def test_stats_perfect7():
    t = perfect_tree(3)
    s = stats(t)
    assert s.size == 7
    assert s.factorial == 63  # 7 * 3 * 3; note 63 < 2**6
    assert s.symmetry == 8
    assert s.homogeneity == 8


def test_factorial_recursion(groups):
    for n1 in range(1, 6):
        for n2 in range(n1, 6):
            for a in groups[n1]:
                for b in groups[n2]:
                    t = graft([a, b])
                    assert t.factorial == (1 + a.size + b.size) * a.factorial * b.factorial


def test_symmetry_identities(all_trees):
    for t in all_trees:
        if t.size <= 7:
            doubled = graft([t, t])
            assert doubled.symmetry == 2 * t.symmetry**2
        unary = graft([t])
        assert unary.symmetry == t.symmetry


def test_homogeneity_bounds_and_value(all_trees):
    for t in all_trees:
        assert (t.size + 1) / 2 <= t.homogeneity <= t.size + 1
        # under the defining recursion the order is exactly size + 1
        assert t.homogeneity == t.size + 1


def test_simple_tree_factorial_is_plain_factorial():
    for n in range(1, 13):
        assert path_tree(n).factorial == math.factorial(n)


def test_exactly_one_simple_tree_per_size(groups):
    for n in groups:
        simple = [t for t in groups[n] if t.simple]
        assert len(simple) == 1
        assert simple[0] == path_tree(n)


def test_gamma_lower_envelope_vs_power_of_two():
    env = gamma_lower_envelope(MAX_ORACLE_SIZE)
    # independent DP oracle for the per-size minimum
    m = {1: 1}
    for n in range(2, MAX_ORACLE_SIZE + 1):
        best = m[n - 1]
        for n1 in range(1, (n - 1) // 2 + 1):
            best = min(best, m[n1] * m[n - 1 - n1])
        m[n] = n * best
    for n in range(1, MAX_ORACLE_SIZE + 1):
        assert env[n][0] == m[n]
    # the power-of-two floor fails at sizes 3, 5, 7 and nowhere else here
    violations = {n for n in range(1, MAX_ORACLE_SIZE + 1) if m[n] < 2 ** (n - 1)}
    assert violations == {3, 5, 7}
    # the true envelope still grows exponentially
    assert all(m[n] >= 1.4 ** (n - 1) for n in m)


# ---------------------------------------------------------------------------
# depth and depth classes
# ---------------------------------------------------------------------------

def test_depth_examples():
    assert leaf().depth == 0
    assert graft([leaf(), leaf()]).depth == 1
    assert graft([graft([leaf()]), leaf()]).depth == 2


def test_depth_class_base_cases():
    assert enumerate_depth_class(-1) == []
    assert enumerate_depth_class(0) == [leaf()]
    d1 = enumerate_depth_class(1)
    assert {t.encoding for t in d1} == {"*", "[*]", "[**]"}


def test_depth_class_counts():
    assert len(enumerate_depth_class(2)) == 10
    assert len(enumerate_depth_class(3)) == 66


def test_depth_class_matches_filtered_enumeration(groups):
    for n in range(0, 4):
        by_depth = {
            t.encoding
            for t in enumerate_depth_class(n)
            if t.size <= MAX_ORACLE_SIZE
        }
        by_filter = {
            t.encoding
            for sz in groups
            for t in groups[sz]
            if t.depth <= n
        }
        assert by_depth == by_filter


def test_depth_class_ceiling_guard():
    with pytest.raises(ValueError, match="ceiling"):
        enumerate_depth_class(5)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

PARAMS = TreeClassParams(ratio=0.45, tolerance=0.06)


def test_classify_path_is_simple_not_short():
    t = path_tree(4)
    assert classify(t, PARAMS) == (True, False)


def test_classify_perfect7_is_short():
    t = perfect_tree(3)
    simple, short = classify(t, PARAMS)
    assert not simple
    assert short  # every split shares the branches evenly


def test_classify_leaf_convention():
    assert classify(leaf(), PARAMS) == (True, True)


def test_classify_unbalanced_not_short():
    t = graft([graft([graft([leaf(), leaf()]), leaf()])])
    assert not is_short(t, PARAMS)
    lopsided = graft([path_tree(3), leaf()])  # shares 1/4 of the branches
    assert not is_short(lopsided, PARAMS)


def test_short_requires_all_binary():
    t = graft([graft([leaf()]), graft([leaf()])])  # balanced but unary inside
    assert not is_short(t, PARAMS)


def test_class_params_validation():
    with pytest.raises(ValueError):
        TreeClassParams(ratio=0.6, tolerance=0.1)
    with pytest.raises(ValueError):
        TreeClassParams(ratio=0.45, tolerance=0.5)
    with pytest.raises(ValueError):
        TreeClassParams(ratio=0.45, tolerance=0.0)


# ---------------------------------------------------------------------------
# encoding round trips
# ---------------------------------------------------------------------------

def test_encode_examples():
    assert encode(leaf()) == "*"
    assert encode(graft([leaf()])) == "[*]"
    assert encode(graft([leaf(), graft([leaf()])])) == "[[*]*]"


def test_decode_recanonicalizes():
    assert decode("[*[*]]") == decode("[[*]*]")


def test_round_trip_over_enumeration(groups):
    for n in range(1, 11):
        for t in groups[n]:
            assert decode(encode(t)) == t


@pytest.mark.parametrize(
    "text",
    ["", "x", "[", "[*", "[]", "[***]", "*]", "**", "[*]*"],
)
def test_decode_rejects_malformed(text):
    with pytest.raises(TreeParseError) as err:
        decode(text)
    assert err.value.position >= 0


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def test_csv_export_shape(groups):
    buf = io.StringIO()
    trees_to_csv(buf, groups[3], PARAMS)
    lines = [ln for ln in buf.getvalue().split("\r\n") if ln]
    assert lines[0].startswith("encoding,")
    assert len(lines) == 1 + len(groups[3])
