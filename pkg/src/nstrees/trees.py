"""Canonical unordered rooted trees with at most two children per vertex.

Trees are immutable. Children are kept in a canonical order (larger
subtree first, ties broken by the bracket encoding), so two trees that
are equal as unordered trees compare equal and share one encoding.
All combinatorial statistics (vertex count, tree factorial, symmetry
factor, homogeneity order, depth) are computed once at construction
with exact integer arithmetic; the tree factorial of a path tree of
size n is n!, which overflows 64-bit quickly, so plain Python ints are
essential here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

# Enumeration beyond this size is refused unless the caller raises the
# ceiling explicitly; tree counts grow like ~2.5**n.
DEFAULT_SIZE_CEILING = 16

# Depth classes explode much faster (|D(5)| is in the millions).
DEFAULT_DEPTH_CEILING = 4

LEAF_TOKEN = "*"


class TreeParseError(ValueError):
    """Malformed bracket encoding; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class Tree:
    """An unordered rooted tree in which every vertex has 0, 1 or 2 children."""

    __slots__ = (
        "children",
        "size",
        "depth",
        "factorial",
        "symmetry",
        "homogeneity",
        "simple",
        "encoding",
        "_hash",
    )

    def __init__(self, children: Sequence["Tree"] = ()):
        if len(children) > 2:
            raise ValueError(
                f"a vertex may have at most 2 children, got {len(children)}"
            )
        for child in children:
            if not isinstance(child, Tree):
                raise TypeError(f"children must be Tree values, got {type(child)!r}")
        kids = tuple(sorted(children, key=lambda c: (-c.size, c.encoding)))
        self.children = kids
        self.size = 1 + sum(c.size for c in kids)
        self.depth = 1 + max(c.depth for c in kids) if kids else 0
        factorial = self.size
        for c in kids:
            factorial *= c.factorial
        self.factorial = factorial
        # symmetry: permutations of repeated branches times child symmetries
        symmetry = 2 if len(kids) == 2 and kids[0] == kids[1] else 1
        for c in kids:
            symmetry *= c.symmetry
        self.symmetry = symmetry
        if not kids:
            self.homogeneity = 2
        elif len(kids) == 1:
            self.homogeneity = 1 + kids[0].homogeneity
        else:
            self.homogeneity = kids[0].homogeneity + kids[1].homogeneity
        self.simple = len(kids) == 0 or (len(kids) == 1 and kids[0].simple)
        if not kids:
            self.encoding = LEAF_TOKEN
        else:
            self.encoding = "[" + "".join(c.encoding for c in kids) + "]"
        self._hash = hash(self.encoding)

    def __eq__(self, other) -> bool:
        return isinstance(other, Tree) and self.encoding == other.encoding

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Tree({self.encoding!r})"

    def iter_vertices(self) -> Iterable["Tree"]:
        """Yield every subtree (each vertex seen as the root of its subtree)."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children)


_LEAF = Tree()


def leaf() -> Tree:
    """The one-vertex tree."""
    return _LEAF


def graft(children: Sequence[Tree]) -> Tree:
    """Attach 1 or 2 subtrees to a fresh root, re-sorting canonically."""
    if not 1 <= len(children) <= 2:
        raise ValueError(f"graft takes 1 or 2 subtrees, got {len(children)}")
    return Tree(tuple(children))


@dataclass(frozen=True)
class TreeClassParams:
    """Branch-balance window for the short-tree class.

    ``ratio`` is the target share of the smaller branch, measured against
    the total vertex count of the two branches (the branches of a binary
    vertex are ordered by subtree size, smaller one first, so only values
    below one half are meaningful).  ``tolerance`` widens the admissible
    window to [ratio - tolerance, ratio + tolerance].
    """

    ratio: float
    tolerance: float

    def __post_init__(self):
        if not 0.0 < self.ratio < 0.5:
            raise ValueError(f"ratio must lie in (0, 1/2), got {self.ratio}")
        if not 0.0 < self.tolerance < min(self.ratio, 1.0 - self.ratio):
            raise ValueError(
                f"tolerance must lie in (0, min(ratio, 1-ratio)), got {self.tolerance}"
            )
        if not (self.ratio - self.tolerance > 0.0 and self.ratio + self.tolerance < 1.0):
            raise ValueError("balance window must stay inside (0, 1)")

    @property
    def window(self) -> tuple[float, float]:
        return (self.ratio - self.tolerance, self.ratio + self.tolerance)


@dataclass(frozen=True)
class TreeStats:
    """All per-tree statistics the series machinery consumes."""

    size: int
    factorial: int
    symmetry: int
    homogeneity: int
    depth: int
    simple: bool
    short: bool | None = None


def is_short(tree: Tree, params: TreeClassParams) -> bool:
    """True when every internal vertex is binary with a balanced split.

    The split ratio at a binary vertex is the smaller branch's share of
    the two branches' combined vertex count.  A single leaf is short by
    convention (no internal vertices to quantify over).
    """
    lo, hi = params.window
    for node in tree.iter_vertices():
        if not node.children:
            continue
        if len(node.children) != 2:
            return False
        share = node.children[1].size / (node.size - 1)
        if not lo <= share <= hi:
            return False
    return True


def classify(tree: Tree, params: TreeClassParams) -> tuple[bool, bool]:
    """(simple, short) membership of a tree for the given balance window."""
    return tree.simple, is_short(tree, params)


def stats(tree: Tree, params: TreeClassParams | None = None) -> TreeStats:
    """Bundle the cached statistics; ``short`` needs a balance window."""
    return TreeStats(
        size=tree.size,
        factorial=tree.factorial,
        symmetry=tree.symmetry,
        homogeneity=tree.homogeneity,
        depth=tree.depth,
        simple=tree.simple,
        short=is_short(tree, params) if params is not None else None,
    )


def depth(tree: Tree) -> int:
    """Maximum edge count from the root to any leaf."""
    return tree.depth


def enumerate_trees(
    max_size: int, *, ceiling: int = DEFAULT_SIZE_CEILING
) -> dict[int, list[Tree]]:
    """Every canonical tree of each size 1..max_size, exactly once.

    Returns {size: [trees]} with a deterministic (canonical-key) order
    inside each group.
    """
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    if max_size > ceiling:
        raise ValueError(
            f"max_size {max_size} exceeds the enumeration ceiling {ceiling}; "
            "raise ceiling= explicitly if you mean it"
        )
    by_size: dict[int, list[Tree]] = {1: [_LEAF]}
    for n in range(2, max_size + 1):
        group: list[Tree] = [Tree((t,)) for t in by_size[n - 1]]
        for n1 in range(1, (n - 1) // 2 + 1):
            n2 = n - 1 - n1
            left = by_size[n1]
            right = by_size[n2]
            if n1 == n2:
                for i, a in enumerate(left):
                    for b in right[i:]:
                        group.append(Tree((a, b)))
            else:
                for a in left:
                    for b in right:
                        group.append(Tree((a, b)))
        group.sort(key=lambda t: t.encoding)
        by_size[n] = group
    return by_size


def census(max_size: int, *, ceiling: int = DEFAULT_SIZE_CEILING) -> list[int]:
    """Tree counts per size, index i holding the count for size i+1."""
    groups = enumerate_trees(max_size, ceiling=ceiling)
    return [len(groups[n]) for n in range(1, max_size + 1)]


def enumerate_depth_class(
    n: int, *, ceiling: int = DEFAULT_DEPTH_CEILING
) -> list[Tree]:
    """All trees whose leaves sit at distance <= n from the root.

    n = -1 gives the empty class by convention.
    """
    if n > ceiling:
        raise ValueError(
            f"depth {n} exceeds the depth-class ceiling {ceiling}; "
            "raise ceiling= explicitly if you mean it"
        )
    if n < 0:
        return []
    current: list[Tree] = [_LEAF]
    for _ in range(n):
        nxt: list[Tree] = [_LEAF]
        nxt.extend(Tree((t,)) for t in current)
        for i, a in enumerate(current):
            for b in current[i:]:
                nxt.append(Tree((a, b)))
        nxt.sort(key=lambda t: (t.size, t.encoding))
        current = nxt
    return current


def path_tree(size: int) -> Tree:
    """The unique simple tree of the given size."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    t = _LEAF
    for _ in range(size - 1):
        t = Tree((t,))
    return t


def perfect_tree(levels: int) -> Tree:
    """Perfect binary tree with the given number of levels (size 2**levels - 1)."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    t = _LEAF
    for _ in range(levels - 1):
        t = Tree((t, t))
    return t


def encode(tree: Tree) -> str:
    """Canonical bracket encoding: '*' for a leaf, '[..]' around children."""
    return tree.encoding


def decode(text: str) -> Tree:
    """Parse a bracket encoding back into a tree.

    Input need not be in canonical child order; the constructors
    re-canonicalize.  Raises TreeParseError with the offending position
    on malformed input.
    """
    pos = 0

    def parse() -> Tree:
        nonlocal pos
        if pos >= len(text):
            raise TreeParseError("unexpected end of input", pos)
        ch = text[pos]
        if ch == LEAF_TOKEN:
            pos += 1
            return _LEAF
        if ch != "[":
            raise TreeParseError(f"expected {LEAF_TOKEN!r} or '[', got {ch!r}", pos)
        pos += 1
        children: list[Tree] = []
        while pos < len(text) and text[pos] != "]":
            if len(children) == 2:
                raise TreeParseError("more than 2 children in a bracket", pos)
            children.append(parse())
        if pos >= len(text):
            raise TreeParseError("unclosed '['", pos)
        if not children:
            raise TreeParseError("empty bracket", pos)
        pos += 1  # consume ']'
        return Tree(tuple(children))

    result = parse()
    if pos != len(text):
        raise TreeParseError("trailing characters after a complete tree", pos)
    return result


def gamma_lower_envelope(
    max_size: int, *, ceiling: int = DEFAULT_SIZE_CEILING
) -> dict[int, tuple[int, Tree]]:
    """Per-size minimum of the tree factorial with a witness tree."""
    groups = enumerate_trees(max_size, ceiling=ceiling)
    return {
        n: min(((t.factorial, t) for t in groups[n]), key=lambda p: p[0])
        for n in groups
    }


CSV_COLUMNS = ("encoding", "size", "depth", "gamma", "sigma", "theta", "simple", "short")


def trees_to_csv(fileobj, trees: Iterable[Tree], params: TreeClassParams | None = None) -> None:
    """Write one row of statistics per tree (RFC-4180 line endings)."""
    writer = csv.writer(fileobj)
    writer.writerow(CSV_COLUMNS)
    for t in trees:
        short = is_short(t, params) if params is not None else ""
        writer.writerow(
            [t.encoding, t.size, t.depth, t.factorial, t.symmetry, t.homogeneity, t.simple, short]
        )


def trees_to_text(fileobj, trees: Iterable[Tree]) -> None:
    """One canonical bracket encoding per line."""
    for t in trees:
        fileobj.write(t.encoding + "\n")
