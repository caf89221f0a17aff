"""Tree-indexed series evaluation for the spectral mild form of 3D Navier-Stokes."""

from nstrees.trees import (
    Tree,
    TreeClassParams,
    TreeStats,
    classify,
    decode,
    encode,
    enumerate_depth_class,
    enumerate_trees,
    graft,
    leaf,
    path_tree,
    perfect_tree,
    stats,
)

__all__ = [
    "Tree",
    "TreeClassParams",
    "TreeStats",
    "classify",
    "decode",
    "encode",
    "enumerate_depth_class",
    "enumerate_trees",
    "graft",
    "leaf",
    "path_tree",
    "perfect_tree",
    "stats",
]

__version__ = "0.1.0"
