"""Point-set metrics for generated shape sets.

Chamfer distance here is the unnormalized sum of squared nearest-neighbor
distances in both directions.  Nearest neighbors are located with a k-d tree
and the squared distance is then recomputed exactly from coordinates, so
values match a brute-force double loop.

Ties are broken deterministically: ``cov`` picks the lowest reference index;
``one_nna`` orders candidates by distance, then generated before reference,
then index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, KTooSmall
from .grid import State


@dataclass
class PointSet:
    points: np.ndarray
    provenance: Optional[str] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not len(pts):
            raise EmptyInput("point set must be non-empty")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self):
        return len(self.points)

    def translated(self, offset) -> "PointSet":
        return PointSet(self.points + np.asarray(offset, dtype=np.float64), self.provenance)


def as_points(x) -> np.ndarray:
    return x.points if isinstance(x, PointSet) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def voxels_to_points(s: State, center: bool = False, sample_k: Optional[int] = None,
                     rng: Optional[np.random.Generator] = None, provenance=None) -> PointSet:
    """Cell coordinates as points, optionally resampled with replacement to
    ``sample_k`` points and/or mean-centered (centering uses the returned points)."""
    if not len(s):
        raise EmptyInput("cannot convert an empty state")
    pts = s.cells.astype(np.float64)
    if sample_k is not None:
        if rng is None:
            raise ValueError("sampling needs an rng")
        pts = pts[rng.integers(0, len(pts), size=sample_k)]
    if center:
        pts = pts - pts.mean(axis=0)
    return PointSet(pts, provenance)


def _nn_sq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact squared distance from every ``src`` point to its nearest ``dst`` point."""
    _, idx = cKDTree(dst).query(src, k=1)
    d = src - dst[idx]
    return (d * d).sum(axis=1)


def chamfer(X, Y) -> float:
    X, Y = as_points(X), as_points(Y)
    if not len(X) or not len(Y):
        raise EmptyInput("chamfer needs non-empty sets")
    return float(_nn_sq(X, Y).sum() + _nn_sq(Y, X).sum())


def chamfer_matrix(A: Sequence, B: Sequence) -> np.ndarray:
    """``D[i, j] = chamfer(A[i], B[j])``."""
    A = [as_points(a) for a in A]
    B = [as_points(b) for b in B]
    trees_a = [cKDTree(a) for a in A]
    trees_b = [cKDTree(b) for b in B]
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            _, ia = trees_b[j].query(a, k=1)
            _, ib = trees_a[i].query(b, k=1)
            da = a - b[ia]
            db = b - a[ib]
            out[i, j] = (da * da).sum() + (db * db).sum()
    return out


def _check(name, *sets):
    for s in sets:
        if not len(s):
            raise EmptyInput(f"{name} needs non-empty sets")


def mmd(gen: Sequence, ref: Sequence) -> float:
    """Mean over reference shapes of the smallest Chamfer distance to any generated shape."""
    _check("mmd", gen, ref)
    return float(chamfer_matrix(gen, ref).min(axis=0).mean())


def cov(gen: Sequence, ref: Sequence) -> float:
    """Fraction of reference shapes that are the nearest reference of some generated shape."""
    _check("cov", gen, ref)
    nearest = np.argmin(chamfer_matrix(gen, ref), axis=1)
    return len(set(nearest.tolist())) / len(ref)


def one_nna(gen: Sequence, ref: Sequence) -> float:
    """Leave-one-out 1-NN two-sample accuracy over ``gen + ref``, in percent."""
    _check("one_nna", gen, ref)
    allsets = list(gen) + list(ref)
    n_g = len(gen)
    Dm = chamfer_matrix(allsets, allsets)
    np.fill_diagonal(Dm, np.inf)
    nn = np.argmin(Dm, axis=1)  # first minimum == gen-before-ref, then index
    is_gen = np.arange(len(allsets)) < n_g
    correct = is_gen[nn] == is_gen
    return 100.0 * float(correct.sum()) / len(allsets)


def tmd(completions: Sequence[Sequence]) -> float:
    """Mean over partials of the mean pairwise Chamfer distance among its ``k`` completions."""
    _check("tmd", completions)
    total = 0.0
    for group in completions:
        k = len(group)
        if k < 2:
            raise KTooSmall(f"tmd needs k >= 2 completions per partial, got {k}")
        Dm = chamfer_matrix(group, group)
        total += 2.0 / (k * (k - 1)) * Dm[np.triu_indices(k, 1)].sum()
    return total / len(completions)


def tmd_per_partial(completions: Sequence[Sequence]) -> list:
    return [tmd([g]) for g in completions]


def directed_hausdorff(P, C) -> float:
    """``max_{p in P} min_{c in C} ||p - c||`` (unsquared)."""
    P, C = as_points(P), as_points(C)
    return float(np.sqrt(_nn_sq(P, C).max()))


def uhd(partial, completions: Sequence) -> float:
    """Mean directed Hausdorff distance from the partial to each completion."""
    if not len(completions):
        raise KTooSmall("uhd needs at least one completion")
    return float(np.mean([directed_hausdorff(partial, c) for c in completions]))


def uhd_mean(partials: Sequence, completions: Sequence[Sequence]) -> float:
    _check("uhd", partials)
    return float(np.mean([uhd(p, g) for p, g in zip(partials, completions, strict=True)]))
