"""Sparse voxel states, neighborhoods and the deterministic dilate-intersect oracle.

A :class:`State` is an immutable, canonically sorted set of integer cells.
Cells are stored as an ``(M, 3)`` int64 array sorted lexicographically by
``(x, y, z)``, so two states holding the same cells are identical arrays.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyInput, OutOfBounds, ParseError

METRICS = ("L1", "Linf")
SHAPE_MAGIC = "gca-shape v1"

# 21 bits per axis; keys are monotone in lexicographic cell order.
_KEY_BITS = 21
_KEY_OFF = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


def pack_keys(cells: np.ndarray) -> np.ndarray:
    """Encode cells as int64 keys whose numeric order is lexicographic cell order."""
    c = np.asarray(cells, dtype=np.int64) + _KEY_OFF
    return (c[:, 0] << (2 * _KEY_BITS)) | (c[:, 1] << _KEY_BITS) | c[:, 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((len(keys), 3), dtype=np.int64)
    out[:, 0] = (keys >> (2 * _KEY_BITS)) & _KEY_MASK
    out[:, 1] = (keys >> _KEY_BITS) & _KEY_MASK
    out[:, 2] = keys & _KEY_MASK
    return out - _KEY_OFF


def _canonical(cells: np.ndarray) -> np.ndarray:
    if len(cells) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return unpack_keys(np.unique(pack_keys(cells)))


class State:
    """Immutable ordered set of occupied cells.

    ``resolution`` is the grid side length ``D``; ``None`` marks an unbounded
    state (only produced by unclamped neighborhood queries).
    """

    __slots__ = ("_cells", "_keys", "resolution")

    def __init__(self, cells: np.ndarray, resolution: Optional[int]):
        # Trusted constructor: ``cells`` must already be canonical.
        arr = np.ascontiguousarray(cells, dtype=np.int64).reshape(-1, 3)
        arr.setflags(write=False)
        self._cells = arr
        self._keys = None
        self.resolution = resolution

    @classmethod
    def from_cells(cls, cells, resolution: Optional[int]) -> "State":
        arr = np.asarray(list(cells) if not isinstance(cells, np.ndarray) else cells,
                         dtype=np.int64).reshape(-1, 3)
        return cls(_canonical(arr), resolution)

    @classmethod
    def empty(cls, resolution: Optional[int]) -> "State":
        return cls(np.zeros((0, 3), dtype=np.int64), resolution)

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    @property
    def keys(self) -> np.ndarray:
        if self._keys is None:
            k = pack_keys(self._cells)
            k.setflags(write=False)
            self._keys = k
        return self._keys

    def as_tuples(self) -> list:
        return [tuple(int(v) for v in c) for c in self._cells]

    def __len__(self) -> int:
        return len(self._cells)

    def __bool__(self) -> bool:
        return len(self._cells) > 0

    def __iter__(self):
        return iter(self.as_tuples())

    def __contains__(self, cell) -> bool:
        key = pack_keys(np.asarray([cell], dtype=np.int64))[0]
        i = np.searchsorted(self.keys, key)
        return bool(i < len(self.keys) and self.keys[i] == key)

    def __eq__(self, other) -> bool:
        if not isinstance(other, State):
            return NotImplemented
        return (self.resolution == other.resolution
                and self._cells.shape == other._cells.shape
                and bool(np.array_equal(self._cells, other._cells)))

    def __hash__(self) -> int:
        return hash((self.resolution, self._cells.tobytes()))

    def __repr__(self) -> str:
        head = ", ".join(str(c) for c in self.as_tuples()[:4])
        more = ", ..." if len(self) > 4 else ""
        return f"State(D={self.resolution}, n={len(self)}, [{head}{more}])"

    def contains_mask(self, cells: np.ndarray) -> np.ndarray:
        """Boolean mask: which rows of ``cells`` are occupied in this state."""
        return np.isin(pack_keys(cells), self.keys, assume_unique=False)

    def shifted(self, offset) -> "State":
        off = np.asarray(offset, dtype=np.int64).reshape(1, 3)
        out = State(self._cells + off, self.resolution)
        if self.resolution is not None:
            _check_bounds(out._cells, self.resolution)
        return out

    def in_bounds(self) -> bool:
        if self.resolution is None or not len(self):
            return True
        return bool(self._cells.min() >= 0 and self._cells.max() < self.resolution)

    # set algebra; all results stay canonical
    def union(self, other: "State") -> "State":
        return State(unpack_keys(np.union1d(self.keys, other.keys)), self.resolution)

    def intersection(self, other: "State") -> "State":
        return State(unpack_keys(np.intersect1d(self.keys, other.keys, assume_unique=True)),
                     self.resolution)

    def difference(self, other: "State") -> "State":
        return State(unpack_keys(np.setdiff1d(self.keys, other.keys, assume_unique=True)),
                     self.resolution)

    def symmetric_difference_size(self, other: "State") -> int:
        return int(len(np.setxor1d(self.keys, other.keys, assume_unique=True)))

    def issubset(self, other: "State") -> bool:
        return bool(np.isin(self.keys, other.keys, assume_unique=True).all())

    __or__ = union
    __and__ = intersection
    __sub__ = difference
    __le__ = issubset


def _check_bounds(cells: np.ndarray, resolution: int) -> None:
    if len(cells) and (cells.min() < 0 or cells.max() > resolution - 1):
        bad = cells[((cells < 0) | (cells > resolution - 1)).any(axis=1)][0]
        raise OutOfBounds(f"cell {tuple(int(v) for v in bad)} outside [0, {resolution - 1}]^3")


def make_state(cells: Iterable, resolution: int) -> State:
    """Validated, deduplicated, sorted state from a list of ``(x, y, z)`` cells."""
    arr = np.asarray(cells if isinstance(cells, np.ndarray) else list(cells), dtype=np.int64)
    if arr.size == 0:
        raise EmptyInput("a state needs at least one cell")
    arr = arr.reshape(-1, 3)
    _check_bounds(arr, resolution)
    return State(_canonical(arr), resolution)


def in_bounds_mask(cells: np.ndarray, resolution: int) -> np.ndarray:
    return ((cells >= 0) & (cells < resolution)).all(axis=1)


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Ball of radius ``radius`` under ``metric`` (``"L1"`` or ``"Linf"``).

    The ball contains the center cell; ``offsets`` is sorted lexicographically
    and fixes the column order of every per-cell prediction.
    """

    radius: int
    metric: str = "L1"
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be a positive integer, got {self.radius!r}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        r = int(self.radius)
        rng = np.arange(-r, r + 1)
        grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        keep = distance(grid, np.zeros(3, dtype=np.int64), self.metric) <= r
        offs = grid[keep].astype(np.int64)  # meshgrid 'ij' order is already lexicographic
        offs.setflags(write=False)
        object.__setattr__(self, "_offsets", offs)

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    @property
    def size(self) -> int:
        return len(self._offsets)

    def to_dict(self) -> dict:
        return {"radius": int(self.radius), "metric": self.metric}

    @classmethod
    def from_dict(cls, d: dict) -> "NeighborhoodSpec":
        return cls(int(d["radius"]), d["metric"])


def distance(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    diff = np.abs(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))
    if metric == "L1":
        return diff.sum(axis=-1)
    if metric == "Linf":
        return diff.max(axis=-1)
    raise ValueError(f"unknown metric {metric!r}")


def neighborhood_size(spec: NeighborhoodSpec) -> int:
    return spec.size


def neighborhood_cells(cells: np.ndarray, spec: NeighborhoodSpec) -> np.ndarray:
    """All ``cell + offset`` rows, shape ``(M * N, 3)``, unsorted, with repeats."""
    return (cells[:, None, :] + spec.offsets[None, :, :]).reshape(-1, 3)


def neighborhood_of_state(s: State, spec: NeighborhoodSpec, clamp_to_bounds: bool = True) -> State:
    """``N(s)``: union of the radius-r balls around every cell of ``s``.

    With ``clamp_to_bounds`` cells outside ``[0, D-1]^3`` are dropped; otherwise
    the result is an unbounded state (``resolution=None``).
    """
    cand = neighborhood_cells(s.cells, spec)
    if clamp_to_bounds and s.resolution is not None:
        cand = cand[in_bounds_mask(cand, s.resolution)]
        return State(_canonical(cand), s.resolution)
    return State(_canonical(cand), None)


def dilate_intersect(s: State, x: State, spec: NeighborhoodSpec) -> State:
    """One step of the oracle recursion ``N(s) & x``."""
    if not len(s):
        return State.empty(x.resolution)
    cand = pack_keys(neighborhood_cells(s.cells, spec))
    hit = np.isin(x.keys, cand)
    return State(x.cells[hit], x.resolution)


def is_partially_connected(s: State, x: State, spec: NeighborhoodSpec) -> bool:
    """True iff every cell of ``x`` is reachable from ``s & x`` by hops of
    length ``<= r`` that stay inside ``x`` (breadth-first search)."""
    if not len(x):
        raise EmptyInput("x must be non-empty")
    index = {k: i for i, k in enumerate(x.keys.tolist())}
    seen = np.zeros(len(x), dtype=bool)
    queue = deque()
    for k in s.keys.tolist():
        i = index.get(k)
        if i is not None and not seen[i]:
            seen[i] = True
            queue.append(i)
    if not queue:
        return False
    off_keys = pack_keys(spec.offsets) - pack_keys(np.zeros((1, 3), dtype=np.int64))[0]
    xk = x.keys
    while queue:
        i = queue.popleft()
        for k in (xk[i] + off_keys).tolist():
            j = index.get(k)
            if j is not None and not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def oracle_sequence(s0: State, x: State, spec: NeighborhoodSpec, max_T: int) -> list:
    """States ``s0 & x, N(.) & x, ...`` until ``x`` is reached, the sequence
    stalls, or ``max_T`` steps have been taken."""
    s = s0 & x
    seq = [s]
    for _ in range(max_T):
        if s == x:
            break
        nxt = dilate_intersect(s, x, spec)
        if nxt == s:
            break
        seq.append(nxt)
        s = nxt
    return seq


def oracle_converge(s0: State, x: State, spec: NeighborhoodSpec, max_T: int) -> Optional[int]:
    """Smallest ``T'`` with ``s^{T'} == x`` under the dilate-intersect recursion,
    or ``None`` if ``x`` is not reached within ``max_T`` steps."""
    seq = oracle_sequence(s0, x, spec, max_T)
    return len(seq) - 1 if seq[-1] == x else None


def coverage_fraction(s: State, x: State) -> float:
    if not len(x):
        raise EmptyInput("x must be non-empty")
    return int(np.isin(x.keys, s.keys, assume_unique=True).sum()) / len(x)


# --- gca-shape v1 text format ---------------------------------------------

def format_shape(s: State) -> str:
    if s.resolution is None:
        raise ValueError("only bounded states can be serialized")
    lines = [f"{SHAPE_MAGIC} {s.resolution}"]
    lines.extend(f"{x} {y} {z}" for x, y, z in s.cells.tolist())
    return "\n".join(lines) + "\n"


def parse_shape(text: str, path=None) -> State:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty shape file", path, 1)
    head = lines[0].split(" ")
    if len(head) != 3 or " ".join(head[:2]) != SHAPE_MAGIC:
        raise ParseError(f"expected header '{SHAPE_MAGIC} <D>', got {lines[0]!r}", path, 1)
    try:
        D = int(head[2])
    except ValueError:
        raise ParseError(f"bad resolution {head[2]!r}", path, 1) from None
    if D < 1:
        raise ParseError(f"bad resolution {D}", path, 1)
    cells = np.empty((len(lines) - 1, 3), dtype=np.int64)
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) != 3:
            raise ParseError(f"expected 'x y z', got {line!r}", path, n)
        try:
            cells[n - 2] = [int(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-integer coordinate in {line!r}", path, n) from None
        if any(str(int(p)) != p for p in parts):
            raise ParseError(f"non-canonical integer in {line!r}", path, n)
        if cells[n - 2].min() < 0 or cells[n - 2].max() >= D:
            raise ParseError(f"cell {line!r} outside [0, {D - 1}]^3", path, n)
    if len(cells):
        keys = pack_keys(cells)
        bad = np.nonzero(np.diff(keys) <= 0)[0]
        if len(bad):
            raise ParseError("cells not strictly sorted (unsorted or duplicate line)", path, int(bad[0]) + 3)
    return State(cells, D)


def save_shape(s: State, path) -> None:
    Path(path).write_text(format_shape(s), encoding="ascii", newline="\n")


def load_shape(path) -> State:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    except UnicodeDecodeError:
        raise ParseError("not an ASCII file", path) from None
    return parse_shape(text, path)
