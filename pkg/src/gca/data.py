"""Synthetic shape families, voxelization and dataset persistence.

Families are thin surface-style shapes (no filled volumes).  Every record is
partitioned into named parts so partial inputs can be built for completion.

``ring``, ``box_shell``, ``cross`` and ``ell`` are face-connected, so each is
partially connected to any of its own cells for every radius ``r >= 1``.
``bimodal`` shares a base plate between two top variants (walls or a pole).
``two_component`` deliberately violates connectivity: two plates separated
by a gap wider than the configured radius.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateInput, InvalidResolution, NoParts, ParseError, ResolutionMismatch
from .grid import State, load_shape, make_state, save_shape

MANIFEST_MAGIC = "gca-manifest v1"
FAMILIES = ("ring", "box_shell", "cross", "ell", "bimodal", "two_component")


@dataclass
class ShapeRecord:
    state: State
    label: str
    parts: dict = field(default_factory=dict)  # name -> State, disjoint, union == state

    def check_parts(self) -> None:
        if not self.parts:
            return
        total = sum(len(p) for p in self.parts.values())
        union = State.empty(self.state.resolution)
        for p in self.parts.values():
            union = union | p
        if total != len(union) or union != self.state:
            raise ValueError(f"parts of {self.label!r} do not partition the shape")

    def __eq__(self, other):
        if not isinstance(other, ShapeRecord):
            return NotImplemented
        return (self.state == other.state and self.label == other.label
                and self.parts.keys() == other.parts.keys()
                and all(self.parts[k] == other.parts[k] for k in self.parts))


def _record(cells: np.ndarray, parts: dict, label: str, D: int, rng: np.random.Generator) -> ShapeRecord:
    """Translate the shape to a random in-bounds position and build the record."""
    lo = cells.min(axis=0)
    hi = cells.max(axis=0)
    span = hi - lo
    if (span > D - 1).any():
        raise InvalidResolution(f"{label} does not fit into a {D}^3 grid")
    shift = np.array([rng.integers(0, D - s) for s in span]) - lo
    state = make_state(cells + shift, D)
    named = {}
    for name, pc in parts.items():
        named[name] = make_state(pc + shift, D)
    rec = ShapeRecord(state, label, named)
    rec.check_parts()
    return rec


def _axes(rng) -> np.ndarray:
    return rng.permutation(3)


def _embed(uv: np.ndarray, w: np.ndarray, perm) -> np.ndarray:
    """Place planar coordinates ``uv`` plus depth ``w`` onto permuted axes."""
    out = np.zeros((len(uv), 3), dtype=np.int64)
    out[:, perm[0]] = uv[:, 0]
    out[:, perm[1]] = uv[:, 1]
    out[:, perm[2]] = w
    return out


def circle_cells(R: int) -> np.ndarray:
    """4-connected digital circle of radius ``R`` as an ordered cycle (8R cells)."""
    pts = []
    for th in np.linspace(0.0, 2.0 * np.pi, 64 * R, endpoint=False):
        p = (int(np.floor(R * np.cos(th) + 0.5)), int(np.floor(R * np.sin(th) + 0.5)))
        if not pts or pts[-1] != p:
            pts.append(p)
    if pts[-1] == pts[0]:
        pts.pop()
    out = []
    for i, a in enumerate(pts):
        b = pts[(i + 1) % len(pts)]
        out.append(a)
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) == 2:
            c1, c2 = (b[0], a[1]), (a[0], b[1])
            out.append(c1 if abs(np.hypot(*c1) - R) <= abs(np.hypot(*c2) - R) else c2)
    return np.array(out, dtype=np.int64)


def _ring(D, rng):
    r_max = max(3, min(D // 2 - 2, D // 3 + 1))
    R = int(rng.integers(3, r_max + 1))
    uv = circle_cells(R)
    height = max(1, int(np.ceil(0.005 * D ** 3 / len(uv)))) if D > 16 else 1
    perm = _axes(rng)
    n_parts = int(rng.integers(2, 5))
    ang = np.arctan2(uv[:, 1], uv[:, 0]) % (2 * np.pi)
    sector = np.minimum((ang / (2 * np.pi) * n_parts).astype(int), n_parts - 1)
    cells, parts = [], {}
    for k in range(n_parts):
        sel = uv[sector == k]
        pc = np.concatenate([_embed(sel, np.full(len(sel), h), perm) for h in range(height)])
        parts[f"arc{k}"] = pc
        cells.append(pc)
    return np.concatenate(cells), parts


def _box_shell(D, rng):
    hi = max(3, min(7, D - 2))
    a, b, c = (int(rng.integers(3, hi + 1)) for _ in range(3))
    g = np.stack(np.meshgrid(np.arange(a), np.arange(b), np.arange(c), indexing="ij"), -1).reshape(-1, 3)
    size = np.array([a, b, c])
    shell = g[((g == 0) | (g == size - 1)).any(axis=1)]
    z = shell[:, 2]
    parts = {"bottom": shell[z == 0], "top": shell[z == c - 1],
             "sides": shell[(z > 0) & (z < c - 1)]}
    return shell, parts


def _cross(D, rng):
    L = int(rng.integers(4, max(4, D // 2 - 1) + 1))
    arms = {}
    line = np.arange(-L, L + 1)
    for ax, name in enumerate(("x_arm", "y_arm", "z_arm")):
        pts = np.zeros((len(line), 3), dtype=np.int64)
        pts[:, ax] = line
        if ax > 0:
            pts = pts[line != 0]  # center belongs to x_arm
        arms[name] = pts
    return np.concatenate(list(arms.values())), arms


def _ell(D, rng):
    hi = max(4, min(7, D - 2))
    a = int(rng.integers(4, hi + 1))
    b = int(rng.integers(4, min(6, D - 2) + 1))
    c = int(rng.integers(4, min(6, D - 2) + 1))
    perm = _axes(rng)
    u, v = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    leg_a = _embed(np.stack([u.ravel(), v.ravel()], 1), np.zeros(u.size), perm)
    u, w = np.meshgrid(np.arange(a), np.arange(1, c), indexing="ij")
    leg_b = _embed(np.stack([u.ravel(), np.zeros(u.size, dtype=np.int64)], 1), w.ravel(), perm)
    return np.concatenate([leg_a, leg_b]), {"leg_a": leg_a, "leg_b": leg_b}


def _plate(a, b, z=0):
    u, v = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    return np.stack([u.ravel(), v.ravel(), np.full(u.size, z)], 1).astype(np.int64)


def _bimodal(D, rng):
    a = int(rng.integers(4, min(7, D - 2) + 1))
    base = _plate(a, a)
    h = int(rng.integers(3, min(6, D - 2) + 1))
    if rng.random() < 0.5:
        mode = "walls"
        ring = np.array([(i, j) for i in range(a) for j in range(a)
                         if i in (0, a - 1) or j in (0, a - 1)], dtype=np.int64)
        top = np.concatenate([np.column_stack([ring, np.full(len(ring), z)]) for z in range(1, h + 1)])
    else:
        mode = "pole"
        m = a // 2
        top = np.array([(m, m, z) for z in range(1, h + 2)], dtype=np.int64)
    return np.concatenate([base, top]), {"base": base, "top": top}, mode


def _two_component(D, rng, gap):
    a = int(rng.integers(3, min(5, D - 2) + 1))
    lower = _plate(a, a, 0)
    upper = _plate(a, a, gap + 1)
    return np.concatenate([lower, upper]), {"lower": lower, "upper": upper}


def generate_family(family: str, count: int, D: int, rng: np.random.Generator,
                    gap: int = 4) -> list:
    """``count`` random records of ``family`` on a ``D^3`` grid.

    ``gap`` is the number of empty layers between the plates of
    ``two_component`` shapes.  Grids above 16 draw at ``D // (D // 16)`` and
    blow every cell up into a block; draws outside 0.5%..10% occupancy are
    redrawn (``two_component`` is exempt).
    """
    if D < 8:
        raise InvalidResolution(f"grid resolution must be >= 8, got {D}")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    t = max(1, D // 16)
    base = D // t
    block = np.stack(np.meshgrid(*[np.arange(t)] * 3, indexing="ij"), -1).reshape(-1, 3)
    out = []
    for _ in range(count):
        for _attempt in range(1000):
            cells, parts, label = _draw_family(family, base, rng, gap)
            if t > 1:
                cells = _blow_up(cells, t, block)
                parts = {k: _blow_up(v, t, block) for k, v in parts.items()}
            if family == "two_component" or 0.005 <= len(cells) / D ** 3 <= 0.10:
                break
        else:
            raise InvalidResolution(f"cannot fit {family} into the occupancy range at D={D}")
        out.append(_record(cells, parts, label, D, rng))
    return out


def _blow_up(cells: np.ndarray, t: int, block: np.ndarray) -> np.ndarray:
    """Replace every cell by a ``t^3`` block (keeps face connectivity)."""
    return (cells[:, None, :] * t + block[None]).reshape(-1, 3)


def _draw_family(family, D, rng, gap):
    if family == "ring":
        cells, parts = _ring(D, rng)
        return cells, parts, "ring"
    if family == "box_shell":
        cells, parts = _box_shell(D, rng)
        return cells, parts, "box_shell"
    if family == "cross":
        cells, parts = _cross(D, rng)
        return cells, parts, "cross"
    if family == "ell":
        cells, parts = _ell(D, rng)
        return cells, parts, "ell"
    if family == "bimodal":
        cells, parts, mode = _bimodal(D, rng)
        return cells, parts, f"bimodal/{mode}"
    cells, parts = _two_component(D, rng, gap)
    return cells, parts, "two_component"


def generate_mix(families, count: int, D: int, seed: int, gap: int = 4) -> list:
    """``count`` shapes per family, families in the given order, from one seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for fam in families:
        out.extend(generate_family(fam, count, D, rng, gap=gap))
    return out


def center_cell(D: int) -> tuple:
    c = int(np.floor((D - 1) / 2 + 0.5))
    return (c, c, c)


def voxelize_points(points, D: int) -> State:
    """Center by bounding-box midpoint, scale the largest extent to 2, map
    ``[-1, 1]`` affinely onto ``[0, D-1]`` and round half away from zero."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(pts):
        raise DegenerateInput("no points")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise DegenerateInput("all points coincide; use center_cell(D) explicitly")
    unit = (pts - (lo + hi) / 2.0) * (2.0 / extent)
    g = (unit + 1.0) / 2.0 * (D - 1)
    cells = np.sign(g) * np.floor(np.abs(g) + 0.5)
    cells = np.clip(cells, 0, D - 1).astype(np.int64)  # guards -0.0 / 1-ulp overshoot
    return make_state(cells, D)


def proper_subsets(n: int) -> list:
    """All non-empty proper subsets of ``range(n)`` as bitmasks."""
    return list(range(1, 2 ** n - 1))


def make_partial(record: ShapeRecord, rng: np.random.Generator) -> State:
    """Union of a uniformly chosen non-empty proper subset of the record's parts."""
    names = sorted(record.parts)
    if len(names) < 2:
        raise NoParts(f"record {record.label!r} needs >= 2 parts, has {len(names)}")
    masks = proper_subsets(len(names))
    mask = masks[int(rng.integers(len(masks)))]
    out = State.empty(record.state.resolution)
    for i, name in enumerate(names):
        if mask >> i & 1:
            out = out | record.parts[name]
    return out


# -- manifest ---------------------------------------------------------------

@dataclass
class Dataset:
    resolution: int
    records: list
    generator: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.resolution == other.resolution and self.generator == other.generator
                and self.records == other.records)

    @property
    def states(self) -> list:
        return [r.state for r in self.records]


def save_manifest(dataset: Dataset, out_dir) -> Path:
    """Write ``shapes/shape_<i>.txt`` and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(dataset) - 1)))
    entries = []
    for i, rec in enumerate(dataset.records):
        if rec.state.resolution != dataset.resolution:
            raise ResolutionMismatch(f"record {i} has D={rec.state.resolution}, dataset D={dataset.resolution}")
        rel = f"shapes/shape_{i:0{width}d}.txt"
        save_shape(rec.state, out / rel)
        parts = {}
        for name in sorted(rec.parts):
            idx = np.searchsorted(rec.state.keys, rec.parts[name].keys)
            parts[name] = [int(v) for v in idx]
        entries.append({"path": rel, "label": rec.label, "parts": parts})
    doc = {"format": MANIFEST_MAGIC, "resolution": dataset.resolution,
           "shapes": entries, "generator": dataset.generator}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path) -> Dataset:
    """Load a dataset from ``manifest.json`` (or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("manifest not found", path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_MAGIC:
        raise ParseError(f"expected format {MANIFEST_MAGIC!r}", path)
    try:
        D = int(doc["resolution"])
        shapes = doc["shapes"]
        generator = doc.get("generator", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or bad field: {exc}", path) from None
    base = path.parent
    records = []
    for i, e in enumerate(shapes):
        try:
            rel, label, parts = e["path"], e["label"], e.get("parts", {})
        except (KeyError, TypeError):
            raise ParseError(f"shapes[{i}] needs 'path' and 'label'", path) from None
        shape_path = base / rel
        if not shape_path.is_file():
            raise ParseError(f"shapes[{i}] references missing file {shape_path}", path)
        st = load_shape(shape_path)
        if st.resolution != D:
            raise ResolutionMismatch(f"{shape_path}: D={st.resolution} but manifest says {D}")
        named = {}
        for name, idx in parts.items():
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= len(st)):
                raise ParseError(f"shapes[{i}].parts[{name!r}] index out of range", path)
            named[name] = State(st.cells[np.sort(idx)], D)
        rec = ShapeRecord(st, label, named)
        try:
            rec.check_parts()
        except ValueError as exc:
            raise ParseError(f"shapes[{i}]: {exc}", path) from None
        records.append(rec)
    return Dataset(D, records, generator)


def states_from_dir(path) -> list:
    """Shapes of a dataset directory (manifest) or of every ``*.txt`` in ``path``."""
    path = Path(path)
    if (path / "manifest.json").is_file():
        return load_manifest(path).states
    files = sorted(p for p in path.glob("*.txt") if p.is_file())
    if not files:
        raise ParseError("no shape files found", path)
    return [load_shape(p) for p in files]


def default_dataset(families, count: int, D: int, seed: int, gap: int = 4,
                    params: Optional[dict] = None) -> Dataset:
    recs = generate_mix(families, count, D, seed, gap=gap)
    gen = {"family": ",".join(families), "seed": seed,
           "params": dict(params or {}, count=count, grid=D, gap=gap)}
    return Dataset(D, recs, gen)
