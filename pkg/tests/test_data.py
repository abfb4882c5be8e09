import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gca.data import (
    Dataset,
    ShapeRecord,
    center_cell,
    default_dataset,
    generate_family,
    generate_mix,
    load_manifest,
    make_partial,
    save_manifest,
    states_from_dir,
    voxelize_points,
)
from gca.errors import DegenerateInput, InvalidResolution, NoParts, ParseError, ResolutionMismatch
from gca.grid import NeighborhoodSpec, State, is_partially_connected, make_state, save_shape

CONTRACT = ("ring", "box_shell", "cross", "ell", "bimodal")


def is_single_4_cycle(s: State) -> bool:
    """Every cell has exactly two face neighbors and the cells form one loop."""
    cells = {tuple(c) for c in s.cells.tolist()}
    steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]

    def nbrs(c):
        return [n for n in (tuple(a + b for a, b in zip(c, d)) for d in steps) if n in cells]

    if any(len(nbrs(c)) != 2 for c in cells):
        return False
    start = next(iter(cells))
    seen, prev, cur = {start}, None, start
    while True:
        nxt = [n for n in nbrs(cur) if n != prev][0]
        if nxt == start:
            return len(seen) == len(cells)
        seen.add(nxt)
        prev, cur = cur, nxt


class TestFamilies:
    def test_ring_is_cycle(self, rng):
        for rec in generate_family("ring", 40, 16, rng):
            assert is_single_4_cycle(rec.state)

    @pytest.mark.parametrize("family", CONTRACT)
    @pytest.mark.parametrize("D", [16, 32])
    def test_occupancy_contract(self, family, D, rng):
        for rec in generate_family(family, 30, D, rng):
            frac = len(rec.state) / D ** 3
            assert 0.005 <= frac <= 0.10, (family, D, frac)

    @pytest.mark.parametrize("family", CONTRACT)
    def test_parts_and_connectivity(self, family, rng):
        spec = NeighborhoodSpec(1, "L1")
        for rec in generate_family(family, 10, 16, rng):
            assert 2 <= len(rec.parts) <= 4
            rec.check_parts()
            for c in rec.state.cells[:: max(1, len(rec.state) // 5)]:
                assert is_partially_connected(make_state([c], 16), rec.state, spec)

    def test_same_seed_same_family(self):
        a = generate_mix(["ring", "ell"], 5, 16, seed=3)
        b = generate_mix(["ring", "ell"], 5, 16, seed=3)
        assert a == b
        assert generate_mix(["ring"], 5, 16, seed=4) != a[:5]

    def test_two_component_gap(self, rng):
        rec = generate_family("two_component", 1, 16, rng, gap=3)[0]
        z = sorted({int(v) for v in rec.state.cells[:, 2]})
        assert z[-1] - z[0] == 4
        assert not is_partially_connected(rec.parts["lower"], rec.state, NeighborhoodSpec(2, "L1"))

    def test_small_grid(self, rng):
        with pytest.raises(InvalidResolution):
            generate_family("ring", 1, 7, rng)

    def test_unknown_family(self, rng):
        with pytest.raises(ValueError):
            generate_family("torus", 1, 16, rng)


class TestVoxelize:
    def test_cube_corners(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
        s = voxelize_points(corners, 16)
        assert set(s.as_tuples()) == {(x, y, z) for x in (0, 15) for y in (0, 15) for z in (0, 15)}

    def test_dedupe(self):
        pts = np.array([[0, 0, 0], [1e-9, 0, 0], [1, 1, 1]], float)
        assert len(voxelize_points(pts, 8)) == 2

    def test_half_away_from_zero(self):
        # x maps to 0, 3.5, 7 on D=8 -> 0, 4, 7
        s = voxelize_points([[-1, 0, 0], [0, 0, 0], [1, 0, 0]], 8)
        assert sorted(int(v) for v in s.cells[:, 0]) == [0, 4, 7]

    @given(st.lists(st.tuples(*[st.integers(-20, 20)] * 3), min_size=2, max_size=15, unique=True),
           st.tuples(*[st.integers(-50, 50)] * 3), st.sampled_from([0.25, 2.0, 8.0]))
    def test_similarity_invariant(self, pts, t, k):
        pts = np.array(pts, float)
        if np.ptp(pts, axis=0).max() == 0:
            return
        assert voxelize_points(pts * k + np.array(t, float), 16) == voxelize_points(pts, 16)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            voxelize_points([[1, 2, 3], [1, 2, 3]], 16)
        with pytest.raises(DegenerateInput):
            voxelize_points(np.zeros((0, 3)), 16)

    def test_center_cell(self):
        assert center_cell(16) == (8, 8, 8)
        assert center_cell(15) == (7, 7, 7)


class TestPartial:
    def test_two_parts_uniform(self, rng):
        rec = generate_family("bimodal", 1, 16, rng)[0]
        seen = Counter(make_partial(rec, rng) == rec.parts["base"] for _ in range(4000))
        assert set(seen) == {True, False}
        assert abs(seen[True] / 4000 - 0.5) < 4 * np.sqrt(0.25 / 4000)

    def test_three_parts_all_subsets(self, rng):
        rec = generate_family("box_shell", 1, 16, rng)[0]
        names = sorted(rec.parts)
        n = 10_000
        counts = Counter()
        for _ in range(n):
            p = make_partial(rec, rng)
            assert p.issubset(rec.state)
            counts[tuple(bool(np.isin(rec.parts[k].keys, p.keys).all()) for k in names)] += 1
        assert len(counts) == 6
        sigma = np.sqrt(n * (1 / 6) * (5 / 6))
        assert all(abs(c - n / 6) < 4 * sigma for c in counts.values())

    def test_no_parts(self, rng):
        rec = ShapeRecord(make_state([(0, 0, 0)], 8), "x")
        with pytest.raises(NoParts):
            make_partial(rec, rng)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        ds = default_dataset(["ring", "box_shell", "bimodal"], 3, 16, seed=1)
        save_manifest(ds, tmp_path)
        assert load_manifest(tmp_path) == ds
        assert states_from_dir(tmp_path) == ds.states

    def test_byte_identical(self, tmp_path):
        ds = default_dataset(["ring"], 4, 16, seed=2)
        save_manifest(ds, tmp_path / "a")
        save_manifest(ds, tmp_path / "b")
        for f in (tmp_path / "a").rglob("*"):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_missing_file(self, tmp_path):
        save_manifest(default_dataset(["ring"], 2, 16, seed=0), tmp_path)
        victim = sorted((tmp_path / "shapes").glob("*.txt"))[1]
        victim.unlink()
        with pytest.raises(ParseError, match=victim.name):
            load_manifest(tmp_path)

    def test_unsorted_shape_file(self, tmp_path):
        save_manifest(default_dataset(["ring"], 1, 16, seed=0), tmp_path)
        f = next((tmp_path / "shapes").glob("*.txt"))
        lines = f.read_text().splitlines()
        body = [i for i, l in enumerate(lines) if l and not l.startswith("#") and len(l.split()) == 3]
        a, b = body[-2], body[-1]
        lines[a], lines[b] = lines[b], lines[a]
        f.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError):
            load_manifest(tmp_path)

    def test_resolution_mismatch(self, tmp_path):
        save_manifest(default_dataset(["ring"], 1, 16, seed=0), tmp_path)
        f = next((tmp_path / "shapes").glob("*.txt"))
        save_shape(make_state([(0, 0, 0)], 32), f)
        with pytest.raises(ResolutionMismatch):
            load_manifest(tmp_path)
        ds = Dataset(16, [ShapeRecord(make_state([(0, 0, 0)], 32), "x")])
        with pytest.raises(ResolutionMismatch):
            save_manifest(ds, tmp_path / "other")

    def test_bad_partition(self, tmp_path):
        save_manifest(default_dataset(["bimodal"], 1, 16, seed=0), tmp_path)
        m = tmp_path / "manifest.json"
        doc = json.loads(m.read_text())
        doc["shapes"][0]["parts"]["base"] = doc["shapes"][0]["parts"]["base"][1:]
        m.write_text(json.dumps(doc))
        with pytest.raises(ParseError):
            load_manifest(tmp_path)

    def test_bad_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{\n  oops")
        with pytest.raises(ParseError, match="manifest.json:2"):
            load_manifest(tmp_path)

    def test_empty_dir(self, tmp_path):
        with pytest.raises(ParseError):
            states_from_dir(tmp_path)
