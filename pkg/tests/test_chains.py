import json

import numpy as np
import pytest

from gca.chains import (
    InfusionSchedule,
    draw,
    dump_chain,
    infusion_probs,
    infusion_transition,
    make_rng,
    run_infusion_chain,
    run_sampling_chain,
    sample_transition,
    search_space_stats,
)
from gca.data import generate_family
from gca.errors import EmptyInput
from gca.grid import NeighborhoodSpec, State, dilate_intersect, load_shape, make_state, neighborhood_of_state, oracle_sequence
from gca.kernel import Architecture, init_params, predict

SPEC = NeighborhoodSpec(2, "L1")


@pytest.fixture(scope="module")
def params():
    return init_params(Architecture.for_spec(SPEC), 0)


def seed_cell(D=16):
    return make_state([(D // 2,) * 3], D)


class TestSchedule:
    def test_linear_then_clamped(self):
        s = InfusionSchedule(0.005)
        assert s.rate(0) == 0.0
        assert s.rate(100) == pytest.approx(0.5)
        assert s.rate(200) == 1.0
        assert s.rate(300) == 1.0

    def test_nondecreasing(self):
        s = InfusionSchedule(0.013)
        r = [s.rate(t) for t in range(200)]
        assert all(a <= b for a, b in zip(r, r[1:])) and max(r) == 1.0

    def test_fixed(self):
        assert InfusionSchedule(fixed=0.25).rate(1000) == 0.25

    def test_invalid(self):
        with pytest.raises(ValueError):
            InfusionSchedule(-0.1)


class TestDraw:
    def test_all_one_gives_support(self):
        sup = neighborhood_of_state(seed_cell(), SPEC)
        assert draw(np.ones(len(sup)), sup, make_rng(0)) == sup

    def test_all_zero_gives_empty(self):
        sup = neighborhood_of_state(seed_cell(), SPEC)
        assert len(draw(np.zeros(len(sup)), sup, make_rng(0))) == 0

    def test_binomial_mean(self):
        sup = neighborhood_of_state(seed_cell(), SPEC)
        rng = make_rng(3)
        u = rng.random((100_000, 25))
        counts = (u < 0.5).sum(axis=1)  # identical consumption to draw()
        assert abs(counts.mean() - 12.5) < 0.15
        rng = make_rng(3)
        first = [len(draw(np.full(25, 0.5), sup, rng)) for _ in range(5)]
        np.testing.assert_array_equal(first, counts[:5])

    def test_per_cell_frequency_within_binomial_bounds(self, params):
        s = make_state([(8, 8, 8), (9, 8, 8)], 16)
        f = predict(params, s, SPEC)
        rng = make_rng(11)
        n = 10_000
        hits = np.zeros(len(f.support))
        for _ in range(n):
            nxt = sample_transition(params, s, SPEC, rng)
            hits += np.isin(f.support.keys, nxt.keys)
        sigma = np.sqrt(f.prob * (1 - f.prob) / n)
        assert (np.abs(hits / n - f.prob) <= 4 * sigma + 1e-12).all()


class TestInfusion:
    def test_mixture_arithmetic(self):
        sup = make_state([(0, 0, 0), (1, 0, 0)], 8)
        x = make_state([(0, 0, 0)], 8)
        np.testing.assert_allclose(infusion_probs(np.array([0.2, 0.2]), sup, x, 0.5), [0.6, 0.1], rtol=1e-15)

    def test_alpha_one_is_dilate_intersect(self, rng):
        x = generate_family("box_shell", 1, 16, rng)[0].state
        s = State(x.cells[:3], 16)
        out = infusion_transition(None, s, x, 0, InfusionSchedule(fixed=1.0), SPEC, make_rng(0))
        assert out == dilate_intersect(s, x, SPEC)

    def test_alpha_zero_matches_kernel(self, params, rng):
        x = generate_family("ring", 1, 16, rng)[0].state
        s = State(x.cells[:4], 16)
        f = predict(params, s, SPEC)
        np.testing.assert_array_equal(infusion_probs(f.prob, f.support, x, 0.0), f.prob)
        a = infusion_transition(params, s, x, 0, InfusionSchedule(fixed=0.0), SPEC, make_rng(5))
        b = sample_transition(params, s, SPEC, make_rng(5))
        assert a == b

    def test_chain_reaches_x_within_oracle_bound(self, rng):
        x = generate_family("cross", 1, 16, rng)[0].state
        q0 = State(x.cells[:1], 16)
        k = 10
        ch = run_infusion_chain(init_params(Architecture.for_spec(SPEC), 1), x, InfusionSchedule(1.0 / k),
                                SPEC, make_rng(0), T_max=k + len(x), q0=q0, stop_coverage=None)
        assert ch.coverage[-1] == 1.0
        assert ch.first_coverage is not None and ch.first_coverage <= k + len(x)

    def test_start_at_x(self, rng):
        x = generate_family("ring", 1, 16, rng)[0].state
        ch = run_infusion_chain(None, x, InfusionSchedule(fixed=1.0), SPEC, make_rng(0), 50, x)
        assert len(ch) == 1 and ch.coverage == [1.0] and ch.first_coverage == 0

    def test_alpha_one_reproduces_oracle(self, rng):
        x = generate_family("ell", 1, 16, rng)[0].state
        q0 = State(x.cells[-1:], 16)
        oracle = oracle_sequence(q0, x, SPEC, len(x))
        ch = run_infusion_chain(None, x, InfusionSchedule(fixed=1.0), SPEC, make_rng(0), len(oracle) - 1, q0,
                                stop_coverage=None)
        assert ch.states == oracle


class TestSamplingChain:
    def test_zero_steps(self, params):
        ch = run_sampling_chain(params, seed_cell(), 0, SPEC, make_rng(0))
        assert len(ch) == 1

    def test_locality_over_many_chains(self, params):
        rng = make_rng(0)
        for i in range(100):
            ch = run_sampling_chain(params, seed_cell(), 3, SPEC, rng)
            assert ch.is_local()

    def test_deterministic(self, params):
        a = run_sampling_chain(params, seed_cell(), 5, SPEC, make_rng(9))
        b = run_sampling_chain(params, seed_cell(), 5, SPEC, make_rng(9))
        assert a.states == b.states

    def test_empty_state_terminates(self, params):
        p = params.copy()
        p.head_b[:] = -50.0
        ch = run_sampling_chain(p, seed_cell(), 10, SPEC, make_rng(0))
        assert ch.failed and len(ch) == 2 and len(ch.final) == 0

    def test_empty_start_rejected(self, params):
        with pytest.raises(EmptyInput):
            run_sampling_chain(params, State.empty(16), 3, SPEC, make_rng(0))

    def test_churn_stats(self, params):
        ch = run_sampling_chain(params, seed_cell(), 4, SPEC, make_rng(2))
        for a, b, st in zip(ch.states, ch.states[1:], ch.stats[1:]):
            assert st.churn == len(set(a.as_tuples()) ^ set(b.as_tuples()))
            assert st.occupied == len(b)


class TestStats:
    def test_single_cell_fraction(self, params):
        ch = run_sampling_chain(params, make_state([(10, 10, 10)], 64), 0, SPEC, make_rng(0))
        occ, nb = search_space_stats(ch, 64)[0]
        assert occ == 1 / 262144 and nb == 25 / 262144

    def test_two_percent(self):
        assert 5243 / 64 ** 3 == pytest.approx(0.02, abs=1e-5)

    def test_neighborhood_dominates(self, params):
        ch = run_sampling_chain(params, seed_cell(), 5, SPEC, make_rng(1))
        for occ, nb in search_space_stats(ch, 16):
            assert nb >= occ


class TestDump:
    def test_layout(self, params, tmp_path):
        ch = run_sampling_chain(params, seed_cell(), 3, SPEC, make_rng(1))
        out = dump_chain(ch, tmp_path / "c", {"seed": 1})
        doc = json.loads((out / "chain.json").read_text())
        assert doc["T"] == len(ch) - 1 and doc["seed"] == 1 and doc["spec"] == {"radius": 2, "metric": "L1"}
        assert load_shape(out / "step_000.txt") == ch.states[0]
        if len(ch.final):
            assert load_shape(out / f"step_{len(ch) - 1:03d}.txt") == ch.final
