"""Sampling chains (inference) and infusion chains (training-data emulation).

Randomness comes from a ``numpy.random.Generator``; each transition draws one
uniform per support cell in canonical cell order, so a chain is a pure
function of (params, initial state, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyInput
from .grid import NeighborhoodSpec, State, coverage_fraction, neighborhood_of_state, save_shape
from .kernel import ModelParams, OccupancyField, predict

COVERAGE_TARGET = 0.95


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; ``seed`` may be an int or a ``SeedSequence``."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list:
    return [make_rng(ss) for ss in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class InfusionSchedule:
    """Infusion rate ``alpha(t) = min(w * t, 1)``; ``fixed`` pins it to a constant."""

    w: float = 0.005
    fixed: Optional[float] = None

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("infusion speed must be >= 0")
        if self.fixed is not None and not 0.0 <= self.fixed <= 1.0:
            raise ValueError("fixed rate must lie in [0, 1]")

    def rate(self, t: int) -> float:
        if self.fixed is not None:
            return float(self.fixed)
        return float(min(max(self.w * t, 0.0), 1.0))


def draw(prob: np.ndarray, support: State, rng: np.random.Generator) -> State:
    """Independent Bernoulli draw per support cell."""
    u = rng.random(len(prob))
    return State(support.cells[u < prob], support.resolution)


def sample_from_field(f: OccupancyField, rng: np.random.Generator) -> State:
    return draw(f.prob, f.support, rng)


def infusion_probs(f_prob: Optional[np.ndarray], support: State, x: State, alpha: float) -> np.ndarray:
    """Per-cell mixture ``(1 - alpha) * p + alpha * [c in x]`` over ``support``."""
    in_x = np.isin(support.keys, x.keys).astype(np.float64)
    if alpha == 1.0:
        return in_x
    return (1.0 - alpha) * f_prob + alpha * in_x


def sample_transition(params: ModelParams, s: State, spec: NeighborhoodSpec,
                      rng: np.random.Generator) -> State:
    """Draw ``s' ~ p_theta(. | s)``; every cell of ``s'`` lies in ``N(s)``."""
    if not len(s):
        raise EmptyInput("cannot transition from an empty state")
    return sample_from_field(predict(params, s, spec), rng)


def infusion_transition(params: Optional[ModelParams], s: State, x: State, t: int,
                        sched: InfusionSchedule, spec: NeighborhoodSpec,
                        rng: np.random.Generator) -> State:
    """One step of the infusion chain at time ``t``.

    When ``alpha(t) == 1`` the network is not evaluated (``params`` may be
    ``None``) and the result is exactly ``N(s) & x``.
    """
    if not len(s):
        raise EmptyInput("cannot transition from an empty state")
    alpha = sched.rate(t)
    if alpha == 1.0:
        support = neighborhood_of_state(s, spec)
        p = infusion_probs(None, support, x, 1.0)
    else:
        f = predict(params, s, spec)
        support = f.support
        p = infusion_probs(f.prob, support, x, alpha)
    return draw(p, support, rng)


@dataclass
class StepStats:
    occupied: int
    neighborhood: int
    churn: Optional[int]  # |s^t ^ s^(t-1)|, None at t = 0

    def to_dict(self) -> dict:
        return {"occupied": self.occupied, "neighborhood": self.neighborhood, "churn": self.churn}


@dataclass
class Chain:
    """States ``s^0 .. s^T`` with per-step statistics.

    ``failed`` is set when a state became empty (terminal). For infusion
    chains ``first_coverage`` is the first step whose state covers at least
    95% of the target, if any.
    """

    states: list
    spec: NeighborhoodSpec
    stats: list = field(default_factory=list)
    failed: bool = False
    first_coverage: Optional[int] = None
    coverage: list = field(default_factory=list)

    @property
    def final(self) -> State:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.states)

    def append(self, s: State) -> None:
        prev = self.states[-1] if self.states else None
        self.states.append(s)
        nb = len(neighborhood_of_state(s, self.spec)) if len(s) else 0
        churn = None if prev is None else prev.symmetric_difference_size(s)
        self.stats.append(StepStats(len(s), nb, churn))

    def is_local(self) -> bool:
        """Every ``s^{t+1}`` is a subset of ``N(s^t)``."""
        return all(b.issubset(neighborhood_of_state(a, self.spec))
                   for a, b in zip(self.states, self.states[1:]) if len(a))

    def final_churn(self) -> float:
        """``|s^T ^ s^{T-1}| / |s^T|`` (inf for an empty final state)."""
        if len(self.states) < 2:
            return 0.0
        if not len(self.final):
            return float("inf")
        return self.stats[-1].churn / len(self.final)


def _start(s0: State, spec: NeighborhoodSpec) -> Chain:
    ch = Chain([], spec)
    ch.append(s0)
    return ch


def run_sampling_chain(params: ModelParams, s0: State, T: int, spec: NeighborhoodSpec,
                       rng: np.random.Generator) -> Chain:
    """``T`` sampling transitions from ``s0``; stops early (``failed``) on an empty state."""
    if not len(s0):
        raise EmptyInput("s0 must be non-empty")
    ch = _start(s0, spec)
    s = s0
    for _ in range(T):
        s = sample_transition(params, s, spec, rng)
        ch.append(s)
        if not len(s):
            ch.failed = True
            break
    return ch


def run_infusion_chain(params: Optional[ModelParams], x: State, sched: InfusionSchedule,
                       spec: NeighborhoodSpec, rng: np.random.Generator, T_max: int,
                       q0: State, stop_coverage: Optional[float] = COVERAGE_TARGET) -> Chain:
    """Infusion chain from ``q0`` toward ``x``.

    Runs until coverage of ``x`` reaches ``stop_coverage`` (``None`` disables
    the stop) or ``T_max`` transitions have been made.
    """
    if not len(x):
        raise EmptyInput("x must be non-empty")
    if not len(q0):
        raise EmptyInput("q0 must be non-empty")
    ch = _start(q0, spec)
    s = q0

    def note(t, st):
        c = coverage_fraction(st, x)
        ch.coverage.append(c)
        if ch.first_coverage is None and c >= COVERAGE_TARGET:
            ch.first_coverage = t
        return c

    c = note(0, s)
    t = 0
    while t < T_max and (stop_coverage is None or c < stop_coverage):
        s = infusion_transition(params, s, x, t, sched, spec, rng)
        t += 1
        ch.append(s)
        c = note(t, s)
        if not len(s):
            ch.failed = True
            break
    return ch


def search_space_stats(chain: Chain, D: int) -> list:
    """Per step ``(|s^t| / D^3, |N(s^t)| / D^3)``."""
    if not chain.states:
        raise EmptyInput("empty chain")
    vol = float(D) ** 3
    return [(st.occupied / vol, st.neighborhood / vol) for st in chain.stats]


def dump_chain(chain: Chain, out_dir, meta: Optional[dict] = None) -> Path:
    """Write ``step_<t>.txt`` shape files plus ``chain.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(chain.states) - 1)))
    for t, s in enumerate(chain.states):
        if len(s):
            save_shape(s, out / f"step_{t:0{width}d}.txt")
    doc = dict(meta or {})
    doc.update({
        "spec": chain.spec.to_dict(),
        "T": len(chain.states) - 1,
        "failed": chain.failed,
        "stats": [st.to_dict() for st in chain.stats],
    })
    if chain.first_coverage is not None:
        doc["first_coverage"] = chain.first_coverage
    (out / "chain.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out
