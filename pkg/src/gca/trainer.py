"""Buffered infusion training with adaptive stopping.

A buffer of ``(state, shape, t)`` entries is kept at a fixed budget.  Each
step pops a random mini-batch, sums the Bernoulli NLL of ``x & N(s)`` over it,
advances every popped entry by one infusion transition, pushes unfinished
entries back and replaces finished ones with fresh starts, then applies one
Adam update.  An entry finishes ``T_hat`` steps after its state first covers
95% of its shape, or when it reaches ``T_max``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .chains import COVERAGE_TARGET, InfusionSchedule, draw, infusion_probs, make_rng
from .data import ShapeRecord, make_partial
from .errors import BufferUnderflow, ConfigError, EmptyDataset, NonFiniteLoss
from .grid import NeighborhoodSpec, State, coverage_fraction
from .kernel import (
    AdamHyper,
    Architecture,
    Batch,
    Checkpoint,
    ModelParams,
    OptimizerState,
    adam_step,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    buffer_size: int = 256
    batch_size: int = 32
    t_hat: int = 5
    t_max: int = 200
    w: float = 0.005
    radius: int = 2
    metric: str = "L1"
    channels: tuple = (1, 8, 16, 16, 8)
    conv_radius: int = 1
    conv_metric: str = "Linf"
    first_radius: Optional[int] = None
    global_context: bool = False
    centroid_features: bool = False
    lr: float = 5e-4
    decay_every: int = 10_000
    decay_factor: float = 0.5
    steps: int = 1000
    seed: int = 0
    mode: str = "generation"  # or "completion"
    checkpoint_every: int = 0  # 0: only at the end

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        ints = ("buffer_size", "batch_size", "t_max", "radius", "conv_radius", "decay_every")
        for name in ints:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.t_hat < 0 or self.steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("t_hat, steps and checkpoint_every must be >= 0")
        if self.batch_size > self.buffer_size:
            raise ConfigError("batch_size must not exceed buffer_size")
        if self.w < 0 or self.lr <= 0:
            raise ConfigError("w must be >= 0 and lr > 0")
        if self.mode not in ("generation", "completion"):
            raise ConfigError(f"mode must be 'generation' or 'completion', not {self.mode!r}")
        for name in ("metric", "conv_metric"):
            if getattr(self, name) not in ("L1", "Linf"):
                raise ConfigError(f"{name} must be L1 or Linf, not {getattr(self, name)!r}")

    @property
    def spec(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(self.radius, self.metric)

    @property
    def arch(self) -> Architecture:
        return Architecture.for_spec(self.spec, channels=self.channels, conv_radius=self.conv_radius,
                                     conv_metric=self.conv_metric, first_radius=self.first_radius,
                                     global_context=self.global_context,
                                     centroid_features=self.centroid_features)

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(lr=self.lr, decay_every=self.decay_every, decay_factor=self.decay_factor)

    @property
    def schedule(self) -> InfusionSchedule:
        return InfusionSchedule(self.w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training keys: {sorted(extra)}")
        return cls(**d)

    def digest(self) -> str:
        """Short hash of every setting except ``steps`` and ``checkpoint_every``."""
        d = self.to_dict()
        d.pop("steps")
        d.pop("checkpoint_every")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


@dataclass
class BufferEntry:
    state: State
    shape_id: int
    t: int = 0
    post_coverage_steps: Optional[int] = None
    origin: Optional[State] = None  # q0 draw this chain started from
    first_cov_t: Optional[int] = None

    def to_dict(self) -> dict:
        d = {"cells": self.state.cells.tolist(), "shape_id": self.shape_id, "t": self.t,
             "post_coverage_steps": self.post_coverage_steps, "first_cov_t": self.first_cov_t}
        if self.origin is not None:
            d["origin"] = self.origin.cells.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, D: int) -> "BufferEntry":
        def st(c):
            return State(np.asarray(c, dtype=np.int64).reshape(-1, 3), D)
        origin = d.get("origin")
        return cls(st(d["cells"]), int(d["shape_id"]), int(d["t"]), d["post_coverage_steps"],
                   None if origin is None else st(origin), d.get("first_cov_t"))


class Decision(enum.Enum):
    CONTINUE = "continue"
    EXTRA_PHASE = "extra_phase"
    RETIRE = "retire"


def stopping_criterion(entry: BufferEntry, x: State, t_hat: int, t_max: int) -> Decision:
    """Continue below 95% coverage, run ``t_hat`` extra steps after first
    reaching it, retire afterwards or at ``t_max``."""
    if entry.post_coverage_steps is not None:
        if entry.post_coverage_steps >= t_hat or entry.t >= t_max:
            return Decision.RETIRE
        return Decision.EXTRA_PHASE
    if not len(entry.state):
        return Decision.RETIRE
    if coverage_fraction(entry.state, x) >= COVERAGE_TARGET:
        return Decision.RETIRE if t_hat == 0 else Decision.EXTRA_PHASE
    if entry.t >= t_max:
        return Decision.RETIRE
    return Decision.CONTINUE


def initial_state(record: ShapeRecord, mode: str, rng: np.random.Generator) -> State:
    """Draw ``q0(.|x)``: one random cell of ``x`` or a random part-union partial."""
    x = record.state
    if mode == "generation" or len(record.parts) < 2:
        i = int(rng.integers(len(x)))
        return State(x.cells[i:i + 1], x.resolution)
    return make_partial(record, rng)


def fresh_entry(dataset: Sequence[ShapeRecord], mode: str, rng: np.random.Generator) -> BufferEntry:
    sid = int(rng.integers(len(dataset)))
    s0 = initial_state(dataset[sid], mode, rng)
    return BufferEntry(s0, sid, 0, None, s0)


def init_buffer(dataset: Sequence[ShapeRecord], config: TrainConfig, rng: np.random.Generator) -> list:
    if not len(dataset):
        raise EmptyDataset("training needs at least one shape")
    return [fresh_entry(dataset, config.mode, rng) for _ in range(config.buffer_size)]


@dataclass
class ChainLog:
    """Outcomes of retired infusion chains."""

    finished: int = 0
    covered: int = 0            # reached 95% coverage at all
    covered_before_full: int = 0  # ... while alpha < 1
    failed_empty: int = 0

    def fraction_before_full(self) -> Optional[float]:
        return None if not self.finished else self.covered_before_full / self.finished


@dataclass
class StepMetrics:
    loss: float
    entry_losses: list
    retired: int
    mean_t: float


def train_step(params: ModelParams, opt: OptimizerState, buffer: list, dataset: Sequence[ShapeRecord],
               config: TrainConfig, rng: np.random.Generator, chain_log: Optional[ChainLog] = None):
    """One step of buffered infusion training.

    Returns ``(params, opt, buffer, metrics)``; the input buffer is not mutated.
    """
    M = config.batch_size
    if len(buffer) < M:
        raise BufferUnderflow(f"buffer holds {len(buffer)} entries, batch needs {M}")
    spec = config.spec
    pick = np.sort(rng.choice(len(buffer), size=M, replace=False))
    chosen = set(pick.tolist())
    batch = [buffer[i] for i in pick]
    rest = [e for i, e in enumerate(buffer) if i not in chosen]

    xs = [dataset[e.shape_id].state for e in batch]
    B = Batch([e.state for e in batch], spec, params.arch)
    losses, grads, prob, _ = B.objective(params, xs)
    total = float(losses.sum())
    if not np.isfinite(total):
        dump = {"losses": losses.tolist(), "entries": [e.to_dict() for e in batch]}
        raise NonFiniteLoss("non-finite batch loss", dump)

    sched = config.schedule
    retired = 0
    pushed = []
    for b, e in enumerate(batch):
        lo, hi = B.sup_bounds[b], B.sup_bounds[b + 1]
        support = B.support_state(b)
        x = xs[b]
        p = infusion_probs(prob[lo:hi], support, x, sched.rate(e.t))
        nxt = draw(p, support, rng)
        counter = None if e.post_coverage_steps is None else e.post_coverage_steps + 1
        new = BufferEntry(nxt, e.shape_id, e.t + 1, counter, e.origin, e.first_cov_t)
        decision = stopping_criterion(new, x, config.t_hat, config.t_max)
        if new.first_cov_t is None and len(nxt) and coverage_fraction(nxt, x) >= COVERAGE_TARGET:
            new.first_cov_t = new.t
        if decision is Decision.EXTRA_PHASE and new.post_coverage_steps is None:
            new.post_coverage_steps = 0
        if decision is Decision.RETIRE:
            retired += 1
            if chain_log is not None:
                _log_chain(chain_log, new, sched)
            pushed.append(fresh_entry(dataset, config.mode, rng))
        else:
            pushed.append(new)

    new_params, new_opt = adam_step(params, grads, opt, config.hyper)
    metrics = StepMetrics(total, losses.tolist(), retired, float(np.mean([e.t for e in batch])))
    return new_params, new_opt, rest + pushed, metrics


def _log_chain(chain_log: ChainLog, entry: BufferEntry, sched: InfusionSchedule) -> None:
    chain_log.finished += 1
    t_cov = entry.first_cov_t
    if not len(entry.state):
        chain_log.failed_empty += 1
    if t_cov is not None:
        chain_log.covered += 1
        if sched.rate(t_cov) < 1.0:
            chain_log.covered_before_full += 1


@dataclass
class TrainState:
    params: ModelParams
    opt: OptimizerState
    buffer: list
    rng: np.random.Generator
    step: int = 0
    losses: list = field(default_factory=list)
    chain_log: ChainLog = field(default_factory=ChainLog)


def state_to_checkpoint(ts: TrainState, config: TrainConfig, resolution: int) -> Checkpoint:
    extra = {
        "config": config.to_dict(),
        "resolution": resolution,
        "rng": ts.rng.bit_generator.state,
        "buffer": [e.to_dict() for e in ts.buffer],
        "losses": ["%.17g" % v for v in ts.losses],
        "chain_log": asdict(ts.chain_log),
    }
    return Checkpoint(ts.params, config.spec, ts.step, ts.opt, config.hyper, extra)


def state_from_checkpoint(ck: Checkpoint) -> tuple:
    ex = ck.extra
    config = TrainConfig.from_dict(ex["config"])
    D = int(ex["resolution"])
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = ex["rng"]
    buffer = [BufferEntry.from_dict(d, D) for d in ex["buffer"]]
    opt = ck.opt if ck.opt is not None else OptimizerState.fresh(ck.params)
    ts = TrainState(ck.params, opt, buffer, rng, ck.step, [float(v) for v in ex["losses"]],
                    ChainLog(**ex["chain_log"]))
    return ts, config


def start_state(dataset: Sequence[ShapeRecord], config: TrainConfig) -> TrainState:
    """Fresh parameters, optimizer and buffer, all derived from ``config.seed``."""
    if not len(dataset):
        raise EmptyDataset("training needs at least one shape")
    ss = np.random.SeedSequence(config.seed)
    init_seed, loop_seed = ss.spawn(2)
    params = init_params(config.arch, init_seed.generate_state(1)[0])
    rng = make_rng(loop_seed)
    buffer = init_buffer(dataset, config, rng)
    return TrainState(params, OptimizerState.fresh(params), buffer, rng)


@dataclass
class TrainReport:
    steps: int
    losses: list
    stopping_fraction: Optional[float]
    chains_finished: int
    chains_covered: int
    chains_failed_empty: int
    checkpoints: list
    config: dict

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "loss": self.losses,
            "stopping_criterion_fraction": self.stopping_fraction,
            "chains_finished": self.chains_finished,
            "chains_covered": self.chains_covered,
            "chains_failed_empty": self.chains_failed_empty,
            "checkpoints": self.checkpoints,
            "config": self.config,
        }


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:07d}.json"


def checkpoint_schedule(config: TrainConfig) -> list:
    """Checkpoint file names a complete run writes, independent of interruptions."""
    every = config.checkpoint_every
    steps = list(range(every, config.steps + 1, every)) if every else []
    if not steps or steps[-1] != config.steps:
        steps.append(config.steps)
    return [checkpoint_name(t) for t in steps]


def run_dir_name(config: TrainConfig) -> str:
    return f"run-{config.digest()}-s{config.seed}"


def train(dataset: Sequence[ShapeRecord], config: TrainConfig, run_dir=None,
          resume=None, progress_every: int = 0) -> tuple:
    """Run ``config.steps`` training steps; returns ``(params, TrainReport)``.

    With ``run_dir`` checkpoints (``ckpt_<step>.json``) and
    ``training_report.json`` are written there.  ``resume`` is a checkpoint
    path or :class:`Checkpoint` to continue from.
    """
    dataset = list(dataset)
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        ts, saved = state_from_checkpoint(ck)
        if replace(saved, steps=config.steps, checkpoint_every=config.checkpoint_every) != config:
            raise ConfigError("resume checkpoint was written with a different configuration")
    else:
        ts = start_state(dataset, config)
    D = dataset[0].state.resolution
    out = Path(run_dir) if run_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def save(step):
        if out is not None:
            save_checkpoint(state_to_checkpoint(ts, config, D), out / checkpoint_name(step))

    while ts.step < config.steps:
        ts.params, ts.opt, ts.buffer, m = train_step(ts.params, ts.opt, ts.buffer, dataset, config,
                                                     ts.rng, ts.chain_log)
        ts.step += 1
        ts.losses.append(m.loss)
        if progress_every and ts.step % progress_every == 0:
            recent = ts.losses[-progress_every:]
            log.info("step %d loss %.3f stop-frac %s", ts.step, float(np.mean(recent)),
                     ts.chain_log.fraction_before_full())
        if config.checkpoint_every and ts.step % config.checkpoint_every == 0:
            save(ts.step)
    if config.steps == 0 or not config.checkpoint_every or config.steps % config.checkpoint_every:
        save(ts.step)
    ckpts = checkpoint_schedule(config) if out is not None else []
    cl = ts.chain_log
    report = TrainReport(ts.step, ts.losses, cl.fraction_before_full(), cl.finished, cl.covered,
                         cl.failed_empty, ckpts, config.to_dict())
    if out is not None:
        (out / "training_report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    return ts.params, report
