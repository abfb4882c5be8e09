"""Learned transition kernel: a small submanifold sparse-convolution network.

Every occupied cell carries a constant input feature of 1.  A stack of
submanifold convolutions (outputs only at occupied sites, empty neighbors
contribute nothing) with ReLU is followed by a linear head emitting one logit
per neighborhood offset.  Optionally the last conv layer also receives the
mean of its input features over the whole state, a translation-invariant
stand-in for the coarse levels of an encoder-decoder.  Sigmoid outputs are averaged per target cell to give
the Bernoulli occupancy field over ``N(s)``.

All arithmetic is float64 and the backward pass is written out by hand.
Several states can be evaluated together (:class:`Batch`); each state keeps
its own segment, so results for a state never depend on its batch-mates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    InvalidArchitecture,
    NonFiniteGradient,
    ParseError,
    TargetOutsideSupport,
)
from .grid import NeighborhoodSpec, State, pack_keys

CKPT_MAGIC = "gca-ckpt v1"
PROB_EPS = 1e-7
DENSE_LOOKUP_LIMIT = 1 << 22  # padded-grid slots below which neighbor lookup uses a table


@dataclass(frozen=True)
class Architecture:
    """Conv widths ``channels[0] -> ... -> channels[-1]`` then a head to ``n_out`` logits.

    ``channels[0]`` must be 1 (the constant occupancy feature).  With
    ``centroid_features`` every cell also gets its offset from the state's
    centroid and the squared length of that offset (see :func:`input_features`).
    """

    n_out: int
    channels: tuple = (1, 8, 16, 16, 8)
    conv_radius: int = 1
    conv_metric: str = "Linf"
    first_radius: Optional[int] = None  # wider kernel for the first layer only
    first_metric: str = "L1"
    global_context: bool = False  # state-mean features into the last conv layer
    centroid_features: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) < 2:
            raise InvalidArchitecture("need at least one conv layer")
        if any(c <= 0 for c in self.channels) or self.n_out <= 0:
            raise InvalidArchitecture(f"zero-width layer in {self.channels} -> {self.n_out}")
        if self.channels[0] != 1:
            raise InvalidArchitecture("input width must be 1")
        if self.conv_radius < 1 or (self.first_radius is not None and self.first_radius < 1):
            raise InvalidArchitecture("conv radius must be >= 1")

    @classmethod
    def for_spec(cls, spec: NeighborhoodSpec, **kw) -> "Architecture":
        return cls(n_out=spec.size, **kw)

    @property
    def in_width(self) -> int:
        return 5 if self.centroid_features else 1

    @property
    def widths(self) -> tuple:
        """Actual layer widths, input first."""
        return (self.in_width,) + self.channels[1:]

    @property
    def n_layers(self) -> int:
        return len(self.channels) - 1

    @property
    def conv_spec(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(self.conv_radius, self.conv_metric)

    @property
    def layer_specs(self) -> list:
        specs = [self.conv_spec] * self.n_layers
        if self.first_radius is not None:
            specs[0] = NeighborhoodSpec(self.first_radius, self.first_metric)
        return specs

    def to_dict(self) -> dict:
        d = {"n_out": self.n_out, "channels": list(self.channels),
             "conv_radius": self.conv_radius, "conv_metric": self.conv_metric}
        if self.first_radius is not None:
            d["first_radius"] = self.first_radius
            d["first_metric"] = self.first_metric
        if self.global_context:
            d["global_context"] = True
        if self.centroid_features:
            d["centroid_features"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        first = d.get("first_radius")
        return cls(n_out=int(d["n_out"]), channels=tuple(d["channels"]),
                   conv_radius=int(d["conv_radius"]), conv_metric=d["conv_metric"],
                   first_radius=None if first is None else int(first),
                   first_metric=d.get("first_metric", "L1"),
                   global_context=bool(d.get("global_context", False)),
                   centroid_features=bool(d.get("centroid_features", False)))


@dataclass
class ModelParams:
    """Network weights. Also used to hold gradients and Adam moments.

    ``conv_w[l]`` has shape ``(K, C_in, C_out)`` with ``K`` the conv offsets in
    canonical order; ``head_w`` is ``(C_last, N)``; ``glob_w`` (global-context
    architectures only) maps the state mean of the last conv layer's input,
    plus ``1/|s|``, as ``(C_in + 1, C_out)``.
    """

    arch: Architecture
    conv_w: list
    conv_b: list
    head_w: np.ndarray
    head_b: np.ndarray
    glob_w: Optional[np.ndarray] = None

    def named_arrays(self) -> list:
        out = []
        for l, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out.append((f"conv{l}.weight", w))
            out.append((f"conv{l}.bias", b))
        out.append(("head.weight", self.head_w))
        out.append(("head.bias", self.head_b))
        if self.glob_w is not None:
            out.append(("global.weight", self.glob_w))
        return out

    def arrays(self) -> list:
        return [a for _, a in self.named_arrays()]

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: Sequence[np.ndarray]) -> "ModelParams":
        L = arch.n_layers
        arrays = list(arrays)
        glob = arrays[2 * L + 2] if arch.global_context else None
        return cls(arch, arrays[0:2 * L:2], arrays[1:2 * L:2], arrays[2 * L], arrays[2 * L + 1], glob)

    def map(self, fn) -> "ModelParams":
        return ModelParams.from_arrays(self.arch, [fn(a) for a in self.arrays()])

    def copy(self) -> "ModelParams":
        return self.map(np.array)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.array(vec[i:i + a.size]).reshape(a.shape))
            i += a.size
        return ModelParams.from_arrays(self.arch, out)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def allclose(self, other: "ModelParams", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: "ModelParams") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.

    ``fan_in`` is ``K * C_in`` for a conv layer and ``C_last`` for the head;
    the global-context weight uses ``C_in`` of the last layer.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    conv_w, conv_b = [], []
    for cin, cout, lspec in zip(arch.widths[:-1], arch.widths[1:], arch.layer_specs):
        K = lspec.size
        bound = np.sqrt(6.0 / (K * cin))
        conv_w.append(rng.uniform(-bound, bound, size=(K, cin, cout)))
        conv_b.append(np.zeros(cout))
    c_last = arch.channels[-1]
    bound = np.sqrt(6.0 / c_last)
    head_w = rng.uniform(-bound, bound, size=(c_last, arch.n_out))
    glob_w = None
    if arch.global_context:
        cin = arch.widths[-2]
        glob_w = rng.uniform(-np.sqrt(6.0 / cin), np.sqrt(6.0 / cin), size=(cin + 1, c_last))
    return ModelParams(arch, conv_w, conv_b, head_w, np.zeros(arch.n_out), glob_w)


CENTROID_SCALE = 8.0


def input_features(cells: np.ndarray, sums: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Per-cell ``[1, d, |d|^2]`` with ``d`` the offset from the state's centroid.

    ``sums``/``sizes`` are the coordinate sum and cell count of each row's
    state.  ``n*c - sum`` is exact integer arithmetic, so a shifted state gets
    bit-identical features.  ``d`` is in units of ``CENTROID_SCALE`` cells.
    """
    n = sizes[:, None]
    d = (n * cells - sums).astype(np.float64) / n / CENTROID_SCALE
    return np.hstack([np.ones((len(cells), 1)), d, (d * d).sum(axis=1, keepdims=True)])


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class OccupancyField:
    """Averaged Bernoulli occupancy over ``support = N(s)``."""

    support: State
    prob: np.ndarray
    count: np.ndarray

    def prob_of(self, cell) -> float:
        """Occupancy probability of ``cell`` (0 outside the support)."""
        key = pack_keys(np.asarray([cell], dtype=np.int64))[0]
        i = np.searchsorted(self.support.keys, key)
        if i < len(self.support) and self.support.keys[i] == key:
            return float(self.prob[i])
        return 0.0

    def shifted(self, offset) -> "OccupancyField":
        off = np.asarray(offset, dtype=np.int64).reshape(1, 3)
        return OccupancyField(State(self.support.cells + off, self.support.resolution),
                              self.prob, self.count)


class Batch:
    """Index structure for a list of states evaluated together.

    Cells of all states are concatenated in order; each state's cells stay in
    canonical order.  Neighbor lookups use composite keys
    ``segment * P^3 + local`` so states never see each other.
    """

    def __init__(self, states: Sequence[State], spec: NeighborhoodSpec, arch: Architecture,
                 clamp: bool = True):
        if not states:
            raise EmptyInput("empty batch")
        for s in states:
            if not len(s):
                raise EmptyInput("cannot evaluate an empty state")
            if s.resolution is None:
                raise ValueError("kernel needs bounded states")
        if spec.size != arch.n_out:
            raise InvalidArchitecture(f"head emits {arch.n_out} logits but the neighborhood has {spec.size} cells")
        self.states = list(states)
        self.spec = spec
        self.clamp = clamp
        self.sizes = np.array([len(s) for s in states], dtype=np.int64)
        self.seg = np.repeat(np.arange(len(states), dtype=np.int64), self.sizes)
        self.cells = np.concatenate([s.cells for s in states])
        self.M = len(self.cells)
        res = np.array([s.resolution for s in states], dtype=np.int64)
        self.res = res
        layer_specs = arch.layer_specs
        pad = int(max([np.abs(ls.offsets).max() for ls in layer_specs] + [np.abs(spec.offsets).max()]))
        self._pad = pad
        P = int(res.max()) + 2 * pad
        self._P = P
        self._P3 = P ** 3
        self.keys = self.seg * self._P3 + self._local(self.cells)
        # keys are strictly increasing: canonical cell order within each segment

        # conv neighbor maps, one per distinct kernel; M marks "no occupied neighbor"
        maps = {}
        for ls in layer_specs:
            if ls not in maps:
                maps[ls] = self._neighbor_map(ls.offsets)
        self.layer_maps = [maps[ls] for ls in layer_specs]

        # aggregation map from (cell, head offset) to support index
        tgt = self.cells[:, None, :] + spec.offsets[None, :, :]
        if clamp:
            D = res[self.seg][:, None, None]
            self.valid = ((tgt >= 0) & (tgt < D)).all(axis=2)
        else:
            self.valid = np.ones(tgt.shape[:2], dtype=bool)
        tk = (self.keys[:, None] + self._offkeys(spec.offsets)[None, :])[self.valid]
        self.sup_keys, self.inv = np.unique(tk, return_inverse=True)
        self.count = np.bincount(self.inv, minlength=len(self.sup_keys)).astype(np.float64)
        self.sup_seg = self.sup_keys // self._P3
        self.sup_bounds = np.searchsorted(self.sup_seg, np.arange(len(states) + 1))
        self.cell_bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        self._support_cells = None

    def _neighbor_map(self, offsets):
        q = self.keys[:, None] + self._offkeys(offsets)[None, :]
        span = len(self.states) * self._P3
        if span <= DENSE_LOOKUP_LIMIT:
            table = np.full(span, self.M, dtype=np.int64)
            table[self.keys] = np.arange(self.M)
            nbr = table[q]
        else:
            pos = np.minimum(np.searchsorted(self.keys, q), self.M - 1)
            nbr = np.where(self.keys[pos] == q, pos, self.M)
        K = len(offsets)
        return nbr, K - 1 - np.arange(K)  # opp: index of -offset (offsets are symmetric, sorted)

    def _local(self, cells):
        P, pad = self._P, self._pad
        c = cells + pad
        return (c[:, 0] * P + c[:, 1]) * P + c[:, 2]

    def _offkeys(self, offsets):
        P = self._P
        return (offsets[:, 0] * P + offsets[:, 1]) * P + offsets[:, 2]

    def support_cells(self) -> np.ndarray:
        if self._support_cells is None:
            self._support_cells = self._decode_support()
        return self._support_cells

    def _decode_support(self) -> np.ndarray:
        P, pad = self._P, self._pad
        loc = self.sup_keys - self.sup_seg * self._P3
        out = np.empty((len(loc), 3), dtype=np.int64)
        out[:, 2] = loc % P
        out[:, 1] = (loc // P) % P
        out[:, 0] = loc // (P * P)
        return out - pad

    def support_state(self, b: int) -> State:
        lo, hi = self.sup_bounds[b], self.sup_bounds[b + 1]
        cells = self.support_cells()[lo:hi]
        return State(cells, self.res[b] if self.clamp else None)

    # -- forward / backward -------------------------------------------------

    def forward(self, params: ModelParams) -> tuple:
        """Logits ``(M, N)`` and the activation cache for :meth:`backward`."""
        M = self.M
        h = self.inputs(params.arch)
        cache = []
        last = len(params.conv_w) - 1
        mean = None
        for l, (W, b, (nbr, _)) in enumerate(zip(params.conv_w, params.conv_b, self.layer_maps)):
            K, cin, cout = W.shape
            hp = np.vstack([h, np.zeros((1, cin))])
            g = hp[nbr].reshape(M, K * cin)
            z = g @ W.reshape(K * cin, cout) + b
            if l == last and params.glob_w is not None:
                mean = self.context(h)
                z = z + (mean @ params.glob_w)[self.seg]
            h = np.maximum(z, 0.0)
            cache.append((g, z))
        logits = h @ params.head_w + params.head_b
        return logits, (cache, h, mean)

    def inputs(self, arch: Architecture) -> np.ndarray:
        if not arch.centroid_features:
            return np.ones((self.M, 1))
        sums = np.add.reduceat(self.cells, self.cell_bounds[:-1], axis=0)
        return input_features(self.cells, sums[self.seg], self.sizes[self.seg])

    def context(self, h: np.ndarray) -> np.ndarray:
        """Per-state mean of ``h`` with ``1/|s|`` appended as a last column."""
        inv = 1.0 / self.sizes[:, None]
        return np.hstack([self.segment_sum(h) * inv, inv])

    def segment_sum(self, a: np.ndarray) -> np.ndarray:
        """Per-state row sums, in cell order."""
        return np.add.reduceat(a, self.cell_bounds[:-1], axis=0)

    def backward(self, params: ModelParams, cache, dlogits: np.ndarray) -> ModelParams:
        convs, h, mean = cache
        M = self.M
        last = len(convs) - 1
        d_glob = None
        d_head_w = h.T @ dlogits
        d_head_b = dlogits.sum(axis=0)
        dh = dlogits @ params.head_w.T
        d_w = [None] * len(convs)
        d_b = [None] * len(convs)
        for l in range(len(convs) - 1, -1, -1):
            g, z = convs[l]
            W = params.conv_w[l]
            K, cin, cout = W.shape
            dz = dh * (z > 0)
            d_w[l] = (g.T @ dz).reshape(K, cin, cout)
            d_b[l] = dz.sum(axis=0)
            if l == last and mean is not None:
                dz_seg = self.segment_sum(dz)
                d_glob = mean.T @ dz_seg
                d_mean = (dz_seg @ params.glob_w[:-1].T) / self.sizes[:, None]
            if l > 0:
                # input j feeds output i through offset o iff i = nbr[j, opp(o)]
                dzp = np.vstack([dz, np.zeros((1, cout))])
                nbr, opp = self.layer_maps[l]
                dh = dzp[nbr[:, opp]].reshape(M, K * cout) @ \
                    W.transpose(0, 2, 1).reshape(K * cout, cin)
                if l == last and mean is not None:
                    dh = dh + d_mean[self.seg]
        return ModelParams(params.arch, d_w, d_b, d_head_w, d_head_b, d_glob)

    def aggregate(self, logits: np.ndarray) -> tuple:
        """Averaged probabilities over the concatenated supports, plus the sigmoids."""
        sig = sigmoid(logits)
        acc = np.bincount(self.inv, weights=sig[self.valid], minlength=len(self.sup_keys))
        return acc / self.count, sig

    def fields(self, prob: np.ndarray) -> list:
        out = []
        for b in range(len(self.states)):
            lo, hi = self.sup_bounds[b], self.sup_bounds[b + 1]
            out.append(OccupancyField(self.support_state(b), prob[lo:hi], self.count[lo:hi]))
        return out

    def labels(self, targets: Sequence[State]) -> np.ndarray:
        """1.0 where the support cell belongs to the state's target."""
        cells = self.support_cells()
        y = np.zeros(len(self.sup_keys))
        for b, x in enumerate(targets):
            lo, hi = self.sup_bounds[b], self.sup_bounds[b + 1]
            y[lo:hi] = np.isin(pack_keys(cells[lo:hi]), x.keys)
        return y

    def objective(self, params: ModelParams, targets: Sequence[State], want_grad: bool = True):
        """Summed Bernoulli NLL of ``targets & N(s)`` over the batch.

        Returns ``(per_state_losses, grads_or_None, prob, logits)``.
        """
        logits, cache = self.forward(params)
        prob, sig = self.aggregate(logits)
        y = self.labels(targets)
        pc = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
        cell_loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
        losses = np.bincount(self.sup_seg, weights=cell_loss, minlength=len(self.states))
        if not want_grad:
            return losses, None, prob, logits
        inside = (prob > PROB_EPS) & (prob < 1.0 - PROB_EPS)
        dprob = np.where(inside, -(y / pc) + (1.0 - y) / (1.0 - pc), 0.0)
        dsig = np.zeros_like(logits)
        dsig[self.valid] = (dprob / self.count)[self.inv]
        dlogits = dsig * sig * (1.0 - sig)
        grads = self.backward(params, cache, dlogits)
        return losses, grads, prob, logits


# -- single-state API ---------------------------------------------------------

def forward(params: ModelParams, s: State, spec: NeighborhoodSpec) -> np.ndarray:
    """Per-cell logits, rows in canonical cell order, columns in offset order."""
    logits, _ = Batch([s], spec, params.arch).forward(params)
    return logits


def aggregate(logits: np.ndarray, s: State, spec: NeighborhoodSpec, bounds: bool = True) -> OccupancyField:
    """Cell-wise average of the sigmoid predictions over ``N(s)``.

    With ``bounds`` targets outside the grid are dropped (not renormalized).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (len(s), spec.size):
        raise ValueError(f"logits shape {logits.shape} != ({len(s)}, {spec.size})")
    # aggregation needs no weights; any architecture with matching n_out works
    b = Batch([s], spec, Architecture(n_out=spec.size), clamp=bounds)
    prob, _ = b.aggregate(logits)
    return b.fields(prob)[0]


def predict(params: ModelParams, s: State, spec: NeighborhoodSpec) -> OccupancyField:
    b = Batch([s], spec, params.arch)
    logits, _ = b.forward(params)
    prob, _ = b.aggregate(logits)
    return b.fields(prob)[0]


def predict_many(params: ModelParams, states: Sequence[State], spec: NeighborhoodSpec) -> list:
    b = Batch(states, spec, params.arch)
    logits, _ = b.forward(params)
    prob, _ = b.aggregate(logits)
    return b.fields(prob)


def loss(field: OccupancyField, target: State) -> float:
    """Bernoulli negative log-likelihood (nats) of ``target`` under ``field``."""
    inside = np.isin(target.keys, field.support.keys)
    if not inside.all():
        raise TargetOutsideSupport(f"{int((~inside).sum())} target cells lie outside N(s)")
    y = np.isin(field.support.keys, target.keys).astype(np.float64)
    p = np.clip(field.prob, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum())


def loss_and_grad(params: ModelParams, s: State, spec: NeighborhoodSpec, target: State):
    b = Batch([s], spec, params.arch)
    sup = b.support_state(0)
    if not np.isin(target.keys, sup.keys).all():
        raise TargetOutsideSupport("target must be a subset of N(s)")
    losses, grads, _, _ = b.objective(params, [target])
    return float(losses[0]), grads


def backward(params: ModelParams, s: State, spec: NeighborhoodSpec, target: State) -> ModelParams:
    """Exact gradient of ``loss(aggregate(forward(params, s)), target)``."""
    return loss_and_grad(params, s, spec, target)[1]


# -- optimizer ------------------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_every: int = 10_000
    decay_factor: float = 0.5

    def lr_at(self, completed_steps: int) -> float:
        return self.lr * self.decay_factor ** (completed_steps // self.decay_every)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "beta1", "beta2", "eps", "decay_every", "decay_factor")}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamHyper":
        return cls(**d)


@dataclass
class OptimizerState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.step)


def adam_step(params: ModelParams, grads: ModelParams, opt: OptimizerState,
              hyper: AdamHyper = AdamHyper()) -> tuple:
    """One bias-corrected Adam update; returns new ``(params, opt_state)``.

    The learning rate is ``lr * decay_factor ** (opt.step // decay_every)``.
    """
    for name, g in grads.named_arrays():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    t = opt.step + 1
    lr = hyper.lr_at(opt.step)
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), opt.m.arrays(), opt.v.arrays()):
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps))
        new_m.append(m)
        new_v.append(v)
    arch = params.arch
    return (ModelParams.from_arrays(arch, new_p),
            OptimizerState(ModelParams.from_arrays(arch, new_m), ModelParams.from_arrays(arch, new_v), t))


# -- gca-ckpt v1 ---------------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": " ".join("%.17g" % v for v in a.ravel().tolist())}


def _decode_array(d: dict, where: str) -> np.ndarray:
    try:
        vals = [float(t) for t in d["data"].split()] if d["data"] else []
        return np.array(vals, dtype=np.float64).reshape(d["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad array {where}: {exc}") from None


def _encode_params(p: ModelParams) -> dict:
    return {name: _encode_array(a) for name, a in p.named_arrays()}


def _decode_params(arch: Architecture, d: dict, template: ModelParams) -> ModelParams:
    arrays = []
    for name, ref in template.named_arrays():
        if name not in d:
            raise ParseError(f"missing array {name}")
        a = _decode_array(d[name], name)
        if a.shape != ref.shape:
            raise ParseError(f"array {name} has shape {a.shape}, expected {ref.shape}")
        arrays.append(a)
    return ModelParams.from_arrays(arch, arrays)


@dataclass
class Checkpoint:
    params: ModelParams
    spec: NeighborhoodSpec
    step: int = 0
    opt: Optional[OptimizerState] = None
    hyper: AdamHyper = field(default_factory=AdamHyper)
    extra: dict = field(default_factory=dict)


def checkpoint_to_text(ck: Checkpoint) -> str:
    doc = {
        "format": CKPT_MAGIC,
        "architecture": ck.params.arch.to_dict(),
        "neighborhood": ck.spec.to_dict(),
        "step": int(ck.step),
        "params": _encode_params(ck.params),
        "optimizer": None if ck.opt is None else {
            "step": int(ck.opt.step),
            "hyper": ck.hyper.to_dict(),
            "m": _encode_params(ck.opt.m),
            "v": _encode_params(ck.opt.v),
        },
        "extra": ck.extra,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def checkpoint_from_text(text: str, path=None) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path) from None
    if not isinstance(doc, dict) or doc.get("format") != CKPT_MAGIC:
        raise ParseError(f"not a {CKPT_MAGIC} document", path)
    try:
        arch = Architecture.from_dict(doc["architecture"])
        spec = NeighborhoodSpec.from_dict(doc["neighborhood"])
        template = init_params(arch, 0)
        params = _decode_params(arch, doc["params"], template)
        opt, hyper = None, AdamHyper()
        if doc.get("optimizer") is not None:
            o = doc["optimizer"]
            hyper = AdamHyper.from_dict(o["hyper"])
            opt = OptimizerState(_decode_params(arch, o["m"], template),
                                 _decode_params(arch, o["v"], template), int(o["step"]))
        return Checkpoint(params, spec, int(doc["step"]), opt, hyper, doc.get("extra") or {})
    except ParseError as exc:
        raise ParseError(str(exc), path) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint: {exc!r}", path) from None


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_text(checkpoint_to_text(ck), encoding="utf-8", newline="\n")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError("checkpoint not found", path) from None
    return checkpoint_from_text(text, path)
