"""Independent reference implementations and self-check suites.

Everything here is written without the vectorized machinery of
:mod:`gca.kernel` and :mod:`gca.metrics` (dict lookups and explicit loops
instead of key packing, brute-force distances instead of k-d trees) so the
two can be checked against each other.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chains import InfusionSchedule, infusion_probs, make_rng, run_infusion_chain
from .data import FAMILIES, generate_family
from .grid import (
    NeighborhoodSpec,
    State,
    is_partially_connected,
    neighborhood_of_state,
    oracle_converge,
    oracle_sequence,
)
from .kernel import (CENTROID_SCALE, PROB_EPS, Architecture, ModelParams, init_params, loss_and_grad,
                     predict)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.detail} ({self.seconds:.2f}s)"


# -- brute-force metric twins -------------------------------------------------

def bf_sqdist(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 3)
    out = np.empty((len(X), len(Y)))
    for i in range(len(X)):
        d = X[i] - Y
        out[i] = (d * d).sum(axis=1)
    return out


def bf_chamfer(X, Y) -> float:
    d = bf_sqdist(X, Y)
    return float(d.min(axis=1).sum() + d.min(axis=0).sum())


def bf_chamfer_matrix(A, B) -> np.ndarray:
    return np.array([[bf_chamfer(a, b) for b in B] for a in A]).reshape(len(A), len(B))


def bf_mmd(gen, ref) -> float:
    return float(np.mean([min(bf_chamfer(g, r) for g in gen) for r in ref]))


def bf_cov(gen, ref) -> float:
    hit = set()
    for g in gen:
        ds = [bf_chamfer(g, r) for r in ref]
        hit.add(int(np.argmin(ds)))
    return len(hit) / len(ref)


def bf_one_nna(gen, ref) -> float:
    allsets = [(g, True) for g in gen] + [(r, False) for r in ref]
    correct = 0
    for i, (a, lab) in enumerate(allsets):
        best, best_lab = np.inf, None
        for j, (b, lab_b) in enumerate(allsets):
            if i == j:
                continue
            d = bf_chamfer(a, b)
            if d < best:
                best, best_lab = d, lab_b
        correct += best_lab == lab
    return 100.0 * correct / len(allsets)


def bf_tmd(completions) -> float:
    vals = []
    for group in completions:
        k = len(group)
        pair = [bf_chamfer(group[i], group[j]) for i in range(k) for j in range(i + 1, k)]
        vals.append(2.0 / (k * (k - 1)) * sum(pair))
    return float(np.mean(vals))


def bf_directed_hausdorff(P, C) -> float:
    return float(np.sqrt(bf_sqdist(P, C).min(axis=1).max()))


def bf_uhd(partial, completions) -> float:
    return float(np.mean([bf_directed_hausdorff(partial, c) for c in completions]))


# -- reference network --------------------------------------------------------

class ReferenceNet:
    """Dict-based re-implementation of the transition kernel for one state."""

    def __init__(self, params: ModelParams, s: State, spec: NeighborhoodSpec):
        self.params = params
        self.spec = spec
        cells = [tuple(int(v) for v in c) for c in s.cells]
        index = {c: i for i, c in enumerate(cells)}
        M = len(cells)
        self.M = M
        self.cells = cells
        self.nbrs = []
        for ls in params.arch.layer_specs:
            off = [tuple(int(v) for v in o) for o in ls.offsets]
            self.nbrs.append(np.array([[index.get((c[0] + o[0], c[1] + o[1], c[2] + o[2]), M) for o in off]
                                       for c in cells], dtype=np.int64).reshape(M, len(off)))
        # averaging matrix from the (cell, offset) sigmoids to the support
        D = s.resolution
        targets = {}
        for i, c in enumerate(cells):
            for n, o in enumerate(spec.offsets):
                t = (c[0] + int(o[0]), c[1] + int(o[1]), c[2] + int(o[2]))
                if D is not None and not all(0 <= v < D for v in t):
                    continue
                targets.setdefault(t, []).append(i * spec.size + n)
        self.support = sorted(targets)
        A = np.zeros((len(self.support), M * spec.size))
        for row, t in enumerate(self.support):
            for col in targets[t]:
                A[row, col] = 1.0 / len(targets[t])
        self.A = A

    def layer_inputs(self):
        """Per conv layer the gathered input ``g`` and pre-activation ``z``; and the last hidden."""
        if self.params.arch.centroid_features:
            n = self.M
            tot = [sum(c[k] for c in self.cells) for k in range(3)]
            rows = []
            for c in self.cells:
                d = [(n * c[k] - tot[k]) / n / CENTROID_SCALE for k in range(3)]
                rows.append([1.0] + d + [d[0] * d[0] + d[1] * d[1] + d[2] * d[2]])
            h = np.array(rows)
        else:
            h = np.ones((self.M, 1))
        out = []
        self.mean = None
        last = len(self.params.conv_w) - 1
        for l, (W, b, nbr) in enumerate(zip(self.params.conv_w, self.params.conv_b, self.nbrs)):
            K, cin, cout = W.shape
            hp = np.vstack([h, np.zeros((1, cin))])
            g = np.concatenate([hp[nbr[:, k]] for k in range(K)], axis=1)
            z = g @ W.reshape(K * cin, cout) + b
            if l == last and self.params.glob_w is not None:
                self.mean = np.append(h.mean(axis=0), 1.0 / self.M)
                z = z + self.mean @ self.params.glob_w
            out.append((g, z))
            h = np.maximum(z, 0.0)
        return out, h

    def _from_z(self, zb: np.ndarray, layer: int) -> np.ndarray:
        """Batched logits ``(P, M, N)`` from perturbed pre-activations of ``layer``."""
        h = np.maximum(zb, 0.0)
        P = zb.shape[0]
        last = len(self.params.conv_w) - 1
        for l in range(layer + 1, last + 1):
            W, b, nbr = self.params.conv_w[l], self.params.conv_b[l], self.nbrs[l]
            K, cin, cout = W.shape
            hp = np.concatenate([h, np.zeros((P, 1, cin))], axis=1)
            g = hp[:, nbr, :].reshape(P, self.M, K * cin)
            z = g @ W.reshape(K * cin, cout) + b
            if l == last and self.params.glob_w is not None:
                ctx = np.concatenate([h.mean(axis=1), np.full((P, 1), 1.0 / self.M)], axis=1)
                z = z + (ctx @ self.params.glob_w)[:, None, :]
            h = np.maximum(z, 0.0)
        return h @ self.params.head_w + self.params.head_b

    def loss_from_logits(self, logits: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Batched loss for logits ``(P, M, N)``."""
        sig = 1.0 / (1.0 + np.exp(-logits))
        prob = sig.reshape(len(logits), -1) @ self.A.T
        p = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
        return -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum(axis=1)

    def labels(self, target: State) -> np.ndarray:
        tset = set(target.as_tuples())
        return np.array([t in tset for t in self.support], dtype=np.float64)

    def logits(self) -> np.ndarray:
        _, h = self.layer_inputs()
        return h @ self.params.head_w + self.params.head_b

    def loss(self, target: State) -> float:
        return float(self.loss_from_logits(self.logits()[None], self.labels(target))[0])

    def numeric_grad(self, target: State, eps: float = 1e-5, chunk: int = 1024) -> ModelParams:
        """Central differences for every parameter, batched over perturbations."""
        y = self.labels(target)
        convs, h_last = self.layer_inputs()
        logits0 = h_last @ self.params.head_w + self.params.head_b
        grads = []

        def central(make):  # make(sign, idx) -> batched logits
            def run(n):
                g = np.empty(n)
                for lo in range(0, n, chunk):
                    idx = np.arange(lo, min(n, lo + chunk))
                    up = self.loss_from_logits(make(+eps, idx), y)
                    dn = self.loss_from_logits(make(-eps, idx), y)
                    g[idx] = (up - dn) / (2 * eps)
                return g
            return run

        for l, (W, b) in enumerate(zip(self.params.conv_w, self.params.conv_b)):
            g_in, z = convs[l]
            K, cin, cout = W.shape

            def mk_w(sign, idx, g_in=g_in, z=z, cout=cout, l=l):
                col, o = idx // cout, idx % cout
                zb = np.repeat(z[None], len(idx), axis=0)
                zb[np.arange(len(idx)), :, o] += sign * g_in[:, col].T
                return self._from_z(zb, l)

            def mk_b(sign, idx, z=z, l=l):
                zb = np.repeat(z[None], len(idx), axis=0)
                zb[np.arange(len(idx)), :, idx] += sign
                return self._from_z(zb, l)

            grads.append(central(mk_w)(W.size).reshape(W.shape))
            grads.append(central(mk_b)(b.size))

        N = logits0.shape[1]

        def mk_hw(sign, idx):
            c, n = idx // N, idx % N
            lb = np.repeat(logits0[None], len(idx), axis=0)
            lb[np.arange(len(idx)), :, n] += sign * h_last[:, c].T
            return lb

        def mk_hb(sign, idx):
            lb = np.repeat(logits0[None], len(idx), axis=0)
            lb[np.arange(len(idx)), :, idx] += sign
            return lb

        grads.append(central(mk_hw)(self.params.head_w.size).reshape(self.params.head_w.shape))
        grads.append(central(mk_hb)(self.params.head_b.size))
        if self.params.glob_w is not None:
            G = self.params.glob_w
            last = len(convs) - 1
            z_last = convs[last][1]
            mean = self.mean

            def mk_g(sign, idx):
                c, o = idx // G.shape[1], idx % G.shape[1]
                zb = np.repeat(z_last[None], len(idx), axis=0)
                zb[np.arange(len(idx)), :, o] += sign * mean[c][:, None]
                return self._from_z(zb, last)

            grads.append(central(mk_g)(G.size).reshape(G.shape))
        return ModelParams.from_arrays(self.params.arch, grads)


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps vanishing gradients from dividing by ~0."""
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


# -- random instances -----------------------------------------------------------

def random_small_state(rng: np.random.Generator, D: int, lo: int = 3, hi: int = 10, box: int = 4) -> State:
    """``lo..hi`` distinct cells inside a random ``box``-wide cube (so layers interact)."""
    n = int(rng.integers(lo, hi + 1))
    corner = rng.integers(0, D - box + 1, size=3)
    pool = np.stack(np.meshgrid(*[np.arange(box)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    pick = rng.choice(len(pool), size=n, replace=False)
    return State.from_cells(pool[pick] + corner, D)


def random_subset(s: State, rng: np.random.Generator, p: float = 0.5) -> State:
    return State(s.cells[rng.random(len(s)) < p], s.resolution)


# -- suites -------------------------------------------------------------------------

SPECS = tuple(NeighborhoodSpec(r, m) for r in (1, 2, 3) for m in ("L1", "Linf"))


def check_gradients(n_states: int = 20, seed: int = 0, spec: Optional[NeighborhoodSpec] = None,
                    tol: float = 1e-4, eps: float = 1e-5, D: int = 16,
                    arch_kw: Optional[dict] = None) -> CheckResult:
    """Analytic gradients against central differences of :class:`ReferenceNet`.

    ``arch_kw`` selects the architecture variant (defaults to the package default).
    """
    t0 = time.perf_counter()
    spec = spec or NeighborhoodSpec(2, "L1")
    arch_kw = dict(arch_kw or {})
    rng = make_rng(seed)
    worst = 0.0
    worst_name = ""
    redrawn = 0
    for i in range(n_states):
        while True:
            params = init_params(Architecture.for_spec(spec, **arch_kw), int(rng.integers(2**31)))
            # nonzero biases so every parameter matters
            params = params.map(lambda a: a + 0.1 * rng.standard_normal(a.shape) * (a.ndim == 1))
            s = random_small_state(rng, D)
            target = random_subset(neighborhood_of_state(s, spec), rng, 0.3)
            ref = ReferenceNet(params, s, spec)
            # differences straddling a ReLU kink measure nothing; keep clear of them
            if min(np.abs(z).min() for _, z in ref.layer_inputs()[0]) > 100 * eps:
                break
            redrawn += 1
        L, analytic = loss_and_grad(params, s, spec, target)
        numeric = ref.numeric_grad(target, eps=eps)
        # central differences carry absolute round-off ~ |L| * 2^-52 / eps,
        # so the floor for "relative" error grows with the loss
        floor = 1e-6 * max(1.0, abs(L))
        for (name, a), n in zip(analytic.named_arrays(), numeric.arrays()):
            e = float(relative_error(a, n, floor).max())
            if e > worst:
                worst, worst_name = e, f"state {i} {name}"
    dt = time.perf_counter() - t0
    return CheckResult("gradcheck", worst < tol,
                       f"max relative error {worst:.2e} at {worst_name} ({redrawn} near-kink draws skipped)",
                       dt, {"max_rel_error": worst, "redrawn": redrawn})


def check_oracle(n_cases: int = 200, seed: int = 0, D: int = 16) -> CheckResult:
    """Partially connected (shape, seed) pairs all converge within ``|x|`` oracle steps."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    ok = tried = 0
    worst_ratio = 0.0
    while tried < n_cases:
        fam = FAMILIES[int(rng.integers(len(FAMILIES)))]
        spec = SPECS[int(rng.integers(len(SPECS)))]
        x = generate_family(fam, 1, D, rng)[0].state
        inside = x.cells[rng.choice(len(x), size=int(rng.integers(1, 4)), replace=False)]
        outside = rng.integers(0, D, size=(int(rng.integers(0, 3)), 3))
        s = State.from_cells(np.vstack([inside, outside]), D)
        if not is_partially_connected(s, x, spec):
            continue
        tried += 1
        T = oracle_converge(s, x, spec, max_T=len(x))
        if T is not None and T <= len(x):
            ok += 1
            worst_ratio = max(worst_ratio, T / len(x))
    dt = time.perf_counter() - t0
    return CheckResult("oracle", ok == n_cases, f"{ok}/{n_cases} converged, max T'/|x| = {worst_ratio:.3f}",
                       dt, {"converged": ok, "cases": n_cases})


def in_bounds_shifts(s: State, spec: NeighborhoodSpec, rng: np.random.Generator, n: int,
                     max_tries: int = 1000) -> list:
    """Random nonzero shifts that keep ``N(s)`` entirely inside the grid."""
    D = s.resolution
    r = spec.radius
    lo = s.cells.min(axis=0) - r
    hi = s.cells.max(axis=0) + r
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        d = np.array([int(rng.integers(-lo[k], D - hi[k])) for k in range(3)])
        if d.any():
            out.append(d)
    return out


def check_equivariance(n_states: int = 20, n_shifts: int = 5, seed: int = 0,
                       spec: Optional[NeighborhoodSpec] = None, D: int = 16,
                       arch_kw: Optional[dict] = None) -> CheckResult:
    t0 = time.perf_counter()
    spec = spec or NeighborhoodSpec(2, "L1")
    rng = make_rng(seed)
    params = init_params(Architecture.for_spec(spec, **dict(arch_kw or {})), seed)
    worst = 0.0
    checked = 0
    mismatched = 0
    for _ in range(n_states):
        s = random_small_state(rng, D, 3, 12, box=5)
        while True:  # keep N(s) inside the grid
            if (s.cells.min() >= spec.radius) and (s.cells.max() < D - spec.radius):
                break
            s = random_small_state(rng, D, 3, 12, box=5)
        f = predict(params, s, spec)
        for d in in_bounds_shifts(s, spec, rng, n_shifts):
            g = predict(params, s.shifted(d), spec)
            fs = f.shifted(d)
            checked += 1
            if not np.array_equal(fs.support.cells, g.support.cells):
                mismatched += 1
                continue
            worst = max(worst, float(np.abs(fs.prob - g.prob).max()))
    passed = checked == n_states * n_shifts and mismatched == 0 and worst == 0.0
    dt = time.perf_counter() - t0
    return CheckResult("equivariance", passed,
                       f"{checked} shifts, {mismatched} support mismatches, max deviation {worst:.1e}", dt)


def check_collapse(n_cases: int = 20, seed: int = 0, D: int = 16) -> CheckResult:
    """alpha = 1 reproduces the oracle sequence; alpha = 0 reproduces the model's probabilities."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    spec = NeighborhoodSpec(2, "L1")
    params = init_params(Architecture.for_spec(spec), seed)
    seq_ok = 0
    worst = 0.0
    for i in range(n_cases):
        fam = FAMILIES[i % len(FAMILIES)]
        x = generate_family(fam, 1, D, rng)[0].state
        s0 = State(x.cells[int(rng.integers(len(x))):][:1], D)
        oracle = oracle_sequence(s0, x, spec, max_T=len(x))
        T = len(oracle) - 1
        chain = run_infusion_chain(None, x, InfusionSchedule(fixed=1.0), spec, make_rng(i), T, s0,
                                   stop_coverage=None)
        seq_ok += len(chain.states) == len(oracle) and all(a == b for a, b in zip(chain.states, oracle))
        s = random_small_state(rng, D, 3, 10)
        f = predict(params, s, spec)
        p0 = infusion_probs(f.prob, f.support, x, 0.0)
        worst = max(worst, float(np.abs(p0 - f.prob).max()))
    passed = seq_ok == n_cases and worst <= 1e-15
    dt = time.perf_counter() - t0
    return CheckResult("collapse", passed,
                       f"alpha=1 matches oracle in {seq_ok}/{n_cases}, alpha=0 max deviation {worst:.1e}", dt)


def check_metrics(n_cases: int = 50, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    from . import metrics as M

    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0

    def rand_sets(n):
        sets = []
        for _ in range(n):
            k = int(rng.integers(1, 51))
            if rng.random() < 0.5:  # integer grids produce many exact ties
                sets.append(rng.integers(0, 6, size=(k, 3)).astype(np.float64))
            else:
                sets.append(rng.normal(size=(k, 3)))
        return sets

    def rel(a, b):
        return abs(a - b) / max(1.0, abs(b))

    for _ in range(n_cases):
        gen = rand_sets(int(rng.integers(1, 11)))
        ref = rand_sets(int(rng.integers(1, 11)))
        groups = [rand_sets(int(rng.integers(2, 6))) for _ in range(int(rng.integers(1, 4)))]
        partial = rand_sets(1)[0]
        errs = [
            rel(M.chamfer(gen[0], ref[0]), bf_chamfer(gen[0], ref[0])),
            rel(M.mmd(gen, ref), bf_mmd(gen, ref)),
            rel(M.cov(gen, ref), bf_cov(gen, ref)),
            rel(M.one_nna(gen, ref), bf_one_nna(gen, ref)),
            rel(M.tmd(groups), bf_tmd(groups)),
            rel(M.uhd(partial, groups[0]), bf_uhd(partial, groups[0])),
        ]
        worst = max(worst, max(errs))
    # degenerate identities must hold exactly
    sets = rand_sets(5)
    ident = {
        "mmd(X, X) == 0": M.mmd(sets, sets) == 0.0,
        "cov(X, X) == 1": M.cov(sets, sets) == 1.0,
        "tmd(identical) == 0": M.tmd([[sets[0]] * 4]) == 0.0,
        "uhd(P subset C) == 0": M.uhd(sets[1][: max(1, len(sets[1]) // 2)], [sets[1], sets[1]]) == 0.0,
    }
    passed = worst <= tol and all(ident.values())
    failed = [k for k, v in ident.items() if not v]
    dt = time.perf_counter() - t0
    return CheckResult("metrics-oracle", passed,
                       f"max deviation {worst:.1e}" + (f", failed identities {failed}" if failed else ""), dt)


SUITES = {
    "gradcheck": check_gradients,
    "oracle": check_oracle,
    "equivariance": check_equivariance,
    "collapse": check_collapse,
    "metrics-oracle": check_metrics,
}
