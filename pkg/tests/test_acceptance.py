"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Trained models are cached under ``$GCA_ACCEPT_CACHE`` (default
``.acceptance_cache`` in the repository root), one directory per run
config digest.  Training is deterministic, so a cached run is the same
model a fresh run would produce; the wall time measured when it was trained
is stored next to it.  Delete the directory to retrain.
"""

import filecmp
import json
import os
import time
from pathlib import Path

import numpy as np

from gca import metrics as M
from gca.chains import run_sampling_chain, spawn_rngs
from gca.cli import main
from gca.config import resolve
from gca.data import center_cell, default_dataset, make_partial
from gca.grid import State
from gca.kernel import load_checkpoint
from gca.trainer import checkpoint_name, train
from gca.verify import (check_collapse, check_equivariance, check_gradients, check_metrics,
                        check_oracle)

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("GCA_ACCEPT_CACHE", ROOT / ".acceptance_cache"))

# the desk-scale training architecture at default widths (keeps differences cheap),
# plus the optional centroid inputs
TRAIN_ARCH = {"first_radius": 4, "global_context": True, "centroid_features": True}


def trained(cfg):
    """``(params, report dict, training seconds, dataset)`` for a resolved RunConfig."""
    ds = default_dataset(list(cfg.families), cfg.count, cfg.grid, cfg.resolved_seed(), gap=cfg.gap)
    tc = cfg.train_config()
    run = CACHE / f"run-{cfg.digest()}"  # covers data settings and step count too
    meta = run / "timing.json"
    if not meta.is_file():
        t0 = time.perf_counter()
        train(ds.records, tc, run_dir=run)
        meta.write_text(json.dumps({"seconds": time.perf_counter() - t0}) + "\n", encoding="utf-8")
    ck = load_checkpoint(run / checkpoint_name(tc.steps))
    report = json.loads((run / "training_report.json").read_text(encoding="utf-8"))
    seconds = json.loads(meta.read_text(encoding="utf-8"))["seconds"]
    return ck.params, report, seconds, ds


def generation_config():
    return resolve("paper-generation", overrides={"seed": 0})


def completion_config():
    return resolve("paper-completion", overrides={"seed": 0, "grid": 16})


def bridge_config():
    # gap counts empty layers, so the plates are gap + 1 = 4 > r cells apart
    return resolve("paper-completion", overrides={"seed": 0, "grid": 16, "families": ["two_component"],
                                                 "radius": 3, "gap": 3, "steps": 1500})


class TestPropertyCriteria:
    def test_1_oracle_convergence(self, acceptance):
        r = check_oracle(n_cases=200, seed=0)
        ok = r.passed and r.seconds < 10
        acceptance(1, ok, f"{r.detail}, {r.seconds:.1f}s (limit 10s)")
        assert ok, r.line()

    def test_2_gradients(self, acceptance):
        results = [check_gradients(n_states=20, seed=0),
                   check_gradients(n_states=20, seed=0, arch_kw=TRAIN_ARCH)]
        ok = all(r.passed and r.seconds < 60 for r in results)
        detail = "; ".join(f"{name}: {r.detail}, {r.seconds:.1f}s"
                           for name, r in zip(("default", "training arch"), results))
        acceptance(2, ok, detail + " (limit 1e-4, 60s)")
        assert ok, detail

    def test_3_translation_equivariance(self, acceptance):
        results = [check_equivariance(20, 5, seed=0), check_equivariance(20, 5, seed=0, arch_kw=TRAIN_ARCH)]
        ok = all(r.passed for r in results)
        acceptance(3, ok, "; ".join(r.detail for r in results))
        assert ok

    def test_4_collapse_identities(self, acceptance):
        r = check_collapse(n_cases=20, seed=0)
        acceptance(4, r.passed, r.detail)
        assert r.passed, r.line()

    def test_7_metric_oracles(self, acceptance):
        r = check_metrics(n_cases=50, seed=0, tol=1e-12)
        acceptance(7, r.passed, r.detail)
        assert r.passed, r.line()


class TestTrainedCriteria:
    def test_5_desk_scale_training(self, acceptance):
        cfg = generation_config()
        assert cfg.grid == 16 and cfg.radius == 2 and cfg.metric == "L1"
        assert cfg.w == 0.005 and cfg.t_hat == 5 and cfg.steps <= 30_000
        params, report, seconds, ds = trained(cfg)
        assert len(ds) == 32
        frac = report["stopping_criterion_fraction"]

        D = cfg.grid
        seed = State.from_cells([center_cell(D)], D)
        occ, churn = [], []
        for rng in spawn_rngs(cfg.resolved_seed(), 16):
            chain = run_sampling_chain(params, seed, cfg.T, cfg.spec, rng)
            occ.append(len(chain.final) / D ** 3)
            churn.append(chain.final_churn())
        occ = np.array(occ)
        mean_churn = float(np.mean(churn))
        in_range = int(((occ >= 0.003) & (occ <= 0.10)).sum())
        ok_a = frac is not None and frac >= 0.90
        ok_b = in_range == 16 and mean_churn < 0.10
        ok_t = seconds < 1800
        acceptance(5, ok_a and ok_b and ok_t,
                   f"(a) {frac:.3f} of {report['chains_finished']} chains covered before alpha=1 (>= 0.90); "
                   f"(b) {in_range}/16 samples in [0.3%, 10%] (occupancy {100 * occ.min():.2f}%.."
                   f"{100 * occ.max():.2f}%), mean final churn {mean_churn:.3f} (< 0.10); "
                   f"{cfg.steps} steps in {seconds / 60:.1f} min (< 30)")
        assert ok_a, frac
        assert ok_b, (occ, churn)
        assert ok_t, seconds

    def test_6_completion_diversity(self, acceptance):
        cfg = completion_config()
        params, _, _, ds = trained(cfg)
        rng = np.random.Generator(np.random.PCG64(cfg.resolved_seed()))
        partials = [make_partial(ds.records[i], rng) for i in range(8)]
        tmds, uhds = [], []
        for g, (partial, base) in enumerate(zip(partials, spawn_rngs(cfg.resolved_seed() + 1, 8))):
            finals = [run_sampling_chain(params, partial, cfg.T, cfg.spec, r).final
                      for r in spawn_rngs(int(base.integers(2**31)), cfg.k)]
            if not all(len(s) for s in finals):  # an emptied chain has no completion to measure
                tmds.append(float("nan"))
                uhds.append(float("inf"))
                continue
            pts = [M.voxels_to_points(s).points for s in finals]
            tmds.append(M.tmd([pts]))
            uhds.append(M.uhd(M.voxels_to_points(partial).points, pts))
        positive = int(np.sum(np.array(tmds) > 0))
        finite = int(np.isfinite(uhds).sum())
        ok = positive >= 6 and finite == 8
        acceptance(6, ok, f"TMD > 0 for {positive}/8 partials (>= 6), UHD finite for {finite}/8; "
                          f"TMD {np.round(tmds, 1).tolist()}")
        assert ok, (tmds, uhds)

    def test_9_bridge_probe(self, acceptance):
        cfg = bridge_config()
        assert cfg.gap + 1 > cfg.radius
        params, _, _, ds = trained(cfg)
        rng = np.random.Generator(np.random.PCG64(cfg.resolved_seed()))
        reached = 0
        for i, chain_rng in enumerate(spawn_rngs(cfg.resolved_seed() + 1, 20)):
            rec = ds.records[i % len(ds)]
            lower = rec.parts["lower"]
            start = lower if rng.random() < 0.5 else rec.parts["upper"]
            other = rec.parts["upper"] if start is lower else lower
            chain = run_sampling_chain(params, start, cfg.T, cfg.spec, chain_rng)
            reached += any(len(s & other) for s in chain.states[1:])
        acceptance(9, reached >= 1, f"{reached}/20 completion chains reached the second component "
                                    f"(plates {cfg.gap + 1} cells apart, r = {cfg.radius})", gating=False)


class TestDeterminism:
    def _run_all(self, root: Path, resume: bool):
        data = root / "data"
        common = ["--grid", "16", "--seed", "3"]
        assert main(["gen-data", "--out", str(data), "--family", "bimodal", "--count", "4"] + common) == 0
        train_args = ["train", "--data", str(data), "--out", str(root / "runs"), "--mode", "completion",
                      "--steps", "40", "--checkpoint-every", "20", "--radius", "2"] + common
        assert main(train_args) == 0
        run = next((root / "runs").iterdir())
        if resume:  # interrupt: drop the final state and continue from step 20
            for name in (checkpoint_name(40), "training_report.json"):
                (run / name).unlink()
            assert main(train_args + ["--resume", str(run / checkpoint_name(20))]) == 0
        ckpt = str(run / checkpoint_name(40))
        assert main(["sample", "--ckpt", ckpt, "--count", "3", "--T", "10", "--out", str(root / "samples"),
                     "--seed", "3"]) == 0
        assert main(["complete", "--ckpt", ckpt, "--data", str(data), "--partials", "2", "--k", "3",
                     "--T", "10", "--out", str(root / "completions"), "--seed", "3"]) == 0
        assert main(["eval", "--gen", str(root / "completions"), "--mode", "completion",
                     "--out", str(root / "eval.json")]) == 0
        assert main(["eval", "--gen", str(data), "--ref", str(data), "--out", str(root / "eval_gen.json")]) == 0

    @staticmethod
    def _files(root: Path) -> dict:
        return {p.relative_to(root): p for p in sorted(root.rglob("*")) if p.is_file()}

    def test_8_byte_identical_reruns(self, tmp_path, acceptance, capsys):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        self._run_all(a, resume=False)
        self._run_all(b, resume=False)
        self._run_all(c, resume=True)
        fa, fb, fc = self._files(a), self._files(b), self._files(c)
        same_names = fa.keys() == fb.keys() == fc.keys()
        differ = [str(k) for k in fa if k not in fb or k not in fc
                  or not filecmp.cmp(fa[k], fb[k], shallow=False)
                  or not filecmp.cmp(fa[k], fc[k], shallow=False)]
        ok = same_names and not differ and len(fa) > 0
        capsys.readouterr()
        acceptance(8, ok, f"{len(fa)} files byte-identical across two runs and an interrupted+resumed run"
                   if ok else f"differing files: {differ[:5]}")
        assert ok, differ
