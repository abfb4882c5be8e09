"""
Completing partial shapes
=========================

Bimodal shapes share a base plate and then carry either a set of walls or a
single pole.  Given only the plate, a completion model should sometimes grow
walls and sometimes a pole, so repeated completions of one partial differ.
TMD (mean pairwise Chamfer among completions) measures that spread; UHD
(directed Hausdorff from the partial to each completion) checks that the
input is kept.

Training the completion preset at 16^3 takes a few minutes; ``--steps``
shortens it.
"""

#%%
import argparse

import numpy as np

from gca import metrics as M
from gca.chains import run_sampling_chain, spawn_rngs
from gca.config import resolve
from gca.data import default_dataset, make_partial
from gca.kernel import load_checkpoint
from gca.trainer import train

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=4000)
ap.add_argument("--ckpt", help="skip training and load this checkpoint")
args, _ = ap.parse_known_args()

cfg = resolve("paper-completion", overrides={"grid": 16, "steps": args.steps, "seed": 0})
ds = default_dataset(list(cfg.families), cfg.count, cfg.grid, cfg.resolved_seed())
print("labels:", sorted({r.label for r in ds.records}))

# %%
# Training
# --------
# Infusion chains start from a random proper subset of each shape's parts.

if args.ckpt:
    params = load_checkpoint(args.ckpt).params
else:
    params, report = train(ds.records, cfg.train_config())
    frac = report.stopping_fraction
    print(f"chains finished {report.chains_finished}, covered before alpha=1: "
          + ("n/a" if frac is None else f"{frac:.3f}"))

# %%
# Ten completions per partial
# ---------------------------

rng = np.random.default_rng(0)
for g in range(6):
    rec = ds.records[g]
    partial = make_partial(rec, rng)
    finals = [run_sampling_chain(params, partial, cfg.T, cfg.spec, r).final
              for r in spawn_rngs(g, cfg.k)]
    kept = [s for s in finals if len(s)]
    P = M.voxels_to_points(partial).points
    C = [M.voxels_to_points(s).points for s in kept]
    tmd = M.tmd([C]) if len(C) > 1 else float("nan")
    uhd = M.uhd(P, C) if C else float("inf")
    grown = [len(s - partial) for s in kept]
    print(f"{rec.label:14s} partial {len(partial):3d} cells  TMD {tmd:8.1f}  UHD {uhd:5.2f}  "
          f"new cells per completion {grown}")
