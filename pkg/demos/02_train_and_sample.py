"""
Training a kernel and sampling shapes from one cell
===================================================

Training runs infusion chains from single cells of ring and box shapes.  Each
chain is nudged toward its target by mixing in the target indicator at a
slowly rising rate; the kernel learns to predict the next infused state.
After training, plain sampling chains start from one cell and should grow
into something ring- or box-like and then stop changing.

The full desk-scale preset trains for 12k steps (about 10 minutes on one
core).  By default this script trains a short run so it finishes quickly;
pass ``--steps 12000`` or ``--ckpt`` a saved checkpoint for the real thing.
"""

#%%
import argparse
import time

import numpy as np

from gca.chains import run_sampling_chain, spawn_rngs
from gca.config import resolve
from gca.data import center_cell, default_dataset
from gca.grid import State
from gca.kernel import load_checkpoint
from gca.trainer import train

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=3000)
ap.add_argument("--ckpt", help="skip training and load this checkpoint")
args, _ = ap.parse_known_args()

cfg = resolve("paper-generation", overrides={"steps": args.steps, "seed": 0})
D = cfg.grid

# %%
# Data and training
# -----------------

if args.ckpt:
    params = load_checkpoint(args.ckpt).params
else:
    ds = default_dataset(list(cfg.families), cfg.count, D, cfg.resolved_seed())
    print(f"{len(ds)} shapes, occupancy "
          f"{100 * min(len(r.state) for r in ds.records) / D ** 3:.1f}%.."
          f"{100 * max(len(r.state) for r in ds.records) / D ** 3:.1f}%")
    t0 = time.perf_counter()
    params, report = train(ds.records, cfg.train_config())
    losses = np.array(report.losses)
    print(f"trained {report.steps} steps in {time.perf_counter() - t0:.0f}s")
    for lo in range(0, len(losses), max(1, len(losses) // 6)):
        print(f"  steps {lo:5d}+  mean batch loss {losses[lo:lo + 500].mean():8.1f}")
    frac = report.stopping_fraction
    print(f"chains finished {report.chains_finished}, emptied {report.chains_failed_empty}, "
          "covered before alpha=1: " + ("n/a" if frac is None else f"{frac:.3f}"))

# %%
# Sampling from a single cell
# ---------------------------
# ``final churn`` is the fraction of the final state that changed in the
# last step; a converged chain holds its shape.

seed = State.from_cells([center_cell(D)], D)
for i, rng in enumerate(spawn_rngs(0, 8)):
    chain = run_sampling_chain(params, seed, cfg.T, cfg.spec, rng)
    sizes = [st.occupied for st in chain.stats]
    print(f"chain {i}: occupancy {100 * len(chain.final) / D ** 3:5.2f}%  "
          f"final churn {chain.final_churn():.2f}  size at t=10,50,100: "
          f"{[sizes[t] if t < len(sizes) else 0 for t in (10, 50, 100)]}")

# %%
# A slice through the last sample
# -------------------------------

cells = chain.final.cells
if len(cells):
    z = np.bincount(cells[:, 2], minlength=D).argmax()
    grid = np.full((D, D), ".")
    for x, y, _ in cells[cells[:, 2] == z]:
        grid[x, y] = "#"
    print(f"\nz = {z}")
    print("\n".join("".join(row) for row in grid))
