"""
Growing a shape from one cell
=============================

A state is a sparse set of occupied voxels.  Every transition may only
occupy cells inside the neighborhood ``N(s)`` of the current state, so a
shape has to be grown outward step by step.

When the next state is forced to be ``N(s) & x`` (full infusion), any seed
cell that is partially connected to the target ``x`` reaches it in a finite
number of steps.  This script shows that on a ring and on a two-plate shape
whose gap is wider than the neighborhood.
"""

#%%
import numpy as np

from gca.chains import InfusionSchedule, make_rng, run_infusion_chain, search_space_stats
from gca.data import generate_family
from gca.grid import (NeighborhoodSpec, State, coverage_fraction, is_partially_connected,
                      neighborhood_size, oracle_sequence)

D = 16
rng = np.random.default_rng(4)

# %%
# Neighborhood sizes
# ------------------
# The kernel emits one probability per offset, so the size of ``N`` is the
# width of the network head.

for r in (1, 2, 3):
    for metric in ("L1", "Linf"):
        print(f"r={r} {metric:4s} |N| = {neighborhood_size(NeighborhoodSpec(r, metric))}")

# %%
# Deterministic growth on a ring
# ------------------------------

spec = NeighborhoodSpec(2, "L1")
ring = generate_family("ring", 1, D, rng)[0].state
seed = State(ring.cells[:1], D)
seq = oracle_sequence(seed, ring, spec, max_T=len(ring))
print(f"\nring with {len(ring)} cells, seed {tuple(seed.cells[0])}")
for t, s in enumerate(seq):
    print(f"  t={t:2d} occupied={len(s):3d} coverage={coverage_fraction(s, ring):.2f}")

# %%
# The same thing through the infusion chain
# -----------------------------------------
# With the rate pinned at 1 the learned kernel is ignored entirely, and the
# chain reproduces the sequence above.

chain = run_infusion_chain(None, ring, InfusionSchedule(fixed=1.0), spec, make_rng(0),
                           len(seq) - 1, seed, stop_coverage=None)
print("infusion chain equals oracle:", chain.states == seq)

for t, (occ, nb) in enumerate(search_space_stats(chain, D)):
    if t % 2 == 0:
        print(f"  t={t:2d} occupied {100 * occ:5.2f}%  neighborhood {100 * nb:5.2f}% of the grid")

# %%
# A gap the neighborhood cannot cross
# -----------------------------------

plates = generate_family("two_component", 1, D, rng, gap=4)[0]
lower = plates.parts["lower"]
for r in (2, 3, 5):
    ok = is_partially_connected(lower, plates.state, NeighborhoodSpec(r, "L1"))
    print(f"r={r}: lower plate partially connected to the whole shape: {ok}")
