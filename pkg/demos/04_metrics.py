"""
Point-set metrics on toy shapes
===============================

Generated voxel shapes are compared as point sets.  The building block is
the (unnormalized) Chamfer distance; MMD, COV and 1-NNA compare a generated
set of shapes with a reference set, while TMD and UHD look at completions of
a partial shape.
"""

#%%
import numpy as np

from gca.data import generate_mix
from gca.metrics import chamfer, cov, mmd, one_nna, tmd, uhd, voxels_to_points

rng = np.random.default_rng(0)

# %%
# Chamfer by hand
# ---------------

print("chamfer({0}, {(3,4,0)}) =", chamfer([[0, 0, 0]], [[3, 4, 0]]))

# %%
# Generation metrics
# ------------------
# The reference set holds rings and boxes.  A "generator" that only makes
# rings covers at most half of the references and is easy to tell apart.
# Even an exact copy can miss COV = 1: after centering, two boxes of equal
# size are the same point set, and ties go to the first reference.

ref_states = [r.state for r in generate_mix(["ring", "box_shell"], 6, 16, seed=1)]
rings_only = [r.state for r in generate_mix(["ring"], 12, 16, seed=2)]
good = [r.state for r in generate_mix(["ring", "box_shell"], 6, 16, seed=3)]


def pts(states):
    return [voxels_to_points(s, center=True).points for s in states]


for name, gen in (("copy of ref", ref_states), ("fresh mix", good), ("rings only", rings_only)):
    g, r = pts(gen), pts(ref_states)
    print(f"{name:12s} MMD={mmd(g, r):8.1f}  COV={cov(g, r):.2f}  1-NNA={one_nna(g, r):5.1f}%")

# %%
# Completion metrics
# ------------------
# Ten noisy completions of a line segment: TMD grows with the spread, UHD
# with how far the completions drift from the partial input.

partial = np.array([[i, 0, 0] for i in range(5)], float)
for spread in (0.0, 0.5, 2.0):
    comps = [np.vstack([partial, partial + [0, 0, 3]]) + spread * rng.normal(size=(10, 3)) for _ in range(10)]
    print(f"spread {spread}: TMD={tmd([comps]):7.2f}  UHD={uhd(partial, comps):.2f}")
