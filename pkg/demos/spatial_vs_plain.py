"""Spatial weighting versus plain averaging on a clustered network.

Draws a few samples whose scores are spatially correlated, estimates the
mean function and the leading principal component with the plain and the
spatially weighted estimators, and prints the L1 errors.

    python demos/spatial_vs_plain.py
"""
import numpy as np

from spatfda.curvegrid import Curve, fourier_basis, l1_distance
from spatfda.numkernel import RngStream
from spatfda.simstudy import (
    DgpSpec,
    FieldSampler,
    aligned_l1,
    fpc_study_components,
    gen_fpc_dgp,
    gen_mean_dgp,
    mean_curve,
)
from spatfda.spatial_fpc import estimate_fpc_cm2, estimate_fpc_cm3, standard_fpc
from spatfda.spatial_mean import estimate_mean_m2, estimate_mean_m3, sample_mean
from spatfda.sphere import sample_locations

N, REPS = 100, 10

rng = RngStream(7)
locs = sample_locations(N, "clustered", rng.substream(0))

# mean function
spec = DgpSpec("mean-study", n=N)
sampler = FieldSampler(spec.score_models(), locs)
mu = mean_curve(spec.grid, "sqrt")
basis = fourier_basis(spec.grid)
errs = {"sample mean": [], "M2": [], "M3": []}
for r in range(REPS):
    data = gen_mean_dgp(spec, rng.substream(1).substream(r), sampler=sampler)
    errs["sample mean"].append(l1_distance(sample_mean(data), mu))
    errs["M2"].append(l1_distance(estimate_mean_m2(data), mu))
    errs["M3"].append(l1_distance(estimate_mean_m3(data, basis=basis), mu))
print(f"mean function, N={N}, {REPS} samples, average L1 error")
for name, e in errs.items():
    print(f"  {name:12s} {np.mean(e):.4f}")

# leading principal component of zero-mean curves
v1 = fpc_study_components(spec.grid)[0]
errs = {"standard": [], "CM2": [], "CM3": []}
fpc_spec = DgpSpec("fpc-study", n=N)
fpc_sampler = FieldSampler(fpc_spec.score_models(), locs)
for r in range(REPS):
    data = gen_fpc_dgp(locs, rng.substream(2).substream(r), fpc_spec, fpc_sampler)
    for name, est in (("standard", standard_fpc), ("CM2", estimate_fpc_cm2), ("CM3", estimate_fpc_cm3)):
        fp = est(data, basis=basis, p=2, **({} if name == "standard" else {"estimator": "CH"}))
        errs[name].append(aligned_l1(fp.components[0], v1, spec.grid))
print("first principal component, average L1 error")
for name, e in errs.items():
    print(f"  {name:12s} {np.mean(e):.4f}")
