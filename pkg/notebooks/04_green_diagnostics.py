"""
Green's function diagnostics
============================

Discrete Green's function against the image-series heat kernel, then the
error functional and the shell functional against a nested reference.
"""

import numpy as np

from maxreg_fem import assemble, build_space, make_sample, refine_uniform, spectral_decompose, unit_square_mesh
from maxreg_fem.geometry import domain_metrics
from maxreg_fem.greens import (GreenDifference, discrete_green, dyadic_decomposition, green_error_functional,
                               heat_kernel_square, kappa_functional, reference_green)
from maxreg_fem.quadrature import graded_grid

# %%
# Gamma_h(0.05, ., centre) on a 1/32 grid against the method of images.
a = make_sample("identity")
base = unit_square_mesh(8)
fine_mesh = refine_uniform(refine_uniform(base))
fine = build_space(fine_mesh, 1)
fine_spec = spectral_decompose(assemble(fine, a))
g = discrete_green(fine, fine_spec, (0.5, 0.5), np.array([0.0, 0.05]))
G = heat_kernel_square(0.05, fine.dof_coords[fine.interior], np.array([[0.5, 0.5]]), n_images=10)[:, 0]
print("relative max error vs heat kernel", np.abs(g.field.snapshots[1] - G).max() / G.max())

# %%
# Error functional and shell functional for a coarse level against the
# two-levels-finer reference.
x0 = (5 / 12, 11 / 24)
grid = graded_grid(1.0, 60, 2.0)
coarse = build_space(base, 1)
gh = discrete_green(coarse, spectral_decompose(assemble(coarse, a)), x0, grid)
gr = reference_green(fine, fine_spec, gh, grid)
diff = GreenDifference(gh, gr)
print("I1, I2 =", green_error_functional(diff, None))

metrics = domain_metrics(coarse.mesh.polygon)
for C in (10.0, 0.05):
    dec = dyadic_decomposition(metrics, x0, coarse.mesh.h, C)
    rep = kappa_functional(diff, dec)
    print(f"C* = {C}: J* = {dec.J_star}, trivial = {dec.trivial}, K = {rep.total:.3f}")
