"""
Meshes, spaces and operators
============================

Build a nested family on a convex polygon, assemble mass and stiffness
matrices for a rough coefficient, and look at the first eigenvalue.
"""

import numpy as np

from maxreg_fem import (Polygon, assemble, build_polygon_mesh, build_space, domain_metrics, make_sample,
                        measure_quality, refine_uniform, spectral_decompose, validate_coefficient)

# %%
# A regular hexagon, meshed and refined twice. Uniform refinement keeps the
# shape regularity constant exactly.
hexagon = Polygon.regular(6)
mesh = build_polygon_mesh(hexagon, 0.3)
for level in range(3):
    if level:
        mesh = refine_uniform(mesh)
    q = measure_quality(mesh)
    print(f"level {level}: {mesh.n_triangles:5d} triangles, h = {q.h:.4f}, K = {q.K:.4f}")

met = domain_metrics(hexagon)
print(f"R0 = {met.R0:.4f}, K0 = {met.K0:.4f}, d_1 = {met.d(1):.5f}")

# %%
# The rough coefficient (1 + |x - z|^0.6) I is certified on every quadrature
# point before assembly.
a = make_sample("rough_isotropic", {"z": (0.1, 0.2), "beta": 0.6}, hexagon)
print(a.certificate())
space = build_space(mesh, 2)
print(validate_coefficient(a, space))

pair = assemble(space, a)
print(f"{space.n_interior} interior dofs, nnz(M) = {pair.M.nnz}, nnz(A) = {pair.A.nnz}")

# %%
# Dense spectral decomposition of the pencil (A, M).
spec = spectral_decompose(pair)
res, orth = spec.residuals()
print(f"lambda_1 = {spec.eigenvalues[0]:.5f}, residual {res:.1e}, M-orthonormality {orth:.1e}")

# %%
# On the unit square with a = I the first eigenvalue approaches 2 pi^2 from above.
from maxreg_fem import unit_square_mesh

m = unit_square_mesh(8)
for n in (8, 16, 32):
    s = build_space(m, 1)
    lam = spectral_decompose(assemble(s, make_sample("identity"))).eigenvalues[0]
    print(f"n = {n:2d}: lambda_1 - 2 pi^2 = {lam - 2 * np.pi**2:.5f}")
    m = refine_uniform(m)
