"""
Projections and the regularized delta
=====================================

L2 and Ritz projections of a smooth function, then the element-supported
regularized delta and the exponential decay of its discrete counterpart.
"""

import numpy as np

from maxreg_fem import assemble, build_space, l2_project, make_sample, refine_uniform, ritz_project, unit_square_mesh
from maxreg_fem.projections import delta_load, discrete_delta, regularized_delta


def f(p):
    return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])


def grad_f(p):
    x, y = np.pi * p[:, 0], np.pi * p[:, 1]
    return np.pi * np.column_stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)])


def l2_error(space, c):
    qd = space.quadrature(8)
    return np.sqrt(qd.weights @ (qd.B @ space.full(c) - f(qd.points)) ** 2)


# %%
# Both projections converge at second order in L2 for r = 1.
mesh = unit_square_mesh(8)
a = make_sample("rough_isotropic", {"beta": 0.6})
for n in (8, 16, 32):
    space = build_space(mesh, 1)
    pair = assemble(space, a)
    e_p = l2_error(space, l2_project(space, pair, f))
    e_r = l2_error(space, ritz_project(space, pair, f, grad_f))
    print(f"n = {n:2d}: |f - P_h f| = {e_p:.3e}, |f - R_h f| = {e_r:.3e}")
    mesh = refine_uniform(mesh)

# %%
# The regularized delta lives on one element and reproduces point values.
x0 = (5 / 12, 11 / 24)
space = build_space(unit_square_mesh(16), 2)
pair = assemble(space, make_sample("identity"))
delta = regularized_delta(space, x0)
basis = space.restrict(space.basis_at(*space.locate(x0)).toarray()[0])
print("reproduction error", np.abs(delta_load(space, delta) - basis).max())
print("L1, L2, Linf norms", [round(delta.lp_norm(p), 4) for p in (1, 2, np.inf)])

# %%
# Its L2 projection decays exponentially in units of h.
c, fit = discrete_delta(space, pair, delta)
print(f"amplitude {fit.amplitude:.3f}, rate {fit.rate:.3f} per h, residual {fit.residual:.3f}")
