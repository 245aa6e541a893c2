"""Configuration-driven refinement sweeps and their reports.

Each ``run_*`` function measures one estimate on a nested family of meshes and
returns a ``SweepReport``. "Uniform in h" is operationalized as a spread
(max/min over levels) below a threshold.
"""
from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .coefficients import make_sample
from .evolution import DenseCapExceeded, duhamel_modal, spectral_decompose
from .fespace import assemble, build_space, validate_coefficient
from .geometry import Polygon, build_polygon_mesh, domain_metrics, locate_point, measure_quality, refine_uniform
from .greens import (GreenDifference, NodalInterpolant, discrete_green, dyadic_decomposition,
                     gaussian_tail_fit, green_error_functional, kappa_functional, l1_profile,
                     local_energy_ratio, reference_green)
from .norms import linf_stability_constant, space_norm, time_norm, w1q_norm
from .projections import clement_patch_constant, load_vector, ritz_load, superapprox_check
from .quadrature import graded_grid

log = logging.getLogger(__name__)

SIG_DIGITS = 12


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Experiment parameters; ``levels`` are ``1/target_h`` values of a nested family."""

    domain: dict = field(default_factory=lambda: {"kind": "unit_square"})
    coefficient: dict = field(default_factory=lambda: {"name": "identity", "params": {}})
    degree: int = 1
    levels: list = field(default_factory=lambda: [8, 16, 32])
    pq: list = field(default_factory=lambda: [[2, 2]])
    T: float = 1.0
    grading: float = 2.0
    n_time: int = 200
    C_star: list = field(default_factory=lambda: [10.0])
    samples: int = 20
    seed: int = 0
    threshold: float = 3.0
    out: str = "out"
    reference_level: Optional[int] = None
    x0: Optional[list] = None
    energy_shells: list = field(default_factory=lambda: [1])
    disk: dict = field(default_factory=lambda: {"center": [0.5, 0.5], "radius": 0.2})
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.C_star, (int, float)):
            self.C_star = [float(self.C_star)]
        if self.degree < 1:
            raise ConfigError("degree must be >= 1")
        if not self.levels:
            raise ConfigError("at least one refinement level is required")
        base = self.levels[0]
        for n in self.levels:
            ratio = n / base
            if ratio < 1 or not float(np.log2(ratio)).is_integer():
                raise ConfigError(f"level {n} is not a dyadic refinement of {base}")
        if self.T <= 0 or self.n_time < 1 or self.samples < 1:
            raise ConfigError("T, n_time and samples must be positive")
        self.pq = [[float(p), float(q)] for p, q in self.pq]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def polygon(self) -> Polygon:
        kind = self.domain.get("kind", "vertices")
        if kind == "unit_square":
            return Polygon.unit_square()
        if kind == "regular":
            return Polygon.regular(int(self.domain["n"]), float(self.domain.get("radius", 1.0)),
                                   tuple(self.domain.get("center", (0.0, 0.0))))
        return Polygon(np.asarray(self.domain["vertices"], dtype=float))

    def coefficient_field(self):
        return make_sample(self.coefficient["name"], self.coefficient.get("params"), self.polygon())


def _round(x):
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if not np.isfinite(x):
            raise ArithmeticError("non-finite value in report")
        return float(f"{x:.{SIG_DIGITS}g}")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def spread(values) -> float:
    v = np.abs(np.asarray([x for x in values if x is not None], dtype=float))
    if v.size == 0:
        return float("nan")
    if np.all(v == 0):
        return 1.0
    if np.any(v == 0):
        return float("inf")
    return float(v.max() / v.min())


def slope(h, values) -> float:
    """Least-squares slope of ``log value`` against ``log h``."""
    return float(np.polyfit(np.log(h), np.log(values), 1)[0])


@dataclass
class SweepReport:
    sweep: str
    levels: list
    checks: list
    metadata: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def values(self, quantity: str) -> list:
        return [lv["values"].get(quantity) for lv in self.levels]

    def check(self, quantity: str, kind: str) -> dict:
        for c in self.checks:
            if c["quantity"] == quantity and c["kind"] == kind:
                return c
        raise KeyError((quantity, kind))

    def add_spread(self, quantity: str, threshold: float):
        s = spread(self.values(quantity))
        ok = bool(np.isfinite(s) and s <= threshold)
        self.checks.append({"quantity": quantity, "kind": "spread", "value": s if np.isfinite(s) else None,
                            "threshold": threshold, "passed": ok})

    def add_max(self, quantity: str, bound: float):
        v = max(x for x in self.values(quantity) if x is not None)
        self.checks.append({"quantity": quantity, "kind": "max", "value": v, "threshold": bound,
                            "passed": bool(v <= bound)})

    def add_slope(self, quantity: str, minimum: float):
        h = [lv["h"] for lv in self.levels]
        s = slope(h, self.values(quantity))
        self.checks.append({"quantity": quantity, "kind": "slope", "value": s, "threshold": minimum,
                            "passed": bool(s >= minimum)})

    def to_dict(self) -> dict:
        return _round({"sweep": self.sweep, "passed": self.passed, "levels": self.levels,
                       "checks": self.checks, "metadata": self.metadata})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def rng_for(seed: int, *stream) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and a stream tuple of small integers."""
    key = int(seed) & (2**64 - 1)
    sub = 0
    for s in stream:
        sub = (sub * 1_000_003 + int(s)) & (2**64 - 1)
    return np.random.Generator(np.random.Philox(key=[key, sub]))


class Level:
    """Mesh, space, operators and (lazily) the spectral decomposition at one refinement level."""

    def __init__(self, index, n, mesh, config: ExperimentConfig, coefficient):
        self.index, self.n, self.mesh = index, n, mesh
        self.space = build_space(mesh, config.degree)
        self.coefficient = coefficient
        self.pair = assemble(self.space, coefficient)
        self._spec = None

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def spec(self):
        if self._spec is None:
            self._spec = spectral_decompose(self.pair)
        return self._spec

    def info(self) -> dict:
        q = measure_quality(self.mesh)
        rep = validate_coefficient(self.coefficient, self.space)
        return {"level": self.index, "n": self.n, "h": q.h, "quality": {"h": q.h, "rho_min": q.rho_min, "K": q.K},
                "n_interior": self.space.n_interior, "coefficient_check": {"min_eig": rep.min_eig,
                                                                           "max_eig": rep.max_eig,
                                                                           "passed": rep.passed},
                "values": {}}


def nested_meshes(config: ExperimentConfig, extra: tuple = ()):
    """Meshes for ``config.levels`` (and any ``extra`` levels), all refinements of the coarsest."""
    wanted = sorted(set(list(config.levels) + list(extra)))
    base = min(wanted)
    mesh = build_polygon_mesh(config.polygon(), 1.0 / base)
    out = {}
    n = base
    while n <= max(wanted):
        if n in wanted:
            out[n] = mesh
        mesh = refine_uniform(mesh)
        n *= 2
    return out


def _levels(config: ExperimentConfig, coefficient, extra=()):
    meshes = nested_meshes(config, extra)
    levels = [Level(i, n, meshes[n], config, coefficient) for i, n in enumerate(config.levels)]
    return levels, meshes


def _metadata(config: ExperimentConfig, coefficient, **extra) -> dict:
    cfg = asdict(config)
    cfg.pop("out")  # reports from different output directories stay byte-identical
    md = {"config": cfg, "coefficient": coefficient.certificate(), "environment": environment(),
          "quadrature_order": config.degree * 2 + 2, "grading": config.grading, "C_star": config.C_star}
    md.update(extra)
    return md


def _check_pq(pq):
    for p, q in pq:
        if not (1 < p < np.inf and 1 < q < np.inf):
            raise ConfigError(f"(p, q) = ({p}, {q}) outside (1, inf)")


def _pq_key(p, q) -> str:
    return f"p={p:g},q={q:g}"


def run_semigroup_sweep(config: ExperimentConfig) -> SweepReport:
    """``max (|E_h v|_inf + t |E_h' v|_inf) / |v|_inf`` over seeded random ``v`` per level."""
    a = config.coefficient_field()
    levels, _ = _levels(config, a)
    grid = graded_grid(config.T, config.n_time, config.grading)
    rows, skipped = [], []
    for lv in levels:
        info = lv.info()
        try:
            spec = lv.spec
        except DenseCapExceeded as exc:
            log.warning("level %s skipped: %s", lv.n, exc)
            skipped.append(lv.n)
            continue
        samples = [rng_for(config.seed, 1, lv.index, s).uniform(-1, 1, lv.space.n_interior)
                   for s in range(config.samples)]
        info["values"]["linf_stability"] = linf_stability_constant(spec, lv.space, samples, grid)
        rows.append(info)
    rep = SweepReport("semigroup", rows, [], _metadata(config, a, skipped_levels=skipped))
    rep.add_spread("linf_stability", config.threshold)
    return rep


def _time_profiles(rng, grid, T, kind):
    """``(K, nt)`` scalar time profiles: smooth trigonometric or piecewise constant."""
    if kind == "smooth":
        k = np.arange(1, 4)
        ph = rng.uniform(0, 2 * np.pi, 3)
        return np.sin(np.pi * np.outer(k, grid) / T + ph[:, None])
    cuts = np.sort(rng.uniform(0, T, 7))
    piece = np.searchsorted(cuts, grid)
    amp = rng.standard_normal((3, 8))
    return amp[:, piece]


def _maxreg_samples(config, lv, grid, stream):
    """Finite element loads ``F(t) = sum_k theta_k(t) c_k`` (interior coefficients)."""
    for s in range(config.samples):
        rng = rng_for(config.seed, stream, lv.index, s)
        kind = "smooth" if s % 2 == 0 else "rough"
        theta = _time_profiles(rng, grid, config.T, kind)
        C = rng.standard_normal((theta.shape[0], lv.space.n_interior))
        yield kind, theta.T @ C


def run_maxreg_sweep(config: ExperimentConfig) -> SweepReport:
    """``(|u_h'| + |A_h u_h|) / |f|`` in ``L^p(L^q)`` with ``u_h(0) = 0``, max over seeded loads."""
    _check_pq(config.pq)
    a = config.coefficient_field()
    levels, _ = _levels(config, a)
    grid = graded_grid(config.T, config.n_time, config.grading)
    rows = []
    for lv in levels:
        info = lv.info()
        spec, space = lv.spec, lv.space
        lam = spec.eigenvalues
        best = {_pq_key(p, q): 0.0 for p, q in config.pq}
        for _, F in _maxreg_samples(config, lv, grid, 2):
            sol = duhamel_modal(spec, F @ lv.pair.M, grid)
            ut = spec.synthesize(sol.time_derivative(lam))
            Au = spec.synthesize(sol.operator(lam))
            for p, q in config.pq:
                num = time_norm(space_norm(space, ut, q), grid, p) + time_norm(space_norm(space, Au, q), grid, p)
                r = num / time_norm(space_norm(space, F, q), grid, p)
                best[_pq_key(p, q)] = max(best[_pq_key(p, q)], r)
        info["values"].update(best)
        rows.append(info)
    rep = SweepReport("maxreg", rows, [], _metadata(config, a))
    for p, q in config.pq:
        key = _pq_key(p, q)
        rep.add_spread(key, config.threshold)
        if key in config.bounds:
            rep.add_max(key, float(config.bounds[key]))
    return rep


def _vector_fields(rng, space, qd, kind):
    """``(K, Nq, 2)`` spatial vector fields at quadrature points."""
    K = 3
    if kind == "rough":
        G = rng.standard_normal((K, space.mesh.n_triangles, 2))
        return G[:, qd.element, :]
    x, y = qd.points[:, 0], qd.points[:, 1]
    out = np.zeros((K, len(x), 2))
    for k in range(K):
        m = rng.integers(1, 4, size=(2, 2))
        ph = rng.uniform(0, 2 * np.pi, size=(2, 2))
        for c in range(2):
            out[k, :, c] = np.cos(np.pi * m[c, 0] * x + ph[c, 0]) * np.cos(np.pi * m[c, 1] * y + ph[c, 1])
    return out


def run_gradient_maxreg_sweep(config: ExperimentConfig) -> SweepReport:
    """``|u_h|_{L^p(W^{1,q})} / |g|_{L^p(L^q)}`` for the weak load ``(g, grad v)``, ``u_h(0) = 0``."""
    _check_pq(config.pq)
    a = config.coefficient_field()
    levels, _ = _levels(config, a)
    grid = graded_grid(config.T, config.n_time, config.grading)
    rows = []
    for lv in levels:
        info = lv.info()
        spec, space = lv.spec, lv.space
        qd = space.quadrature()
        best = {_pq_key(p, q): 0.0 for p, q in config.pq}
        for s in range(config.samples):
            rng = rng_for(config.seed, 3, lv.index, s)
            kind = "smooth" if s % 2 == 0 else "rough"
            theta = _time_profiles(rng, grid, config.T, kind)
            G = _vector_fields(rng, space, qd, kind)
            loads = np.stack([space.restrict(qd.Bx.T @ (qd.weights * G[k, :, 0]) + qd.By.T @ (qd.weights * G[k, :, 1]))
                              for k in range(len(G))])
            sol = duhamel_modal(spec, theta.T @ loads, grid)
            U = spec.synthesize(sol.u)
            gx = theta.T @ G[:, :, 0]
            gy = theta.T @ G[:, :, 1]
            gmag = np.sqrt(gx**2 + gy**2)
            for p, q in config.pq:
                gn = (gmag**q @ qd.weights) ** (1.0 / q)
                r = time_norm(w1q_norm(space, U, q), grid, p) / time_norm(gn, grid, p)
                best[_pq_key(p, q)] = max(best[_pq_key(p, q)], r)
        info["values"].update(best)
        rows.append(info)
    rep = SweepReport("gradreg", rows, [], _metadata(config, a))
    for p, q in config.pq:
        rep.add_spread(_pq_key(p, q), config.threshold)
    return rep


def _manufactured():
    def s(p):
        return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])

    def grad_s(p):
        x, y = p[:, 0], p[:, 1]
        return np.pi * np.column_stack([np.cos(np.pi * x) * np.sin(np.pi * y), np.sin(np.pi * x) * np.cos(np.pi * y)])

    return s, grad_s


def run_error_convergence(config: ExperimentConfig) -> SweepReport:
    """Manufactured ``u = sin(pi t) sin(pi x) sin(pi y)`` on the unit square.

    The load is the weak form ``(u_t, v) + (a grad u, grad v)``, assembled by
    quadrature so rough coefficients need no closed form. Reports
    ``|u - u_h|``, ``|P_h u - u_h|`` and ``|P_h u - R_h u|`` in ``L^p(L^q)``.
    """
    _check_pq(config.pq)
    poly = config.polygon()
    if not np.allclose(np.sort(poly.vertices, axis=0), np.sort(Polygon.unit_square().vertices, axis=0)):
        raise ConfigError("the manufactured solution vanishes on the boundary of the unit square only")
    a = config.coefficient_field()
    levels, _ = _levels(config, a)
    grid = np.linspace(0.0, config.T, config.n_time + 1)
    g = np.sin(np.pi * grid / config.T)
    dg = np.pi / config.T * np.cos(np.pi * grid / config.T)
    s, grad_s = _manufactured()
    rows = []
    for lv in levels:
        info = lv.info()
        space, pair, spec = lv.space, lv.pair, lv.spec
        hi = 2 * config.degree + 6
        m_s = load_vector(space, s, hi)
        k_s = ritz_load(space, pair, grad_s, hi)
        sol = duhamel_modal(spec, np.outer(dg, m_s) + np.outer(g, k_s), grid)
        U = spec.synthesize(sol.u)
        Ps = pair.solve_M(m_s)
        Rs = pair.solve_A(k_s)
        qd = space.quadrature(hi)
        sq = s(qd.points)
        Uq = qd.B[:, space.interior] @ U.T  # (Nq, nt)
        for p, q in config.pq:
            key = _pq_key(p, q)
            err = (qd.weights @ np.abs(sq[:, None] * g[None, :] - Uq) ** q) ** (1.0 / q)
            info["values"]["u-u_h " + key] = time_norm(err, grid, p)
            info["values"]["P_hu-u_h " + key] = time_norm(space_norm(space, np.outer(g, Ps) - U, q), grid, p)
            info["values"]["P_hu-R_hu " + key] = time_norm(np.abs(g), grid, p) * space_norm(space, Ps - Rs, q)
        rows.append(info)
    rep = SweepReport("converge", rows, [], _metadata(config, a, time_grid="uniform"))
    for p, q in config.pq:
        key = _pq_key(p, q)
        rep.add_slope("u-u_h " + key, float(config.bounds.get("slope_error", 1.8)))
        rep.add_slope("P_hu-R_hu " + key, float(config.bounds.get("slope_bound", 0.9)))
    return rep


def default_source(config: ExperimentConfig, coarse_mesh):
    """Centroid of the coarse element containing the polygon's vertex mean."""
    if config.x0 is not None:
        return np.asarray(config.x0, dtype=float)
    e, _ = locate_point(coarse_mesh, config.polygon().vertices.mean(axis=0))
    return coarse_mesh.vertices[coarse_mesh.triangles[e]].mean(axis=0)


def run_green_diagnostics(config: ExperimentConfig) -> SweepReport:
    """``I1``, ``I2``, the shell functional, local energy ratios and the Gaussian-tail fit per level."""
    a = config.coefficient_field()
    ref_n = config.reference_level or 2 * max(config.levels)
    if ref_n < max(config.levels):
        raise ConfigError("the reference level must be at least the finest level")
    levels, meshes = _levels(config, a, extra=(ref_n,))
    grid = graded_grid(config.T, config.n_time, config.grading)
    x0 = default_source(config, levels[0].mesh)
    ref_space = build_space(meshes[ref_n], config.degree)
    ref_pair = assemble(ref_space, a)
    ref_spec = spectral_decompose(ref_pair)
    metrics = domain_metrics(config.polygon())
    rows, flags = [], []
    tail = None
    for lv in levels:
        info = lv.info()
        gh = discrete_green(lv.space, lv.spec, x0, grid, config.grading)
        gr = reference_green(ref_space, ref_spec, gh, grid, config.grading)
        if gr.meta["shallow_nesting"]:
            flags.append(f"level {lv.n}: reference only {gr.meta['nesting_levels']} refinement(s) finer")
        diff = GreenDifference(gh, gr)
        I1, I2 = green_error_functional(diff, None)
        vals = info["values"]
        vals["I1"], vals["I2"] = I1, I2
        interp = GreenDifference(NodalInterpolant(gr, lv.space), gr)
        for C in config.C_star:
            dec = dyadic_decomposition(metrics, x0, lv.h, C, config.T)
            K = kappa_functional(diff, dec)
            vals[f"K C*={C:g}"] = K.total
            info.setdefault("kappa", []).append({"C_star": C, "J_star": dec.J_star, "trivial": dec.trivial,
                                                 "d": list(K.d), "contributions": list(K.contributions)})
            if dec.trivial:
                flags.append(f"level {lv.n}, C*={C:g}: h >= R0 K0^-2/(16 C*), trivial decomposition")
            for j in config.energy_shells:
                key = f"energy j={j} C*={C:g}"
                if dec.trivial or not 1 <= j <= dec.J_star:
                    vals[key] = None
                    continue
                le = local_energy_ratio(diff, interp, dec, j, lv.h)
                vals[key] = le.ratio
                info.setdefault("energy_terms", []).append({"j": j, "C_star": C, "lhs": le.lhs, "I": le.I,
                                                            "X": le.X, "H": le.H, "tail": le.tail})
        if tail is None:
            tf = gaussian_tail_fit(gr, ref_space.mesh.h)
            tail = {"C": tf.C, "residual": tf.residual, "points": tf.n_points,
                    "l1_max": float(l1_profile(gr).max())}
        rows.append(info)
    rep = SweepReport("green", rows, [], _metadata(config, a, x0=x0.tolist(), reference_level=ref_n,
                                                   reference_h=ref_space.mesh.h, gaussian_tail=tail,
                                                   domain_metrics={"R0": metrics.R0, "K0": metrics.K0,
                                                                   "formula": metrics.formula},
                                                   flags=flags))
    rep.add_spread("I1", config.threshold)
    for C in config.C_star:
        rep.add_spread(f"K C*={C:g}", config.threshold)
        for j in config.energy_shells:
            key = f"energy j={j} C*={C:g}"
            if sum(v is not None for v in rep.values(key)) >= 2:
                rep.add_spread(key, config.threshold)
            else:
                rep.checks.append({"quantity": key, "kind": "spread", "value": None,
                                   "threshold": config.threshold, "passed": False,
                                   "note": "shell not available on enough levels"})
    return rep


def run_superapprox_sweep(config: ExperimentConfig) -> SweepReport:
    """Superapproximation ratio for seeded random ``psi_h`` at fixed ``d = 10 kappa h_coarse``."""
    a = config.coefficient_field()
    levels, _ = _levels(config, a)
    kappa = max(clement_patch_constant(lv.space) for lv in levels)
    d = 10 * kappa * levels[0].h
    center = np.asarray(config.disk["center"], dtype=float)
    radius = float(config.disk["radius"])
    rows = []
    consts = []
    for lv in levels:
        info = lv.info()
        best = 0.0
        for s in range(config.samples):
            psi = rng_for(config.seed, 5, lv.index, s).standard_normal(lv.space.n_interior)
            r = superapprox_check(lv.space, lv.pair, center, radius, d, psi, kappa)
            best = max(best, r.ratio)
            consts.append(r.cutoff_constants)
        info["values"]["superapprox"] = best
        rows.append(info)
    rep = SweepReport("superapprox", rows, [], _metadata(config, a, d=d, kappa=kappa,
                                                         cutoff_constants=np.max(consts, axis=0).tolist()))
    rep.add_spread("superapprox", config.threshold)
    return rep


def write_outputs(report: SweepReport, out_dir, pq_keys: bool = True) -> dict:
    """``report.json`` plus ``<sweep>_<quantity>.csv`` and log-log ``.dat`` files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json"}
    paths["report"].write_text(report.to_json())
    quantities = sorted({k for lv in report.levels for k in lv["values"]})
    for qname in quantities:
        p = q = "-"
        if "p=" in qname:
            part = qname[qname.index("p="):].split()[0]
            p, q = (x.split("=")[1] for x in part.split(","))
        stem = report.sweep + "_" + "".join(c if c.isalnum() else "_" for c in qname).strip("_")
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "h", "p", "q", "value"])
            for lv in report.levels:
                v = lv["values"].get(qname)
                w.writerow([lv["level"], _round(lv["h"]), p, q, "" if v is None else _round(v)])
        with open(out / f"{stem}.dat", "w") as fh:
            for lv in report.levels:
                v = lv["values"].get(qname)
                if v is not None:
                    fh.write(f"{_round(lv['h'])!r} {_round(v)!r}\n")
        paths[qname] = out / f"{stem}.csv"
    return paths
