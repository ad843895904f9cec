"""Manufactured problems and the experiment drivers behind the CLI."""

from __future__ import annotations

import configparser
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diagnostics import checkerboard_decay_study, eoc
from .fem import FunctionSpaces, error_norms, evaluate_displacement_gradient, evaluate_stress, write_csv
from .material import MaterialLaw, RegularizationParams, apply_A, apply_A_n, builtin_law, invert_A_n
from .mesh import crack_mesh, uniform_square_mesh, write_vtk
from .solver import DecoupledSolver, IterationState, Problem, SolverConfig
from .tensor import contraction_weights

log = logging.getLogger(__name__)

_W = contraction_weights(2)


# ------------------------------------------------------------ manufactured data

def smooth_u(x, y):
    return np.stack([y * (1 - y), np.zeros_like(x)], axis=-1)


def smooth_grad_u(x, y):
    g = np.zeros(np.shape(x) + (2, 2))
    g[..., 0, 1] = 1 - 2 * y
    return g


def smooth_strain(x, y):
    return np.stack([np.zeros_like(x), np.zeros_like(x), 0.5 * (1 - 2 * y)], axis=-1)


def smooth_T(x, y):
    return np.stack([np.exp(x), np.cos(y), np.zeros_like(x)], axis=-1)


def smooth_f(x, y):
    """-div of smooth_T."""
    return np.stack([-np.exp(x), np.sin(y)], axis=-1)


def smooth_source(law: MaterialLaw, reg: Optional[RegularizationParams]) -> Callable:
    """G making (smooth_u, smooth_T) exact: A_n(T) - eps(u), or A(T) - eps(u) when ``reg`` is None."""

    def G(x, y):
        T = smooth_T(x, y)
        AT = apply_A(T, law) if reg is None else apply_A_n(T, law, reg)
        return AT - smooth_strain(x, y)

    return G


def infsup_u(x, y):
    return np.stack([x * np.exp(y), np.sin(x)], axis=-1)


def infsup_grad_u(x, y):
    g = np.empty(np.shape(x) + (2, 2))
    g[..., 0, 0] = np.exp(y)
    g[..., 0, 1] = x * np.exp(y)
    g[..., 1, 0] = np.cos(x)
    g[..., 1, 1] = 0.0
    return g


def infsup_T(x, y):
    return np.stack([np.exp(y), np.zeros_like(x), 0.5 * (x * np.exp(y) + np.cos(x))], axis=-1)


def infsup_f(x, y):
    """-div of infsup_T."""
    return np.stack([-0.5 * x * np.exp(y), 0.5 * (np.sin(x) - np.exp(y))], axis=-1)


def _fd_divergence(T: Callable, x, y, h: float):
    def comp(v, i):
        return v[..., i]

    dxx = (comp(T(x + h, y), 0) - comp(T(x - h, y), 0)) / (2 * h)
    dyxy = (comp(T(x, y + h), 2) - comp(T(x, y - h), 2)) / (2 * h)
    dxxy = (comp(T(x + h, y), 2) - comp(T(x - h, y), 2)) / (2 * h)
    dyy = (comp(T(x, y + h), 1) - comp(T(x, y - h), 1)) / (2 * h)
    return np.stack([dxx + dyxy, dxxy + dyy], axis=-1)


def _fd_strain(u: Callable, x, y, h: float):
    ux = (u(x + h, y) - u(x - h, y)) / (2 * h)
    uy = (u(x, y + h) - u(x, y - h)) / (2 * h)
    return np.stack([ux[..., 0], uy[..., 1], 0.5 * (uy[..., 0] + ux[..., 1])], axis=-1)


def check_manufactured(u: Callable, T: Callable, f: Callable, strain: Callable, n_points: int = 100,
                       h: float = 1e-6, seed: int = 0) -> float:
    """Largest discrepancy between closed-form f, eps(u) and central differences of the exact fields."""
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0.0, 1.0, (2, n_points))
    err_f = np.abs(f(x, y) + _fd_divergence(T, x, y, h)).max()
    err_e = np.abs(strain(x, y) - _fd_strain(u, x, y, h)).max()
    return float(max(err_f, err_e))


def verify_manufactured(tol: float = 1e-6) -> None:
    """Raise if any closed-form manufactured datum disagrees with finite differences."""
    def infsup_strain(x, y):
        return infsup_T(x, y)

    checks = {
        "smooth": check_manufactured(smooth_u, smooth_T, smooth_f, smooth_strain),
        "infsup": check_manufactured(infsup_u, infsup_T, infsup_f, infsup_strain),
    }
    for name, err in checks.items():
        if err > tol:
            raise AssertionError(f"manufactured data {name!r} fails finite-difference check ({err:.2e})")


# ------------------------------------------------------------ configuration

@dataclass
class ExperimentConfig:
    experiment: str = "validate"
    n: list = field(default_factory=lambda: [1.0])
    t: list = field(default_factory=lambda: ["1"])
    tau: float = 0.01
    tol: float = 1e-5
    levels: list = field(default_factory=lambda: [2, 3, 4, 5, 6, 7])
    N: list = field(default_factory=lambda: [7, 15, 31, 63])
    forces: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.25, 1.5])
    refine_levels: int = 6
    stress_space: str = "Q0"
    law: str = "builtin"
    norm_p: Optional[float] = None
    max_outer: int = 200000
    time_limit: Optional[float] = None
    split_linear: bool = False
    out: str = "results"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.experiment not in DEFAULTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")


DEFAULTS = {
    "validate": {},
    "n_sweep": {"n": [1.0, 500.0, 1000.0], "t": ["1", "n"], "levels": [7], "split_linear": True},
    "crack": {"n": [100.0], "t": ["1"], "tau": 2.0},
    "infsup": {"levels": [2, 3, 4, 5, 6], "stress_space": "Q0,Q1disc"},
    "checkerboard": {"n": [1.0, 2.0]},
}


def _parse_list(text: str, conv=float) -> list:
    return [conv(v) for v in text.replace(",", " ").split()]


def make_config(experiment: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults for ``experiment`` updated with string or typed ``overrides``."""
    if experiment not in DEFAULTS:
        raise ValueError(f"unknown experiment {experiment!r}")
    values = dict(DEFAULTS[experiment])
    for key, raw in (overrides or {}).items():
        if not isinstance(raw, str):
            values[key] = raw
        elif key in ("n", "forces"):
            values[key] = _parse_list(raw)
        elif key == "t":
            values[key] = raw.replace(",", " ").split()
        elif key in ("levels", "N"):
            values[key] = _parse_list(raw, int)
        elif key in ("tau", "tol", "norm_p", "time_limit"):
            values[key] = float(raw)
        elif key in ("refine_levels", "max_outer"):
            values[key] = int(raw)
        elif key == "split_linear":
            values[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key in ("stress_space", "law", "out"):
            values[key] = raw.strip()
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(experiment=experiment, **values)


def load_config(path: Optional[str], experiment: str) -> ExperimentConfig:
    """Read the ``[experiment]`` section (plus ``[DEFAULT]``) of a key = value file."""
    overrides: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        section = experiment.replace("-", "_")
        if parser.has_section(section):
            overrides.update(parser[section])
        else:
            overrides.update(parser.defaults())
    return make_config(experiment.replace("-", "_"), overrides)


def get_law(name: str) -> MaterialLaw:
    if name == "builtin":
        return builtin_law()
    raise ValueError(f"unknown law {name!r}")


def _reg_for(n: float, t: str, split: bool = False) -> RegularizationParams:
    return RegularizationParams(n, n if t == "n" else float(t), split=split)


# ------------------------------------------------------------ reported quantities

def recovered_stress(solver: DecoupledSolver, state: IterationState, npts: int = 5):
    """Stress recovered pointwise from the constitutive relation at the quadrature points.

    Returns ``(q, values)`` with ``values = A_n^-1(eps(u_h) + G)`` of shape ``(nc, nq, 3)``.
    """
    spaces, prob = solver.spaces, solver.problem
    q = spaces.quadrature(npts)
    g = evaluate_displacement_gradient(spaces, state.u, q)
    eps = np.stack([g[..., 0, 0], g[..., 1, 1], 0.5 * (g[..., 0, 1] + g[..., 1, 0])], axis=-1)
    if prob.source is not None:
        eps = eps + np.broadcast_to(prob.source(q.points[..., 0], q.points[..., 1]), eps.shape)
    return q, invert_A_n(eps, prob.law, prob.reg)


def component_error(q, values: np.ndarray, exact: Callable, p: float) -> float:
    """(int sum_i |d_i|^p)^(1/p) over the stored (xx, yy, xy) component differences d.

    p = 2 gives the pointwise Euclidean norm, p = 1 the sum of absolute components.
    """
    d = values - exact(q.points[..., 0], q.points[..., 1])
    return float(np.sum(q.wdet * np.sum(np.abs(d) ** p, axis=-1)) ** (1.0 / p))


def smooth_errors(solver: DecoupledSolver, state: IterationState, p: float) -> dict:
    q, rec = recovered_stress(solver, state)
    cell = error_norms(solver.spaces, state.T, state.u, smooth_T, smooth_grad_u)
    return {
        "e_u": cell["gradu_L2"],
        "e_T": component_error(q, rec, smooth_T, p),
        "eT_cell": cell["T_L2"] if p == 2 else cell["T_L1"],
    }


def _solve(problem: Problem, cfg: ExperimentConfig, tau: float, state: Optional[IterationState] = None):
    conf = SolverConfig(tau=tau, tol=cfg.tol, max_outer=cfg.max_outer, time_limit=cfg.time_limit)
    solver = DecoupledSolver(problem, conf)
    t0 = time.perf_counter()
    st = solver.run(state=state)
    log.info("solve: %d iterations, quotient %.3e, %.1fs", st.k, st.quotient, time.perf_counter() - t0)
    return solver, st


def _ensure_out(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _fmt_rows(rows):
    return [[f"{v:.6g}" if isinstance(v, (float, np.floating)) else v for v in r] for r in rows]


# ------------------------------------------------------------ drivers

def run_validate(cfg: ExperimentConfig, write: bool = True) -> tuple[list[dict], bool]:
    """Errors of the smooth manufactured problem under refinement (one table per (n, t))."""
    verify_manufactured()
    law = get_law(cfg.law)
    results, ok = [], True
    for n in cfg.n:
        for t in cfg.t:
            reg = _reg_for(n, t)
            p = cfg.norm_p if cfg.norm_p is not None else 2.0
            rows = []
            for level in cfg.levels:
                spaces = FunctionSpaces(uniform_square_mesh(2**level), stress_kind=cfg.stress_space)
                prob = Problem(spaces, law, reg, body_force=smooth_f, source=smooth_source(law, reg),
                               dirichlet=smooth_u)
                solver, st = _solve(prob, cfg, cfg.tau)
                err = smooth_errors(solver, st, p)
                rows.append({"n": n, "t": reg.t, "h": 2.0**-level, **err, "iterations": st.k,
                             "quotient": st.quotient, "converged": st.converged})
                ok &= st.converged
            for key in ("e_u", "e_T"):
                for r, e in zip(rows, eoc([r[key] for r in rows])):
                    r["EOC_" + key[2:]] = e
            results.extend(rows)
    if write:
        _write_table(os.path.join(_ensure_out(cfg), "validate.csv"), results,
                     ["n", "t", "h", "e_u", "e_T", "EOC_u", "EOC_T", "eT_cell", "iterations", "quotient", "converged"])
    return results, ok


def run_n_sweep(cfg: ExperimentConfig, write: bool = True) -> tuple[list[dict], bool]:
    """Errors against the unregularized exact solution as n grows, on a fixed mesh."""
    verify_manufactured()
    law = get_law(cfg.law)
    level = cfg.levels[-1]
    spaces = FunctionSpaces(uniform_square_mesh(2**level), stress_kind=cfg.stress_space)
    G = smooth_source(law, None)
    results, ok = [], True
    for t in cfg.t:
        for n in cfg.n:
            reg = _reg_for(n, t, cfg.split_linear)
            p = cfg.norm_p if cfg.norm_p is not None else reg.stopping_p
            prob = Problem(spaces, law, reg, body_force=smooth_f, source=G, dirichlet=smooth_u)
            solver, st = _solve(prob, cfg, cfg.tau)
            err = smooth_errors(solver, st, p)
            results.append({"t_mode": t, "n": n, "t": reg.t, "h": 2.0**-level, "p": p, **err,
                            "iterations": st.k, "quotient": st.quotient, "converged": st.converged})
            ok &= st.converged
    if write:
        _write_table(os.path.join(_ensure_out(cfg), "n_sweep.csv"), results,
                     ["t_mode", "n", "t", "h", "p", "e_u", "e_T", "eT_cell", "iterations", "quotient", "converged"])
    return results, ok


def crack_problem(spaces: FunctionSpaces, law: MaterialLaw, reg: RegularizationParams, f: float) -> Problem:
    def traction(x, y):
        return np.stack([np.full_like(x, f), np.zeros_like(x)], axis=-1)

    return Problem(spaces, law, reg, tractions={"III": traction})


def linf_norms(solver: DecoupledSolver, state: IterationState) -> dict:
    """Max of |grad u_h| over quadrature points and nodes, and max of |T_h| over cells."""
    from .fem import _corner_points  # noqa: PLC0415  (private helper shared with error_norms)

    spaces = solver.spaces
    grads = [evaluate_displacement_gradient(spaces, state.u, q) for q in (spaces.quadrature(5), _corner_points(spaces))]
    g = max(float(np.linalg.norm(gr, axis=(-2, -1)).max()) for gr in grads)
    Tq = evaluate_stress(spaces, state.T, spaces.quadrature(5))
    T = float(np.sqrt(np.einsum("...i,...i,i->...", Tq, Tq, _W)).max())
    return {"grad_u_inf": g, "T_inf": T}


def run_crack(cfg: ExperimentConfig, write: bool = True) -> tuple[list[dict], bool]:
    """Notched rectangle pulled on its right face, one row per traction magnitude."""
    law = get_law(cfg.law)
    reg = _reg_for(cfg.n[0], cfg.t[0])
    mesh = crack_mesh(cfg.refine_levels)
    spaces = FunctionSpaces(mesh, stress_kind=cfg.stress_space, dirichlet_tags=("IV",))
    results, ok = [], True
    for f in cfg.forces:
        solver, st = _solve(crack_problem(spaces, law, reg, f), cfg, cfg.tau)
        row = {"f": f, **linf_norms(solver, st), "u_max": float(np.linalg.norm(st.u.reshape(-1, 2), axis=1).max()),
               "iterations": st.k, "quotient": st.quotient, "converged": st.converged}
        results.append(row)
        ok &= st.converged
        if write:
            u = st.u.reshape(-1, 2)
            write_vtk(os.path.join(_ensure_out(cfg), f"crack_f{f:g}.vtk"), mesh,
                      point_data={"u": u, "u_mag": np.linalg.norm(u, axis=1)},
                      cell_data={"T": st.T.reshape(mesh.n_cells, -1)[:, :3]})
    if write:
        _write_table(os.path.join(_ensure_out(cfg), "crack.csv"), results,
                     ["f", "grad_u_inf", "T_inf", "u_max", "iterations", "quotient", "converged"])
    return results, ok


def solve_linear_mixed(spaces: FunctionSpaces, body_force, dirichlet) -> IterationState:
    """One linear mixed solve: int T:S - int eps(u):S + int eps(v):T = int f.v."""
    prob = Problem(spaces, get_law("builtin"), RegularizationParams(1.0), body_force=body_force, dirichlet=dirichlet)
    return DecoupledSolver(prob).initialize()


def run_infsup(cfg: ExperimentConfig, write: bool = True) -> tuple[list[dict], bool]:
    """Linear problem with the Q1/Q0 pair (and optionally Q1/Q1disc) under refinement."""
    verify_manufactured()
    kinds = [k.strip() for k in cfg.stress_space.split(",")]
    results = []
    for kind in kinds:
        rows = []
        for level in cfg.levels:
            spaces = FunctionSpaces(uniform_square_mesh(2**level), stress_kind=kind)
            st = solve_linear_mixed(spaces, infsup_f, infsup_u)
            e = error_norms(spaces, st.T, st.u, infsup_T, infsup_grad_u, u_exact=infsup_u)
            rows.append({"stress_space": kind, "h": 2.0**-level, "gradu_L2": e["gradu_L2"], "u_L2": e["u_L2"],
                         "T_L1": e["T_L1"], "iterations": 0, "quotient": 0.0, "converged": True})
        for key in ("gradu_L2", "u_L2", "T_L1"):
            for r, v in zip(rows, eoc([r[key] for r in rows])):
                r["EOC_" + key] = v
        results.extend(rows)
    if write:
        _write_table(os.path.join(_ensure_out(cfg), "infsup.csv"), results,
                     ["stress_space", "h", "gradu_L2", "EOC_gradu_L2", "u_L2", "EOC_u_L2", "T_L1", "EOC_T_L1",
                      "iterations", "quotient", "converged"])
    return results, True


def run_checkerboard(cfg: ExperimentConfig, write: bool = True) -> tuple[list[dict], bool]:
    results = []
    for n in cfg.n:
        reports, slope = checkerboard_decay_study(cfg.N, n)
        for N, r in zip(cfg.N, reports):
            results.append({"n": n, "N": N, "h": r.h, "ratio": r.ratio, "fitted_exponent": slope,
                            "predicted_exponent": 1.0 / (n + 1.0), "iterations": 0, "quotient": 0.0,
                            "converged": True})
    if write:
        _write_table(os.path.join(_ensure_out(cfg), "checkerboard.csv"), results,
                     ["n", "N", "h", "ratio", "fitted_exponent", "predicted_exponent", "iterations", "quotient",
                      "converged"])
    return results, True


RUNNERS = {
    "validate": run_validate,
    "n_sweep": run_n_sweep,
    "crack": run_crack,
    "infsup": run_infsup,
    "checkerboard": run_checkerboard,
}


def _write_table(path: str, rows: list[dict], columns: list[str]) -> None:
    write_csv(path, columns, _fmt_rows([[r.get(c, "") for c in columns] for r in rows]))
