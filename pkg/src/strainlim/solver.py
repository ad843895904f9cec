"""Decoupled (alternating resolvent) iteration for the mixed strain-limiting system.

Each outer iteration performs a cell-local nonlinear solve with the
constitutive map followed by a global constrained solve with the regularizer.
The global solve eliminates the stress through the block-diagonal stress mass
matrix and works on the Schur complement for the free displacement dofs.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    FunctionSpaces,
    assemble_coupling,
    assemble_gradient_stiffness,
    assemble_load,
    assemble_strain_stiffness,
    assemble_stress_source,
    block_inverse,
    stress_mass_blocks,
    stress_norm,
    write_csv,
)
from .material import LocalSolveError, MaterialLaw, RegularizationParams, apply_A, regularizer, solve_local_step1
from .tensor import contraction_weights, deviatoric, frobenius_norm, trace

log = logging.getLogger(__name__)

_W = contraction_weights(2)
_DENOM_FLOOR = 1e-12


class ConvergenceError(RuntimeError):
    pass


@dataclass
class Problem:
    """Data of one boundary value problem.

    Callables take coordinate arrays ``(x, y)``: ``body_force`` and
    ``dirichlet`` return ``(..., 2)``, ``source`` returns ``(..., 3)`` stress
    components. ``tractions`` maps boundary tags to traction callables.
    """

    spaces: FunctionSpaces
    law: MaterialLaw
    reg: RegularizationParams
    body_force: Optional[Callable] = None
    tractions: dict = field(default_factory=dict)
    source: Optional[Callable] = None
    dirichlet: Optional[Callable] = None

    def __post_init__(self):
        for tag in self.tractions:
            if len(self.spaces.mesh.tagged_edges(tag)) == 0:
                raise ValueError(f"traction tag {tag!r} not present on the mesh")


@dataclass
class SolverConfig:
    tau: float = 0.01
    tol: float = 1e-5
    sub_tol: Optional[float] = None
    max_outer: int = 100000
    max_sub: int = 200
    linear_solver: str = "auto"  # auto | direct | cg
    cg_tol: float = 1e-12
    time_limit: Optional[float] = None

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.sub_tol is None:
            self.sub_tol = self.tol / 5.0
        if self.linear_solver not in ("auto", "direct", "cg"):
            raise ValueError("linear_solver must be auto, direct or cg")


@dataclass
class IterationState:
    T: np.ndarray
    u: np.ndarray
    k: int = 0
    T_half: Optional[np.ndarray] = None
    quotient: float = np.inf
    history: list = field(default_factory=list)
    converged: bool = False
    sub_iterations: int = 0


class DecoupledSolver:
    """Assembles the discrete operators once and runs the decoupled iteration."""

    def __init__(self, problem: Problem, config: Optional[SolverConfig] = None):
        self.problem = problem
        self.config = config or SolverConfig()
        sp_ = problem.spaces
        self.spaces = sp_
        self.B = assemble_coupling(sp_)
        self.mass_blocks = stress_mass_blocks(sp_)
        self.Minv = block_inverse(self.mass_blocks)
        self.M = sp.block_diag(list(self.mass_blocks), format="csr")
        free = sp_.free_dofs
        self.free = free
        Bc = self.B.tocsc()
        self.Bf = Bc[:, free].tocsr()
        self.BfT = self.Bf.T.tocsr()
        self.u_lift = sp_.dirichlet_lift(problem.dirichlet)
        self.b_lift = self.B @ self.u_lift
        self.load = assemble_load(sp_, problem.body_force, problem.tractions)
        self.load_free = self.load[free]
        self.g_vec = assemble_stress_source(sp_, problem.source)
        self.grad_stiff = assemble_gradient_stiffness(sp_)
        schur = (self.BfT @ self.Minv @ self.Bf).tocsc()
        self._schur0 = spla.splu(schur, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        self._schur0_matrix = schur
        # the nonlinear iteration treats every group of three stress dofs as an
        # independent point; this needs a diagonal stress mass matrix
        diag = np.einsum("cii->ci", self.mass_blocks)
        off = self.mass_blocks - np.einsum("ci,ij->cij", diag, np.eye(diag.shape[1]))
        self.diagonal_mass = bool(np.abs(off).max() <= 1e-14 * np.abs(diag).max())
        self.areas = diag.reshape(-1, 3)[:, 0]
        self.G_bar = self.g_vec.reshape(-1, 3) / (self.areas[:, None] * _W)

    # ------------------------------------------------------------ linear algebra

    def _full_u(self, u_free: np.ndarray) -> np.ndarray:
        u = self.u_lift.copy()
        u[self.free] = u_free
        return u

    def solve_scaled(self, c: float, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve c M T - B u = r, B^T T = load on the free dofs."""
        rhs = c * self.load_free - self.BfT @ (self.Minv @ (r + self.b_lift))
        u_free = self._schur0.solve(rhs)
        u = self._full_u(u_free)
        T = self.Minv @ (r + self.B @ u) / c
        return T, u

    def constraint_residual(self, T: np.ndarray) -> float:
        res = self.BfT @ T - self.load_free
        return float(np.linalg.norm(res) / max(np.linalg.norm(self.load_free), 1.0))

    def _apply_weighted(self, y: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """(M L)^-1 y for the per-cell operator L = alpha P_vol + beta P_dev."""
        z = (self.Minv @ y).reshape(-1, 3)
        vol = np.zeros_like(z)
        vol[:, :2] = 0.5 * (z[:, 0] + z[:, 1])[:, None]
        return (vol / alpha[:, None] + (z - vol) / beta[:, None]).reshape(-1)

    def _weighted_schur(self, alpha: np.ndarray, beta: np.ndarray) -> sp.csc_matrix:
        Pv = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 0.0]])
        Linv = Pv[None] / alpha[:, None, None] + (np.eye(3) - Pv)[None] / beta[:, None, None]
        Wblocks = np.einsum("cij,cj->cij", Linv, 1.0 / (self.areas[:, None] * _W))
        Wmat = sp.block_diag(list(Wblocks), format="csr")
        return (self.BfT @ Wmat @ self.Bf).tocsc()

    def solve_constant_weighted(self, alpha: float, beta: float, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """solve_weighted for point-independent weights, with the factorization cached."""
        key = (float(alpha), float(beta))
        if getattr(self, "_const_key", None) != key:
            npts = len(self.areas)
            S = self._weighted_schur(np.full(npts, alpha), np.full(npts, beta))
            self._const_lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
            self._const_key = key
        npts = len(self.areas)
        al, be = np.full(npts, alpha), np.full(npts, beta)
        rhs = self.load_free - self.BfT @ self._apply_weighted(r + self.b_lift, al, be)
        u = self._full_u(self._const_lu.solve(rhs))
        return self._apply_weighted(r + self.B @ u, al, be), u

    def solve_weighted(self, alpha, beta, r, u_guess=None) -> tuple[np.ndarray, np.ndarray]:
        """Solve M L T - B u = r, B^T T = load with L = alpha P_vol + beta P_dev per cell."""
        rhs = self.load_free - self.BfT @ self._apply_weighted(r + self.b_lift, alpha, beta)
        method = self.config.linear_solver
        if method == "direct":
            u_free = spla.spsolve(self._weighted_schur(alpha, beta), rhs)
        else:
            op = spla.LinearOperator(
                (len(self.free),) * 2,
                matvec=lambda x: self.BfT @ self._apply_weighted(self.Bf @ x, alpha, beta),
                dtype=float,
            )
            scale = float(np.mean(alpha + beta) / 2.0)
            prec = spla.LinearOperator((len(self.free),) * 2, matvec=lambda x: scale * self._schur0.solve(x),
                                       dtype=float)
            x0 = None if u_guess is None else u_guess[self.free]
            u_free, info = spla.cg(op, rhs, x0=x0, rtol=self.config.cg_tol, atol=0.0, M=prec, maxiter=2000)
            if info != 0:
                raise ConvergenceError(f"CG did not converge (info={info})")
        u = self._full_u(u_free)
        T = self._apply_weighted(r + self.B @ u, alpha, beta)
        return T, u

    # ------------------------------------------------------------ algorithm

    def initialize(self) -> IterationState:
        """Linear mixed solve: M T - B u = G-term, B^T T = load."""
        T, u = self.solve_scaled(1.0, self.g_vec)
        return IterationState(T=T, u=u)

    def cell_strain(self, u: np.ndarray) -> np.ndarray:
        """eps(u) tested against each stress point: cell averages for Q0, Gauss values for Q1disc."""
        return (self.Minv @ (self.B @ u)).reshape(-1, 3)

    def step1(self, state: IterationState) -> np.ndarray:
        if not self.diagonal_mass:
            raise NotImplementedError("the nonlinear iteration needs a diagonal stress mass matrix")
        tau, reg = self.config.tau, self.problem.reg
        Tk = state.T.reshape(-1, 3)
        R_hat = Tk / tau + self.cell_strain(state.u) + self.G_bar - regularizer(Tk, reg)
        try:
            T_half = solve_local_step1(R_hat, tau, self.problem.law)
        except LocalSolveError as exc:
            bad = np.flatnonzero(~np.all(np.isfinite(R_hat), axis=1))
            raise LocalSolveError(f"{exc} (non-finite cells: {bad[:10].tolist()})") from exc
        return T_half.reshape(-1)

    def _step2_rhs(self, T_half: np.ndarray) -> np.ndarray:
        Th = T_half.reshape(-1, 3)
        y = Th / self.config.tau - apply_A(Th, self.problem.law)
        return self.M @ y.reshape(-1) + self.g_vec

    def step2_linear(self, T_half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        reg = self.problem.reg
        if not reg.linear:
            raise ValueError("step2_linear needs t = 1")
        c = 1.0 / self.config.tau + 1.0 / reg.n
        return self.solve_scaled(c, self._step2_rhs(T_half))

    def step2_nonlinear(self, T_half: np.ndarray, T_start: np.ndarray, u_start: np.ndarray):
        """Frozen-coefficient subiterations for the power regularizer."""
        reg, cfg = self.problem.reg, self.config
        r = self._step2_rhs(T_half)
        expo = 1.0 - 1.0 / reg.t
        if expo == 0.0:
            # split form at t = 1: the weights are constant, one solve is exact
            T, u = self.solve_constant_weighted(1.0 / cfg.tau + 2.0 / reg.n, 1.0 / cfg.tau + 1.0 / reg.n, r)
            return T, u, 1
        T, u = T_start, u_start
        for j in range(1, cfg.max_sub + 1):
            Tc = T.reshape(-1, 3)
            a = 1.0 / (np.abs(trace(Tc)) ** expo + _DENOM_FLOOR)
            b = 1.0 / (frobenius_norm(deviatoric(Tc)) ** expo + _DENOM_FLOOR)
            alpha = 1.0 / cfg.tau + 2.0 * a / reg.n
            beta = 1.0 / cfg.tau + b / reg.n
            T_new, u_new = self.solve_weighted(alpha, beta, r, u_guess=u)
            inc = self.increment(T_new - T, u_new - u, 1.0)
            size = self.increment(T_new, u_new, 1.0)
            T, u = T_new, u_new
            if inc <= cfg.sub_tol * max(size, 1e-300):
                return T, u, j
        raise ConvergenceError(f"step 2 subiterations reached the cap of {cfg.max_sub}")

    def increment(self, dT: np.ndarray, du: np.ndarray, p: float) -> float:
        grad = float(np.sqrt(max(du @ (self.grad_stiff @ du), 0.0)))
        return stress_norm(self.spaces, dT, p) + grad

    def step(self, state: IterationState) -> IterationState:
        T_half = self.step1(state)
        if self.problem.reg.linear:
            T, u = self.step2_linear(T_half)
            nsub = 0
        else:
            T, u, nsub = self.step2_nonlinear(T_half, state.T, state.u)
        p = self.problem.reg.stopping_p
        num = self.increment(T - state.T, u - state.u, p)
        den = self.increment(state.T, state.u, p)
        q = num / den if den > 0.0 else (0.0 if num == 0.0 else np.inf)
        return IterationState(T=T, u=u, k=state.k + 1, T_half=T_half, quotient=q, history=state.history,
                              sub_iterations=state.sub_iterations + nsub)

    def run(self, callback: Optional[Callable] = None, state: Optional[IterationState] = None) -> IterationState:
        """Iterate until the relative increment drops below ``tol``.

        ``callback(state)`` is called after the initialization and after every
        outer iteration. A non-converged state is returned (``converged`` False)
        when ``max_outer`` or ``time_limit`` is reached.
        """
        cfg = self.config
        start = time.perf_counter()
        if state is None:
            state = self.initialize()
        if callback is not None:
            callback(state)
        while state.k < cfg.max_outer:
            state = self.step(state)
            state.history.append((state.k, state.quotient, self.constraint_residual(state.T)))
            if callback is not None:
                callback(state)
            if state.quotient <= cfg.tol:
                state.converged = True
                break
            if cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit:
                log.warning("time limit reached after %d iterations (quotient %.3e)", state.k, state.quotient)
                break
        else:
            log.warning("max_outer reached (quotient %.3e)", state.quotient)
        return state

    # ------------------------------------------------------------ monitors

    def monitor_pair(self, T: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """The auxiliary tensors (Lambda, Theta) attached to the pair (T, u), t = 1 only."""
        tau, reg = self.config.tau, self.problem.reg
        Tc = T.reshape(-1, 3)
        Bk = regularizer(Tc, reg) - self.cell_strain(u) - self.G_bar
        lam = Tc + tau * Bk
        return lam.reshape(-1), (2.0 * Tc - lam).reshape(-1)

    def l2(self, S: np.ndarray) -> float:
        return float(np.sqrt(max(S @ (self.M @ S), 0.0)))


def lm_monitors(solver: DecoupledSolver, state: IterationState, reference: IterationState) -> dict[str, float]:
    """L2 distances of Lambda, Theta and T from their values at a converged reference."""
    lam, theta = solver.monitor_pair(state.T, state.u)
    lam_ref, theta_ref = solver.monitor_pair(reference.T, reference.u)
    return {
        "lambda": solver.l2(lam - lam_ref),
        "theta": solver.l2(theta - theta_ref),
        "T": solver.l2(state.T - reference.T),
    }


def postprocess_displacement(solver: DecoupledSolver, T: np.ndarray) -> np.ndarray:
    """Displacement whose strain best fits the constitutive strain of ``T`` in L2.

    Solves integral eps(w) : eps(v) = integral (T/n + A(T) - G) : eps(v) with the
    Dirichlet data of the problem.
    """
    prob = solver.problem
    Tc = T.reshape(-1, 3)
    S = regularizer(Tc, prob.reg) + apply_A(Tc, prob.law) - solver.G_bar
    rhs = solver.B.T @ S.reshape(-1)
    K = assemble_strain_stiffness(solver.spaces).tocsc()
    free = solver.free
    Kff = K[free][:, free]
    r = rhs[free] - (K @ solver.u_lift)[free]
    w = solver.u_lift.copy()
    w[free] = spla.spsolve(Kff.tocsc(), r)
    return w


def write_diagnostics(path, rows) -> None:
    """CSV of (iteration, quotient, lambda, theta, constraint residual)."""
    write_csv(path, ["iteration", "quotient", "lambda_norm", "theta_norm", "constraint_residual"], rows)
