"""Constitutive laws, regularizers and the element-local Step 1 solve."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .tensor import (
    deviatoric,
    dim_of,
    frobenius_norm,
    identity_components,
    signed_power,
    trace,
    _unwrap,
    _wrap,
)

ScalarFn = Callable[[np.ndarray], np.ndarray]


class LocalSolveError(RuntimeError):
    """Raised when a scalar root cannot be bracketed or does not converge."""


@dataclass(frozen=True)
class MaterialLaw:
    """The pair (lambda, mu) of the strain-limiting relation.

    ``dlam`` and ``dmu`` are the derivatives of ``s -> lambda(s) s`` and
    ``r -> mu(r) r``; they are only used to speed up Newton iterations and are
    replaced by central differences when absent.
    """

    lambda_fn: ScalarFn
    mu_fn: ScalarFn
    C1: float
    C2: float
    kappa: float
    alpha: float
    dlam: Optional[ScalarFn] = None
    dmu: Optional[ScalarFn] = None
    name: str = "custom"

    def lam_s(self, s):
        s = np.asarray(s, dtype=float)
        return self.lambda_fn(s) * s

    def mu_r(self, r):
        r = np.asarray(r, dtype=float)
        return self.mu_fn(r) * r

    def dlam_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.dlam is not None:
            return self.dlam(s)
        h = 1e-6 * np.maximum(1.0, np.abs(s))
        return (self.lam_s(s + h) - self.lam_s(s - h)) / (2 * h)

    def dmu_r(self, r):
        r = np.asarray(r, dtype=float)
        if self.dmu is not None:
            return self.dmu(r)
        h = 1e-6 * np.maximum(1.0, np.abs(r))
        return (self.mu_r(r + h) - self.mu_r(np.abs(r - h))) / (2 * h)


@dataclass(frozen=True)
class RegularizationParams:
    """Regularization strength ``n`` (weight 1/n) and power exponent ``t``.

    ``split`` keeps the trace/deviator power form even at t = 1, giving
    (1/n)(tr S I + S^d) instead of S/n.
    """

    n: float
    t: float = 1.0
    split: bool = False

    def __post_init__(self):
        if not self.n >= 1.0:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.t >= 1.0:
            raise ValueError(f"t must be >= 1, got {self.t}")

    @property
    def linear(self) -> bool:
        """True when the regularizer is S/n."""
        return self.t == 1.0 and not self.split

    @property
    def stopping_p(self) -> float:
        """Lebesgue exponent of the stress increment in the stopping rule."""
        return 2.0 if self.t == 1.0 else 1.0


def _inv_sqrt1p(s):
    return 1.0 / np.sqrt(1.0 + np.square(s))


def _d_builtin(s):
    return (1.0 + np.square(s)) ** -1.5


def builtin_law() -> MaterialLaw:
    """lambda(s) = mu(s) = (1 + s^2)^(-1/2).

    C1 = C2 = kappa = 1 hold because sqrt(1 + s^2) <= 1 + |s|. The slope of
    mu(s) s is (1 + s^2)^(-3/2) >= (1 + s)^(-3), so alpha = 2 satisfies the
    lower derivative bound.
    """
    return MaterialLaw(
        lambda_fn=_inv_sqrt1p,
        mu_fn=_inv_sqrt1p,
        C1=1.0,
        C2=1.0,
        kappa=1.0,
        alpha=2.0,
        dlam=_d_builtin,
        dmu=_d_builtin,
        name="builtin",
    )


def constant_law(lam: float, mu: float) -> MaterialLaw:
    """Linear law with frozen coefficients (not strain limiting; for sanity checks)."""
    return MaterialLaw(
        lambda_fn=lambda s: np.full_like(np.asarray(s, dtype=float), lam),
        mu_fn=lambda s: np.full_like(np.asarray(s, dtype=float), mu),
        C1=min(lam, mu),
        C2=math.inf,
        kappa=1.0,
        alpha=0.0,
        dlam=lambda s: np.full_like(np.asarray(s, dtype=float), lam),
        dmu=lambda s: np.full_like(np.asarray(s, dtype=float), mu),
        name=f"constant({lam},{mu})",
    )


def sample_structure_checks(law: MaterialLaw, s: Optional[np.ndarray] = None) -> dict[str, bool]:
    """Check the structural inequalities of ``law`` on a log-spaced grid."""
    if s is None:
        s = np.logspace(-6, 6, 2001)
    s = np.asarray(s, dtype=float)
    sym = np.concatenate([-s[::-1], s])
    tol = 1e-12
    lam2 = law.lam_s(sym) * sym
    mu2 = law.mu_r(s) * s
    return {
        "A1": bool(np.all(law.C1 * sym**2 / (law.kappa + np.abs(sym)) <= lam2 * (1 + tol))
                   and np.all(lam2 <= law.C2 * np.abs(sym) * (1 + tol))),
        "A2": bool(np.all(law.C1 * s**2 / (law.kappa + s) <= mu2 * (1 + tol))
                   and np.all(mu2 <= law.C2 * s * (1 + tol))),
        "A3": bool(np.all(law.dlam_s(sym) >= 0.0)),
        "A4": bool(np.all(law.C1 / (law.kappa + s) ** (law.alpha + 1) <= law.dmu_r(s) * (1 + tol))),
        "lambda_bound": bool(np.all(np.abs(law.lam_s(sym)) <= law.C2 * (1 + tol))),
        "mu_bound": bool(np.all(law.mu_r(s) <= law.C2 * (1 + tol))),
    }


def apply_A(S, law: MaterialLaw):
    """lambda(tr S) tr S I + mu(|S^d|) S^d."""
    a, single = _unwrap(S)
    d = dim_of(a.shape[-1])
    tr = trace(a)
    dev = deviatoric(a)
    out = law.mu_fn(frobenius_norm(dev))[..., None] * dev
    out = out + law.lam_s(tr)[..., None] * identity_components(d)
    return _wrap(out, single)


def apply_reg(S, reg: RegularizationParams):
    """(1/n) [tr S |tr S|^(1/t-1) I + S^d |S^d|^(1/t-1)], zero where an argument vanishes."""
    a, single = _unwrap(S)
    d = dim_of(a.shape[-1])
    tr = trace(a)
    dev = deviatoric(a)
    p = 1.0 / reg.t
    nd = frobenius_norm(dev)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nd > 0.0, np.abs(nd) ** (p - 1.0), 0.0)
    out = scale[..., None] * dev + np.asarray(signed_power(tr, p))[..., None] * identity_components(d)
    return _wrap(out / reg.n, single)


def regularizer(S, reg: RegularizationParams):
    """The regularizer used by the solver: S/n for t = 1, the power form otherwise."""
    if reg.linear:
        a, single = _unwrap(S)
        return _wrap(a / reg.n, single)
    return apply_reg(S, reg)


def apply_A_n(S, law: MaterialLaw, reg: RegularizationParams):
    a, single = _unwrap(S)
    return _wrap(apply_A(a, law) + regularizer(a, reg), single)


def solve_radial(
    g: Callable[[float], float],
    target: float,
    bracket: tuple[float, float],
    dg: Optional[Callable[[float], float]] = None,
    tol: float = 1e-13,
    maxiter: int = 200,
) -> float:
    """Root of the increasing scalar map ``g(x) = target`` inside ``bracket``.

    Safeguarded Newton: a Newton step is accepted only when it stays inside the
    current bracket, otherwise the bracket is bisected.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    glo, ghi = g(lo) - target, g(hi) - target
    if not (math.isfinite(glo) and math.isfinite(ghi)):
        raise LocalSolveError("non-finite value at bracket end")
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if glo > 0.0 or ghi < 0.0:
        raise LocalSolveError(f"bracket [{lo}, {hi}] does not straddle target {target}")
    x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        gx = g(x) - target
        if not math.isfinite(gx):
            raise LocalSolveError(f"non-finite evaluation at x={x}")
        if gx == 0.0:
            return x
        if gx < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= max(tol, 4 * math.ulp(max(abs(lo), abs(hi)))):
            return 0.5 * (lo + hi)
        xn = None
        if dg is not None:
            slope = dg(x)
            if slope > 0.0 and math.isfinite(slope):
                xn = x - gx / slope
                if abs(xn - x) <= 0.5 * tol:
                    return xn
        if xn is None or not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        x = xn
    raise LocalSolveError("solve_radial did not converge")


def solve_radial_batch(g, dg, target, lo, hi, tol: float = 1e-13, maxiter: int = 200) -> np.ndarray:
    """Vectorized :func:`solve_radial` for many independent monotone equations.

    ``g`` and ``dg`` act elementwise; ``lo``/``hi`` must bracket every root.
    """
    target = np.asarray(target, dtype=float)
    lo = np.array(np.broadcast_to(lo, target.shape), dtype=float)
    hi = np.array(np.broadcast_to(hi, target.shape), dtype=float)
    if np.any(g(lo) - target > 0.0) or np.any(g(hi) - target < 0.0):
        raise LocalSolveError("bracket does not straddle target")
    x = np.clip(0.5 * (lo + hi), lo, hi)
    done = np.zeros(target.shape, dtype=bool)
    eps = 4 * np.finfo(float).eps
    for _ in range(maxiter):
        gx = g(x) - target
        if not np.all(np.isfinite(gx)):
            raise LocalSolveError("non-finite evaluation in batch solve")
        neg = gx < 0.0
        lo = np.where(neg & ~done, x, lo)
        hi = np.where(~neg & (gx != 0.0) & ~done, x, hi)
        slope = dg(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where((slope > 0.0) & np.isfinite(slope), gx / slope, np.nan)
        xn = x - step
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        width = hi - lo
        scale = np.maximum(np.abs(lo), np.abs(hi))
        conv = (gx == 0.0) | (np.abs(np.where(bad, np.inf, step)) <= 0.5 * tol) | (width <= np.maximum(tol, eps * scale))
        x = np.where(done, x, np.where(gx == 0.0, x, xn))
        done |= conv
        if done.all():
            return x
    raise LocalSolveError(f"batch solve: {int((~done).sum())} equations did not converge")


def solve_local_step1(R_hat, tau: float, law: MaterialLaw):
    """Unique T with (1/tau) T + A(T) = R_hat.

    Trace and deviator decouple: s = tr T solves s/tau + d lambda(s) s = tr R_hat,
    and rho = |T^d| solves rho/tau + mu(rho) rho = |R_hat^d|, with T^d parallel
    to R_hat^d. Accepts a single tensor or a batch ``(..., ncomp)``.
    """
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    a, single = _unwrap(R_hat)
    d = dim_of(a.shape[-1])
    flat = a.reshape(-1, a.shape[-1])
    tr = trace(flat)
    dev = deviatoric(flat)
    rdev = frobenius_norm(dev)

    C2 = law.C2 if math.isfinite(law.C2) else None
    if C2 is not None:
        s_lo, s_hi = tau * (tr - d * C2), tau * (tr + d * C2)
        r_lo, r_hi = np.maximum(0.0, tau * (rdev - C2)), tau * rdev
    else:
        s_lo, s_hi = -tau * np.abs(tr) - 1.0, tau * np.abs(tr) + 1.0
        r_lo, r_hi = np.zeros_like(rdev), tau * rdev
    # widen by a few ulps so rounding in tau * (...) cannot exclude the root
    s_pad = 1e-12 * (1.0 + np.abs(s_lo) + np.abs(s_hi))
    s_lo, s_hi = s_lo - s_pad, s_hi + s_pad
    r_pad = 1e-12 * (1.0 + r_hi)
    r_lo, r_hi = np.maximum(0.0, r_lo - r_pad), r_hi + r_pad
    s = solve_radial_batch(
        lambda x: x / tau + d * law.lam_s(x),
        lambda x: 1.0 / tau + d * law.dlam_s(x),
        tr, s_lo, s_hi,
    )
    rho = solve_radial_batch(
        lambda x: x / tau + law.mu_r(x),
        lambda x: 1.0 / tau + law.dmu_r(x),
        rdev, r_lo, r_hi,
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rdev > 0.0, rho / rdev, 0.0)
    out = ratio[:, None] * dev + (s / d)[:, None] * identity_components(d)
    return _wrap(out.reshape(a.shape), single)


def _expand_bracket(g, target, nonnegative: bool = False, maxiter: int = 200):
    """Grow [-w, w] (or [0, w]) until it brackets every root of the increasing map ``g``."""
    lo = np.zeros_like(target) if nonnegative else -np.ones_like(target)
    hi = np.ones_like(target)
    for _ in range(maxiter):
        bad_lo = (g(lo) > target) & (not nonnegative)
        bad_hi = g(hi) < target
        if not (bad_lo.any() or bad_hi.any()):
            return lo, hi
        lo = np.where(bad_lo, 2.0 * lo, lo)
        hi = np.where(bad_hi, 2.0 * hi, hi)
    raise LocalSolveError("could not bracket the root")


def invert_A_n(E, law: MaterialLaw, reg: RegularizationParams):
    """The stress T with A(T) + regularizer(T) = E, for any t >= 1.

    Same trace/deviator decoupling as :func:`solve_local_step1`, with the
    regularizer in place of the pseudo-time term.
    """
    a, single = _unwrap(E)
    d = dim_of(a.shape[-1])
    flat = a.reshape(-1, a.shape[-1])
    tr = trace(flat)
    dev = deviatoric(flat)
    rdev = frobenius_norm(dev)
    p = 1.0 / reg.t

    # trace of the regularizer: s/n for the linear form, d sign(s)|s|^p / n otherwise
    wt = 1.0 if reg.linear else float(d)

    def g_s(x):
        return d * law.lam_s(x) + wt * np.asarray(signed_power(x, p)) / reg.n

    def dg_s(x):
        with np.errstate(divide="ignore"):
            return d * law.dlam_s(x) + wt * p * np.abs(x) ** (p - 1.0) / reg.n

    def g_r(x):
        return law.mu_r(x) + np.abs(x) ** p / reg.n

    def dg_r(x):
        with np.errstate(divide="ignore"):
            return law.dmu_r(x) + p * np.abs(x) ** (p - 1.0) / reg.n

    lo, hi = _expand_bracket(g_s, tr)
    s = solve_radial_batch(g_s, dg_s, tr, lo, hi)
    lo_r, hi_r = _expand_bracket(g_r, rdev, nonnegative=True)
    rho = solve_radial_batch(g_r, dg_r, rdev, lo_r, hi_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rdev > 0.0, rho / rdev, 0.0)
    out = ratio[:, None] * dev + (s / d)[:, None] * identity_components(d)
    return _wrap(out.reshape(a.shape), single)
