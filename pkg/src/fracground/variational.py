"""Energy functional, Nehari projection and the ground-state solver.

The ground state is found by minimizing the scale-invariant quotient

    R(u) = (1/p - 1/q) * W(u)**(q/(q-p)) * (int |u|^q)**(-p/(q-p)),

where W(u) is the p-th power of the full W^{s,p} norm.  R(u) equals the
energy of the Nehari projection theta_u * u, so its minimum is the least
energy d and the projected minimizer is the ground state.  Descent uses
the exact gradient of the discretized quotient with a diagonally
preconditioned direction and Armijo backtracking; for p = 2 the pair
sums along a line are quadratic polynomials in the step, which makes
the line search cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import BoxDomain, GridFunction, load, refine
from .groups import qnorm_grid
from .nonlocal_ops import (NEAR_RADIUS_FACTOR, KernelContext, KernelSpec,
                           get_context)

MARGIN = 1e-3


@dataclass(frozen=True)
class ProblemParams:
    """Exponents of the equation; q must sit inside (p, p_s*) with margin."""

    kernel: KernelSpec
    q: float

    def __post_init__(self):
        p = self.kernel.p
        crit = self.kernel.critical_exponent
        if self.q - p < MARGIN:
            raise ValueError(f"q must exceed p = {p:g} by at least {MARGIN:g}")
        if math.isfinite(crit) and crit - self.q < MARGIN:
            raise ValueError(
                f"q must stay below the critical exponent p_s* = {crit:.4f} "
                f"by at least {MARGIN:g}")

    @property
    def p(self) -> float:
        return self.kernel.p

    @property
    def s(self) -> float:
        return self.kernel.s

    @property
    def Q(self) -> int:
        return self.kernel.Q

    def lemma_ratios(self):
        """Target ratios ([phi]^p : ||phi||_p^p), (||phi||_q^q : ||phi||_p^p)
        and the d-relation factor ||phi||_p^p / d of the converged state."""
        p, q, s, Q = self.p, self.q, self.s, self.Q
        den = p * q * s - Q * (q - p)
        return (Q * (q - p) / den, p * q * s / den, den / ((q - p) * s))


@dataclass(frozen=True)
class EnergyReport:
    seminorm_pp: float
    lp_pp: float
    lq_qq: float
    W_pp: float = 0.0
    I: float = 0.0
    L: float = 0.0
    theta: float | None = None
    R: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "W_pp", self.seminorm_pp + self.lp_pp)
        object.__setattr__(self, "L", self.W_pp - self.lq_qq)


@dataclass
class SolverOptions:
    max_iter: int = 1000
    tol_rel_R: float = 1e-8
    tol_grad: float = 1e-6
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    init: str = "gauge_bump"          # gauge_bump | gaussian | file:<path>
    continuation_levels: int = 0
    rng_seed: int = 0
    near_radius_factor: float = NEAR_RADIUS_FACTOR
    patience: int = 8
    verbose: bool = False

    def __post_init__(self):
        if self.tol_rel_R <= 0 or self.tol_grad <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise ValueError("armijo_shrink must lie in (0, 1)")


@dataclass
class GroundStateResult:
    phi: GridFunction
    d: float
    report: EnergyReport
    identity_residuals: dict
    weak_residual: float
    history: list
    converged: bool
    iterations: int
    value_range: tuple


def _lp_sums(u: np.ndarray, vol: float, p: float, q: float):
    return vol * float(np.sum(np.abs(u) ** p)), vol * float(np.sum(np.abs(u) ** q))


def energy(u: GridFunction, params: ProblemParams,
           ctx: KernelContext | None = None) -> EnergyReport:
    """Energy breakdown of u, including the Nehari scalar and quotient."""
    ctx = ctx or get_context(u.domain, params.kernel)
    p, q = params.p, params.q
    sem = ctx.seminorm(np.ascontiguousarray(u.values))
    lp, lq = _lp_sums(u.values, u.domain.cell_volume, p, q)
    W = sem + lp
    ivalue = W / p - lq / q
    theta = None
    rval = None
    if lq > 0.0:
        theta = (W / lq) ** (1.0 / (q - p))
        rval = _rayleigh_value(W, lq, p, q)
    return EnergyReport(seminorm_pp=sem, lp_pp=lp, lq_qq=lq, I=ivalue,
                        theta=theta, R=rval)


def _rayleigh_value(W: float, lq: float, p: float, q: float) -> float:
    return (1.0 / p - 1.0 / q) * W ** (q / (q - p)) * lq ** (-p / (q - p))


def nehari_theta(u: GridFunction, params: ProblemParams,
                 ctx: KernelContext | None = None) -> float:
    """The unique positive scalar placing theta * u on the Nehari set."""
    rep = energy(u, params, ctx)
    if rep.theta is None:
        raise ValueError("theta is undefined for the zero function")
    return rep.theta


def rayleigh(u: GridFunction, params: ProblemParams,
             ctx: KernelContext | None = None) -> float:
    """Scale-invariant quotient; equals the energy of the Nehari projection."""
    rep = energy(u, params, ctx)
    if rep.R is None:
        raise ValueError("the quotient is undefined for the zero function")
    return rep.R


def energy_gradient(u: GridFunction, params: ProblemParams,
                    ctx: KernelContext | None = None) -> np.ndarray:
    """Exact derivative of the discrete energy with respect to nodal values."""
    ctx = ctx or get_context(u.domain, params.kernel)
    vals = np.ascontiguousarray(u.values)
    gsem, _ = ctx.gradient(vals)
    p, q = params.p, params.q
    vol = u.domain.cell_volume
    return (gsem / p
            + vol * (np.abs(vals) ** (p - 2.0) * vals
                     - np.abs(vals) ** (q - 2.0) * vals))


def strong_residual(u: GridFunction, params: ProblemParams,
                    ctx: KernelContext | None = None) -> np.ndarray:
    """Nodal residual of the equation in strong form.

    The nonlocal operator applied at a node equals the seminorm gradient
    divided by 2 p vol (the weak form counts every pair twice), so the
    returned array discretizes  op(u) + |u|^{p-2} u - |u|^{q-2} u.
    """
    ctx = ctx or get_context(u.domain, params.kernel)
    vals = np.ascontiguousarray(u.values)
    gsem, _ = ctx.gradient(vals)
    p, q = params.p, params.q
    vol = u.domain.cell_volume
    return (gsem / (2.0 * p * vol)
            + np.abs(vals) ** (p - 2.0) * vals
            - np.abs(vals) ** (q - 2.0) * vals)


def verify_identities(result: GroundStateResult, params: ProblemParams) -> dict:
    """Relative residuals of the three ground-state norm identities."""
    rep = result.report
    if rep.lp_pp <= 0.0:
        raise ValueError("identities undefined: ||phi||_p vanished (no convergence)")
    t1, t2, t3 = params.lemma_ratios()
    r1 = abs(rep.seminorm_pp / rep.lp_pp - t1) / t1
    r2 = abs(rep.lq_qq / rep.lp_pp - t2) / t2
    r3 = abs(result.d - rep.lp_pp / t3) / result.d
    return {"r1": r1, "r2": r2, "r3": r3}


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def _initial_values(domain: BoxDomain, opts: SolverOptions) -> np.ndarray:
    if opts.init.startswith("file:"):
        u = load(opts.init[5:])
        if not u.domain.same_grid(domain):
            from .grids import regrid

            u = regrid(u, domain)
        return np.ascontiguousarray(u.values)
    nodes = domain.nodes()
    if opts.init == "gaussian":
        scale = np.array([w / 3.0 for w in domain.half_widths])
        return np.exp(-0.5 * np.sum((nodes / scale) ** 2, axis=1))
    if opts.init == "gauge_bump":
        return np.exp(-qnorm_grid(domain.group, nodes))
    raise ValueError(f"unknown initializer {opts.init!r}")


def _best_bump_width(domain: BoxDomain, params: ProblemParams,
                     ctx: KernelContext, u0: np.ndarray) -> np.ndarray:
    """Scan a few gauge dilations of the initial bump and keep the best R."""
    nodes = domain.nodes()
    gauge = qnorm_grid(domain.group, nodes)
    p, q = params.p, params.q
    vol = domain.cell_volume
    best, best_r = u0, None
    for lam in (0.25, 0.5, 1.0, 2.0, 4.0):
        u = np.exp(-lam * gauge)
        W = ctx.seminorm(u) + vol * float(np.sum(np.abs(u) ** p))
        lq = vol * float(np.sum(np.abs(u) ** q))
        r = _rayleigh_value(W, lq, p, q)
        if best_r is None or r < best_r:
            best, best_r = u, r
    return best


def _coarsen_ladder(domain: BoxDomain, levels: int) -> list:
    ladder = [domain]
    for _ in range(levels):
        m = ladder[-1].points_per_axis
        if any(mi % 2 or mi // 2 < 8 for mi in m):
            break
        ladder.append(BoxDomain(domain.group, domain.half_widths,
                                tuple(mi // 2 for mi in m)))
    ladder.reverse()
    return ladder


def solve_ground_state(params: ProblemParams, domain: BoxDomain,
                       opts: SolverOptions | None = None) -> GroundStateResult:
    """Minimize the quotient R and project onto the Nehari set.

    With continuation, the problem is first solved on coarsened grids and
    the minimizer interpolated upward.  Deterministic for fixed options.
    """
    opts = opts or SolverOptions()
    ladder = _coarsen_ladder(domain, opts.continuation_levels)
    u = None
    result = None
    for level, dom in enumerate(ladder):
        ctx = get_context(dom, params.kernel, opts.near_radius_factor)
        if u is None:
            u = _initial_values(dom, opts)
            if opts.init == "gauge_bump":
                u = _best_bump_width(dom, params, ctx, u)
        else:
            u = np.ascontiguousarray(refine(GridFunction(ladder[level - 1], u)).values)
        final = level == len(ladder) - 1
        sub_opts = opts if final else _coarse_options(opts)
        u, result = _minimize_on_grid(params, dom, ctx, u, sub_opts)
    return result


def _coarse_options(opts: SolverOptions) -> SolverOptions:
    return SolverOptions(
        max_iter=opts.max_iter, tol_rel_R=max(opts.tol_rel_R, 1e-7),
        tol_grad=max(opts.tol_grad, 3e-5), armijo_c=opts.armijo_c,
        armijo_shrink=opts.armijo_shrink, init=opts.init,
        continuation_levels=0, rng_seed=opts.rng_seed,
        near_radius_factor=opts.near_radius_factor, patience=opts.patience,
        verbose=opts.verbose)


def _minimize_on_grid(params: ProblemParams, domain: BoxDomain,
                      ctx: KernelContext, u: np.ndarray, opts: SolverOptions):
    p, q = params.p, params.q
    vol = domain.cell_volume
    expo_w = q / (q - p)
    expo_q = p / (q - p)
    coef = 1.0 / p - 1.0 / q
    precond = ctx.quadratic_diagonal() + 2.0 * vol
    history = []
    converged = False
    step = 1.0
    quadratic = p == 2.0

    u = u / np.max(np.abs(u))
    stall = 0
    restarted = False
    best_wr = math.inf
    r_prev = None
    g_prev = None
    pg_prev = None
    dir_prev = None
    it = 0
    for it in range(1, opts.max_iter + 1):
        gsem, sem = ctx.gradient(u)
        lp, lq = _lp_sums(u, vol, p, q)
        if lq <= 0.0:
            raise RuntimeError("iterate collapsed to zero")
        W = sem + lp
        up = np.abs(u) ** (p - 2.0) * u if p != 2.0 else u
        uq = np.abs(u) ** (q - 2.0) * u
        gW = gsem + p * vol * up
        glq = q * vol * uq
        R = coef * W ** expo_w * lq ** (-expo_q)
        gR = R * (expo_w * gW / W - expo_q * glq / lq)

        wr = _weak_residual(gW, glq, W, lq, p, q)
        history.append((it, R, wr))
        if opts.verbose and (it < 6 or it % 25 == 0):
            print(f"  it {it:5d}  R={R:.10g}  wr={wr:.3e}")
        if wr <= opts.tol_grad:
            converged = True
            break
        improving = (r_prev is None
                     or abs(r_prev - R) > opts.tol_rel_R * abs(R)
                     or wr < 0.98 * best_wr)
        best_wr = min(best_wr, wr)
        if improving:
            stall = 0
            restarted = False
        else:
            stall += 1
            if stall >= opts.patience:
                if restarted:
                    break
                # drop the momentum once before giving up
                restarted = True
                stall = 0
                g_prev = None
                dir_prev = None
        r_prev = R

        # preconditioned Polak-Ribiere direction with automatic restart
        pg = gR / precond
        if g_prev is not None:
            beta = float(np.dot(gR - g_prev, pg)) / float(np.dot(g_prev, pg_prev))
            beta = max(beta, 0.0)
            dirv = -pg + beta * dir_prev
        else:
            dirv = -pg
        slope = float(np.dot(gR, dirv))
        if slope >= 0.0:
            dirv = -pg
            slope = float(np.dot(gR, dirv))
        g_prev = gR
        pg_prev = pg
        dir_prev = dirv

        if quadratic:
            sem_d = ctx.seminorm(dirv)
            cross = float(np.dot(gsem, dirv))  # = 2 B(u, dir)
            uu = float(np.dot(u, u))
            ud = float(np.dot(u, dirv))
            dd = float(np.dot(dirv, dirv))

            def r_at(t):
                w_t = sem + t * cross + t * t * sem_d + vol * (uu + 2 * t * ud + t * t * dd)
                lq_t = vol * float(np.sum(np.abs(u + t * dirv) ** q))
                if lq_t <= 0.0 or w_t <= 0.0:
                    return math.inf
                return coef * w_t ** expo_w * lq_t ** (-expo_q)
        else:
            def r_at(t):
                ut = u + t * dirv
                w_t = ctx.seminorm(ut) + vol * float(np.sum(np.abs(ut) ** p))
                lq_t = vol * float(np.sum(np.abs(ut) ** q))
                if lq_t <= 0.0 or w_t <= 0.0:
                    return math.inf
                return coef * w_t ** expo_w * lq_t ** (-expo_q)

        t = step
        accepted = False
        for _ in range(50):
            if r_at(t) <= R + opts.armijo_c * t * slope:
                accepted = True
                break
            t *= opts.armijo_shrink
        if not accepted:
            break
        if quadratic:
            # cheap polish around the accepted step
            best_t, best_r = t, r_at(t)
            for factor in (0.5, 1.5, 2.0, 4.0):
                cand = t * factor
                rc = r_at(cand)
                if rc < best_r and rc <= R + opts.armijo_c * cand * slope:
                    best_t, best_r = cand, rc
            t = best_t
        u = u + t * dirv
        amp = np.max(np.abs(u))
        if amp > 10.0 or amp < 0.1:
            # R is amplitude-invariant; renormalize and drop the momentum,
            # whose scale would no longer match
            u = u / amp
            g_prev = None
            dir_prev = None
        step = min(max(t * 2.0, 1e-6), 1e6)

    # Nehari projection and fresh evaluation at phi
    rep = energy(GridFunction(domain, u), params, ctx)
    theta = rep.theta
    phi_vals = theta * u
    phi = GridFunction(domain, phi_vals)
    rep_phi = energy(phi, params, ctx)
    d = rep_phi.I

    gsem, _ = ctx.gradient(phi_vals)
    up_phi = np.abs(phi_vals) ** (p - 2.0) * phi_vals
    gW = gsem + p * vol * up_phi
    glq = q * vol * np.abs(phi_vals) ** (q - 2.0) * phi_vals
    lpf, lqf = _lp_sums(phi_vals, vol, p, q)
    wr_phi = _weak_residual(gW, glq, rep_phi.W_pp, lqf, p, q)

    result = GroundStateResult(
        phi=phi, d=d, report=rep_phi, identity_residuals={},
        weak_residual=wr_phi, history=history,
        converged=converged and wr_phi <= opts.tol_grad * 4.0,
        iterations=it,
        value_range=(float(np.min(phi_vals)), float(np.max(phi_vals))))
    result.identity_residuals = verify_identities(result, params)
    return u, result


def _weak_residual(gW, glq, W, lq, p, q) -> float:
    """Normalized stationarity measure at the Nehari projection.

    Uses the exact homogeneity scalings of the two gradient pieces, so no
    extra kernel pass is needed to evaluate them at theta * u.
    """
    theta = (W / lq) ** (1.0 / (q - p))
    a = (theta ** (p - 1.0) / p) * gW
    b = (theta ** (q - 1.0) / q) * glq
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na + nb == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / (na + nb)
