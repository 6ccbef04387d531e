"""Best-constant formulas and inequality checks driven by a ground state.

Every constant is computed by two routes (from ||phi||_p^p and from the
least energy d), cross-checked through the algebraic relation between
the Gagliardo-Nirenberg and Sobolev constants, and probed one-sidedly
with random smooth trial functions: no trial may beat the sharp value
beyond discretization slack.  The logarithmic inequalities are verified
directly, the discrete-measure ones at machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import GridFunction, entropy_density_integral, lp_norm_pow
from .nonlocal_ops import KernelContext, get_context
from .variational import GroundStateResult, ProblemParams


def _coeffs(params: ProblemParams):
    p, q, s, Q = params.p, params.q, params.s, params.Q
    den = p * q * s - Q * (q - p)
    if den <= 0:
        raise ValueError("parameters outside the admissible window")
    return p, q, s, Q, den


def lp_pp_from_d(params: ProblemParams, d: float) -> float:
    """||phi||_p^p implied by the least energy d."""
    p, q, s, Q, den = _coeffs(params)
    return den / ((q - p) * s) * d


def c_gn_inverse(params: ProblemParams, lp_pp: float | None = None,
                 d: float | None = None) -> float:
    """Reciprocal best constant of the Gagliardo-Nirenberg inequality.

    Exactly one of lp_pp (route A) or d (route B) must be given.
    """
    if (lp_pp is None) == (d is None):
        raise ValueError("pass exactly one of lp_pp or d")
    p, q, s, Q, den = _coeffs(params)
    if lp_pp is None:
        lp_pp = lp_pp_from_d(params, d)
    if lp_pp <= 0:
        raise ValueError("source must be positive")
    prefac = den / (p * q * s)
    ratio = (Q * (q - p) / den) ** (Q * (q - p) / (s * p * p))
    return prefac * ratio * lp_pp ** ((q - p) / p)


def c_s_inverse(params: ProblemParams, lp_pp: float | None = None,
                d: float | None = None) -> float:
    """Reciprocal best constant of the fractional Sobolev inequality."""
    if (lp_pp is None) == (d is None):
        raise ValueError("pass exactly one of lp_pp or d")
    p, q, s, Q, den = _coeffs(params)
    if d is not None:
        return (p * q / (q - p) * d) ** ((q - p) / q)
    if lp_pp <= 0:
        raise ValueError("source must be positive")
    return (s * p * q / den * lp_pp) ** ((q - p) / q)


def c_s_log(params: ProblemParams, d: float) -> float:
    """Constant of the inhomogeneous logarithmic Sobolev inequality."""
    p, s, Q = params.p, params.s, params.Q
    if d <= 0:
        raise ValueError("d must be positive")
    return (s / (Q * d)) ** (s * p / Q)


def cross_check(c_gn_inv: float, c_s_inv: float, params: ProblemParams) -> float:
    """Relative residual of the relation coupling the two best constants."""
    p, q, s, Q, den = _coeffs(params)
    lhs = c_gn_inv ** (p / q)
    rhs = den / (p * q * s) * (Q * (q - p) / den) ** (Q * (q - p) / (p * q * s)) * c_s_inv
    return abs(lhs - rhs) / abs(rhs)


def j_quotient(u: GridFunction, params: ProblemParams,
               ctx: KernelContext | None = None) -> float:
    """Scale-invariant Gagliardo-Nirenberg quotient; its infimum is 1/C_GN."""
    ctx = ctx or get_context(u.domain, params.kernel)
    p, q, s, Q, den = _coeffs(params)
    sem = ctx.seminorm(np.ascontiguousarray(u.values))
    lp = lp_norm_pow(u, p)
    lq = lp_norm_pow(u, q)
    if lq <= 0:
        raise ValueError("quotient undefined for the zero function")
    a = Q * (q - p) / (s * p * p)
    b = (s * p * q - Q * (q - p)) / (s * p * p)
    return sem ** a * lp ** b / lq


def sobolev_quotient(u: GridFunction, params: ProblemParams,
                     ctx: KernelContext | None = None) -> float:
    """Scale-invariant Sobolev quotient; its infimum is 1/C_S."""
    ctx = ctx or get_context(u.domain, params.kernel)
    p, q = params.p, params.q
    sem = ctx.seminorm(np.ascontiguousarray(u.values))
    lp = lp_norm_pow(u, p)
    lq = lp_norm_pow(u, q)
    if lq <= 0:
        raise ValueError("quotient undefined for the zero function")
    return (sem + lp) / lq ** (p / q)


def log_holder_gap(u: GridFunction, p: float, q: float) -> float:
    """Right minus left side of the logarithmic Holder inequality.

    Exact on the discrete measure space, so the gap must only be allowed
    to dip below zero by rounding.
    """
    if p >= q:
        raise ValueError("requires p < q")
    if p < 1:
        raise ValueError("requires p >= 1")
    lp = lp_norm_pow(u, p)
    lq = lp_norm_pow(u, q)
    if lp <= 0:
        raise ValueError("undefined for the zero function")
    lhs = entropy_density_integral(u, p)
    rhs = q / (q - p) * ((p / q) * math.log(lq) - math.log(lp))
    return rhs - lhs


def holder_interpolation_gap(u: GridFunction, p: float, r: float, q: float) -> float:
    """Relative gap of ||u||_r <= ||u||_p^a ||u||_q^(1-a), 1/r = a/p + (1-a)/q."""
    if not p <= r <= q or p == q:
        raise ValueError("requires p <= r <= q with p < q")
    a = (1.0 / r - 1.0 / q) / (1.0 / p - 1.0 / q)
    np_ = lp_norm_pow(u, p) ** (1.0 / p)
    nr = lp_norm_pow(u, r) ** (1.0 / r)
    nq = lp_norm_pow(u, q) ** (1.0 / q)
    if nr == 0:
        return 0.0
    return (np_ ** a * nq ** (1.0 - a) - nr) / nr


def log_sobolev_inhom_gap(u: GridFunction, params: ProblemParams, d: float,
                          ctx: KernelContext | None = None) -> float:
    """Gap of the inhomogeneous log-Sobolev inequality with computed d."""
    if d <= 0:
        raise ValueError("d must be positive")
    ctx = ctx or get_context(u.domain, params.kernel)
    p, s, Q = params.p, params.s, params.Q
    sem = ctx.seminorm(np.ascontiguousarray(u.values))
    lp = lp_norm_pow(u, p)
    lhs = entropy_density_integral(u, p)
    rhs = Q / s * math.log(c_s_log(params, d) * (sem + lp) / lp)
    return rhs - lhs


def log_sobolev_hom_gap(u: GridFunction, params: ProblemParams, d: float,
                        ctx: KernelContext | None = None) -> float:
    """Gap of the seminorm-only log-Sobolev inequality with computed d."""
    if d <= 0:
        raise ValueError("d must be positive")
    ctx = ctx or get_context(u.domain, params.kernel)
    p, q, s, Q, den = _coeffs(params)
    sem = ctx.seminorm(np.ascontiguousarray(u.values))
    lp = lp_norm_pow(u, p)
    lhs = entropy_density_integral(u, p)
    c_gn = 1.0 / c_gn_inverse(params, d=d)
    rhs = Q / s * math.log(
        c_gn ** (p * s / (Q * (q - p))) * sem ** (1.0 / p) / lp ** (1.0 / p))
    return rhs - lhs


# ---------------------------------------------------------------------------
# Trial functions and the consolidated report
# ---------------------------------------------------------------------------

def random_bump(domain, rng: np.random.Generator) -> GridFunction:
    """A smooth positive bump with random center and per-axis widths.

    Widths respect the dilation anisotropy and stay between 8 cells and a
    third of the box, so the trial is resolved and decays inside the box.
    """
    nodes = domain.nodes()
    vals = np.zeros(domain.size)
    for _ in range(int(rng.integers(1, 3))):
        z = np.ones(domain.size)
        for a in range(domain.dim):
            la = domain.half_widths[a]
            ha = domain.spacings[a]
            lo = min(8.0 * ha, la / 3.0)
            width = rng.uniform(lo, la / 3.0)
            center = rng.uniform(-0.3 * la, 0.3 * la)
            z = z * np.exp(-((nodes[:, a] - center) / width) ** 2)
        vals += rng.uniform(0.3, 1.0) * z
    return GridFunction(domain, vals)


@dataclass
class TrialRow:
    trial: int
    j_quotient: float
    sobolev_quotient: float
    log_sobolev_inhom_gap: float
    log_sobolev_hom_gap: float


@dataclass
class ConstantsReport:
    params: ProblemParams
    d: float
    phi_lp_pp: float
    c_gn_inv_route_a: float
    c_gn_inv_route_b: float
    c_s_inv_route_a: float
    c_s_inv_route_b: float
    c_s_log: float
    cross_residual: float
    j_at_phi: float
    sobolev_at_phi: float
    trial_min_j: float
    trial_min_sobolev: float
    trial_rows: list = field(default_factory=list)
    kernel_constant: float = 1.0
    gauge: str = ""


def constants_report(result: GroundStateResult, params: ProblemParams,
                     n_trials: int = 50, rng_seed: int = 0) -> ConstantsReport:
    """Evaluate both routes for every constant and run the trial sweep."""
    ctx = get_context(result.phi.domain, params.kernel)
    lp_pp = result.report.lp_pp
    d = result.d
    report = ConstantsReport(
        params=params,
        d=d,
        phi_lp_pp=lp_pp,
        c_gn_inv_route_a=c_gn_inverse(params, lp_pp=lp_pp),
        c_gn_inv_route_b=c_gn_inverse(params, d=d),
        c_s_inv_route_a=c_s_inverse(params, lp_pp=lp_pp),
        c_s_inv_route_b=c_s_inverse(params, d=d),
        c_s_log=c_s_log(params, d),
        cross_residual=cross_check(c_gn_inverse(params, lp_pp=lp_pp),
                                   c_s_inverse(params, lp_pp=lp_pp), params),
        j_at_phi=j_quotient(result.phi, params, ctx),
        sobolev_at_phi=sobolev_quotient(result.phi, params, ctx),
        trial_min_j=math.inf,
        trial_min_sobolev=math.inf,
        kernel_constant=params.kernel.kernel_constant,
        gauge="koranyi" if result.phi.domain.group.kind == "heisenberg1" else "euclidean",
    )
    rng = np.random.default_rng(rng_seed)
    for t in range(n_trials):
        u = random_bump(result.phi.domain, rng)
        row = TrialRow(
            trial=t,
            j_quotient=j_quotient(u, params, ctx),
            sobolev_quotient=sobolev_quotient(u, params, ctx),
            log_sobolev_inhom_gap=log_sobolev_inhom_gap(u, params, d, ctx),
            log_sobolev_hom_gap=log_sobolev_hom_gap(u, params, d, ctx),
        )
        report.trial_rows.append(row)
        report.trial_min_j = min(report.trial_min_j, row.j_quotient)
        report.trial_min_sobolev = min(report.trial_min_sobolev, row.sobolev_quotient)
    return report
