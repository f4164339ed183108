"""Hypocoercivity constants, relaxation-time bounds and optimality certificates.

Rational constants are kept exact (sympy) and converted to float only when
a report is assembled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .spectral import (
    DecayCurve,
    GeneratorMatrix,
    assemble_galerkin,
    operator_norm_decay,
    relaxation_time,
    singular_value_gap,
    spectral_gap,
)

PROVENANCE = ("exact", "galerkin", "monte-carlo", "estimated")
DEFAULT_EPS = math.exp(-1)


class TheoremViolation(AssertionError):
    """A bound that must hold was found violated by computed values."""


class NonConvergence(RuntimeError):
    """A Galerkin quantity failed the truncation-degree gate."""


def _exact(x) -> sp.Expr:
    # ints, Fractions and sympy numbers stay exact; floats are taken at face value
    if isinstance(x, float):
        return sp.Float(x, 30)
    return sp.sympify(x)


def _positive(name: str, x) -> None:
    if not sp.sympify(x) > 0:
        raise ValueError(f"{name} must be positive, got {x}")


@dataclass(frozen=True)
class DivergenceConstants:
    T: sp.Expr
    m: sp.Expr
    kappa_minus: sp.Expr
    c0: sp.Expr
    c1: sp.Expr

    def as_float(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("T", "m", "kappa_minus", "c0", "c1")}


def divergence_constants(T, m, kappa_minus=0) -> DivergenceConstants:
    """``c0 = 19 T^2 + 70/m`` and ``c1 = 328 + 75 kappa max(1/sqrt(m), T/pi)^2 + 1821/(m T^2)``."""
    T, m, k = _exact(T), _exact(m), _exact(kappa_minus)
    _positive("T", T)
    _positive("m", m)
    if k < 0:
        raise ValueError(f"kappa_minus must be non-negative, got {kappa_minus}")
    c0 = sp.simplify(19 * T**2 + 70 / m)
    reach = sp.Max(1 / sp.sqrt(m), T / sp.pi)
    c1 = sp.simplify(328 + 75 * k * reach**2 + sp.Rational(1821) / (m * T**2))
    return DivergenceConstants(T, m, k, c0, c1)


def auto_T(m) -> sp.Expr:
    """Delay ``T = 3/sqrt(m)``."""
    m = _exact(m)
    _positive("m", m)
    return 3 / sp.sqrt(m)


def stpi_constants(c: DivergenceConstants) -> tuple[sp.Expr, sp.Expr]:
    """Space-time Poincare constants ``(C0, C1) = (2 c0, 3 + 4 c1)``."""
    return 2 * c.c0, 3 + 4 * c.c1


def contraction_rate(gamma, C0, C1) -> float:
    """``nu = gamma / (gamma^2 C0 + C1)``."""
    if not gamma > 0:
        raise ValueError(f"refresh rate gamma must be positive, got {gamma}")
    return float(gamma / (gamma**2 * C0 + C1))


def rhmc_rate(gamma, c: DivergenceConstants) -> float:
    """RHMC rate ``gamma / (2 c0 gamma^2 + 3 + 4 c1)`` from the divergence constants."""
    return contraction_rate(gamma, *stpi_constants(c))


def optimal_gamma(C0, C1) -> float:
    return float(sp.sqrt(sp.sympify(C1) / C0))


def rhmc_optimal_gamma(m, kappa_minus=0) -> tuple[float, float]:
    """Rate-maximising refresh rate and ``1/nu`` for RHMC with ``T = 3/sqrt(m)``.

    Raises :class:`TheoremViolation` if ``1/nu < 2024/sqrt(m) sqrt(1 + kappa/(7m))`` fails.
    """
    c = divergence_constants(auto_T(m), m, kappa_minus)
    C0, C1 = stpi_constants(c)
    gamma = sp.sqrt(C1 / C0)
    inv_nu = sp.simplify(2 * sp.sqrt(C0 * C1))
    bound = 2024 / sp.sqrt(c.m) * sp.sqrt(1 + c.kappa_minus / (7 * c.m))
    if not float(inv_nu) < float(bound):
        raise TheoremViolation(f"1/nu = {float(inv_nu):.6g} is not below {float(bound):.6g}")
    return float(gamma), float(inv_nu)


def trel_upper_bound(T, C0, C1, eps: float = DEFAULT_EPS) -> float:
    """``T + 2 sqrt(C0 C1) log(1/eps)``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return float(T) + 2 * math.sqrt(float(C0) * float(C1)) * math.log(1 / eps)


def trel_lower_from_sing(sing: float) -> float:
    """``1 / (2 sing)``."""
    if not sing > 0:
        raise ValueError("singular value gap must be positive")
    return 1.0 / (2.0 * sing)


def lift_lower_bound(t_rel_base: float) -> float:
    """``sqrt(t_rel(P)) / (2 sqrt 2)``: no lift relaxes faster."""
    if not t_rel_base > 0:
        raise ValueError("base relaxation time must be positive")
    return math.sqrt(t_rel_base) / (2 * math.sqrt(2))


def optimality_constant(t_rel_lift: float, t_rel_base: float) -> float:
    """Smallest ``C`` with ``t_rel_lift <= C sqrt(t_rel_base) / (2 sqrt 2)``."""
    if not (t_rel_lift > 0 and t_rel_base > 0):
        raise ValueError("relaxation times must be positive")
    return t_rel_lift * 2 * math.sqrt(2) / math.sqrt(t_rel_base)


def corollary_optimality(c=0, A=None) -> float:
    """Certified RHMC optimality constant for ``kappa_minus <= c m``.

    Without ``A``: ``2 sqrt 2 (2024 sqrt(1 + c/7) + 3)``; with ``A >= 1``:
    ``2 sqrt 2 (482 (6 + 5c/7) A + 3)``.
    """
    c = _exact(c)
    if c < 0:
        raise ValueError("c must be non-negative")
    if A is None:
        return float(2 * sp.sqrt(2) * (2024 * sp.sqrt(1 + c / 7) + 3))
    A = _exact(A)
    if A < 1:
        raise ValueError("A must be at least 1")
    return float(2 * sp.sqrt(2) * (482 * (6 + 5 * c / 7) * A + 3))


# ---------------------------------------------------------------------------
# certificates against computed curves


def sandwich_t0(curve: DecayCurve, eps: float = DEFAULT_EPS, n_T: int = 400) -> tuple[float, float]:
    """``(t_rel(eps), t0(eps))`` with ``t0`` the best delayed-exponential majorant time.

    For each ``T`` on ``n_T`` points of ``[0, 2 t_rel]`` the largest ``nu`` with
    ``curve(t) <= exp(-nu (t - T))`` on the grid is found, and
    ``t0 = min_T log(1/eps)/nu + T``; the crossing point ``(t_rel, eps)`` is
    added to the grid constraints. Raises :class:`TheoremViolation` if
    ``t_rel <= t0 <= 2 t_rel`` fails.
    """
    t_rel = relaxation_time(curve, eps)
    if eps == 1:
        return 0.0, 0.0
    if np.any(curve.values > 1 + 1e-9):
        raise ValueError("curve exceeds 1; not a contraction")
    # the exact crossing joins the grid so the majorant is also checked where curve = eps
    times = np.append(curve.times, t_rel)
    vals = np.maximum(np.append(curve.values, eps), 1e-300)
    best = math.inf
    for T in np.linspace(0.0, 2 * t_rel, n_T):
        after = times > T
        if not np.any(after):
            continue
        nu = float(np.min(-np.log(vals[after]) / (times[after] - T)))
        if nu > 0:
            best = min(best, math.log(1 / eps) / nu + T)
    if not math.isfinite(best):
        raise ValueError("no feasible (nu, T) pair on the grid")
    slack = 1e-9 * max(1.0, t_rel)
    if not (t_rel - slack <= best <= 2 * t_rel + slack):
        raise TheoremViolation(f"sandwich t_rel={t_rel:.6g} <= t0={best:.6g} <= 2 t_rel fails")
    return t_rel, float(best)


@dataclass(frozen=True)
class Certificate:
    passed: bool
    margin: float  # min over the grid of bound - norm
    worst_time: float
    converged: bool


def certify_delayed_contractivity(
    G: GeneratorMatrix, nu: float, T: float, grid, tol: float = 1e-6, require_converged: bool = True
) -> Certificate:
    """Check ``||exp(tG)|| <= exp(-nu (t - T)) + tol`` on ``grid``."""
    curve = operator_norm_decay(G, grid, check_convergence=True)
    if require_converged and curve.converged is False:
        raise NonConvergence("Galerkin decay curve not converged in truncation degree")
    bound = np.exp(-nu * (curve.times - T))
    gap = bound + tol - curve.values
    i = int(np.argmin(gap))
    return Certificate(bool(gap[i] >= 0), float(gap[i] - tol), float(curve.times[i]), bool(curve.converged))


# ---------------------------------------------------------------------------
# report


@dataclass
class BoundsReport:
    m: float
    kappa_minus: float
    T: float
    gamma: float
    eps: float
    C0: float
    C1: float
    c0: float
    c1: float
    nu: float
    trel_upper: float
    corollary_C: float
    corollary_C_A1: float
    exact_constants: dict[str, str]
    provenance: dict[str, str] = field(default_factory=dict)
    measured: dict[str, float] = field(default_factory=dict)
    converged: bool | None = None

    def values(self) -> dict[str, float]:
        keys = ("m", "kappa_minus", "T", "gamma", "eps", "C0", "C1", "c0", "c1", "nu", "trel_upper",
                "corollary_C", "corollary_C_A1")
        out = {k: getattr(self, k) for k in keys}
        out.update(self.measured)
        return out


def bounds_report(
    m,
    kappa_minus=0,
    T=None,
    gamma=None,
    eps: float = DEFAULT_EPS,
    m_provenance: str = "exact",
    potential=None,
    grid=None,
    degree: int = 16,
) -> BoundsReport:
    """Run the constants pipeline and, given a potential, check it against Galerkin RHMC.

    ``T=None`` picks ``3/sqrt(m)``; ``gamma=None`` the rate-maximising value.
    With ``potential`` (d = 1) the measured RHMC relaxation time is compared
    with the lower and upper bounds; a failed ordering raises
    :class:`TheoremViolation`.
    """
    if m_provenance not in PROVENANCE:
        raise ValueError(f"unknown provenance {m_provenance!r}")
    T_exact = auto_T(m) if T is None else _exact(T)
    c = divergence_constants(T_exact, m, kappa_minus)
    C0, C1 = stpi_constants(c)
    g = optimal_gamma(C0, C1) if gamma is None else float(gamma)
    if not g > 0:
        raise ValueError("refresh rate gamma must be positive")
    nu = contraction_rate(g, float(C0), float(C1))
    ratio = float(c.kappa_minus / c.m)
    report = BoundsReport(
        m=float(c.m),
        kappa_minus=float(c.kappa_minus),
        T=float(T_exact),
        gamma=g,
        eps=eps,
        C0=float(C0),
        C1=float(C1),
        c0=float(c.c0),
        c1=float(c.c1),
        nu=nu,
        trel_upper=float(T_exact) + math.log(1 / eps) / nu,
        corollary_C=corollary_optimality(ratio),
        corollary_C_A1=corollary_optimality(ratio, 1),
        exact_constants={"c0": str(c.c0), "c1": str(c.c1), "C0": str(sp.simplify(C0)), "C1": str(sp.simplify(C1))},
    )
    derived = "estimated" if m_provenance == "estimated" else "exact"
    report.provenance = {k: derived for k in report.values()}
    report.provenance["eps"] = "exact"
    report.provenance["kappa_minus"] = "exact"
    if potential is not None:
        _measure(report, potential, grid, degree, derived)
    return report


def _measure(report: BoundsReport, potential, grid, degree: int, derived: str) -> None:
    if grid is None:
        grid = np.arange(0.0, 15.0 + 1e-9, 0.02)
    G = assemble_galerkin("rhmc", potential, report.gamma, degree)
    curve = operator_norm_decay(G, grid, check_convergence=True)
    t_rel = relaxation_time(curve, report.eps)
    sing = singular_value_gap(G)
    base = assemble_galerkin("overdamped", potential, degree=degree)
    t_rel_base = math.log(1 / report.eps) / spectral_gap(base)
    lower_sing = trel_lower_from_sing(sing)
    lower_lift = lift_lower_bound(t_rel_base)
    measured = {
        "t_rel": t_rel,
        "sing": sing,
        "t_rel_base": t_rel_base,
        "trel_lower_sing": lower_sing,
        "trel_lower_lift": lower_lift,
        "optimality_C": optimality_constant(t_rel, t_rel_base),
    }
    report.measured = measured
    for k in measured:
        report.provenance[k] = "galerkin"
    report.provenance["trel_lower_lift"] = "galerkin" if derived == "exact" else "estimated"
    report.converged = bool(curve.converged)
    if not (lower_sing <= t_rel <= report.trel_upper and lower_lift <= t_rel):
        raise TheoremViolation(
            f"ordering fails: 1/(2 sing)={lower_sing:.4g}, sqrt bound={lower_lift:.4g}, "
            f"t_rel={t_rel:.4g}, upper={report.trel_upper:.4g}"
        )
