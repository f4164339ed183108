"""Operator-norm decay, spectral and singular value gaps, relaxation times.

Three routes are provided: closed forms for Gaussian targets, Galerkin
truncation of generators in a tensor polynomial basis of ``L^2(mu x N(0,1))``
(d = 1), and exact matrix powers for finite chains such as the circle walks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigvalsh, expm
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from .model import (
    DEFAULT_QUADRATURE_NODES,
    OrthonormalPolynomials,
    Potential,
    TargetMeasure,
    TestFunction,
    gibbs_quadrature,
)
from .samplers import PhaseState, chain_rng, run_process, sample_target

DEFAULT_DEGREE = 16
CONVERGENCE_TOL = 1e-3
CHOP = 1e-12
GALERKIN_PROCESSES = ("overdamped", "hamiltonian", "langevin", "rhmc")


class GalerkinError(ValueError):
    """The polynomial basis is not resolved by the quadrature at this degree."""


class CrossingError(ValueError):
    """A decay curve never drops below the requested level on its grid."""


class PersistenceWarning(UserWarning):
    """A decay curve climbs back above the level after its first crossing."""


# ---------------------------------------------------------------------------
# closed forms for the Gaussian target


def _drift_matrix(gamma: float, m: float = 1.0) -> np.ndarray:
    # -G on span{sqrt(m) x, v} for U = m x^2 / 2
    w = math.sqrt(m)
    return np.array([[0.0, -w], [w, gamma]])


def gaussian_propagator_norm(gamma: float, t: float, m: float = 1.0) -> float:
    """``||exp(-t A)||_2`` with ``A = [[0, -sqrt(m)], [sqrt(m), gamma]]``.

    This is the norm of the Langevin semigroup on mean-zero functions for
    ``U = m x^2 / 2``; at ``m = 1, gamma = 2`` it equals
    ``sqrt(1 + 2t^2 + 2t sqrt(1 + t^2)) e^{-t}``.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    return float(np.linalg.norm(expm(-t * _drift_matrix(gamma, m)), 2))


def critical_langevin_norm(t):
    t = np.asarray(t, dtype=float)
    return np.sqrt(1 + 2 * t**2 + 2 * t * np.sqrt(1 + t**2)) * np.exp(-t)


def langevin_gap(gamma: float, m: float = 1.0) -> float:
    """Spectral gap of Langevin dynamics for ``U = m x^2 / 2``."""
    if gamma < 0:
        raise ValueError("friction must be non-negative")
    w = math.sqrt(m)
    g = gamma / w
    if g <= 2:
        return w * g / 2
    return w * (g - math.sqrt(g * g - 4)) / 2


def scale_relaxation(t_rel: float, m: float) -> float:
    """Relaxation time for ``U = m x^2/2`` from the one at ``m = 1``: ``t_rel / sqrt(m)``."""
    if not m > 0:
        raise ValueError("m must be positive")
    return t_rel / math.sqrt(m)


# ---------------------------------------------------------------------------
# decay curves


@dataclass(frozen=True)
class DecayCurve:
    times: np.ndarray
    values: np.ndarray
    provenance: str  # "closed-form" | "galerkin" | "empirical"
    converged: bool | None = None
    errors: np.ndarray | None = None
    norm_fn: Callable[[float], float] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be matching 1-d arrays")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if np.any(values < 0):
            raise ValueError("operator norms are non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t: float) -> float:
        if self.norm_fn is not None:
            return float(self.norm_fn(t))
        return float(np.interp(t, self.times, self.values))


def curve_from_function(fn: Callable[[float], float], grid, provenance: str = "closed-form") -> DecayCurve:
    grid = np.asarray(grid, dtype=float)
    return DecayCurve(grid, np.array([fn(t) for t in grid]), provenance, norm_fn=fn)


def gaussian_decay_curve(gamma: float, grid, m: float = 1.0) -> DecayCurve:
    return curve_from_function(lambda t: gaussian_propagator_norm(gamma, t, m), grid)


def exponential_curve(rate: float, grid) -> DecayCurve:
    """``e^{-rate t}``: the decay of a reversible semigroup with that spectral gap."""
    return curve_from_function(lambda t: math.exp(-rate * t), grid)


def relaxation_time(curve: DecayCurve, eps: float, xtol: float = 1e-10) -> float:
    """First time the curve drops to ``eps``.

    The grid bracket is refined by bisection on ``curve.norm_fn`` when
    available (linear interpolation otherwise). A :class:`PersistenceWarning`
    is issued if the curve rises above ``eps`` again later on the grid.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    vals = curve.values
    if curve.times[0] == 0 and vals[0] <= eps:
        return 0.0
    below = np.flatnonzero(vals <= eps)
    if below.size == 0:
        raise CrossingError(
            f"curve stays above {eps:g} on [{curve.times[0]:g}, {curve.times[-1]:g}]; extend the grid"
        )
    i = below[0]
    if i == 0:
        return float(curve.times[0])
    lo, hi = curve.times[i - 1], curve.times[i]
    if np.any(vals[i:] > eps * (1 + 1e-9)):
        warnings.warn(
            f"decay curve returns above {eps:g} after t={hi:g}", PersistenceWarning, stacklevel=2
        )
    if curve.norm_fn is None:
        v0, v1 = vals[i - 1], vals[i]
        return float(lo + (v0 - eps) / (v0 - v1) * (hi - lo))
    f_lo, f_hi = curve.norm_fn(lo) - eps, curve.norm_fn(hi) - eps
    # grid values come from stepped powers, so a crossing on a grid point can
    # land on either side of eps by round-off; the endpoint is then the answer
    if f_lo <= 0:
        return float(lo)
    if f_hi >= 0:
        return float(hi)
    return float(brentq(lambda t: curve.norm_fn(t) - eps, lo, hi, xtol=xtol))


# ---------------------------------------------------------------------------
# Galerkin generator matrices


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator in an orthonormal basis of mean-zero polynomials.

    Basis element ``(j, k)`` is ``phi_j(x) psi_k(v)`` with ``phi`` orthonormal
    for ``mu`` and ``psi`` the normalised Hermite polynomials; overdamped
    matrices use ``(j,)``. ``matrix[a, b] = <e_a, L e_b>``, so coefficient
    vectors evolve by ``exp(t * matrix)``.
    """

    matrix: np.ndarray
    basis: tuple[tuple[int, ...], ...]
    degree: int
    process: str
    gamma: float
    potential: Potential | None = field(default=None, repr=False, compare=False)
    quadrature_nodes: int = DEFAULT_QUADRATURE_NODES

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def blocks(self) -> list[np.ndarray]:
        """Index sets of invariant subspaces (connected components of the sparsity graph)."""
        pattern = (self.matrix != 0) | (self.matrix.T != 0)
        n, labels = connected_components(pattern, directed=False)
        return [np.flatnonzero(labels == c) for c in range(n)]

    def block(self, idx: np.ndarray) -> np.ndarray:
        return self.matrix[np.ix_(idx, idx)]

    def scaled(self, c: float) -> GeneratorMatrix:
        return replace(self, matrix=c * self.matrix)

    def refined(self, extra: int = 4) -> GeneratorMatrix:
        if self.potential is None:
            raise ValueError("matrix carries no potential; cannot reassemble at higher degree")
        return assemble_galerkin(
            self.process, self.potential, self.gamma, self.degree + extra, self.quadrature_nodes
        )


def _position_operators(pot: Potential, degree: int, nodes: int):
    measure = TargetMeasure(pot, phase_space=False, quadrature_nodes=nodes)
    rule = measure.quadrature
    polys = OrthonormalPolynomials(rule, degree)
    # the basis must stay orthonormal under a finer rule, else the quadrature is too coarse
    fine = gibbs_quadrature(pot, nodes + 100)
    fv, _ = polys.evaluate(fine.nodes[:, 0])
    gram_err = np.max(np.abs(fv.T @ (fine.weights[:, None] * fv) - np.eye(degree + 1)))
    if gram_err > 1e-8:
        raise GalerkinError(
            f"degree {degree} basis for {pot.label} is not orthonormal to 1e-8 under refined "
            f"quadrature (error {gram_err:.2e}); lower the degree or raise the node count"
        )
    x = rule.nodes[:, 0]
    w = rule.weights[:, None]
    vals, ders = polys.evaluate(x)
    force = pot.gradient(rule.nodes)[:, 0][:, None]
    transport = vals.T @ (w * ders)  # <phi_i, phi_j'>
    forcing = vals.T @ (w * force * vals)  # <phi_i, U' phi_j>
    energy = ders.T @ (w * ders)  # <phi_i', phi_j'>
    # quadrature round-off would otherwise hide the invariant sectors
    for op in (transport, forcing, energy):
        op[np.abs(op) < CHOP * np.max(np.abs(op))] = 0.0
    return transport, forcing, energy


def assemble_galerkin(
    process: str,
    pot: Potential,
    gamma: float = 0.0,
    degree: int = DEFAULT_DEGREE,
    quadrature_nodes: int = DEFAULT_QUADRATURE_NODES,
) -> GeneratorMatrix:
    """Galerkin matrix of the overdamped, Hamiltonian, Langevin or RHMC generator.

    Lifted processes use the tensor basis ``phi_j(x) psi_k(v)`` with
    ``0 <= j, k <= degree`` minus the constant; the overdamped generator uses
    ``phi_j``, ``1 <= j <= degree``.
    """
    if process not in GALERKIN_PROCESSES:
        raise ValueError(f"no Galerkin assembly for {process!r}; choose from {', '.join(GALERKIN_PROCESSES)}")
    if pot.dim != 1:
        raise ValueError("Galerkin assembly is implemented for d = 1")
    if degree < 2:
        raise ValueError("truncation degree must be at least 2")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    transport, forcing, energy = _position_operators(pot, degree, quadrature_nodes)
    if process == "overdamped":
        mat = -0.5 * energy[1:, 1:]
        basis = tuple((j,) for j in range(1, degree + 1))
        return GeneratorMatrix(mat, basis, degree, process, 0.0, pot, quadrature_nodes)

    k = np.arange(degree + 1)
    lower = np.diag(np.sqrt(k[1:].astype(float)), 1)  # <psi_l, d/dv psi_k>
    mult_v = lower + lower.T  # <psi_l, v psi_k>
    mat = np.kron(transport, mult_v) - np.kron(forcing, lower)
    if process == "langevin":
        mat -= gamma * np.kron(np.eye(degree + 1), np.diag(k.astype(float)))
    elif process == "rhmc":
        mat -= gamma * np.kron(np.eye(degree + 1), np.diag((k >= 1).astype(float)))
    basis = tuple((j, kk) for j in range(degree + 1) for kk in range(degree + 1))[1:]
    return GeneratorMatrix(mat[1:, 1:], basis, degree, process, float(gamma), pot, quadrature_nodes)


def _norm2(P: np.ndarray) -> float:
    # largest singular value via the top eigenvalue of P^T P; fast modes decay
    # to ~1e-200 and underflow inside LAPACK, which is slow, so rescale and drop
    # entries below 1e-18 of the largest (norm change <= n * 1e-18 relative)
    n = P.shape[0]
    scale = float(np.max(np.abs(P)))
    if scale == 0:
        return 0.0
    Q = P / scale
    Q[np.abs(Q) < 1e-18] = 0.0
    top = float(eigvalsh(Q.T @ Q, subset_by_index=[n - 1, n - 1])[0])
    return scale * math.sqrt(max(top, 0.0))


def operator_norm(G: GeneratorMatrix, t: float) -> float:
    """``||exp(t G)||_2``, computed block by block."""
    return max(_norm2(expm(t * G.block(idx))) for idx in G.blocks)


def _norm_values(G: GeneratorMatrix, grid: np.ndarray) -> np.ndarray:
    steps = np.diff(grid)
    uniform = steps.size > 0 and np.allclose(steps, steps[0], rtol=1e-12, atol=0)
    out = np.zeros(grid.size)
    for idx in G.blocks:
        B = G.block(idx)
        if uniform and grid[0] == 0:
            step = expm(steps[0] * B)
            P = np.eye(B.shape[0])
            for i in range(grid.size):
                out[i] = max(out[i], _norm2(P))
                P = P @ step
        else:
            for i, t in enumerate(grid):
                out[i] = max(out[i], _norm2(expm(t * B)))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matrix exponential produced non-finite entries")
    return out


def operator_norm_decay(G: GeneratorMatrix, grid, check_convergence: bool = True) -> DecayCurve:
    """``t -> ||exp(t G)||`` on ``grid`` (which must start at 0).

    With ``check_convergence`` the curve is recomputed at ``degree + 4`` and
    flagged converged when both agree to ``1e-3`` on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0:
        raise ValueError("time grid must start at 0")
    values = _norm_values(G, grid)
    converged = None
    if check_convergence and G.potential is not None:
        finer = _norm_values(G.refined(), grid)
        converged = bool(np.max(np.abs(finer - values)) < CONVERGENCE_TOL)
    return DecayCurve(grid, values, "galerkin", converged, norm_fn=lambda t: operator_norm(G, t))


def singular_value_gap(G: GeneratorMatrix) -> float:
    """Smallest singular value of the generator on mean-zero functions."""
    return min(float(np.linalg.svd(G.block(idx), compute_uv=False)[-1]) for idx in G.blocks)


def _slowest_rate(lam: np.ndarray, tol: float = 1e-6) -> float:
    # A defective eigenvalue splits into a cluster of width ~sqrt(eps); the
    # cluster mean is well conditioned, so report that instead of the extreme member.
    i = np.argmin(-lam.real)
    near = np.abs(lam - lam[i]) < tol * max(1.0, abs(lam[i]))
    return float(-np.mean(lam[near].real))


def spectral_gap(G: GeneratorMatrix) -> float:
    """``min Re(-lambda)`` over the eigenvalues of the truncated generator."""
    return min(_slowest_rate(np.linalg.eigvals(G.block(idx))) for idx in G.blocks)


def eigenvalues(G: GeneratorMatrix) -> np.ndarray:
    return np.concatenate([np.linalg.eigvals(G.block(idx)) for idx in G.blocks])


def estimate_poincare_constant(pot: Potential, degree: int = DEFAULT_DEGREE) -> tuple[float, bool]:
    """Poincare constant ``m`` of ``mu`` from the overdamped Galerkin gap.

    The overdamped generator is ``-1/2 grad^* grad``, so its gap is ``m / 2``.
    Returns ``(m, converged)`` where convergence compares degree and degree + 4.
    """
    G = assemble_galerkin("overdamped", pot, degree=degree)
    gap = spectral_gap(G)
    finer = spectral_gap(G.refined())
    return 2.0 * gap, abs(finer - gap) < CONVERGENCE_TOL


# ---------------------------------------------------------------------------
# reports


@dataclass
class SpectralReport:
    process: str
    gamma: float
    degree: int
    gap: float
    sing: float
    relaxation_times: dict[float, float]
    convergence: list[dict]
    converged: bool
    curve: DecayCurve = field(repr=False)


def spectral_report(
    process: str,
    pot: Potential,
    gamma: float,
    grid,
    eps_values: Sequence[float] = (math.exp(-1),),
    degree: int = DEFAULT_DEGREE,
) -> SpectralReport:
    """Gap, singular value gap and relaxation times at ``degree`` and ``degree + 4``."""
    rows = []
    curves = []
    for deg in (degree, degree + 4):
        G = assemble_galerkin(process, pot, gamma, deg)
        curve = operator_norm_decay(G, grid, check_convergence=False)
        curves.append(curve)
        rows.append(
            {
                "degree": deg,
                "gap": spectral_gap(G),
                "sing": singular_value_gap(G),
                "relaxation_times": {eps: relaxation_time(curve, eps) for eps in eps_values},
            }
        )
    a, b = rows

    def close(x, y):
        return abs(x - y) < CONVERGENCE_TOL

    converged = (
        close(a["gap"], b["gap"])
        and close(a["sing"], b["sing"])
        and all(close(a["relaxation_times"][e], b["relaxation_times"][e]) for e in eps_values)
        and bool(np.max(np.abs(curves[0].values - curves[1].values)) < CONVERGENCE_TOL)
    )
    curve = replace(curves[0], converged=converged)
    return SpectralReport(
        process, float(gamma), degree, a["gap"], a["sing"], a["relaxation_times"], rows, converged, curve
    )


# ---------------------------------------------------------------------------
# Monte Carlo decay


def empirical_decay(
    process: str,
    pot: Potential,
    gamma: float,
    f: TestFunction,
    grid,
    outer: int = 2000,
    inner: int = 200,
    seed: int = 0,
    h: float = 0.01,
) -> DecayCurve:
    """Nested Monte Carlo estimate of ``||P_t f|| / ||f||`` (a lower bound for the operator norm).

    ``outer`` stationary starts, each followed by ``inner`` conditionally
    independent replicas. ``(P_t f)(X_0)^2`` is estimated without bias by
    ``mean^2 - var/inner`` over the replicas. ``f`` is centred under ``mu``.
    """
    if f.is_constant:
        raise ValueError("empirical decay needs a non-constant test function")
    if inner < 2:
        raise ValueError("need at least two inner replicas")
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and increase")
    measure = TargetMeasure(pot)
    mean_f = measure.expectation(f)
    norm_f = math.sqrt(measure.expectation(lambda y: (f(y) - mean_f) ** 2))
    starts = sample_target(measure, outer, seed=seed)
    x0, v0 = starts.flat()
    x0, v0 = x0[:outer], v0[:outer]
    gens = [chain_rng(seed + 1, i) for i in range(outer)]
    replica_gens = [g for g in gens for _ in range(inner)]
    state = PhaseState(np.repeat(x0, inner, axis=0), np.repeat(v0, inner, axis=0))
    values, errors = [], []
    t_prev = 0.0
    for t in grid:
        if t > t_prev:
            state = run_process(process, state, pot, gamma, t - t_prev, replica_gens, h)
            t_prev = t
        fx = (f(state.x) - mean_f).reshape(outer, inner)
        m = fx.mean(axis=1)
        s2 = fx.var(axis=1, ddof=1)
        sq = m * m - s2 / inner
        est = sq.mean()
        se_sq = sq.std(ddof=1) / math.sqrt(outer)
        val = math.sqrt(max(est, 0.0))
        se = se_sq / (2 * val) if val > 0 else math.inf
        if se > 0.2 * max(val, 1e-300):
            raise ValueError(
                f"empirical decay at t={t:g}: standard error {se:.3g} exceeds 20% of estimate "
                f"{val:.3g}; raise outer/inner replica counts or shorten the grid"
            )
        values.append(val / norm_f)
        errors.append(se / norm_f)
    return DecayCurve(grid, np.array(values), "empirical", errors=np.array(errors))


# ---------------------------------------------------------------------------
# finite chains


def _tv_worst(Pk: np.ndarray, target: np.ndarray) -> float:
    return float(0.5 * np.max(np.sum(np.abs(Pk - target[None, :]), axis=1)))


def tv_mixing_time(P: np.ndarray, target=None, tol: float = 0.25, cap: int = 10**6) -> int | None:
    """Smallest ``k >= 1`` with ``max_x TV(delta_x P^k, target) <= tol``.

    Uses repeated squaring to bracket ``k`` and binary search inside the
    bracket, relying on the monotonicity of the worst-case distance. Returns
    ``None`` when the chain has not mixed by ``cap`` steps (e.g. periodic chains).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if target is None:
        target = np.full(n, 1.0 / n)
    target = np.asarray(target, dtype=float)
    if target.shape != (n,) or np.any(target < 0) or abs(target.sum() - 1) > 1e-12:
        raise ValueError("target must be a probability vector matching the chain")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
        raise ValueError("transition matrix must be row-stochastic")
    powers = [P]
    if _tv_worst(P, target) <= tol:
        return 1
    while True:
        if 2 ** len(powers) > 2 * cap:
            return None
        nxt = powers[-1] @ powers[-1]
        if _tv_worst(nxt, target) <= tol:
            break
        powers.append(nxt)
    # d(lo) > tol, d(2 lo) <= tol
    lo = 2 ** (len(powers) - 1)
    M = powers[-1]
    for b in range(len(powers) - 2, -1, -1):
        cand = M @ powers[b]
        if _tv_worst(cand, target) > tol:
            M = cand
            lo += 2**b
    k = lo + 1
    return k if k <= cap else None


def circle_mixing_times(ns: Sequence[int], eps_rule: Callable[[int], float] = lambda n: 1.0 / n):
    """TV mixing times of the circle walk and its lift for each ``n``."""
    from .samplers import circle_chains

    rows = []
    for n in ns:
        base, lift = circle_chains(n, eps_rule(n))
        rows.append({"n": n, "eps": eps_rule(n), "base": tv_mixing_time(base), "lifted": tv_mixing_time(lift)})
    return rows


def loglog_slope(ns: Sequence[int], times: Sequence[float]) -> float:
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])
