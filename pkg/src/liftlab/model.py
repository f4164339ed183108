"""Potentials, target measures, polynomial test functions and the Dirichlet form.

Everything here is immutable after construction, so the same objects can be
shared by concurrently running chains and matrix assemblies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial import Polynomial, hermite_e
from scipy.special import logsumexp, roots_hermitenorm

DEFAULT_QUADRATURE_NODES = 200

ArrayFn = Callable[[np.ndarray], np.ndarray]
BallBound = Callable[[np.ndarray, float], float]


@dataclass(frozen=True)
class Potential:
    """Confining potential ``U`` on ``R^d``.

    ``energy`` and ``gradient`` act on arrays whose last axis has length
    ``dim``; ``energy`` drops that axis. ``stiffness`` is set only for
    isotropic quadratics ``U = m|x|^2/2`` and enables exact flows.
    ``grad_bound(center, radius)`` bounds ``|grad U|`` over a ball and is
    used by Poisson thinning.
    """

    dim: int
    energy: ArrayFn
    gradient: ArrayFn
    hessian_lower_bound: float
    label: str
    params: Mapping[str, float] = field(default_factory=dict)
    poincare_constant: float | None = None
    stiffness: float | None = None
    length_scale: float = 1.0
    grad_bound: BallBound | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dimension must be positive, got {self.dim}")
        if self.hessian_lower_bound < 0:
            raise ValueError("kappa_minus must be non-negative")
        if self.poincare_constant is not None and self.poincare_constant <= 0:
            raise ValueError("Poincare constant must be positive")

    @property
    def kappa_minus(self) -> float:
        return self.hessian_lower_bound

    @property
    def is_quadratic(self) -> bool:
        return self.stiffness is not None

    def with_poincare_constant(self, m: float) -> Potential:
        from dataclasses import replace

        return replace(self, poincare_constant=float(m))


def quadratic_potential(m: float, d: int = 1) -> Potential:
    """``U(x) = m |x|^2 / 2``, whose Gibbs measure is ``N(0, I/m)``."""
    if not m > 0:
        raise ValueError(f"quadratic potential needs m > 0, got {m}")
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    m = float(m)

    def energy(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * m * np.sum(x * x, axis=-1)

    def gradient(x):
        return m * np.asarray(x, dtype=float)

    def grad_bound(center, radius):
        return m * (float(np.linalg.norm(center)) + radius)

    return Potential(
        dim=d,
        energy=energy,
        gradient=gradient,
        hessian_lower_bound=0.0,
        label=f"quadratic(m={m:g}, d={d})",
        params={"m": m},
        poincare_constant=m,
        stiffness=m,
        length_scale=1.0 / math.sqrt(m),
        grad_bound=grad_bound,
    )


def double_well_potential(beta: float) -> Potential:
    """One-dimensional double well ``U(x) = beta (x^2 - 1)^2``.

    The Poincare constant is left unset; estimate it with
    :func:`liftlab.spectral.estimate_poincare_constant`.
    """
    if not beta > 0:
        raise ValueError(f"double well needs beta > 0, got {beta}")
    beta = float(beta)

    def energy(x):
        x = np.asarray(x, dtype=float)[..., 0]
        return beta * (x * x - 1.0) ** 2

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return 4.0 * beta * x * (x * x - 1.0)

    def grad_bound(center, radius):
        r = abs(float(np.ravel(center)[0])) + radius
        # |4b x (x^2 - 1)| <= 4b r (r^2 + 1) on |x| <= r
        return 4.0 * beta * r * (r * r + 1.0)

    return Potential(
        dim=1,
        energy=energy,
        gradient=gradient,
        hessian_lower_bound=4.0 * beta,
        label=f"double_well(beta={beta:g})",
        params={"beta": beta},
        # concentrates Hermite nodes on the bulk of the wells; 0.3 resolves
        # degree-40 polynomial moments to ~1e-14 with 200 nodes
        length_scale=0.3,
        grad_bound=grad_bound,
    )


def energy_barrier(pot: Potential) -> float:
    """``U(0) - U(1)`` for one-dimensional double-well potentials."""
    return float(pot.energy(np.zeros(1)) - pot.energy(np.ones(1)))


POTENTIALS = {
    "quadratic": (quadratic_potential, ("m",)),
    "double_well": (double_well_potential, ("beta",)),
}


def make_potential(name: str, **params) -> Potential:
    try:
        factory, keys = POTENTIALS[name]
    except KeyError:
        raise ValueError(
            f"unknown potential {name!r}; known potentials: {', '.join(sorted(POTENTIALS))}"
        ) from None
    kwargs = {k: params[k] for k in keys if k in params}
    if name == "quadratic" and "d" in params:
        kwargs["d"] = int(params["d"])
    return factory(**kwargs)


# ---------------------------------------------------------------------------
# quadrature and measures


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,), sums to one
    log_normalizer: float

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def gibbs_quadrature(pot: Potential, nodes_per_dim: int = DEFAULT_QUADRATURE_NODES) -> QuadratureRule:
    """Gauss-Hermite rule reweighted to integrate against ``exp(-U)/Z``.

    Nodes are the probabilists' Hermite nodes scaled by the potential's length
    scale; for quadratic potentials the reweighting factor is identically one
    and the rule is exact for polynomials of degree below ``2 * nodes``.
    """
    if nodes_per_dim is None or nodes_per_dim < 1:
        raise ValueError("quadrature node count must be a positive integer")
    z, w = roots_hermitenorm(nodes_per_dim)
    s = pot.length_scale
    d = pot.dim
    grids = np.meshgrid(*([z] * d), indexing="ij")
    zz = np.stack([g.ravel() for g in grids], axis=-1)
    with np.errstate(divide="ignore"):
        logw1 = np.log(w)
    logw = sum(g.ravel() for g in np.meshgrid(*([logw1] * d), indexing="ij"))
    x = s * zz
    logw = logw - pot.energy(x) + 0.5 * np.sum(zz * zz, axis=-1)
    logz = logsumexp(logw) + d * math.log(s)
    if not np.isfinite(logz):
        raise ValueError(f"measure exp(-U) is not normalizable on the quadrature grid ({pot.label})")
    weights = np.exp(logw - logsumexp(logw))
    # mass on the outermost nodes means the tails are unresolved or exp(-U) is not integrable
    edge = np.any(np.abs(zz) >= np.abs(z).max(), axis=-1)
    if weights[edge].sum() > 1e-10:
        raise ValueError(
            f"measure exp(-U) is not normalizable or its tails are unresolved by the quadrature ({pot.label})"
        )
    return QuadratureRule(nodes=x, weights=weights, log_normalizer=float(logz))


@dataclass(frozen=True)
class TargetMeasure:
    """Gibbs measure ``mu ~ exp(-U)`` or its phase-space extension ``mu x N(0, I)``."""

    potential: Potential
    phase_space: bool = True
    quadrature_nodes: int = DEFAULT_QUADRATURE_NODES

    @property
    def exact_sampling(self) -> bool:
        return self.potential.is_quadratic

    @property
    def dim(self) -> int:
        return self.potential.dim

    @cached_property
    def quadrature(self) -> QuadratureRule:
        return gibbs_quadrature(self.potential, self.quadrature_nodes)

    def position_marginal(self) -> TargetMeasure:
        if not self.phase_space:
            return self
        return TargetMeasure(self.potential, phase_space=False, quadrature_nodes=self.quadrature_nodes)

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        q = self.quadrature
        return q.integrate(fn(q.nodes))


# ---------------------------------------------------------------------------
# polynomial test functions


class TestFunction:
    """Multivariate polynomial in position, stored as ``{exponents: coefficient}``."""

    __test__ = False  # not a pytest class

    def __init__(self, coefficients: Mapping[tuple[int, ...], float], dim: int = 1, name: str | None = None):
        self.dim = dim
        coeffs = {}
        for exps, c in coefficients.items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != dim or any(e < 0 for e in exps):
                raise ValueError(f"bad exponent tuple {exps} for dimension {dim}")
            if c != 0:
                coeffs[exps] = coeffs.get(exps, 0.0) + c
        self.coefficients = {k: v for k, v in coeffs.items() if v != 0}
        self.name = name or self._describe()

    @classmethod
    def from_1d(cls, coeffs, name: str | None = None) -> TestFunction:
        """From ascending 1-d coefficients ``c[0] + c[1] x + ...``."""
        return cls({(k,): float(c) for k, c in enumerate(coeffs)}, dim=1, name=name)

    @classmethod
    def constant(cls, c: float, dim: int = 1) -> TestFunction:
        return cls({(0,) * dim: float(c)}, dim=dim)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.coefficients), default=0)

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def _describe(self) -> str:
        if not self.coefficients:
            return "0"
        terms = []
        for exps, c in sorted(self.coefficients.items()):
            mono = "*".join(
                (f"x{i}" if self.dim > 1 else "x") + (f"^{e}" if e > 1 else "")
                for i, e in enumerate(exps)
                if e
            )
            terms.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return " + ".join(terms)

    def __repr__(self):
        return f"TestFunction({self.name})"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got shape {x.shape}")
        out = np.zeros(x.shape[:-1])
        for exps, c in self.coefficients.items():
            term = np.full(x.shape[:-1], c)
            for i, e in enumerate(exps):
                if e:
                    term = term * x[..., i] ** e
            out = out + term
        return out

    def partial(self, i: int) -> TestFunction:
        coeffs = {}
        for exps, c in self.coefficients.items():
            if exps[i]:
                new = list(exps)
                new[i] -= 1
                coeffs[tuple(new)] = coeffs.get(tuple(new), 0.0) + c * exps[i]
        return TestFunction(coeffs, dim=self.dim, name=f"d{i}({self.name})")

    @cached_property
    def gradient(self) -> tuple[TestFunction, ...]:
        return tuple(self.partial(i) for i in range(self.dim))

    def grad(self, x) -> np.ndarray:
        """Gradient evaluated at ``x``; shape ``x.shape``."""
        x = np.asarray(x, dtype=float)
        return np.stack([g(x) for g in self.gradient], axis=-1)

    def __add__(self, other: TestFunction) -> TestFunction:
        coeffs = dict(self.coefficients)
        for k, v in other.coefficients.items():
            coeffs[k] = coeffs.get(k, 0.0) + v
        return TestFunction(coeffs, dim=self.dim)

    def __mul__(self, scalar: float) -> TestFunction:
        return TestFunction({k: scalar * v for k, v in self.coefficients.items()}, dim=self.dim)

    __rmul__ = __mul__


def hermite_function(k: int) -> TestFunction:
    """Probabilists' Hermite polynomial ``He_k / sqrt(k!)``, orthonormal under ``N(0, 1)``."""
    coeffs = hermite_e.herme2poly([0] * k + [1]) / math.sqrt(math.factorial(k))
    return TestFunction.from_1d(coeffs, name=f"He{k}")


class OrthonormalPolynomials:
    """Polynomials orthonormal in ``L^2(mu)`` for a one-dimensional measure.

    Built by the discretised Stieltjes procedure on a quadrature rule, which
    is the numerically stable form of Gram-Schmidt applied to monomials.
    ``phi_{k+1} b_{k+1} = (x - a_k) phi_k - b_k phi_{k-1}``.
    """

    def __init__(self, rule: QuadratureRule, degree: int):
        if rule.nodes.shape[1] != 1:
            raise ValueError("orthonormal polynomials are built for one-dimensional measures only")
        x = rule.nodes[:, 0]
        w = rule.weights
        a = np.zeros(degree + 1)
        b = np.zeros(degree + 2)
        prev = np.zeros_like(x)
        cur = np.ones_like(x)
        for k in range(degree + 1):
            a[k] = np.dot(w, x * cur * cur)
            nxt = (x - a[k]) * cur - b[k] * prev
            b[k + 1] = math.sqrt(np.dot(w, nxt * nxt))
            prev, cur = cur, nxt / b[k + 1]
        self.degree = degree
        self.alpha = a
        self.beta = b

    def evaluate(self, x: np.ndarray, degree: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Values and derivatives, each of shape ``(len(x), degree + 1)``."""
        degree = self.degree if degree is None else degree
        x = np.asarray(x, dtype=float)
        vals = np.zeros((x.size, degree + 1))
        ders = np.zeros_like(vals)
        vals[:, 0] = 1.0
        for k in range(degree):
            prev = vals[:, k - 1] if k else 0.0
            dprev = ders[:, k - 1] if k else 0.0
            vals[:, k + 1] = ((x - self.alpha[k]) * vals[:, k] - self.beta[k] * prev) / self.beta[k + 1]
            ders[:, k + 1] = (
                vals[:, k] + (x - self.alpha[k]) * ders[:, k] - self.beta[k] * dprev
            ) / self.beta[k + 1]
        return vals, ders

    def test_functions(self, degree: int | None = None) -> list[TestFunction]:
        degree = self.degree if degree is None else degree
        x = Polynomial([0.0, 1.0])
        polys = [Polynomial([1.0])]
        prev = Polynomial([0.0])
        for k in range(degree):
            nxt = ((x - self.alpha[k]) * polys[k] - self.beta[k] * prev) / self.beta[k + 1]
            prev = polys[k]
            polys.append(nxt)
        return [TestFunction.from_1d(p.coef, name=f"phi{k}") for k, p in enumerate(polys)]


def polynomial_dictionary(measure: TargetMeasure, max_degree: int) -> list[TestFunction]:
    """Hermite functions for standard Gaussians, mu-orthonormal polynomials otherwise."""
    pot = measure.potential
    if pot.dim != 1:
        raise ValueError("dictionaries are provided for one-dimensional targets")
    if pot.is_quadratic and pot.stiffness == 1.0:
        return [hermite_function(k) for k in range(max_degree + 1)]
    ops = OrthonormalPolynomials(measure.quadrature, max_degree)
    return ops.test_functions()


def dirichlet_form(
    f: TestFunction,
    g: TestFunction,
    measure: TargetMeasure,
    quadrature_nodes: int | None = None,
) -> float:
    """``E(f, g) = 1/2 * int grad f . grad g dmu`` by deterministic quadrature."""
    if f.dim != measure.dim or g.dim != measure.dim:
        raise ValueError("test function dimension does not match the measure")
    if quadrature_nodes is None:
        rule = measure.quadrature
    else:
        rule = gibbs_quadrature(measure.potential, quadrature_nodes)
    integrand = np.sum(f.grad(rule.nodes) * g.grad(rule.nodes), axis=-1)
    return 0.5 * rule.integrate(integrand)


def gradient_check(pot: Potential, points: np.ndarray, step: float = 1e-5) -> float:
    """Largest relative error between central differences of ``energy`` and ``gradient``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fd = np.empty_like(points)
    for i in range(pot.dim):
        e = np.zeros(pot.dim)
        e[i] = step
        fd[:, i] = (pot.energy(points + e) - pot.energy(points - e)) / (2 * step)
    g = pot.gradient(points)
    scale = np.maximum(np.abs(g), 1.0)
    return float(np.max(np.abs(fd - g) / scale))
