"""Monte Carlo verification of the second-order lift identities.

For position-only observables ``f`` and ``g`` a second-order lift must satisfy

    int L^(f o pi) (g o pi) dmu^ = 0
    1/2 int L^(f o pi) L^(g o pi) dmu^ = E(f, g)

where ``E`` is the Dirichlet form of the overdamped Langevin diffusion.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import TargetMeasure, TestFunction, dirichlet_form, polynomial_dictionary
from .samplers import LIFTS, PhaseState, SampleStream, batch_mean_and_se, sample_target

DEFAULT_K = 4.0


def apply_lifted_generator(f: TestFunction, state: PhaseState) -> np.ndarray:
    """``v . grad f(x)``: the action of every lift's generator on ``f o pi``."""
    return np.sum(state.v * f.grad(state.x), axis=-1)


def reflect_batch(v: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Row-wise ``v - 2 n n^T v``; rows with zero gradient are left alone."""
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    n = np.divide(grad, norm, out=np.zeros_like(grad), where=norm > 0)
    return v - 2.0 * np.sum(n * v, axis=-1, keepdims=True) * n


def generator_on_position_function(
    process: str, f: TestFunction, state: PhaseState, pot=None, gamma: float = 1.0
) -> np.ndarray:
    """Full generator of ``process`` applied to ``f o pi`` at phase points.

    The velocity-only parts are evaluated literally rather than dropped:
    OU friction differentiates in ``v``, refreshment averages over ``v`` and
    the BPS bounce reflects ``v``. Each leaves ``f o pi`` unchanged, so the
    result coincides bit for bit with :func:`apply_lifted_generator`.
    """
    x, v = state.x, state.v

    def lifted(x, v):
        return f(x)

    transport = apply_lifted_generator(f, state)
    here = lifted(x, v)
    if process == "hamiltonian":
        return transport
    if process == "langevin":
        # f o pi has zero v-gradient and zero v-Laplacian
        grad_v = np.zeros_like(v)
        return transport + gamma * (-np.sum(v * grad_v, axis=-1) + 0.0 * here)
    # Pi_v of a v-independent function: any velocity gives the same value
    refreshed = lifted(x, np.zeros_like(v))
    if process == "rhmc":
        return transport + gamma * (refreshed - here)
    if process == "bps":
        grad = pot.gradient(x)
        rate = np.maximum(np.sum(v * grad, axis=-1), 0.0)
        bounced = lifted(x, reflect_batch(v, grad))
        return transport + rate * (bounced - here) + gamma * (refreshed - here)
    raise ValueError(f"{process!r} is not a lift; choose from {', '.join(LIFTS)}")


@dataclass
class LiftEntry:
    f: str
    g: str
    first_order: float
    first_order_se: float
    second_order: float
    second_order_se: float
    dirichlet: float
    k: float
    first_pass: bool = field(init=False)
    second_pass: bool = field(init=False)

    def __post_init__(self):
        self.first_pass = bool(abs(self.first_order) <= self.k * self.first_order_se)
        self.second_pass = bool(abs(self.second_order - self.dirichlet) <= self.k * self.second_order_se)

    @property
    def passed(self) -> bool:
        return self.first_pass and self.second_pass


@dataclass
class LiftReport:
    process: str
    target: str
    samples: int
    k: float
    entries: list[LiftEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "process": self.process,
            "target": self.target,
            "samples": self.samples,
            "k": self.k,
            "passed": self.passed,
            "entries": [asdict(e) | {"passed": e.passed} for e in self.entries],
        }


def _estimate(values: np.ndarray, stream: SampleStream) -> tuple[float, float]:
    values = values.reshape(stream.x.shape[:2])
    if values.shape[1] == 1:
        # independent draws: treat each as its own batch
        n = values.shape[0]
        flat = values[:, 0]
        return float(flat.mean()), float(flat.std(ddof=1) / math.sqrt(n))
    return batch_mean_and_se(values)


def check_first_order(
    f: TestFunction,
    g: TestFunction,
    stream: SampleStream,
    process: str = "hamiltonian",
    pot=None,
    gamma: float = 1.0,
) -> tuple[float, float]:
    """Estimate ``int L^(f o pi) (g o pi) dmu^`` with its standard error; target 0."""
    state = PhaseState(*stream.flat())
    lf = generator_on_position_function(process, f, state, pot, gamma)
    return _estimate(lf * g(state.x), stream)


def check_second_order(
    f: TestFunction,
    g: TestFunction,
    stream: SampleStream,
    process: str = "hamiltonian",
    pot=None,
    gamma: float = 1.0,
) -> tuple[float, float]:
    """Estimate ``1/2 int L^(f o pi) L^(g o pi) dmu^`` with its standard error; target ``E(f, g)``."""
    state = PhaseState(*stream.flat())
    lf = generator_on_position_function(process, f, state, pot, gamma)
    lg = generator_on_position_function(process, g, state, pot, gamma)
    return _estimate(0.5 * lf * lg, stream)


def check_pair(
    f: TestFunction,
    g: TestFunction,
    measure: TargetMeasure,
    stream: SampleStream,
    process: str,
    gamma: float = 1.0,
    k: float = DEFAULT_K,
) -> LiftEntry:
    pot = measure.potential
    m1, s1 = check_first_order(f, g, stream, process, pot, gamma)
    m2, s2 = check_second_order(f, g, stream, process, pot, gamma)
    return LiftEntry(f.name, g.name, m1, s1, m2, s2, dirichlet_form(f, g, measure), k)


def run_dictionary(
    process: str,
    measure: TargetMeasure,
    max_degree: int,
    samples: int,
    seed: int = 0,
    gamma: float = 1.0,
    k: float = DEFAULT_K,
    stream: SampleStream | None = None,
) -> LiftReport:
    """Check every ordered pair of dictionary polynomials up to ``max_degree``."""
    if process not in LIFTS:
        raise ValueError(f"{process!r} is not a lift; choose from {', '.join(LIFTS)}")
    dictionary = polynomial_dictionary(measure, max_degree)
    if stream is None:
        stream = sample_target(measure, samples, seed=seed)
    state = PhaseState(*stream.flat())
    pot = measure.potential
    lifted = [generator_on_position_function(process, f, state, pot, gamma) for f in dictionary]
    values = [f(state.x) for f in dictionary]
    entries = []
    for i, f in enumerate(dictionary):
        for j, g in enumerate(dictionary):
            m1, s1 = _estimate(lifted[i] * values[j], stream)
            m2, s2 = _estimate(0.5 * lifted[i] * lifted[j], stream)
            entries.append(LiftEntry(f.name, g.name, m1, s1, m2, s2, dirichlet_form(f, g, measure), k))
    return LiftReport(process, pot.label, stream.size, k, entries)
