"""Overdamped Langevin diffusion and its second-order lifts.

Arrays carry a leading chain axis where it makes sense: positions and
velocities of shape ``(chains, d)`` are advanced together, while every chain
draws its randomness from its own counter-based stream keyed by
``(seed, chain index)``. Results therefore do not depend on how chains are
batched or scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import Potential, TargetMeasure

PROCESSES = ("overdamped", "hamiltonian", "langevin", "rhmc", "bps")
LIFTS = ("hamiltonian", "langevin", "rhmc", "bps")


class ThinningError(RuntimeError):
    """The user-supplied rate bound failed to majorize the bounce rate."""


class StationarityError(RuntimeError):
    """MCMC samples disagree with quadrature moments of the target."""


@dataclass(frozen=True)
class PhaseState:
    x: np.ndarray
    v: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if not np.all(np.isfinite(x)):
            raise ValueError("position has non-finite entries")
        if self.v is not None:
            v = np.asarray(self.v, dtype=float)
            if v.shape != x.shape:
                raise ValueError(f"velocity shape {v.shape} does not match position {x.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError("velocity has non-finite entries")
            object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    def energy(self, pot: Potential) -> np.ndarray:
        return pot.energy(self.x) + 0.5 * np.sum(self.v * self.v, axis=-1)


@dataclass(frozen=True)
class ChainConfig:
    step_size: float = 0.01
    gamma: float = 1.0
    horizon: float = 10.0
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.chains < 1:
            raise ValueError("chain count must be positive")


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str  # "bounce" | "refresh" | "flip"
    v_pre: np.ndarray
    v_post: np.ndarray
    x: np.ndarray = field(default=None, repr=False)


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Philox stream for one chain, independent of all other chains."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


def chain_rngs(seed: int, chains: int | Sequence[int]) -> list[np.random.Generator]:
    idx = range(chains) if isinstance(chains, int) else chains
    return [chain_rng(seed, c) for c in idx]


def _normals(gens: Sequence[np.random.Generator], steps: int, d: int) -> np.ndarray:
    """Standard normals of shape ``(steps, chains, d)``, chain ``c`` from ``gens[c]``."""
    return np.stack([g.standard_normal((steps, d)) for g in gens], axis=1)


def _checked_gradient(pot: Potential, x: np.ndarray) -> np.ndarray:
    g = pot.gradient(x)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient of {pot.label}")
    return g


# ---------------------------------------------------------------------------
# single steps


def overdamped_step(state: PhaseState, pot: Potential, h: float, noise) -> PhaseState:
    """Euler-Maruyama step of ``dZ = -grad U(Z)/2 dt + dB``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = state.x
    x_new = x - 0.5 * h * _checked_gradient(pot, x) + math.sqrt(h) * np.asarray(noise, dtype=float)
    return PhaseState(x_new, state.v)


def _kick(x, v, pot, dt):
    return v - dt * _checked_gradient(pot, x)


def _drift(x, v, dt):
    return x + dt * v


def _leapfrog(x, v, pot, h):
    # the drift is split in two halves so that Langevin with gamma = 0
    # reproduces this step bit for bit
    v = _kick(x, v, pot, 0.5 * h)
    x = _drift(x, v, 0.5 * h)
    x = _drift(x, v, 0.5 * h)
    v = _kick(x, v, pot, 0.5 * h)
    return x, v


def _rotate(x, v, m, t):
    w = math.sqrt(m)
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t[..., None]
    c, s = np.cos(w * t), np.sin(w * t)
    return c * x + (s / w) * v, -w * s * x + c * v


def hamiltonian_flow(
    state: PhaseState,
    pot: Potential,
    t: float,
    h: float | None = None,
    exact: bool | None = None,
) -> PhaseState:
    """Flow of ``dX = V dt, dV = -grad U(X) dt`` for time ``t``.

    Quadratic potentials are rotated exactly unless ``exact=False``; other
    potentials use velocity Verlet with ``ceil(t / h)`` equal steps.
    """
    if t < 0:
        raise ValueError("flow duration must be non-negative")
    if exact is None:
        exact = pot.is_quadratic
    if exact:
        if not pot.is_quadratic:
            raise ValueError("exact flow is only available for quadratic potentials")
        x, v = _rotate(state.x, state.v, pot.stiffness, t)
        return PhaseState(x, v)
    if h is None or not h > 0:
        raise ValueError("leapfrog integration needs a positive step size h")
    if t == 0:
        return state
    n = max(1, math.ceil(t / h - 1e-12))
    dt = t / n
    x, v = state.x, state.v
    for _ in range(n):
        x, v = _leapfrog(x, v, pot, dt)
    return PhaseState(x, v)


def langevin_step(state: PhaseState, pot: Potential, gamma: float, h: float, noise) -> PhaseState:
    """BAOAB step: half kick, half drift, exact OU velocity update, half drift, half kick."""
    if gamma < 0:
        raise ValueError("friction must be non-negative")
    if not h > 0:
        raise ValueError("step size must be positive")
    decay = math.exp(-gamma * h)
    spread = math.sqrt(1.0 - decay * decay)
    x, v = state.x, state.v
    v = _kick(x, v, pot, 0.5 * h)
    x = _drift(x, v, 0.5 * h)
    v = decay * v + spread * np.asarray(noise, dtype=float)
    x = _drift(x, v, 0.5 * h)
    v = _kick(x, v, pot, 0.5 * h)
    return PhaseState(x, v)


# ---------------------------------------------------------------------------
# vectorized runs over many chains


def run_overdamped(
    x0: np.ndarray,
    pot: Potential,
    h: float,
    steps: int,
    gens: Sequence[np.random.Generator],
    record_every: int = 0,
    chunk: int = 1000,
):
    """Advance ``(chains, d)`` positions by ``steps`` Euler-Maruyama steps.

    With ``record_every > 0`` also returns the positions after every
    ``record_every``-th step, shape ``(records, chains, d)``.
    """
    state = PhaseState(np.array(x0, dtype=float))
    records = []
    done = 0
    while done < steps:
        n = min(chunk, steps - done)
        noise = _normals(gens, n, state.dim)
        for i in range(n):
            state = overdamped_step(state, pot, h, noise[i])
            done += 1
            if record_every and done % record_every == 0:
                records.append(state.x)
    if record_every:
        return state.x, np.array(records).reshape(-1, *state.x.shape)
    return state.x


def run_langevin(
    state: PhaseState,
    pot: Potential,
    gamma: float,
    h: float,
    steps: int,
    gens: Sequence[np.random.Generator],
    record_every: int = 0,
    chunk: int = 1000,
):
    records = []
    done = 0
    while done < steps:
        n = min(chunk, steps - done)
        noise = _normals(gens, n, state.dim)
        for i in range(n):
            state = langevin_step(state, pot, gamma, h, noise[i])
            done += 1
            if record_every and done % record_every == 0:
                records.append((state.x, state.v))
    if record_every:
        return state, records
    return state


def rhmc_flight(state: PhaseState, pot: Potential, duration: float, gen: np.random.Generator, h: float | None = None):
    """One RHMC flight of given length followed by a full velocity refresh."""
    moved = hamiltonian_flow(state, pot, duration, h)
    return PhaseState(moved.x, gen.standard_normal(moved.x.shape)), moved.v


def rhmc_trajectory(
    state: PhaseState,
    pot: Potential,
    gamma: float,
    horizon: float,
    gen: np.random.Generator,
    h: float | None = None,
) -> tuple[PhaseState, list[EventRecord]]:
    """Single RHMC chain: Hamiltonian flights of length ``Exp(gamma)`` and full refreshes."""
    if not gamma > 0:
        raise ValueError("RHMC needs a positive refresh rate")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not pot.is_quadratic and h is None:
        h = default_leapfrog_step(pot)
    t = 0.0
    events = []
    while True:
        tau = gen.exponential(1.0 / gamma)
        if t + tau >= horizon:
            state = hamiltonian_flow(state, pot, horizon - t, h)
            return state, events
        t += tau
        state, v_pre = rhmc_flight(state, pot, tau, gen, h)
        events.append(EventRecord(t, "refresh", v_pre, state.v, state.x))


def default_leapfrog_step(pot: Potential) -> float:
    """Leapfrog step for non-quadratic flights; its O(h^2) energy error per unit time is ~1e-6."""
    # TODO(step-adaptation): derive from a Hessian upper bound once Potential carries one
    return 1e-3


def run_rhmc(
    state: PhaseState,
    pot: Potential,
    gamma: float,
    horizon: float,
    gens: Sequence[np.random.Generator],
    h: float | None = None,
) -> tuple[PhaseState, np.ndarray]:
    """Vectorized RHMC over chains; returns final states and refresh counts.

    Chain ``c`` consumes ``gens[c]`` in the same order as
    :func:`rhmc_trajectory`, so both agree draw for draw.
    """
    if not gamma > 0:
        raise ValueError("RHMC needs a positive refresh rate")
    x = np.array(state.x, dtype=float)
    v = np.array(state.v, dtype=float)
    n, d = x.shape
    t = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    exact = pot.is_quadratic
    if not exact and h is None:
        h = default_leapfrog_step(pot)
    while active.any():
        idx = np.flatnonzero(active)
        tau = np.array([gens[i].exponential(1.0 / gamma) for i in idx])
        last = t[idx] + tau >= horizon
        dur = np.where(last, horizon - t[idx], tau)
        if exact:
            x[idx], v[idx] = _rotate(x[idx], v[idx], pot.stiffness, dur)
        else:
            x[idx], v[idx] = _leapfrog_batch(x[idx], v[idx], pot, dur, h)
        refresh = idx[~last]
        for i in refresh:
            v[i] = gens[i].standard_normal(d)
        t[idx] += dur
        counts[refresh] += 1
        active[idx[last]] = False
    return PhaseState(x, v), counts


def _leapfrog_batch(x, v, pot, durations, h):
    steps = np.maximum(1, np.ceil(durations / h - 1e-12)).astype(int)
    dt = (durations / steps)[:, None]
    for k in range(int(steps.max(initial=0))):
        live = steps > k
        xi, vi = _leapfrog(x[live], v[live], pot, dt[live])
        x[live], v[live] = xi, vi
    return x, v


# ---------------------------------------------------------------------------
# bouncy particle sampler


def reflect(v: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """``v - 2 n n^T v`` with ``n = grad/|grad|``; identity where ``grad = 0``."""
    norm = np.linalg.norm(grad)
    if norm == 0:
        return v.copy()
    n = grad / norm
    return v - 2.0 * np.dot(n, v) * n


def exact_bounce_time(x: np.ndarray, v: np.ndarray, m: float, e: float) -> float:
    """Invert ``int_0^tau (a + b s)_+ ds = e`` for the quadratic rate ``m (x + v s) . v``."""
    a = m * float(np.dot(x, v))
    b = m * float(np.dot(v, v))
    if b == 0:
        return math.inf
    return (-a + math.sqrt(max(a, 0.0) ** 2 + 2.0 * b * e)) / b


def thinning_bounce_time(
    x: np.ndarray,
    v: np.ndarray,
    pot: Potential,
    gen: np.random.Generator,
    t_max: float,
) -> float:
    """First bounce time before ``t_max`` by Poisson thinning, ``inf`` if none.

    The envelope is constant on segments of length ``min(1, 1/|v|)`` and
    equals ``|v|`` times the potential's gradient bound on a ball covering
    the segment.
    """
    if pot.grad_bound is None:
        raise ValueError(f"thinning needs a gradient bound for {pot.label}")
    speed = float(np.linalg.norm(v))
    if speed == 0:
        return math.inf
    seg = min(1.0, 1.0 / speed)
    start = 0.0
    while start < t_max:
        center = x + start * v
        bound = speed * pot.grad_bound(center, speed * seg)
        s = start
        while True:
            s += gen.exponential(1.0 / bound) if bound > 0 else math.inf
            if s >= start + seg or s >= t_max:
                break
            rate = max(float(np.dot(v, pot.gradient(x + s * v))), 0.0)
            if rate > bound * (1 + 1e-12):
                raise ThinningError(
                    f"bounce rate {rate:.6g} exceeds envelope {bound:.6g} at s={s:.6g} "
                    f"(x={x + s * v}, v={v}); the gradient bound of {pot.label} is too small"
                )
            if gen.uniform() * bound <= rate:
                return s
        start += seg
    return math.inf


def bps_trajectory(
    state: PhaseState,
    pot: Potential,
    gamma: float,
    horizon: float,
    gen: np.random.Generator,
    method: str = "auto",
) -> tuple[PhaseState, list[EventRecord]]:
    """Single BPS chain with refresh rate ``gamma`` up to ``horizon``.

    ``method`` selects bounce-time simulation: ``"exact"`` inversion (quadratic
    potentials only), ``"thinning"``, or ``"auto"``.
    """
    if gamma < 0:
        raise ValueError("refresh rate must be non-negative")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if method == "auto":
        method = "exact" if pot.is_quadratic else "thinning"
    if method == "exact" and not pot.is_quadratic:
        raise ValueError("exact bounce inversion needs a quadratic potential")
    x = np.array(state.x, dtype=float)
    v = np.array(state.v, dtype=float)
    t = 0.0
    events: list[EventRecord] = []
    while True:
        t_refresh = gen.exponential(1.0 / gamma) if gamma > 0 else math.inf
        remaining = horizon - t
        if method == "exact":
            t_bounce = exact_bounce_time(x, v, pot.stiffness, gen.exponential())
        else:
            t_bounce = thinning_bounce_time(x, v, pot, gen, min(t_refresh, remaining))
        tau = min(t_bounce, t_refresh)
        if tau >= remaining:
            x = x + remaining * v
            return PhaseState(x, v), events
        x = x + tau * v
        t += tau
        v_pre = v
        if t_bounce < t_refresh:
            grad = pot.gradient(x)
            if np.any(grad != 0):
                v = reflect(v, grad)
                events.append(EventRecord(t, "bounce", v_pre, v, x.copy()))
        else:
            v = gen.standard_normal(v.shape)
            events.append(EventRecord(t, "refresh", v_pre, v, x.copy()))


def run_bps(
    state: PhaseState,
    pot: Potential,
    gamma: float,
    horizon: float,
    gens: Sequence[np.random.Generator],
    method: str = "auto",
) -> PhaseState:
    xs, vs = [], []
    for i, g in enumerate(gens):
        s, _ = bps_trajectory(PhaseState(state.x[i], state.v[i]), pot, gamma, horizon, g, method)
        xs.append(s.x)
        vs.append(s.v)
    return PhaseState(np.array(xs), np.array(vs))


def run_process(
    process: str,
    state: PhaseState,
    pot: Potential,
    gamma: float,
    horizon: float,
    gens: Sequence[np.random.Generator],
    h: float = 1e-2,
) -> PhaseState:
    """Advance a batch of chains by ``horizon`` under the named process."""
    steps = int(round(horizon / h))
    if process == "overdamped":
        if steps and abs(steps * h - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError("horizon must be a multiple of the step size")
        return PhaseState(run_overdamped(state.x, pot, h, steps, gens), state.v)
    if process == "langevin":
        if steps and abs(steps * h - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError("horizon must be a multiple of the step size")
        return run_langevin(state, pot, gamma, h, steps, gens)
    if process == "hamiltonian":
        return hamiltonian_flow(state, pot, horizon, h)
    if process == "rhmc":
        return run_rhmc(state, pot, gamma, horizon, gens, None if pot.is_quadratic else min(h, 1e-3))[0]
    if process == "bps":
        return run_bps(state, pot, gamma, horizon, gens)
    raise ValueError(f"unknown process {process!r}; known: {', '.join(PROCESSES)}")


# ---------------------------------------------------------------------------
# stationary sample streams


@dataclass(frozen=True)
class SampleStream:
    """Draws from the phase-space target arranged as ``(batches, batch_len, d)``.

    Draws within a batch may be correlated (one MCMC chain); batches are
    independent, so standard errors are computed from batch means.
    """

    x: np.ndarray
    v: np.ndarray
    exact: bool

    @property
    def size(self) -> int:
        return self.x.shape[0] * self.x.shape[1]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.x.shape[-1]
        return self.x.reshape(-1, d), self.v.reshape(-1, d)


def batch_mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``values`` shaped ``(batches, batch_len)``."""
    values = np.asarray(values, dtype=float)
    means = values.mean(axis=1)
    nb = means.size
    if nb < 2:
        raise ValueError("need at least two independent batches for a standard error")
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(nb))


def sample_target(
    measure: TargetMeasure,
    samples: int,
    seed: int = 0,
    chains: int = 10_000,
    h: float = 1e-3,
    burn_in: int = 10_000,
    thin: int = 10,
    gate: float = 4.0,
) -> SampleStream:
    """Stationary draws from ``mu x N(0, I)``.

    Gaussian targets are sampled exactly. Otherwise positions come from
    ``chains`` overdamped Euler-Maruyama chains (step ``h``, ``burn_in``
    steps each, then every ``thin``-th step), and the first two moments are
    checked against quadrature at ``gate`` standard errors.
    """
    pot = measure.potential
    d = pot.dim
    if measure.exact_sampling:
        gen = chain_rng(seed, 0)
        x = gen.standard_normal((samples, 1, d)) / math.sqrt(pot.stiffness)
        v = gen.standard_normal((samples, 1, d))
        return SampleStream(x, v, exact=True)
    chains = min(chains, samples)
    per_chain = math.ceil(samples / chains)
    gens = chain_rngs(seed, chains)
    x0 = np.stack([g.standard_normal(d) for g in gens])
    x = run_overdamped(x0, pot, h, burn_in, gens)
    _, rec = run_overdamped(x, pot, h, per_chain * thin, gens, record_every=thin)
    xs = np.transpose(rec, (1, 0, 2))  # (chains, per_chain, d)
    v = np.stack([g.standard_normal((per_chain, d)) for g in gens])
    stream = SampleStream(xs, v, exact=False)
    check_stationarity(stream, measure, gate)
    return stream


def check_stationarity(stream: SampleStream, measure: TargetMeasure, k: float = 4.0) -> None:
    for power in (1, 2):
        vals = np.sum(stream.x**power, axis=-1)
        est, se = batch_mean_and_se(vals)
        ref = measure.expectation(lambda y: np.sum(y**power, axis=-1))
        if abs(est - ref) > k * se:
            raise StationarityError(
                f"sample moment E|x|^{power} = {est:.6g} +- {se:.2g} disagrees with quadrature "
                f"value {ref:.6g} at {k} standard errors"
            )


# ---------------------------------------------------------------------------
# lifted random walk on the discrete circle


def circle_chains(n: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric walk on ``Z/nZ`` and its lift on ``Z/nZ x {+1, -1}``.

    Lifted state ``(x, +1)`` has index ``x`` and ``(x, -1)`` has index
    ``n + x``. Each lifted step moves ``x <- x + v`` and then flips ``v``
    with probability ``eps``.
    """
    if n < 2:
        raise ValueError("circle needs at least two sites")
    if not 0 <= eps <= 1:
        raise ValueError("flip probability must lie in [0, 1]")
    base = np.zeros((n, n))
    lift = np.zeros((2 * n, 2 * n))
    for x in range(n):
        base[x, (x + 1) % n] += 0.5
        base[x, (x - 1) % n] += 0.5
        for sign, offset in ((1, 0), (-1, n)):
            y = (x + sign) % n
            same, flipped = y + offset, y + (n - offset)
            lift[x + offset, same] += 1.0 - eps
            lift[x + offset, flipped] += eps
    return base, lift
