"""Ground-truth dynamics: a two-degree-of-freedom oscillator with cubic
coupling, its conserved energy, and a symplectic leapfrog integrator.

The Hamiltonian is separable, H = K(p) + V(q), with unit masses and unit
linear frequencies:

    K = (p_x^2 + p_y^2) / 2
    V = (q_x^2 + q_y^2) / 2 + alpha * q_x^2 q_y - beta * q_y^3 / 3

``alpha == beta`` recovers the single-parameter family; bounded motion exists
below an escape energy (1/6 at alpha = beta = 1).

Phase-space layout used everywhere in the package: a state vector is
``(q_x, q_y, p_x, p_y)`` and batches stack such rows.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BadFactor, IntegrationDiverged, ShapeMismatch

ESCAPE_RADIUS = 10.0


@dataclass(frozen=True)
class PotentialParams:
    """Coupling strengths of the cubic potential terms."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("potential parameters must be finite")

    @classmethod
    def single(cls, alpha):
        """Single-parameter family: beta locked to alpha."""
        return cls(alpha=float(alpha), beta=float(alpha))

    def channels(self, n):
        """The parameter vector fed to adaptable networks (length 1 or 2)."""
        if n == 1:
            return np.array([self.alpha])
        if n == 2:
            return np.array([self.alpha, self.beta])
        raise ShapeMismatch(f"parameter channel count must be 1 or 2, got {n}")


@dataclass(frozen=True)
class PhaseState:
    """One point in phase space: positions ``q`` and momenta ``p``."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if q.shape != (2,) or p.shape != (2,):
            raise ShapeMismatch(f"state needs q, p of shape (2,), got {q.shape}, {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state components must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def vec(self):
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vec(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (4,):
            raise ShapeMismatch(f"state vector must have shape (4,), got {v.shape}")
        return cls(q=v[:2], p=v[2:])


@dataclass(frozen=True)
class DerivativeField:
    """Separable force field: potential gradient in q, kinetic gradient in p."""

    grad_v: Callable[[np.ndarray, PotentialParams], np.ndarray]
    grad_k: Callable[[np.ndarray], np.ndarray]


def hh_potential(q, params):
    """Potential energy at position ``q``."""
    return (
        0.5 * (q[0] * q[0] + q[1] * q[1])
        + params.alpha * q[0] * q[0] * q[1]
        - params.beta * (q[1] * q[1] * q[1]) / 3.0
    )


def hh_energy(state, params):
    """Total energy of one state."""
    p = state.p
    return 0.5 * (p[0] * p[0] + p[1] * p[1]) + hh_potential(state.q, params)


def hh_grad_v(q, params):
    """Gradient of the potential with respect to ``q``."""
    return np.array(
        [
            q[0] + 2.0 * params.alpha * q[0] * q[1],
            q[1] + params.alpha * q[0] * q[0] - params.beta * q[1] * q[1],
        ]
    )


def kinetic_grad(p):
    """Gradient of the kinetic energy: the velocity, equal to ``p``."""
    return np.asarray(p, dtype=np.float64)


HH_FIELD = DerivativeField(grad_v=hh_grad_v, grad_k=kinetic_grad)


class Trajectory:
    """A uniformly sampled trajectory: (N, 4) state rows at spacing ``dt``."""

    def __init__(self, dt, data, params, energy0=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != 4 or data.shape[0] < 1:
            raise ShapeMismatch(f"trajectory data must be (N>=1, 4), got {data.shape}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        self.data = data
        self.params = params
        e0 = hh_energy(self.state(0), params)
        if energy0 is not None and abs(e0 - energy0) > 1e-12:
            raise ValueError("energy0 does not match the first state")
        self.energy0 = e0

    def __len__(self):
        return self.data.shape[0]

    @property
    def q(self):
        return self.data[:, :2]

    @property
    def p(self):
        return self.data[:, 2:]

    @property
    def times(self):
        return np.arange(len(self)) * self.dt

    def state(self, i):
        row = self.data[i]
        return PhaseState(q=row[:2], p=row[2:])

    def energies(self, params=None):
        """Total energy at every sample, under ``params`` (default: own)."""
        return hh_energy_batch(self.data, params or self.params)


def hh_energy_batch(states, params):
    """Energies of an (N, 4) block of state rows."""
    qx, qy, px, py = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
    return (
        0.5 * (px * px + py * py)
        + 0.5 * (qx * qx + qy * qy)
        + params.alpha * qx * qx * qy
        - params.beta * (qy * qy * qy) / 3.0
    )


def _check_bounded(q, escape_radius):
    if not np.all(np.isfinite(q)) or np.max(np.abs(q)) > escape_radius:
        raise IntegrationDiverged(
            f"position left the bounded regime (|q| > {escape_radius})"
        )


def leapfrog_step(state, dt, field, params, escape_radius=ESCAPE_RADIUS):
    """One kick-drift-kick leapfrog step of size ``dt``.

    Second order, symplectic, and time-reversible for separable fields.
    Raises IntegrationDiverged if the new position is non-finite or outside
    the escape radius in sup-norm.
    """
    half = 0.5 * dt
    p1 = state.p - half * field.grad_v(state.q, params)
    q2 = state.q + dt * field.grad_k(p1)
    _check_bounded(q2, escape_radius)
    p2 = p1 - half * field.grad_v(q2, params)
    if not np.all(np.isfinite(p2)):
        raise IntegrationDiverged("momentum became non-finite")
    return PhaseState(q=q2, p=p2)


def integrate(state0, dt, n_steps, field, params, escape_radius=ESCAPE_RADIUS):
    """Integrate ``n_steps`` leapfrog steps; returns all n_steps + 1 states."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    data = np.empty((n_steps + 1, 4))
    data[0] = state0.vec()
    state = state0
    for i in range(n_steps):
        try:
            state = leapfrog_step(state, dt, field, params, escape_radius)
        except IntegrationDiverged as err:
            raise IntegrationDiverged(f"diverged at step {i + 1}: {err}", step=i + 1)
        data[i + 1] = state.vec()
    return Trajectory(dt=dt, data=data, params=params)


def coarse_grain(traj, factor):
    """Keep every ``factor``-th sample (indices 0, factor, 2*factor, ...)."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise BadFactor(f"coarse-grain factor must be a positive integer, got {factor!r}")
    return Trajectory(
        dt=traj.dt * factor, data=traj.data[::factor].copy(), params=traj.params
    )


def _grad_v_cols(qx, qy, alpha, beta):
    gx = qx + 2.0 * alpha * qx * qy
    gy = qy + alpha * qx * qx - beta * qy * qy
    return gx, gy


def leapfrog_batch(states, alpha, beta, dt):
    """One leapfrog step on an (B, 4) batch; parameters scalar or (B,).

    No divergence checks: callers sample and validate at their own cadence.
    Bit-identical per row to :func:`leapfrog_step` with the analytic field.
    """
    qx, qy, px, py = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
    half = 0.5 * dt
    gx, gy = _grad_v_cols(qx, qy, alpha, beta)
    p1x = px - half * gx
    p1y = py - half * gy
    q2x = qx + dt * p1x
    q2y = qy + dt * p1y
    gx, gy = _grad_v_cols(q2x, q2y, alpha, beta)
    out = np.empty_like(states)
    out[:, 0] = q2x
    out[:, 1] = q2y
    out[:, 2] = p1x - half * gx
    out[:, 3] = p1y - half * gy
    return out


def integrate_batch(states0, alpha, beta, dt, n_steps, stride=1,
                    escape_radius=ESCAPE_RADIUS):
    """Integrate a batch, recording every ``stride``-th step.

    ``states0`` is (B, 4); ``alpha``/``beta`` scalar or (B,).  ``stride`` must
    divide ``n_steps``.  Returns ``(coarse, escaped)`` where ``coarse`` is
    (B, n_steps // stride + 1, 4) and ``escaped[b]`` is the first recorded
    index at which row ``b`` was non-finite or outside the escape radius
    (-1 for rows that stayed bounded).  Rows keep integrating after escape;
    their later samples are garbage and must be discarded by the caller.
    """
    if n_steps % stride != 0:
        raise BadFactor(f"stride {stride} must divide n_steps {n_steps}")
    n_coarse = n_steps // stride
    b = states0.shape[0]
    coarse = np.empty((b, n_coarse + 1, 4))
    coarse[:, 0] = states0
    escaped = np.full(b, -1, dtype=np.int64)
    cur = states0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_coarse + 1):
            for _ in range(stride):
                cur = leapfrog_batch(cur, alpha, beta, dt)
            coarse[:, k] = cur
            q = cur[:, :2]
            bad = ~np.all(np.isfinite(cur), axis=1) | (
                np.max(np.abs(np.where(np.isfinite(q), q, np.inf)), axis=1)
                > escape_radius
            )
            newly = bad & (escaped < 0)
            escaped[newly] = k
            if np.any(bad):
                # freeze escaped rows so overflow cannot poison the batch
                cur[bad] = 0.0
    return coarse, escaped
