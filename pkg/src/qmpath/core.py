"""Shared qubit types and the stochastic-action evaluators.

States are Bloch vectors stored as float arrays with a trailing axis of
length 3 (x, y, z); conjugate momenta use the same layout (px, py, pz).
Every evaluator broadcasts over leading axes, so a whole trajectory or a
batch of random points can be passed in one call.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

#: default tolerance for |q| <= 1
BLOCH_SLACK = 1e-9


@dataclass(frozen=True)
class QubitParams:
    """Physical constants of the measured qubit (hbar = 1).

    Attributes
    ----------
    epsilon : float
        Energy asymmetry, units 1/time.
    delta : float
        Tunneling strength, units 1/time. May be negative.
    tau : float
        Characteristic measurement time.
    """

    epsilon: float = 0.0
    delta: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if not (math.isfinite(self.epsilon) and math.isfinite(self.delta)):
            raise ValueError("epsilon and delta must be finite")

    def scaled(self) -> "QubitParams":
        """Same physics expressed in units where tau = 1."""
        return QubitParams(self.epsilon * self.tau, self.delta * self.tau, 1.0)


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings: step, horizon, ensemble size, postselection radius, seed."""

    dt: float
    horizon: float
    n_traj: int
    lam: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.dt < self.horizon):
            raise ValueError(f"need 0 < dt < horizon, got dt={self.dt}, horizon={self.horizon}")
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError(f"n_traj must be a positive integer, got {self.n_traj}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def check_resolution(self, tau: float) -> None:
        if self.dt / tau > 0.1:
            warnings.warn(f"dt/tau = {self.dt / tau:g} is large; the weak-measurement "
                          "picture needs dt << tau", stacklevel=2)


def bloch(x, y=None, z=None, slack: float = BLOCH_SLACK) -> np.ndarray:
    """Build (and validate) a Bloch vector from three numbers or a 3-sequence."""
    if y is None:
        q = np.asarray(x, dtype=float)
    else:
        q = np.array([x, y, z], dtype=float)
    if q.shape[-1:] != (3,):
        raise ValueError(f"Bloch vector needs 3 components, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("Bloch vector components must be finite")
    if np.any(np.einsum("...i,...i", q, q) > (1.0 + slack) ** 2):
        raise ValueError(f"Bloch vector outside the unit ball: {q}")
    return q


def is_pure(q, slack: float = BLOCH_SLACK) -> np.ndarray:
    return np.abs(np.linalg.norm(q, axis=-1) - 1.0) <= slack


def drift(q, r, params: QubitParams) -> np.ndarray:
    """First-order conditional rate of change of the Bloch vector given readout r."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    eps, dlt, rt = params.epsilon, params.delta, r / params.tau
    return np.stack([
        -eps * y - x * z * rt,
        eps * x + dlt * z - y * z * rt,
        -dlt * y + (1.0 - z * z) * rt,
    ], axis=-1)


def functional_f(q, r, tau: float) -> np.ndarray:
    """Readout log-likelihood rate, -(r^2 - 2 r z + 1) / (2 tau)."""
    z = np.asarray(q, dtype=float)[..., 2]
    r = np.asarray(r, dtype=float)
    return -(r * r - 2.0 * r * z + 1.0) / (2.0 * tau)


def stochastic_hamiltonian(q, p, r, params: QubitParams) -> np.ndarray:
    """H(q, p, r) = p . drift(q, r) + functional_f(q, r)."""
    p = np.asarray(p, dtype=float)
    return np.einsum("...i,...i", p, drift(q, r, params)) + functional_f(q, r, params.tau)


def readout_log_density(r, q, dt: float, tau: float) -> np.ndarray:
    """Exact log density of one readout bin given the state.

    The density is a two-component Gaussian mixture with means +1 and -1,
    common variance tau/dt and weights (1 +/- z)/2. Evaluated in log space;
    a zero mixture weight contributes -inf instead of producing NaN.
    """
    z = np.clip(np.asarray(q, dtype=float)[..., 2], -1.0, 1.0)
    r = np.asarray(r, dtype=float)
    k = dt / (2.0 * tau)
    with np.errstate(divide="ignore", over="ignore"):
        log_up = np.log((1.0 + z) / 2.0) - k * (r - 1.0) ** 2
        log_dn = np.log((1.0 - z) / 2.0) - k * (r + 1.0) ** 2
    return 0.5 * math.log(dt / (2.0 * math.pi * tau)) + np.logaddexp(log_up, log_dn)


def _step_terms(q0, q1, p, r, dt, params):
    """Per-step summands of the discrete action."""
    constraint = q1 - q0 - dt * drift(q0, r, params)
    return -np.einsum("...i,...i", p, constraint) + dt * functional_f(q0, r, params.tau)


def discrete_action(states, readouts, momenta, dt: float, params: QubitParams) -> float:
    """Discretized stochastic action without boundary terms.

    Parameters
    ----------
    states : array, shape (n + 1, 3)
    readouts : array, shape (n,)
    momenta : array, shape (n, 3)
        One multiplier per state-update constraint.
    dt : float
    params : QubitParams
    """
    states = np.asarray(states, dtype=float)
    readouts = np.asarray(readouts, dtype=float)
    momenta = np.asarray(momenta, dtype=float)
    n = readouts.shape[0]
    if states.shape != (n + 1, 3) or momenta.shape != (n, 3):
        raise ValueError(f"length mismatch: states {states.shape}, readouts {readouts.shape}, "
                         f"momenta {momenta.shape}")
    return float(np.sum(_step_terms(states[:-1], states[1:], momenta, readouts, dt, params)))


def discrete_action_gradient_fd(states, readouts, momenta, dt: float, params: QubitParams,
                                h: float = 1e-6) -> dict:
    """Central finite-difference gradient of :func:`discrete_action`.

    Boundary states (first and last) are held fixed. Because the action is a
    sum of nearest-neighbour terms, each difference quotient only re-evaluates
    the terms that contain the perturbed variable; the result is the same
    quotient the full sum would give.

    Returns
    -------
    dict with arrays ``q`` (n - 1, 3), ``p`` (n, 3) and ``r`` (n,).
    """
    states = np.asarray(states, dtype=float)
    readouts = np.asarray(readouts, dtype=float)
    momenta = np.asarray(momenta, dtype=float)
    n = readouts.shape[0]
    if states.shape != (n + 1, 3) or momenta.shape != (n, 3):
        raise ValueError("length mismatch")

    def terms(s, r, p):
        return _step_terms(s[:-1], s[1:], p, r, dt, params)

    grad_p = np.empty((n, 3))
    grad_q = np.empty((n - 1, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        grad_p[:, i] = (terms(states, readouts, momenta + e)
                        - terms(states, readouts, momenta - e)) / (2 * h)
        # q_k (1 <= k <= n-1) enters step k-1 as the endpoint and step k as the start
        qk = states[1:-1]
        plus = (_step_terms(states[:-2], qk + e, momenta[:-1], readouts[:-1], dt, params)
                + _step_terms(qk + e, states[2:], momenta[1:], readouts[1:], dt, params))
        minus = (_step_terms(states[:-2], qk - e, momenta[:-1], readouts[:-1], dt, params)
                 + _step_terms(qk - e, states[2:], momenta[1:], readouts[1:], dt, params))
        grad_q[:, i] = (plus - minus) / (2 * h)
    grad_r = (terms(states, readouts + h, momenta) - terms(states, readouts - h, momenta)) / (2 * h)
    return {"q": grad_q, "p": grad_p, "r": grad_r}
