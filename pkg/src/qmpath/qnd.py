"""Closed-form most-likely paths for quantum non-demolition measurement (delta = 0).

With no tunneling the optimal readout is a constant r_bar fixed by the
boundary values of z, the path has an explicit form, and the momenta form
a two-parameter family (p_xI, p_yI) that all give the same action.

The path and momentum evaluators accept complex times so derivatives can
be taken by the complex-step method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .core import QubitParams, stochastic_hamiltonian

#: |z| must stay below 1 - Z_MARGIN for the arctanh and p_z formulas
Z_MARGIN = 1e-6


def _check_z(*zs):
    for z in zs:
        if not np.all(np.abs(np.asarray(z)) < 1.0 - Z_MARGIN):
            raise ValueError(f"|z| must be below 1 - {Z_MARGIN:g}; got {z}")


def qnd_readout(z_initial, z_final, horizon: float, tau: float = 1.0):
    """Constant optimal readout joining z_initial to z_final in time ``horizon``."""
    _check_z(z_initial, z_final)
    zi, zf = np.asarray(z_initial, float), np.asarray(z_final, float)
    return (tau / horizon) * np.arctanh((zi - zf) / (zi * zf - 1.0))


def _denominator(z_initial, r_bar, tau, t):
    g = r_bar * t / tau
    return np.cosh(g) + z_initial * np.sinh(g)


def qnd_path(q_initial, r_bar, epsilon: float, tau: float, t):
    """Bloch vector along the QND most-likely path at time(s) t; shape t.shape + (3,)."""
    xi, yi, zi = q_initial
    t = np.asarray(t)
    c, s = np.cos(epsilon * t), np.sin(epsilon * t)
    g = r_bar * t / tau
    d = np.cosh(g) + zi * np.sinh(g)
    return np.stack([(xi * c - yi * s) / d,
                     (yi * c + xi * s) / d,
                     (zi * np.cosh(g) + np.sinh(g)) / d], axis=-1)


def qnd_momenta(p_xi: float, p_yi: float, q_initial, r_bar, epsilon: float, tau: float, t):
    """Conjugate momenta of the QND family labelled by (p_xi, p_yi); shape t.shape + (3,).

    p_z follows from the optimal-readout constraint, so it needs |z(t)| < 1.
    """
    t = np.asarray(t)
    q = qnd_path(q_initial, r_bar, epsilon, tau, t)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    if np.any(np.abs(np.real(z)) >= 1.0):
        raise ZeroDivisionError("p_z is undefined where |z| = 1")
    c, s = np.cos(epsilon * t), np.sin(epsilon * t)
    d = _denominator(q_initial[2], r_bar, tau, t)
    px = (p_xi * c - p_yi * s) * d
    py = (p_yi * c + p_xi * s) * d
    pz = (r_bar - z + px * x * z + py * y * z) / (1.0 - z * z)
    return np.stack([px, py, pz], axis=-1)


def qnd_action(z_initial, z_final, horizon: float, tau: float = 1.0):
    """Action of the QND most-likely path (leading log-probability of reaching z_final)."""
    r = qnd_readout(z_initial, z_final, horizon, tau)
    zi, zf = np.asarray(z_initial, float), np.asarray(z_final, float)
    return -(horizon / (2.0 * tau)) * (r * r + 1.0) + 0.5 * np.log((1.0 - zi**2) / (1.0 - zf**2))


def final_state_profile(z_initial: float, horizon: float, tau: float, z_grid) -> np.ndarray:
    """Rows (z_F, exp(S)) over ``z_grid``; the values are not normalized over z_F."""
    z_grid = np.asarray(z_grid, dtype=float)
    return np.column_stack([z_grid, np.exp(qnd_action(z_initial, z_grid, horizon, tau))])


@dataclass(frozen=True)
class QndSolution:
    """Most-likely path from q_initial to a final z under QND measurement."""

    q_initial: np.ndarray
    r_bar: float
    params: QubitParams
    horizon: float
    action: float
    p_xi: float = 0.0
    p_yi: float = 0.0

    def q_of_t(self, t):
        return qnd_path(self.q_initial, self.r_bar, self.params.epsilon, self.params.tau, t)

    def p_of_t(self, t):
        return qnd_momenta(self.p_xi, self.p_yi, self.q_initial, self.r_bar,
                           self.params.epsilon, self.params.tau, t)

    @property
    def q_final(self):
        return self.q_of_t(self.horizon)


def solve_qnd(q_initial, z_final: float, horizon: float, params: QubitParams,
              p_xi: float = 0.0, p_yi: float = 0.0) -> QndSolution:
    if params.delta != 0:
        raise ValueError("closed-form paths need delta = 0")
    q_initial = np.asarray(q_initial, dtype=float)
    r = float(qnd_readout(q_initial[2], z_final, horizon, params.tau)) + 0.0  # no -0.0
    s = float(qnd_action(q_initial[2], z_final, horizon, params.tau))
    return QndSolution(q_initial, r, params, horizon, s, p_xi, p_yi)


def complex_step(f, t, h: float = 1e-30):
    """Derivative of a real-analytic f at real t, exact to rounding."""
    return np.imag(f(np.asarray(t, dtype=float) + 1j * h)) / h


def action_by_quadrature(sol: QndSolution, epsabs: float = 1e-12, epsrel: float = 1e-12) -> float:
    """Integrate -p.qdot + H along (q_of_t, p_of_t) with adaptive quadrature.

    qdot is taken by complex step from the closed-form path, so this does
    not assume the path satisfies the equations of motion.
    """
    def integrand(t):
        q = sol.q_of_t(t)
        p = sol.p_of_t(t)
        qdot = complex_step(sol.q_of_t, t)
        ham = stochastic_hamiltonian(q, p, sol.r_bar, sol.params)
        return float(-np.dot(p, qdot) + ham)

    val, _ = quad(integrand, 0.0, sol.horizon, epsabs=epsabs, epsrel=epsrel, limit=200)
    return val
