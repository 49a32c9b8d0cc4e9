"""Most-likely paths between a preselected and a postselected qubit state.

The extremal equations form a 3 + 3 system for the Bloch vector q and its
conjugate momenta p, closed by the optimal-readout constraint. Paths are
integrated with fixed-step RK4 and the two-point boundary problem
q(0) = q_I, q(T) = q_F is solved by shooting on p(0).

Phase states are arrays with a trailing axis of length 6:
(x, y, z, px, py, pz).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.integrate import simpson

from .core import QubitParams, bloch, stochastic_hamiltonian

DIVERGENCE_LIMIT = 1e12


class ShootingError(RuntimeError):
    """No multi-start point converged; ``best_residual`` is the closest miss."""

    def __init__(self, message, best_residual=np.inf, best_p0=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_p0 = best_p0


@dataclass(frozen=True)
class MostLikelyPath:
    times: np.ndarray
    phase_states: np.ndarray
    readouts: np.ndarray
    energy: float
    action: float
    residual: float = np.nan
    p0: np.ndarray = None
    branches: list = field(default_factory=list)
    params: QubitParams = None

    @property
    def q(self):
        return self.phase_states[:, :3]

    @property
    def p(self):
        return self.phase_states[:, 3:]

    @property
    def hamiltonian(self):
        """H evaluated at every stored point (constant up to integrator error)."""
        return stochastic_hamiltonian(self.q, self.p, self.readouts, self.params)


def optimal_readout(s) -> np.ndarray:
    """Readout that makes the action stationary: r = z + pz (1 - z^2) - px x z - py y z."""
    s = np.asarray(s, dtype=float)
    x, y, z, px, py, pz = np.moveaxis(s, -1, 0)
    return z + pz * (1.0 - z * z) - px * x * z - py * y * z


def ode_rhs(s, params: QubitParams) -> np.ndarray:
    """Time derivative of the phase state along an extremal path."""
    s = np.asarray(s, dtype=float)
    x, y, z, px, py, pz = np.moveaxis(s, -1, 0)
    eps, dlt = params.epsilon, params.delta
    rt = optimal_readout(s) / params.tau
    zr = z * rt
    return np.stack([
        -eps * y - x * zr,
        eps * x + dlt * z - y * zr,
        -dlt * y + (1.0 - z * z) * rt,
        -eps * py + px * zr,
        eps * px + dlt * pz + py * zr,
        -dlt * py + (px * x + py * y + 2.0 * pz * z - 1.0) * rt,
    ], axis=-1)


@numba.njit(cache=True)
def _rhs_into(s, eps, dlt, tau, out):
    x, y, z, px, py, pz = s[0], s[1], s[2], s[3], s[4], s[5]
    rt = (z + pz * (1.0 - z * z) - px * x * z - py * y * z) / tau
    zr = z * rt
    out[0] = -eps * y - x * zr
    out[1] = eps * x + dlt * z - y * zr
    out[2] = -dlt * y + (1.0 - z * z) * rt
    out[3] = -eps * py + px * zr
    out[4] = eps * px + dlt * pz + py * zr
    out[5] = -dlt * py + (px * x + py * y + 2.0 * pz * z - 1.0) * rt


@numba.njit(cache=True)
def _rk4_kernel(s0, n, dt, eps, dlt, tau, out, record):
    m = s0.shape[0]
    dead = np.zeros(m, dtype=np.bool_)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    s = np.empty(6)
    final = np.empty((m, 6))
    for i in range(m):
        for j in range(6):
            s[j] = s0[i, j]
            if record:
                out[0, i, j] = s[j]
        for k in range(n):
            if not dead[i]:
                _rhs_into(s, eps, dlt, tau, k1)
                for j in range(6):
                    tmp[j] = s[j] + 0.5 * dt * k1[j]
                _rhs_into(tmp, eps, dlt, tau, k2)
                for j in range(6):
                    tmp[j] = s[j] + 0.5 * dt * k2[j]
                _rhs_into(tmp, eps, dlt, tau, k3)
                for j in range(6):
                    tmp[j] = s[j] + dt * k3[j]
                _rhs_into(tmp, eps, dlt, tau, k4)
                for j in range(6):
                    s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                    if not (abs(s[j]) < DIVERGENCE_LIMIT):
                        dead[i] = True
                if dead[i]:
                    for j in range(6):
                        s[j] = np.nan
            if record:
                for j in range(6):
                    out[k + 1, i, j] = s[j]
        for j in range(6):
            final[i, j] = s[j]
    return final, dead


def _rk4(s0, n, dt, params, record=False):
    """Integrate a batch of phase states (M, 6) for n steps.

    Rows that exceed the divergence limit or go non-finite are frozen at NaN.
    """
    s0 = np.ascontiguousarray(s0, dtype=float)
    out = np.empty((n + 1,) + s0.shape) if record else np.empty((1, 1, 6))
    final, dead = _rk4_kernel(s0, n, float(dt), float(params.epsilon), float(params.delta),
                              float(params.tau), out, record)
    return (out if record else final), dead


def _grid(horizon, dt):
    if not dt > 0 or not horizon > 0:
        raise ValueError("dt and horizon must be positive")
    n = max(1, int(round(horizon / dt)))
    return n, horizon / n


def integrate_path(q_initial, p0, horizon: float, dt: float, params: QubitParams) -> MostLikelyPath:
    """Integrate the extremal equations from (q_initial, p0) with fixed-step RK4.

    Raises
    ------
    FloatingPointError
        If any component exceeds the divergence limit.
    """
    n, h = _grid(horizon, dt)
    s0 = np.concatenate([np.asarray(q_initial, float), np.asarray(p0, float)])
    traj, dead = _rk4(s0[None, :], n, h, params, record=True)
    if dead[0]:
        raise FloatingPointError(f"extremal path diverged from p0 = {p0}")
    traj = traj[:, 0]
    return _finish(traj, n, h, params)


def _finish(traj, n, h, params, **extra):
    times = np.arange(n + 1) * h
    q, p = traj[:, :3], traj[:, 3:]
    r = optimal_readout(traj)
    ham = stochastic_hamiltonian(q, p, r, params)
    qdot = ode_rhs(traj, params)[:, :3]
    integrand = -np.einsum("ij,ij->i", p, qdot) + ham
    action = float(simpson(integrand, x=times))
    return MostLikelyPath(times=times, phase_states=traj, readouts=r, energy=float(ham[0]),
                          action=action, p0=traj[0, 3:].copy(), params=params, **extra)


def default_starts() -> np.ndarray:
    """Zero momentum first, then the remaining points of the {-2, 0, 2}^3 lattice."""
    lattice = [np.array(c, float) for c in itertools.product((-2.0, 0.0, 2.0), repeat=3)]
    lattice = [c for c in lattice if np.any(c)]
    return np.array([np.zeros(3)] + lattice)


def shoot(q_initial, q_final, horizon: float, params: QubitParams, dt: float = 1e-3,
          tol: float = 1e-8, starts=None, max_iter: int = 60, fd_step: float = 1e-6,
          max_halvings: int = 40) -> MostLikelyPath:
    """Find p(0) such that the extremal path from q_initial reaches q_final at ``horizon``.

    Damped Gauss-Newton on the map p0 -> q(T), with a forward-difference
    Jacobian and least-squares steps (the map is rank deficient for pure
    states and for QND measurement). All starts iterate together. Among
    converged starts the path with the largest action is returned; ties go
    to the lowest start index. Distinct converged branches are listed in
    ``branches``.
    """
    q_initial = bloch(q_initial)
    q_final = bloch(q_final)
    n, h = _grid(horizon, dt)
    starts = default_starts() if starts is None else np.atleast_2d(np.asarray(starts, float))

    def final_q(p):
        s0 = np.concatenate([np.broadcast_to(q_initial, (len(p), 3)), p], axis=1)
        s, dead = _rk4(s0, n, h, params)
        qf = s[:, :3]
        qf[dead] = np.nan
        return qf

    def residual(qf):
        res = np.linalg.norm(qf - q_final, axis=1)
        return np.where(np.isfinite(res), res, np.inf)

    p = starts.copy()
    f = final_q(p) - q_final
    res = residual(f + q_final)
    active = np.isfinite(res)
    done = res <= tol
    active &= ~done
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        hstep = fd_step * np.maximum(1.0, np.abs(p[idx]))
        probes = np.repeat(p[idx], 3, axis=0)
        for j in range(3):
            probes[j::3, j] += hstep[:, j]
        fq = final_q(probes) - q_final
        steps = np.zeros((len(idx), 3))
        for a, i in enumerate(idx):
            jac = (fq[3 * a:3 * a + 3] - f[i]).T / hstep[a]
            if not np.all(np.isfinite(jac)):
                active[i] = False
                continue
            sv = np.linalg.svd(jac, compute_uv=False)
            if sv[0] < 1e-14:
                active[i] = False
                continue
            # singular values below the difference-quotient noise are treated as null directions
            steps[a] = -np.linalg.lstsq(jac, f[i], rcond=1e-6)[0]
        # step halving until the residual drops
        pending = np.array([active[i] for i in idx])
        factor = np.ones(len(idx))
        for _ in range(max_halvings + 1):
            if not pending.any():
                break
            sel = np.flatnonzero(pending)
            trial = p[idx[sel]] + factor[sel, None] * steps[sel]
            qf = final_q(trial)
            rnew = residual(qf)
            better = rnew < res[idx[sel]]
            for b, a in enumerate(sel):
                if better[b]:
                    i = idx[a]
                    p[i], f[i], res[i] = trial[b], qf[b] - q_final, rnew[b]
                    pending[a] = False
            factor[pending] *= 0.5
        for a in np.flatnonzero(pending):
            active[idx[a]] = False
        newly = active & (res <= tol)
        done |= newly
        active &= ~newly

    if not done.any():
        best = int(np.argmin(res))
        raise ShootingError(f"shooting did not converge; best residual {res[best]:.3e}",
                            best_residual=float(res[best]), best_p0=p[best])

    paths = {}
    for i in np.flatnonzero(done):
        try:
            paths[i] = integrate_path(q_initial, p[i], horizon, h, params)
        except FloatingPointError:
            continue
    if not paths:
        raise ShootingError("converged starts diverged on re-integration")
    # starts reaching the same path (up to solver noise) form one branch,
    # represented by its lowest start index
    reps = []
    for i in sorted(paths):
        path = paths[i]
        if not any(abs(path.action - paths[j].action) <= 1e-5 * max(1.0, abs(path.action))
                   and abs(path.readouts[0] - paths[j].readouts[0]) <= 1e-4 for j in reps):
            reps.append(i)
    branches = [{"start": int(i), "p0": p[i].tolist(), "action": paths[i].action,
                 "energy": paths[i].energy, "r0": float(paths[i].readouts[0]),
                 "residual": float(res[i])} for i in reps]
    winner = max(reps, key=lambda i: (paths[i].action, -i))
    best = paths[winner]
    return replace(best, residual=float(res[winner]), branches=branches)
