"""One-angle phase space of a strongly measured qubit (Zeno regime, epsilon = 0).

Pure states y = sin(theta), z = cos(theta) with conjugate momentum p. After
eliminating the readout the stochastic Hamiltonian is quadratic in p,

    H = a p^2 + b p + c,   a = sin^2/2tau,  b = delta - sin cos/tau,  c = -a,

so constant-energy curves have two explicit branches and paths between
poles reduce to one-dimensional quadratures.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import minimize_scalar

UPPER, LOWER = "upper", "lower"
LINEAR_LIMIT = 1e-14


class QuadratureDivergence(ArithmeticError):
    """The integrand for the traversal time blows up inside the interval."""


@dataclass(frozen=True)
class ZenoParams:
    delta: float
    tau: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def strength(self) -> float:
        """Dimensionless delta * tau."""
        return self.delta * self.tau


@dataclass(frozen=True)
class EnergyCurve:
    energy: float
    branch: str
    samples: np.ndarray  # (n, 2) columns theta, p_theta


@dataclass(frozen=True)
class FixedPoint:
    theta_s: float
    p_theta_s: float
    r_s: float
    residual: float = 0.0


def quad_coeffs(theta, params: ZenoParams):
    s, c = np.sin(theta), np.cos(theta)
    a = s * s / (2.0 * params.tau)
    return a, params.delta - s * c / params.tau, -a


def zeno_hamiltonian(theta, p, params: ZenoParams):
    a, b, c = quad_coeffs(theta, params)
    return (a * p + b) * p + c


def zeno_readout(theta, p):
    return np.cos(theta) - p * np.sin(theta)


def zeno_rhs(theta, p, params: ZenoParams):
    """(theta_dot, p_dot) along an extremal path."""
    r = zeno_readout(theta, p)
    s, c = np.sin(theta), np.cos(theta)
    return params.delta - s * r / params.tau, (p * c + s) * r / params.tau


def discriminant(theta, energy, params: ZenoParams):
    a, b, c = quad_coeffs(theta, params)
    return b * b - 4.0 * a * (c - energy)


def p_theta_of(theta, energy, branch: str, params: ZenoParams):
    """Momentum on the constant-energy curve H(theta, p) = energy.

    ``upper`` is the root with theta_dot = +sqrt(disc), ``lower`` the one with
    -sqrt(disc). Where a is negligible the finite root is the linear-limit
    value (energy - c)/b and the other branch is reported as +/-inf.
    """
    if branch not in (UPPER, LOWER):
        raise ValueError(f"branch must be {UPPER!r} or {LOWER!r}")
    a, b, c = quad_coeffs(theta, params)
    a, b, c = np.broadcast_arrays(*(np.asarray(v, float) for v in (a, b, c)))
    disc = b * b - 4.0 * a * (c - energy)
    if np.any(disc < 0):
        raise ValueError("no real branch: negative discriminant at some theta")
    root = np.sqrt(disc)
    sign = 1.0 if branch == UPPER else -1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        # conventional root where it does not cancel, product form where it does
        direct = (-b + sign * root) / (2.0 * a)
        product = 2.0 * (c - energy) / (-b - sign * root)
        cancels = sign * b > 0
        p = np.where(cancels, product, direct)
        small = a < LINEAR_LIMIT
        if np.any(small):
            finite = (b > 0) == (branch == UPPER)
            linear = np.where(finite, (energy - c) / b, sign * np.inf)
            p = np.where(small, linear, p)
    return p[()] if p.ndim == 0 else p


def energy_curve(energy: float, branch: str, params: ZenoParams, thetas) -> EnergyCurve:
    """Sample one branch of a constant-energy curve where it exists (disc >= 0)."""
    thetas = np.asarray(thetas, dtype=float)
    ok = discriminant(thetas, energy, params) >= 0
    th = thetas[ok]
    p = p_theta_of(th, energy, branch, params) if len(th) else np.empty(0)
    keep = np.isfinite(p)
    return EnergyCurve(energy, branch, np.column_stack([th[keep], p[keep]]))


def critical_energy(params: ZenoParams) -> float:
    return -params.delta**2 * params.tau / 2.0


def fixed_point(params: ZenoParams) -> FixedPoint:
    """Stationary point of the extremal flow, where measurement back-action cancels tunneling."""
    if not params.delta > 0:
        raise ValueError("fixed point needs delta > 0")
    g = params.strength
    theta = math.atan(g)
    p = -g
    r = math.sqrt(1.0 + g * g)
    td, pd = zeno_rhs(theta, p, params)
    return FixedPoint(theta, p, r, residual=max(abs(td), abs(pd)))


def crosses(energy: float, params: ZenoParams, n_grid: int = 20001, cutoff: float = 1e-6) -> bool:
    """True if a real branch connects theta = 0 to theta = pi at this energy.

    Scans the sign of the discriminant over (0, pi).
    """
    th = np.linspace(cutoff, math.pi - cutoff, n_grid)
    return bool(np.all(discriminant(th, energy, params) >= 0))


def instanton(theta, params: ZenoParams, mode: str = "exact"):
    """Zero-energy path momentum.

    ``exact`` is the upper root at E = 0; the two roots never meet there
    (disc = b^2 + 4a^2 > 0), so it is the branch that vanishes as
    theta -> 0+ and stays continuous. ``approx`` is the small delta*tau form:
    0 below theta = delta*tau and 2 (theta - delta*tau)/theta^2 above.
    """
    theta = np.asarray(theta, dtype=float)
    if mode == "exact":
        return p_theta_of(theta, 0.0, UPPER, params)
    if mode == "approx":
        g = params.strength
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(theta > g, 2.0 * (theta - g) / theta**2, 0.0)
        return out[()] if out.ndim == 0 else out
    raise ValueError(f"unknown mode {mode!r}")


def _breakpoints(lo, hi, energy, params):
    """Interior points where the integrand changes character (b = 0, fixed point)."""
    pts = []
    g = params.strength
    if abs(2 * g) <= 1:
        t1 = 0.5 * math.asin(2 * g)
        pts += [t1, math.pi / 2 - t1]
    if g > 0:
        pts.append(math.atan(g))
    return sorted(p for p in pts if lo < p < hi)


def _min_disc(lo, hi, energy, params, n_grid=4001):
    th = np.linspace(lo, hi, n_grid)
    d = discriminant(th, energy, params)
    k = int(np.argmin(d))
    a, b = th[max(k - 1, 0)], th[min(k + 1, n_grid - 1)]
    if b > a:
        res = minimize_scalar(lambda t: discriminant(t, energy, params), bounds=(a, b),
                              method="bounded", options={"xatol": 1e-14})
        return min(float(res.fun), float(d[k])), float(res.x)
    return float(d[k]), float(th[k])


def _integrate(f, lo, hi, pts, epsabs):
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, _ = quad(f, lo, hi, points=pts or None, limit=1000, epsabs=epsabs, epsrel=1e-11)
        except IntegrationWarning as exc:
            raise QuadratureDivergence(str(exc)) from exc
    return val


def traversal_time(theta_i: float, theta_f: float, energy: float, branch: str,
                   params: ZenoParams, epsabs: float = 1e-9) -> float:
    """Time to go from theta_i to theta_f along one branch: integral of d(theta)/theta_dot.

    On the upper branch theta_dot = +sqrt(disc), on the lower -sqrt(disc),
    so theta_f > theta_i needs the upper branch and vice versa.

    Raises
    ------
    ValueError
        If the branch does not exist on the interval or runs the wrong way.
    QuadratureDivergence
        If the discriminant vanishes inside the interval (a fixed point).
    """
    if theta_i == theta_f:
        return 0.0
    lo, hi = sorted((theta_i, theta_f))
    sign = 1.0 if branch == UPPER else -1.0
    if sign * (theta_f - theta_i) < 0:
        raise ValueError(f"the {branch} branch cannot carry theta from {theta_i} to {theta_f}")
    dmin, where = _min_disc(lo, hi, energy, params)
    # a discriminant within rounding of zero is a touch point, not a gap
    if dmin < -1e-13:
        raise ValueError(f"no real branch at theta = {where:.6g} for E = {energy}")
    if dmin <= 1e-13 and lo < where < hi:
        raise QuadratureDivergence(f"theta_dot vanishes at theta = {where:.6g}")
    pts = _breakpoints(lo, hi, energy, params)
    val = _integrate(lambda t: 1.0 / math.sqrt(discriminant(t, energy, params)),
                     lo, hi, pts, epsabs)
    return val


def path_action(theta_i: float, theta_f: float, energy: float, branch: str,
                params: ZenoParams, epsabs: float = 1e-9) -> float:
    """Action -integral(p d theta) + E T along one branch of a constant-energy curve."""
    if theta_i == theta_f:
        return 0.0
    elapsed = traversal_time(theta_i, theta_f, energy, branch, params, epsabs)
    lo, hi = sorted((theta_i, theta_f))
    pts = _breakpoints(lo, hi, energy, params)
    area = _integrate(lambda t: float(p_theta_of(t, energy, branch, params)), lo, hi, pts, epsabs)
    if theta_f < theta_i:
        area = -area
    return -area + energy * elapsed


def switching_rate(params: ZenoParams) -> dict:
    """Instanton estimate of the jump rate, gamma = omega_att exp(S_in) = delta^2 tau."""
    g = params.strength
    if abs(g) >= 1:
        warnings.warn("switching-rate estimate assumes delta*tau << 1", stacklevel=2)
    omega = 1.0 / params.tau
    s_in = 2.0 * math.log(abs(g))
    return {"gamma": params.delta**2 * params.tau, "omega_att": omega, "S_in": s_in,
            "gamma_from_parts": omega * math.exp(s_in)}


def to_bloch(theta, p_theta):
    """Embed (theta, p_theta) as Bloch coordinates and momenta.

    q = (0, sin, cos); p is tangent to the circle, p_theta (0, cos, -sin),
    which satisfies p_theta = p_y cos - p_z sin.
    """
    theta = np.asarray(theta, float)
    s, c = np.sin(theta), np.cos(theta)
    zero = np.zeros_like(s)
    q = np.stack([zero, s, c], axis=-1)
    p = np.stack([zero, p_theta * c, -p_theta * s], axis=-1)
    return q, p


def from_bloch(q, p):
    q, p = np.asarray(q, float), np.asarray(p, float)
    theta = np.arctan2(q[..., 1], q[..., 2])
    return theta, p[..., 1] * np.cos(theta) - p[..., 2] * np.sin(theta)
