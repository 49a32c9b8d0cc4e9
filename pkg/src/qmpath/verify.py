"""Cross-module consistency checks shared by ``qmpath verify`` and the test suite.

Each check returns a :class:`CheckResult`. ``run_checks("quick")`` skips the
Monte Carlo heavy checks (median-vs-MLP comparison and switching rate).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import quad
from scipy.special import ndtr

from . import mlp
from .core import (QubitParams, SimConfig, discrete_action_gradient_fd, readout_log_density,
                   stochastic_hamiltonian)
from .mcsim import jump_rate, median_path, sample_postselected, sample_readout
from .qnd import action_by_quadrature, qnd_action, qnd_path, qnd_readout, solve_qnd
from .zeno import (UPPER, ZenoParams, critical_energy, crosses, fixed_point, path_action,
                   traversal_time, zeno_hamiltonian)


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} ({self.seconds:.1f}s)"


def _timed(name, fn, *args, **kwargs) -> CheckResult:
    t0 = time.perf_counter()
    passed, details = fn(*args, **kwargs)
    return CheckResult(name, bool(passed), details, time.perf_counter() - t0)


# ---------------------------------------------------------------- scenarios

def postselection_scenarios() -> dict:
    """Boundary problems of the two postselection scenarios.

    The final states are put exactly on the Bloch sphere: (a) is the point
    with z = 0.7 that the zero-detuning path from (1, 0, 0) actually reaches,
    (b) is (0.9, 0, 0.5) normalized.
    """
    qi = np.array([1.0, 0.0, 0.0])
    pa = QubitParams(epsilon=0.5, delta=0.0, tau=1.0)
    qa = qnd_path(qi, qnd_readout(0.0, 0.7, 0.6, 1.0), pa.epsilon, pa.tau, 0.6)
    qb = np.array([0.9, 0.0, 0.5]) / math.hypot(0.9, 0.5)
    base = dict(q_initial=qi, horizon=0.6, dt=0.01, lam=0.02)
    return {"a": dict(base, params=pa, q_final=qa),
            "b": dict(base, params=QubitParams(epsilon=0.0, delta=-0.5, tau=1.0), q_final=qb)}


def random_qnd_problems(n: int, seed: int = 12345):
    """Pure-state QND boundary problems with |z| <= 0.9 at both ends."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        eps = rng.uniform(-1, 1)
        tau = rng.uniform(0.5, 2.0)
        horizon = rng.uniform(0.2, 1.0) * tau
        zi, zf = rng.uniform(-0.9, 0.9, 2)
        phi = rng.uniform(0, 2 * np.pi)
        w = math.sqrt(1 - zi * zi)
        qi = np.array([w * math.cos(phi), w * math.sin(phi), zi])
        params = QubitParams(eps, 0.0, tau)
        rb = float(qnd_readout(zi, zf, horizon, tau))
        out.append(dict(q_initial=qi, q_final=qnd_path(qi, rb, eps, tau, horizon),
                        horizon=horizon, params=params, r_bar=rb))
    return out


def random_reachable_problems(n: int, seed: int = 2024):
    """Boundary problems with tunneling whose q_F is reached from a known p0."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        params = QubitParams(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2.0))
        v = rng.normal(size=3)
        qi = v / np.linalg.norm(v)
        horizon = rng.uniform(0.3, 1.0) * params.tau
        p0 = rng.uniform(-1, 1, 3)
        try:
            path = mlp.integrate_path(qi, p0, horizon, 1e-3, params)
        except FloatingPointError:
            continue
        out.append(dict(q_initial=qi, q_final=path.q[-1], horizon=horizon, params=params))
    return out


# ---------------------------------------------------------------- checks

def _qnd_oracle(n_problems=50, seed=12345, dt=2.5e-4, tol=1e-10):
    worst_q = worst_r = 0.0
    failures = 0
    for prob in random_qnd_problems(n_problems, seed):
        try:
            path = mlp.shoot(prob["q_initial"], prob["q_final"], prob["horizon"], prob["params"],
                             dt=dt, tol=tol)
        except mlp.ShootingError:
            failures += 1
            continue
        p = prob["params"]
        exact = qnd_path(prob["q_initial"], prob["r_bar"], p.epsilon, p.tau, path.times)
        worst_q = max(worst_q, float(np.abs(path.q - exact).max()))
        worst_r = max(worst_r, float(np.abs(path.readouts - prob["r_bar"]).max()))
    ok = failures == 0 and worst_q <= 1e-6 and worst_r <= 1e-8
    return ok, {"n": n_problems, "failures": failures, "max_q_dev": worst_q, "max_r_dev": worst_r}


def _energy(n_random=4, dt=1e-3, coarse=0.02):
    paths = []
    for sc in postselection_scenarios().values():
        paths.append((sc, mlp.shoot(sc["q_initial"], sc["q_final"], sc["horizon"], sc["params"],
                                    dt=dt)))
    for prob in random_qnd_problems(2, seed=7) + random_reachable_problems(n_random):
        try:
            paths.append((prob, mlp.shoot(prob["q_initial"], prob["q_final"], prob["horizon"],
                                          prob["params"], dt=dt)))
        except mlp.ShootingError:
            continue
    drifts, orders = [], []
    for prob, path in paths:
        ham = path.hamiltonian
        drifts.append(float(np.abs(ham - ham[0]).max()))
        d = []
        for h in (coarse, coarse / 2):
            ham_h = mlp.integrate_path(prob["q_initial"], path.p0, prob["horizon"], h,
                                       prob["params"]).hamiltonian
            d.append(float(np.abs(ham_h - ham_h[0]).max()))
        orders.append(math.log2(d[0] / d[1]))
    ok = len(paths) >= 4 and max(drifts) <= 1e-6 and min(orders) >= 3.8
    return ok, {"n_paths": len(paths), "max_drift": max(drifts), "min_order": min(orders),
                "orders": orders}


def _qnd_action_identity(z_initial=0.2, z_final=-0.5, horizon=0.8, epsilon=0.3, tau=1.0):
    params = QubitParams(epsilon, 0.0, tau)
    w = math.sqrt(1 - z_initial**2)
    qi = np.array([w, 0.0, z_initial])
    closed = float(qnd_action(z_initial, z_final, horizon, tau))
    grid = np.linspace(-1.0, 1.0, 5)
    worst = 0.0
    for pxi in grid:
        for pyi in grid:
            sol = solve_qnd(qi, z_final, horizon, params, pxi, pyi)
            worst = max(worst, abs(action_by_quadrature(sol) - closed))
    return worst <= 1e-8, {"closed_form": closed, "max_dev": worst}


def _zeno_closed_forms(strength=0.2):
    params = ZenoParams(delta=strength, tau=1.0)
    fp = fixed_point(params)
    expect = (math.atan(strength), -strength, math.sqrt(1 + strength**2))
    dev_fp = max(abs(a - b) for a, b in zip((fp.theta_s, fp.p_theta_s, fp.r_s), expect))
    ec = critical_energy(params)
    dev_e = abs(zeno_hamiltonian(fp.theta_s, fp.p_theta_s, params) - ec)
    flip = crosses(ec + 1e-3, params) and not crosses(ec - 1e-3, params)
    ok = dev_fp <= 1e-12 and dev_e <= 1e-12 and abs(ec + strength**2 / 2) <= 1e-15 and flip
    return ok, {"fixed_point": [fp.theta_s, fp.p_theta_s, fp.r_s], "dev_fixed_point": dev_fp,
                "E_c": ec, "dev_energy": float(dev_e), "crossing_flip": flip}


def instanton_ratios(strength, cutoff=1e-3):
    params = ZenoParams(delta=strength, tau=1.0)
    lo, hi = cutoff, math.pi - cutoff
    s = path_action(lo, hi, 0.0, UPPER, params)
    t = traversal_time(lo, hi, 0.0, UPPER, params)
    return s / (2 * math.log(strength)), t / (4 * math.log(1 / strength))


def _instanton():
    ratios = {g: instanton_ratios(g) for g in (0.1, 0.03, 0.01)}
    s = [ratios[g][0] for g in (0.1, 0.03, 0.01)]
    s001, t001 = ratios[0.01]
    monotone = abs(s[0] - 1) > abs(s[1] - 1) > abs(s[2] - 1)
    ok = 0.7 <= s001 <= 1.3 and 0.7 <= t001 <= 1.3 and monotone
    return ok, {"action_ratio": {str(g): r[0] for g, r in ratios.items()},
                "time_ratio": {str(g): r[1] for g, r in ratios.items()}, "monotone": monotone}


def mixture_moments(z, dt, tau):
    """Mean, variance and fourth central moment of the one-bin readout mixture."""
    s2 = tau / dt
    mean = z
    var = s2 + 1 - z * z
    m4 = 0.0
    for m, w in ((1.0, (1 + z) / 2), (-1.0, (1 - z) / 2)):
        d = m - mean
        m4 += w * (d**4 + 6 * d * d * s2 + 3 * s2 * s2)
    return mean, var, m4


def mixture_cdf(r, z, dt, tau):
    s = math.sqrt(tau / dt)
    return (1 + z) / 2 * ndtr((r - 1) / s) + (1 - z) / 2 * ndtr((r + 1) / s)


def _distributions(n_moments=1_000_000, n_ks=100_000):
    cases = [(0.3, 1.0, 1.0), (-0.8, 0.5, 1.0), (0.0, 0.01, 1.0), (0.95, 0.2, 2.0)]
    norm_dev = max_sigma = max_ks = 0.0
    for k, (z, dt, tau) in enumerate(cases):
        q = np.array([0.0, 0.0, z])
        s = math.sqrt(tau / dt)
        dens = lambda r: math.exp(readout_log_density(r, q, dt, tau))  # noqa: E731
        # split at the peaks so quad sees both components
        edges = (-np.inf, -1 - 10 * s, 1 + 10 * s, np.inf)
        total = sum(quad(dens, a, b, epsabs=1e-14, epsrel=1e-13)[0]
                    for a, b in zip(edges[:-1], edges[1:]))
        norm_dev = max(norm_dev, abs(total - 1))
        rng = np.random.default_rng(1000 + k)
        r = sample_readout(q, dt, tau, rng, size=n_moments)
        mean, var, m4 = mixture_moments(z, dt, tau)
        se_mean = math.sqrt(var / n_moments)
        se_var = math.sqrt((m4 - var * var) / n_moments)
        max_sigma = max(max_sigma, abs(r.mean() - mean) / se_mean,
                        abs(r.var() - var) / se_var)
        r_ks = sample_readout(q, dt, tau, np.random.default_rng(2000 + k), size=n_ks)
        ks = stats.kstest(r_ks, lambda x: mixture_cdf(x, z, dt, tau)).statistic
        max_ks = max(max_ks, float(ks))
    ok = norm_dev <= 1e-8 and max_sigma <= 3 and max_ks < 0.005
    return ok, {"normalization_dev": norm_dev, "max_sigma": max_sigma, "max_ks": max_ks,
                "n_moments": n_moments, "n_ks": n_ks}


def stationarity_gradients(steps=(1e-2, 1e-3, 1e-4)):
    """Max |gradient| of the discrete action at the sampled most-likely path, per step size."""
    sc = postselection_scenarios()["b"]
    path = mlp.shoot(sc["q_initial"], sc["q_final"], sc["horizon"], sc["params"])
    out = []
    for dt in steps:
        fine = mlp.integrate_path(sc["q_initial"], path.p0, sc["horizon"], dt, sc["params"])
        g = discrete_action_gradient_fd(fine.q, fine.readouts[:-1], fine.p[:-1], dt,
                                        sc["params"])
        out.append(max(float(np.abs(v).max()) for v in g.values()))
    return np.array(steps), np.array(out)


def _stationarity():
    steps, grads = stationarity_gradients()
    order = float(np.polyfit(np.log(steps), np.log(grads), 1)[0])
    return order >= 0.9, {"steps": steps.tolist(), "max_gradient": grads.tolist(),
                          "order": order}


def _random_phase_points(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    q = v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(0.3, 1.0, (n, 1))
    return q, rng.normal(size=(n, 3))


def _constraint_residual(n=200, seed=3, h=1e-6):
    """dH/dr must vanish at the optimal readout, and the compiled integrator must agree.

    dH/dr is taken by finite differences of H, so an error in the readout
    formula shows up here. One RK4 step of the compiled kernel is compared
    with the same step built from the array right-hand side.
    """
    params = QubitParams(0.4, -0.7, 1.3)
    q, p = _random_phase_points(n, seed)
    s = np.concatenate([q, p], axis=1)
    r = mlp.optimal_readout(s)
    dhdr = (stochastic_hamiltonian(q, p, r + h, params)
            - stochastic_hamiltonian(q, p, r - h, params)) / (2 * h)
    worst = float(np.abs(dhdr).max())
    dt = 1e-2
    k1 = mlp.ode_rhs(s, params)
    k2 = mlp.ode_rhs(s + dt / 2 * k1, params)
    k3 = mlp.ode_rhs(s + dt / 2 * k2, params)
    k4 = mlp.ode_rhs(s + dt * k3, params)
    step = s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    compiled, _ = mlp._rk4(s, 1, dt, params)
    kernel_dev = float(np.abs(compiled - step).max())
    return worst <= 1e-6 and kernel_dev <= 1e-12, {"max_dH_dr": worst, "kernel_dev": kernel_dev}


def _canonical(n=10_000, seed=4, h=1e-6):
    """qdot = dH/dp and pdot = -dH/dq at fixed readout, checked by central differences."""
    params = QubitParams(0.4, -0.7, 1.3)
    q, p = _random_phase_points(n, seed)
    r = mlp.optimal_readout(np.concatenate([q, p], axis=1))
    rhs = mlp.ode_rhs(np.concatenate([q, p], axis=1), params)
    worst = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        dhdp = (stochastic_hamiltonian(q, p + e, r, params)
                - stochastic_hamiltonian(q, p - e, r, params)) / (2 * h)
        dhdq = (stochastic_hamiltonian(q + e, p, r, params)
                - stochastic_hamiltonian(q - e, p, r, params)) / (2 * h)
        worst = max(worst, float(np.abs(rhs[:, i] - dhdp).max()),
                    float(np.abs(rhs[:, 3 + i] + dhdq).max()))
    return worst <= 1e-6, {"n": n, "max_dev": worst}


def median_statistics(scenario, n_select=10_000, seed=7, max_raw=10_000_000, threads=1):
    """Median-versus-most-likely-path comparison for one postselection scenario."""
    sc = postselection_scenarios()[scenario]
    config = SimConfig(dt=sc["dt"], horizon=sc["horizon"], n_traj=1, lam=sc["lam"], seed=seed)
    ens = sample_postselected(sc["q_initial"], sc["q_final"], config, sc["params"],
                              n_select=n_select, max_raw=max_raw, threads=threads)
    details = {"n_selected": len(ens), "n_raw": ens.n_raw}
    if len(ens) < n_select:
        return dict(details, rms=[np.inf] * 3, inside_fraction=0.0, inside_per_coord=[0.0] * 3)
    mp = median_path(ens)
    path = mlp.shoot(sc["q_initial"], sc["q_final"], sc["horizon"], sc["params"], dt=1e-3)
    idx = np.rint(mp.times / path.times[1]).astype(int)
    q = path.q[idx]
    rms = np.sqrt(np.mean((mp.median - q) ** 2, axis=0))
    inside = (q >= mp.p40) & (q <= mp.p60)
    return dict(details, rms=rms.tolist(), inside_fraction=float(np.all(inside, axis=1).mean()),
                inside_per_coord=inside.mean(axis=0).tolist())


def _median_vs_mlp(scenario, **kwargs):
    d = median_statistics(scenario, **kwargs)
    ok = max(d["rms"]) <= 0.05 and d["inside_fraction"] >= 0.9
    return ok, d


def _switching(strength=0.2, total_time=5000.0, seed=0):
    params = QubitParams(0.0, strength, 1.0)
    res = jump_rate(params, total_time, seed=seed)
    gamma = strength**2
    ratio = res["gamma_empirical"] / gamma
    return 0.5 <= ratio <= 2.0, dict(res, gamma_formula=gamma, ratio=ratio)


QUICK = [
    ("qnd_vs_shooting", _qnd_oracle, {"n_problems": 10}),
    ("energy_conservation", _energy, {}),
    ("qnd_action_identity", _qnd_action_identity, {}),
    ("zeno_closed_forms", _zeno_closed_forms, {}),
    ("instanton_asymptotics", _instanton, {}),
    ("readout_distribution", _distributions, {"n_moments": 200_000, "n_ks": 100_000}),
    ("discrete_action_stationarity", _stationarity, {}),
    ("constraint_residual", _constraint_residual, {}),
    ("canonical_structure", _canonical, {}),
]

FULL = [
    ("qnd_vs_shooting", _qnd_oracle, {}),
    ("energy_conservation", _energy, {}),
    ("qnd_action_identity", _qnd_action_identity, {}),
    ("zeno_closed_forms", _zeno_closed_forms, {}),
    ("instanton_asymptotics", _instanton, {}),
    ("readout_distribution", _distributions, {}),
    ("discrete_action_stationarity", _stationarity, {}),
    ("constraint_residual", _constraint_residual, {}),
    ("canonical_structure", _canonical, {}),
    ("median_vs_mlp_a", _median_vs_mlp, {"scenario": "a"}),
    ("median_vs_mlp_b", _median_vs_mlp, {"scenario": "b"}),
    ("switching_rate", _switching, {}),
]


def run_checks(level: str = "quick", threads: int = 1, progress=None) -> list[CheckResult]:
    if level not in ("quick", "full"):
        raise ValueError(f"level must be 'quick' or 'full', got {level!r}")
    results = []
    for name, fn, kwargs in (QUICK if level == "quick" else FULL):
        if fn is _median_vs_mlp:
            kwargs = dict(kwargs, threads=threads)
        try:
            res = _timed(name, fn, **kwargs)
        except Exception as exc:  # a crashing check is a failed check
            res = CheckResult(name, False, {"error": f"{type(exc).__name__}: {exc}"})
        results.append(res)
        if progress is not None:
            progress(res)
    return results
