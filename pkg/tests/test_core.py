import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from qmpath import mlp, zeno
from qmpath.core import (QubitParams, SimConfig, bloch, discrete_action,
                         discrete_action_gradient_fd, drift, functional_f, is_pure,
                         readout_log_density, stochastic_hamiltonian)

finite = st.floats(-5, 5, allow_nan=False)


def random_pure(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestParams:
    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            QubitParams(tau=0.0)
        with pytest.raises(ValueError):
            QubitParams(tau=-1.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            QubitParams(epsilon=np.inf)
        with pytest.raises(ValueError):
            QubitParams(delta=np.nan)

    def test_negative_delta_allowed(self):
        assert QubitParams(delta=-0.5).delta == -0.5

    def test_scaled(self):
        p = QubitParams(0.5, -0.25, 2.0).scaled()
        assert (p.epsilon, p.delta, p.tau) == (1.0, -0.5, 1.0)

    def test_simconfig_validation(self):
        with pytest.raises(ValueError):
            SimConfig(dt=1.0, horizon=0.5, n_traj=1)
        with pytest.raises(ValueError):
            SimConfig(dt=0.01, horizon=1.0, n_traj=0)
        with pytest.raises(ValueError):
            SimConfig(dt=0.01, horizon=1.0, n_traj=1, lam=0.0)
        assert SimConfig(dt=0.01, horizon=0.6, n_traj=1).n_steps == 60

    def test_coarse_step_warns(self):
        with pytest.warns(UserWarning):
            SimConfig(dt=0.5, horizon=1.0, n_traj=1).check_resolution(1.0)


class TestBloch:
    def test_outside_ball_rejected(self):
        with pytest.raises(ValueError):
            bloch([0.0, 0.0, 1.0 + 1e-6])

    def test_slack(self):
        bloch([0.0, 0.0, 1.0 + 1e-10])
        with pytest.raises(ValueError):
            bloch([0.0, 0.0, 1.0 + 1e-10], slack=1e-12)

    def test_is_pure(self):
        assert is_pure(np.array([0.6, 0.0, 0.8]))
        assert not is_pure(np.array([0.5, 0.0, 0.0]))


class TestDrift:
    def test_eigenstate_fixed_point(self):
        assert_allclose(drift([0, 0, 1], 5.0, QubitParams()), [0, 0, 0])

    def test_detuning(self):
        assert_allclose(drift([1, 0, 0], 0.0, QubitParams(epsilon=0.5)), [0, 0.5, 0])

    def test_tunneling(self):
        assert_allclose(drift([0, 1, 0], 0.0, QubitParams(delta=-0.5)), [0, 0, 0.5])

    def test_tangent_to_sphere(self):
        rng = np.random.default_rng(0)
        n = 100_000
        q = random_pure(rng, n)
        r = rng.normal(0, 3, n)
        eps, dlt, tau = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.2, 3)
        dot = np.einsum("ij,ij->i", q, drift(q, r, QubitParams(eps, dlt, tau)))
        assert np.abs(dot).max() < 1e-12


class TestFunctional:
    @pytest.mark.parametrize("z, r, expected", [(1, 1, 0.0), (0, 0, -0.5), (-1, -1, 0.0)])
    def test_values(self, z, r, expected):
        assert functional_f([0, 0, z], r, 1.0) == pytest.approx(expected, abs=1e-15)

    def test_tau_scaling(self):
        assert functional_f([0, 0, 0], 0.0, 4.0) == pytest.approx(-1 / 8)


class TestHamiltonian:
    def test_zero_momentum_eigenstate(self):
        assert stochastic_hamiltonian([0, 0, 1], [0, 0, 0], 1.0, QubitParams()) == 0.0

    def test_origin(self):
        assert stochastic_hamiltonian([0, 0, 0], [0, 0, 0], 0.0, QubitParams(tau=2.0)) == -0.25

    def test_identity_random(self):
        rng = np.random.default_rng(1)
        n = 100_000
        q = random_pure(rng, n) * rng.uniform(0, 1, (n, 1))
        p = rng.normal(0, 3, (n, 3))
        r = rng.normal(0, 3, n)
        params = QubitParams(0.3, -0.8, 1.7)
        expected = np.einsum("ij,ij->i", p, drift(q, r, params)) + functional_f(q, r, params.tau)
        assert_allclose(stochastic_hamiltonian(q, p, r, params), expected, rtol=0, atol=1e-13)

    def test_explicit_formula(self):
        x, y, z, px, py, pz, r = 0.1, -0.4, 0.6, 1.3, -0.7, 2.1, 0.9
        e, d, t = 0.5, -0.3, 1.2
        expected = (px * (-e * y - x * z * r / t) + py * (e * x + d * z - y * z * r / t)
                    + pz * (-d * y + (1 - z * z) * r / t) - (r * r - 2 * r * z + 1) / (2 * t))
        got = stochastic_hamiltonian([x, y, z], [px, py, pz], r, QubitParams(e, d, t))
        assert got == pytest.approx(expected, rel=1e-14)

    def test_zeno_fixed_point_energy(self):
        zp = zeno.ZenoParams(delta=0.2, tau=1.0)
        fp = zeno.fixed_point(zp)
        q, p = zeno.to_bloch(fp.theta_s, fp.p_theta_s)
        r = mlp.optimal_readout(np.concatenate([q, p]))
        assert r == pytest.approx(fp.r_s, abs=1e-14)
        h = stochastic_hamiltonian(q, p, r, QubitParams(0.0, 0.2, 1.0))
        assert h == pytest.approx(-0.02, abs=1e-14)


class TestReadoutDensity:
    @pytest.mark.parametrize("z", [-1.0, -0.5, 0.0, 0.5, 1.0])
    @pytest.mark.parametrize("dt", [0.01, 1.0])
    def test_normalization_and_mean(self, z, dt):
        tau = 1.0
        q = np.array([0.0, 0.0, z])
        s = math.sqrt(tau / dt)
        dens = lambda r: math.exp(readout_log_density(r, q, dt, tau))  # noqa: E731
        edges = [-40 * s, -1 - 5 * s, 1 + 5 * s, 40 * s]
        total = sum(quad(dens, a, b, epsabs=1e-13, epsrel=1e-13)[0]
                    for a, b in zip(edges[:-1], edges[1:]))
        mean = sum(quad(lambda r: r * dens(r), a, b, epsabs=1e-12, epsrel=1e-13)[0]
                   for a, b in zip(edges[:-1], edges[1:]))
        assert abs(total - 1) <= 1e-8
        assert mean == pytest.approx(z, abs=1e-8)

    def test_eigenstate_is_single_gaussian(self):
        from scipy.stats import norm
        r = np.linspace(-3, 5, 9)
        dt, tau = 0.25, 1.0
        got = readout_log_density(r, [0, 0, 1], dt, tau)
        assert_allclose(got, norm.logpdf(r, loc=1, scale=math.sqrt(tau / dt)), rtol=1e-13)

    def test_variance_example(self):
        dt, tau = 0.01, 1.0
        dens = lambda r: r * r * math.exp(readout_log_density(r, [0, 0, 0], dt, tau))  # noqa
        var = sum(quad(dens, a, b, epsabs=1e-10)[0] for a, b in ((-400, -1), (-1, 1), (1, 400)))
        assert var == pytest.approx(101.0, rel=1e-10)

    def test_underflow_gives_minus_inf(self):
        with np.errstate(all="raise"):
            v = readout_log_density(1e200, [0, 0, -1.0], 1.0, 1.0)
        assert v == -np.inf


def _euler_path(params, n, dt, seed):
    rng = np.random.default_rng(seed)
    q = [np.array([0.6, 0.0, 0.8])]
    r = rng.normal(0.5, 1.0, n)
    for k in range(n):
        q.append(q[-1] + dt * drift(q[-1], r[k], params))
    return np.array(q), r


class TestDiscreteAction:
    params = QubitParams(0.4, -0.3, 1.0)

    def test_zero_momenta(self):
        dt = 0.01
        rng = np.random.default_rng(2)
        states = rng.uniform(-0.5, 0.5, (11, 3))
        r = rng.normal(size=10)
        expected = np.sum(dt * functional_f(states[:-1], r, 1.0))
        got = discrete_action(states, r, np.zeros((10, 3)), dt, self.params)
        assert got == pytest.approx(expected, rel=1e-14)

    def test_constraint_satisfied_ignores_momenta(self):
        dt = 0.01
        states, r = _euler_path(self.params, 20, dt, 3)
        rng = np.random.default_rng(4)
        a = discrete_action(states, r, rng.normal(size=(20, 3)), dt, self.params)
        b = discrete_action(states, r, rng.normal(size=(20, 3)) * 50, dt, self.params)
        assert a == pytest.approx(b, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            discrete_action(np.zeros((5, 3)), np.zeros(4), np.zeros((3, 3)), 0.1, self.params)
        with pytest.raises(ValueError):
            discrete_action(np.zeros((5, 3)), np.zeros(3), np.zeros((3, 3)), 0.1, self.params)

    def test_gradient_matches_full_difference(self):
        dt = 0.05
        rng = np.random.default_rng(5)
        states = rng.uniform(-0.5, 0.5, (6, 3))
        r = rng.normal(size=5)
        p = rng.normal(size=(5, 3))
        g = discrete_action_gradient_fd(states, r, p, dt, self.params)
        h = 1e-6
        s2 = states.copy()
        s2[2, 1] += h
        s3 = states.copy()
        s3[2, 1] -= h
        full = (discrete_action(s2, r, p, dt, self.params)
                - discrete_action(s3, r, p, dt, self.params)) / (2 * h)
        assert g["q"][1, 1] == pytest.approx(full, rel=1e-6)
        r2 = r.copy()
        r2[3] += h
        r3 = r.copy()
        r3[3] -= h
        full_r = (discrete_action(states, r2, p, dt, self.params)
                  - discrete_action(states, r3, p, dt, self.params)) / (2 * h)
        assert g["r"][3] == pytest.approx(full_r, rel=1e-6)
        assert g["q"].shape == (4, 3) and g["p"].shape == (5, 3) and g["r"].shape == (5,)

    def test_stationary_at_most_likely_path(self):
        from qmpath.verify import stationarity_gradients
        steps, grads = stationarity_gradients()
        order = np.polyfit(np.log(steps), np.log(grads), 1)[0]
        assert order >= 1.0

    def test_converges_to_continuum_action(self):
        from qmpath.verify import postselection_scenarios
        sc = postselection_scenarios()["b"]
        path = mlp.shoot(sc["q_initial"], sc["q_final"], sc["horizon"], sc["params"])
        errs = []
        steps = (0.02, 0.01, 0.005)
        for dt in steps:
            f = mlp.integrate_path(sc["q_initial"], path.p0, sc["horizon"], dt, sc["params"])
            d = discrete_action(f.q, f.readouts[:-1], f.p[:-1], dt, sc["params"])
            errs.append(abs(d - path.action))
        order = np.polyfit(np.log(steps), np.log(errs), 1)[0]
        assert order >= 0.9


@settings(max_examples=200, deadline=None)
@given(x=finite, y=finite, z=finite, px=finite, py=finite, pz=finite, r=finite,
       e=finite, d=finite, t=st.floats(0.1, 5))
def test_hamiltonian_is_p_dot_drift_plus_f(x, y, z, px, py, pz, r, e, d, t):
    params = QubitParams(e, d, t)
    q, p = np.array([x, y, z]), np.array([px, py, pz])
    h = stochastic_hamiltonian(q, p, r, params)
    ref = float(p @ drift(q, r, params) + functional_f(q, r, t))
    assert h == pytest.approx(ref, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi), r=finite, e=finite,
       d=finite, t=st.floats(0.1, 5))
def test_drift_keeps_pure_states_on_sphere(theta, phi, r, e, d, t):
    q = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                  math.cos(theta)])
    assert abs(q @ drift(q, r, QubitParams(e, d, t))) < 1e-12
