import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from qmpath.core import QubitParams, SimConfig, drift
from qmpath.mcsim import (Ensemble, count_jumps, median_path, postselect, sample_postselected,
                          sample_readout, simulate_ensemble, simulate_trajectory,
                          update_state_exact)
from qmpath.verify import mixture_cdf

ROTATION = QubitParams(epsilon=0.5, delta=0.0, tau=1.0)


def pure(theta, phi):
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                     math.cos(theta)])


class TestSampleReadout:
    def test_eigenstate_single_gaussian(self):
        r = sample_readout([0, 0, 1], 0.25, 1.0, np.random.default_rng(0), size=100_000)
        assert stats.kstest(r, stats.norm(1.0, 2.0).cdf).statistic < 0.005

    def test_mixture_moments(self):
        n = 1_000_000
        r = sample_readout([0, 0, 0], 0.01, 1.0, np.random.default_rng(1), size=n)
        assert abs(r.mean()) < 3 * math.sqrt(101 / n)
        assert r.var() == pytest.approx(101.0, rel=0.01)

    def test_ks_against_density(self):
        r = sample_readout([0, 0, 0.5], 1.0, 1.0, np.random.default_rng(2), size=100_000)
        ks = stats.kstest(r, lambda x: mixture_cdf(x, 0.5, 1.0, 1.0)).statistic
        assert ks < 0.005

    def test_state_batch(self):
        q = np.array([[0, 0, 1.0], [0, 0, -1.0]])
        r = sample_readout(q, 1e4, 1.0, np.random.default_rng(3))
        assert r.shape == (2,)
        assert_allclose(r, [1, -1], atol=0.1)


class TestUpdate:
    def test_eigenstate_fixed(self):
        for r in (-3.0, 0.0, 7.0):
            assert_allclose(update_state_exact([0, 0, 1], r, 0.3, QubitParams()), [0, 0, 1])

    def test_maximally_mixed(self):
        r, dt = 1.7, 0.2
        assert_allclose(update_state_exact([0, 0, 0], r, dt, QubitParams()),
                        [0, 0, math.tanh(r * dt)], atol=1e-15)

    def test_against_matrix_computation(self):
        from scipy.linalg import expm
        rng = np.random.default_rng(4)
        sx = np.array([[0, 1], [1, 0]], complex)
        sy = np.array([[0, -1j], [1j, 0]])
        sz = np.diag([1.0, -1.0]).astype(complex)
        for _ in range(20):
            eps, dlt, tau = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2)
            dt, r = rng.uniform(0.01, 0.3), rng.normal(0, 3)
            q = rng.normal(size=3)
            q *= rng.uniform(0, 1) / np.linalg.norm(q)
            rho = 0.5 * (np.eye(2) + q[0] * sx + q[1] * sy + q[2] * sz)
            m = np.diag([np.exp(-dt * (r - 1) ** 2 / (4 * tau)),
                         np.exp(-dt * (r + 1) ** 2 / (4 * tau))])
            # generator consistent with the drift: rotation about (-delta, 0, epsilon)
            u = expm(-1j * dt * (eps / 2 * sz - dlt / 2 * sx))
            new = u @ m @ rho @ m.conj().T @ u.conj().T
            new /= np.trace(new)
            ref = np.real([np.trace(new @ s) for s in (sx, sy, sz)])
            got = update_state_exact(q, r, dt, QubitParams(eps, dlt, tau))
            assert_allclose(got, ref, atol=1e-12)

    def test_euler_consistency_order(self):
        rng = np.random.default_rng(5)
        n = 200
        q = rng.normal(size=(n, 3))
        q *= rng.uniform(0, 1, (n, 1)) / np.linalg.norm(q, axis=1, keepdims=True)
        r = rng.normal(0, 2, n)
        params = QubitParams(0.7, -0.4, 1.3)
        steps = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
        err = [np.abs(update_state_exact(q, r, h, params) - (q + h * drift(q, r, params))).max()
               for h in steps]
        assert np.polyfit(np.log(steps), np.log(err), 1)[0] >= 2.0 - 0.05

    def test_vanishing_trace_raises(self):
        with pytest.raises(FloatingPointError):
            update_state_exact([0, 0, -1.0], 1e6, 1.0, QubitParams())


@settings(max_examples=300, deadline=None)
@given(theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi), r=st.floats(-20, 20),
       dt=st.floats(1e-4, 0.1), e=st.floats(-3, 3), d=st.floats(-3, 3))
def test_update_preserves_purity(theta, phi, r, dt, e, d):
    q = update_state_exact(pure(theta, phi), r, dt, QubitParams(e, d, 1.0))
    assert abs(np.linalg.norm(q) - 1) < 1e-12


@settings(max_examples=300, deadline=None)
@given(theta=st.floats(0, math.pi), r=st.floats(-20, 20), dt=st.floats(0.1, 1.0))
def test_strong_bins_amplify_rounding_by_inverse_trace_squared(theta, r, dt):
    # 1 - |q|^2 is multiplied by 1/N^2, N = cosh g + z sinh g, so the
    # ~1e-16 rounding of a pure input grows by that factor and no more
    q0 = pure(theta, 0.0)
    g = r * dt
    n = math.cosh(g) + float(q0[2]) * math.sinh(g)
    assume(n > 1e-6)
    q = update_state_exact(q0, r, dt, QubitParams())
    assert abs(np.linalg.norm(q) - 1) <= 1e-15 * max(1.0, 1 / n**2)


class TestEnsemble:
    cfg = SimConfig(dt=0.01, horizon=0.6, n_traj=300, lam=0.02, seed=11)

    def test_deterministic_and_thread_independent(self):
        a = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        b = simulate_ensemble([1, 0, 0], self.cfg, ROTATION, threads=4, batch_size=37)
        assert_array_equal(a.states, b.states)
        assert_array_equal(a.readouts, b.readouts)
        assert_array_equal(a.final_states, b.final_states)

    def test_single_trajectory_matches_ensemble_member(self):
        ens = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        one = simulate_trajectory([1, 0, 0], self.cfg, ROTATION, traj_index=123)
        assert_array_equal(one.states, ens.states[123])
        assert_array_equal(one.readouts, ens.readouts[123])
        assert one.index == 123

    def test_replay_and_purity(self):
        ens = simulate_ensemble(pure(1.0, 0.3), self.cfg, QubitParams(0.2, -0.5, 1.0))
        st_, rd = ens.states, ens.readouts
        for k in range(rd.shape[1]):
            nxt = update_state_exact(st_[:, k], rd[:, k], self.cfg.dt, ens.params)
            assert_array_equal(nxt, st_[:, k + 1])
        assert np.abs(np.linalg.norm(st_, axis=-1) - 1).max() <= 1e-9

    def test_times_grid(self):
        ens = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        assert_allclose(np.diff(ens.times), 0.01)
        assert ens.states.shape == (300, 61, 3) and ens.readouts.shape == (300, 60)
        assert_allclose(ens.states[:, 0], np.broadcast_to([1, 0, 0], (300, 3)))

    def test_thinning_keeps_exact_final_state(self):
        full = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        thin = simulate_ensemble([1, 0, 0], self.cfg, ROTATION, thin=7)
        assert_array_equal(thin.stored_steps, [0, 7, 14, 21, 28, 35, 42, 49, 56, 60])
        assert_array_equal(thin.states, full.states[:, thin.stored_steps])
        assert_array_equal(thin.final_states, full.states[:, -1])

    def test_eigenstate_is_constant(self):
        ens = simulate_ensemble([0, 0, 1], self.cfg, QubitParams())
        assert np.all(ens.states == np.array([0, 0, 1.0]))

    def test_qnd_unbiased(self):
        cfg = SimConfig(dt=0.01, horizon=0.5, n_traj=100_000, seed=3)
        ens = simulate_ensemble([0, 0, 0.2], cfg, QubitParams(), thin=10)
        z = ens.states[..., 2]
        se = z.std(axis=0)[1:] / math.sqrt(cfg.n_traj)
        assert np.all(np.abs(z.mean(axis=0)[1:] - 0.2) <= 4 * se)
        assert abs(z[:, -1].mean() - 0.2) <= 3 * se[-1]


class TestPostselection:
    cfg = SimConfig(dt=0.01, horizon=0.6, n_traj=2000, lam=0.02, seed=5)

    def test_everything_within_large_ball(self):
        ens = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        assert len(postselect(ens, [0, 0, 0], 2.0)) == len(ens)

    def test_monotone_in_lambda(self):
        ens = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        counts = [len(postselect(ens, [0.68, 0.21, 0.7], lam)) for lam in (0.8, 0.4, 0.2, 0.1)]
        assert counts == sorted(counts, reverse=True)

    def test_order_preserved(self):
        ens = simulate_ensemble([1, 0, 0], self.cfg, ROTATION)
        sel = postselect(ens, [0.68, 0.21, 0.7], 0.3)
        assert np.all(np.diff(sel.indices.astype(np.int64)) > 0)

    def test_sampler_matches_brute_force(self):
        cfg = SimConfig(dt=0.01, horizon=0.6, n_traj=20_000, lam=0.1, seed=5)
        qf = [0.68, 0.21, 0.7]
        brute = postselect(simulate_ensemble([1, 0, 0], cfg, ROTATION), qf, cfg.lam)
        fast = sample_postselected([1, 0, 0], qf, cfg, ROTATION, n_select=len(brute),
                                   max_raw=cfg.n_traj, batch_size=3000)
        assert_array_equal(fast.indices, brute.indices)
        assert_array_equal(fast.states, brute.states)
        assert fast.n_raw == int(brute.indices[-1]) + 1

    def test_sampler_empty(self):
        cfg = SimConfig(dt=0.01, horizon=0.6, n_traj=1, lam=0.01, seed=5)
        ens = sample_postselected([0, 0, 1], [0, 0, -1], cfg, QubitParams(), n_select=5,
                                  max_raw=1000, batch_size=300)
        assert len(ens) == 0 and ens.n_raw == 1000

    def test_rotation_scenario_nonempty(self):
        cfg = SimConfig(dt=0.01, horizon=0.6, n_traj=10_000, lam=0.02, seed=0)
        from qmpath.verify import postselection_scenarios
        qf = postselection_scenarios()["a"]["q_final"]
        assert len(postselect(simulate_ensemble([1, 0, 0], cfg, ROTATION), qf, 0.02)) > 0


def _constant_ensemble(zs, n_steps=3):
    n = len(zs)
    states = np.zeros((n, n_steps + 1, 3))
    states[..., 2] = np.asarray(zs)[:, None]
    cfg = SimConfig(dt=0.1, horizon=0.1 * n_steps, n_traj=n)
    return Ensemble(cfg, QubitParams(), states[0, 0], np.arange(n), np.arange(n_steps + 1) * 0.1,
                    states, np.zeros((n, n_steps)), states[:, -1], np.arange(n_steps + 1))


class TestMedian:
    def test_percentile_convention(self):
        mp = median_path(_constant_ensemble([0.1, 0.2, 0.9]))
        assert_allclose(mp.median[:, 2], 0.2)
        assert_allclose(mp.p40[:, 2], 0.16)
        assert_allclose(mp.p60[:, 2], 0.48)
        assert mp.n_selected == 3

    def test_single_trajectory(self):
        ens = simulate_ensemble([1, 0, 0], SimConfig(0.01, 0.6, 1, seed=2), ROTATION)
        mp = median_path(ens)
        assert_array_equal(mp.median, ens.states[0])
        assert_array_equal(mp.p40, ens.states[0])
        assert_array_equal(mp.median_readout, ens.readouts[0])

    def test_envelope_ordering(self):
        ens = simulate_ensemble([1, 0, 0], SimConfig(0.01, 0.6, 501, seed=2), ROTATION)
        mp = median_path(ens)
        assert np.all(mp.p40 <= mp.median) and np.all(mp.median <= mp.p60)

    def test_empty_raises(self):
        ens = _constant_ensemble([0.1, 0.2])
        with pytest.raises(ValueError):
            median_path(ens.subset(np.zeros(2, bool)))


class TestJumps:
    def test_debounce(self):
        dt = 0.1
        z = np.concatenate([np.ones(100), -np.ones(10), np.ones(100), -np.ones(100)])
        assert count_jumps(z, dt, debounce=5.0) == 1
        assert count_jumps(z, dt, debounce=0.5) == 3

    def test_return_jump_counts(self):
        z = np.concatenate([np.ones(60), -np.ones(60), np.ones(60)])
        assert count_jumps(z, 0.1, 5.0) == 2

    def test_no_jump(self):
        assert count_jumps(np.linspace(1, 0.1, 50), 0.1, 1.0) == 0
