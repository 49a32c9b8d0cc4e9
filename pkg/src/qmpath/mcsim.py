"""Monte Carlo qubit trajectories under continuous measurement, with postselection.

Each step draws a readout from the two-Gaussian mixture for the current
state and applies the exact normalized measurement-then-unitary update.
Random numbers come from :class:`~qmpath.rng.CounterStream`, addressed by
(trajectory index, step index), so any subset of trajectories can be
regenerated on its own and results do not depend on batching or threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .core import QubitParams, SimConfig, bloch
from .rng import CounterStream

PERCENTILE_METHOD = "weibull"


@dataclass(frozen=True)
class TrajectoryRecord:
    """One stochastic realization: n + 1 times and states, n readouts."""

    times: np.ndarray
    states: np.ndarray
    readouts: np.ndarray
    index: int = 0


@dataclass(frozen=True)
class Ensemble:
    """A set of trajectories sharing one time grid and initial state.

    ``states`` and ``readouts`` may be thinned (see ``stored_steps``);
    ``final_states`` always holds the exact state at the horizon.
    """

    config: SimConfig
    params: QubitParams
    q_initial: np.ndarray
    indices: np.ndarray
    times: np.ndarray
    states: np.ndarray
    readouts: np.ndarray
    final_states: np.ndarray
    stored_steps: np.ndarray
    n_raw: int = 0

    def __len__(self):
        return len(self.indices)

    def trajectory(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(self.times, self.states[i], self.readouts[i], int(self.indices[i]))

    def subset(self, mask) -> "Ensemble":
        mask = np.asarray(mask)
        return replace(self, indices=self.indices[mask], states=self.states[mask],
                       readouts=self.readouts[mask], final_states=self.final_states[mask])


@dataclass(frozen=True)
class MedianPath:
    times: np.ndarray
    median: np.ndarray
    p40: np.ndarray
    p60: np.ndarray
    median_readout: np.ndarray
    n_selected: int


def readout_from_uniforms(z, u_choice, u_gauss, dt: float, tau: float):
    """Map two uniforms to a readout: pick the +1 / -1 component, add Gaussian noise."""
    z = np.asarray(z, dtype=float)
    sign = np.where(u_choice < 0.5 * (1.0 + z), 1.0, -1.0)
    return sign + math.sqrt(tau / dt) * ndtri(u_gauss)


def sample_readout(q, dt: float, tau: float, rng: np.random.Generator, size=None):
    """Draw readouts for state ``q`` from a numpy Generator."""
    z = np.asarray(q, dtype=float)[..., 2]
    shape = np.broadcast_shapes(np.shape(z), size if size is not None else ())
    u = rng.random(shape)
    # 1 - random() lies in (0, 1]; reflect so the gaussian quantile stays finite
    v = 1.0 - rng.random(shape)
    return readout_from_uniforms(z, u, v, dt, tau)


def update_state_exact(q, r, dt: float, params: QubitParams) -> np.ndarray:
    """Normalized Bloch vector after one measurement bin followed by free evolution.

    The measurement operator is diagonal in the sigma_z basis: with
    g = r dt / tau it weights the populations (1 +/- z)/2 by exp(+/- g) and
    leaves the coherences alone, then everything is divided by the trace
    cosh g + z sinh g. Populations are used directly (scaled by exp(-|g|))
    rather than tanh g, which avoids cancellation near the poles. The unitary
    is a rotation by |w| dt about w = (-delta, 0, epsilon).
    """
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    g = r * dt / params.tau
    ag = np.abs(g)
    up = (1.0 + z) * np.exp(g - ag)
    dn = (1.0 - z) * np.exp(-g - ag)
    den = up + dn
    if np.any(den <= 0.0):
        raise FloatingPointError("measurement update has vanishing trace")
    scale = 2.0 * np.exp(-ag) / den
    out = np.stack([x * scale, y * scale, (up - dn) / den], axis=-1)

    w = math.hypot(params.epsilon, params.delta)
    if w == 0.0:
        return out
    n = np.array([-params.delta, 0.0, params.epsilon]) / w
    phi = w * dt
    c, s = math.cos(phi), math.sin(phi)
    cross = np.cross(n, out)
    along = (out @ n)[..., None] * n
    return out * c + cross * s + along * (1.0 - c)


def _stored_steps(n_steps: int, thin: int) -> np.ndarray:
    steps = np.arange(0, n_steps + 1, thin)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def _propagate(q_initial, indices, n_steps, dt, params, stream, record_steps=None):
    """Advance trajectories ``indices``; optionally record states at ``record_steps``."""
    b = len(indices)
    q = np.broadcast_to(q_initial, (b, 3)).astype(float)
    states = readouts = None
    if record_steps is not None:
        slot = np.full(n_steps + 1, -1)
        slot[record_steps] = np.arange(len(record_steps))
        states = np.empty((b, len(record_steps), 3))
        readouts = np.empty((b, len(record_steps) - 1))
        states[:, 0] = q
    for k in range(n_steps):
        u, v = stream.uniforms(indices, k)
        r = readout_from_uniforms(q[:, 2], u, v, dt, params.tau)
        q = update_state_exact(q, r, dt, params)
        if states is not None:
            # readouts[j] belongs to the step that starts at stored step j
            j = slot[k]
            if j >= 0 and j < readouts.shape[1]:
                readouts[:, j] = r
            if slot[k + 1] >= 0:
                states[:, slot[k + 1]] = q
    return q, states, readouts


def simulate_trajectory(q_initial, config: SimConfig, params: QubitParams,
                        traj_index: int = 0) -> TrajectoryRecord:
    """Generate trajectory number ``traj_index`` of the ensemble defined by ``config``."""
    ens = simulate_ensemble(q_initial, config, params, indices=[traj_index])
    return ens.trajectory(0)


def simulate_ensemble(q_initial, config: SimConfig, params: QubitParams, indices=None,
                      thin: int = 1, threads: int = 1, batch_size: int = 4096) -> Ensemble:
    """Simulate trajectories ``indices`` (default ``range(config.n_traj)``) with full records."""
    q_initial = bloch(q_initial)
    config.check_resolution(params.tau)
    if indices is None:
        indices = np.arange(config.n_traj, dtype=np.uint64)
    indices = np.asarray(indices, dtype=np.uint64)
    n = config.n_steps
    steps = _stored_steps(n, thin)
    stream = CounterStream(config.seed)

    def run(chunk):
        return _propagate(q_initial, chunk, n, config.dt, params, stream, steps)

    chunks = [indices[i:i + batch_size] for i in range(0, len(indices), batch_size)] or [indices]
    results = _map(run, chunks, threads)
    final = np.concatenate([res[0] for res in results])
    states = np.concatenate([res[1] for res in results])
    readouts = np.concatenate([res[2] for res in results])
    return Ensemble(config=config, params=params, q_initial=q_initial, indices=indices,
                    times=steps * config.dt, states=states, readouts=readouts,
                    final_states=final, stored_steps=steps, n_raw=len(indices))


def _map(fn, chunks, threads):
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def postselect(ensemble: Ensemble, q_final, lam: float) -> Ensemble:
    """Keep trajectories whose final state lies within Euclidean distance ``lam`` of q_final."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    dist = np.linalg.norm(ensemble.final_states - np.asarray(q_final, dtype=float), axis=-1)
    return ensemble.subset(dist <= lam)


def sample_postselected(q_initial, q_final, config: SimConfig, params: QubitParams,
                        n_select: int, max_raw: int = 10_000_000, batch_size: int = 200_000,
                        thin: int = 1, threads: int = 1) -> Ensemble:
    """Run raw trajectories until ``n_select`` land within ``config.lam`` of q_final.

    Raw trajectories are generated in index order, keeping only final states;
    the first ``n_select`` selected indices are then replayed with full
    records. Stops at ``max_raw`` raw trajectories and returns whatever was
    selected (possibly fewer than requested, possibly none).
    """
    q_initial = bloch(q_initial)
    q_final = np.asarray(q_final, dtype=float)
    config.check_resolution(params.tau)
    stream = CounterStream(config.seed)
    n = config.n_steps
    selected = []
    n_found = 0
    n_raw = 0
    round_size = batch_size * max(threads, 1)
    while n_found < n_select and n_raw < max_raw:
        stop = min(n_raw + round_size, max_raw)
        chunks = [np.arange(a, min(a + batch_size, stop), dtype=np.uint64)
                  for a in range(n_raw, stop, batch_size)]

        def run(chunk):
            q, _, _ = _propagate(q_initial, chunk, n, config.dt, params, stream)
            hit = np.linalg.norm(q - q_final, axis=-1) <= config.lam
            return chunk[hit]

        for hits in _map(run, chunks, threads):
            selected.append(hits)
            n_found += len(hits)
        n_raw = stop
    chosen = np.concatenate(selected)[:n_select] if selected else np.empty(0, np.uint64)
    if len(chosen):
        # stop counting raw trajectories at the last one that was needed
        if n_found >= n_select:
            n_raw = int(chosen[-1]) + 1
        ens = simulate_ensemble(q_initial, config, params, indices=chosen, thin=thin,
                                threads=threads)
    else:
        steps = _stored_steps(n, thin)
        ens = Ensemble(config, params, q_initial, chosen, steps * config.dt,
                       np.empty((0, len(steps), 3)), np.empty((0, len(steps) - 1)),
                       np.empty((0, 3)), steps)
    return replace(ens, n_raw=n_raw)


def median_path(subset: Ensemble) -> MedianPath:
    """Coordinate-wise median and 40th/60th percentiles at each stored time.

    Percentiles interpolate linearly between order statistics at rank
    p (N + 1) (Hyndman-Fan type 6).
    """
    if len(subset) == 0:
        raise ValueError("cannot take the median of an empty ensemble")
    pct = np.percentile(subset.states, [40, 50, 60], axis=0, method=PERCENTILE_METHOD)
    r_med = np.percentile(subset.readouts, 50, axis=0, method=PERCENTILE_METHOD)
    return MedianPath(times=subset.times, median=pct[1], p40=pct[0], p60=pct[2],
                      median_readout=r_med, n_selected=len(subset))


def count_jumps(z, dt: float, debounce: float) -> int:
    """Count debounced hemisphere changes in a time series of z.

    A jump is registered when z changes sign relative to the current
    hemisphere and keeps the new sign for at least ``debounce`` time.
    """
    z = np.asarray(z, dtype=float)
    need = int(math.ceil(debounce / dt))
    sign = np.where(z >= 0.0, 1, -1)
    edges = np.flatnonzero(np.diff(sign)) + 1
    starts = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([starts, [len(sign)]]))
    current = sign[0]
    jumps = 0
    for s, length in zip(sign[starts], lengths):
        if s != current and length >= need:
            jumps += 1
            current = s
    return jumps


def jump_rate(params: QubitParams, total_time: float, dt: float = 0.01, n_traj: int = 20,
              debounce: float = 5.0, seed: int = 0, q_initial=(0.0, 0.0, 1.0)) -> dict:
    """Empirical one-way switching rate from long unconditioned trajectories.

    ``total_time`` is split evenly across ``n_traj`` independent runs.
    """
    horizon = total_time / n_traj
    n = int(round(horizon / dt))
    stream = CounterStream(seed, tag=1)
    idx = np.arange(n_traj, dtype=np.uint64)
    q = np.broadcast_to(bloch(q_initial), (n_traj, 3)).astype(float)
    zs = np.empty((n + 1, n_traj))
    zs[0] = q[:, 2]
    for k in range(n):
        u, v = stream.uniforms(idx, k)
        r = readout_from_uniforms(q[:, 2], u, v, dt, params.tau)
        q = update_state_exact(q, r, dt, params)
        zs[k + 1] = q[:, 2]
    jumps = sum(count_jumps(zs[:, i], dt, debounce) for i in range(n_traj))
    total = n * dt * n_traj
    return {"n_jumps": int(jumps), "total_time": total, "gamma_empirical": jumps / total}
