"""Interacting N-particle system: the mean-field oracle.

Each particle's drift sees the live empirical measure of the whole
ensemble at the current step (the particle itself included; the O(1/N)
self-interaction bias is below desk-scale tolerances).  As N grows the
ensemble law approaches the self-consistent law the fixed-point
iteration computes, which makes this an independent cross-check.
"""

from __future__ import annotations

import numpy as np

from .measures import EmpiricalMeasure
from .rng import substream
from .sde_solver import (
    CoefficientSet,
    InitialSampler,
    PathEnsemble,
    TimeGrid,
    _advance,
)


def simulate_particles(coeffs: CoefficientSet, init: InitialSampler,
                       grid: TimeGrid, n_particles: int, seed: int, *,
                       stream: int = 0,
                       path_ids: np.ndarray | None = None) -> PathEnsemble:
    """One Euler step per grid time for all particles simultaneously.

    Noise follows the same per-path substream convention as
    euler_maruyama (one initial draw, then all increments), so a
    measure-independent drift reproduces the frozen-flow solver
    bitwise.  Within a step all particles read one frozen snapshot of
    positions; the step barrier is the only synchronization point.

    ``path_ids`` reassigns substream identifiers to particles
    (default 0..N-1).  Because every particle interaction goes through
    the symmetric empirical measure, permuting the assignment permutes
    trajectories but leaves the ensemble law flow unchanged up to point
    reordering (and floating-point summation order).
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if init.dim != coeffs.dim_state:
        raise ValueError("initial sampler dimension does not match the state")
    if path_ids is None:
        path_ids = np.arange(n_particles, dtype=np.uint64)
    else:
        path_ids = np.asarray(path_ids, dtype=np.uint64)
        if path_ids.shape != (n_particles,):
            raise ValueError("path_ids must hold one identifier per particle")
    n_steps, h, d, m = grid.n_steps, grid.h, coeffs.dim_state, coeffs.dim_noise

    x = np.empty((n_particles, d))
    dw = np.empty((n_particles, n_steps, m))
    for i, pid in enumerate(path_ids):
        gen = substream(seed, int(pid), stream)
        x[i] = init.draw(gen, 1)[0]
        dw[i] = gen.standard_normal((n_steps, m))
    dw *= np.sqrt(h)

    data = np.empty((n_steps + 1, n_particles, d))
    data[0] = x
    for k in range(n_steps):
        snapshot = EmpiricalMeasure(data[k])
        x = _advance(coeffs, float(grid.times[k]), x, snapshot, dw[:, k, :], h, 0)
        data[k + 1] = x
    ens = PathEnsemble(grid, data, seed, stream)
    ens.path_stream_ids = path_ids
    return ens
