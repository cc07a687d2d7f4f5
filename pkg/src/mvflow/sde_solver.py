"""Euler-Maruyama simulation of the frozen-flow SDE.

The drift sees a *fixed* measure flow (no feedback from the simulated
ensemble); that classical SDE is the building block the fixed-point
iteration applies repeatedly.  Coefficients are batch-valued:

* ``drift(t, x, gamma) -> (n, d)`` for ``x`` of shape ``(n, d)`` and an
  :class:`~mvflow.measures.EmpiricalMeasure` ``gamma``;
* ``diffusion(t, x) -> (n, d, m)`` or a constant ``(d, m)`` matrix.
  The diffusion never receives a measure argument.

Noise is drawn from per-path counter-based substreams (see
:mod:`mvflow.rng`), which makes ensembles bitwise reproducible for a
given seed regardless of path blocking or thread count, and gives
common-random-number coupling between calls sharing a seed.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .measures import EmpiricalMeasure, MeasureFlow
from .rng import STREAM_SAMPLE, substream

DEFAULT_PATH_BLOCK = 16384
THREADS_ENV_VAR = "MVFLOW_THREADS"


class SimulationError(RuntimeError):
    """A simulation produced a non-finite value or an invalid lookup."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0, h, 2h, ..., t_end with h = t_end / n_steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def h(self) -> float:
        return self.t_end / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.h
        t.setflags(write=False)
        return t


@dataclass(frozen=True)
class CoefficientConstants:
    """Declared structural constants of a coefficient set.

    ``k1`` bounds the diffusion ellipticity (sigma sigma^T between
    I/k1 and k1 I), ``k2`` the joint Lipschitz constant in state and
    measure, ``k3`` the TV-Lipschitz constant of the drift's measure
    dependence (``inf`` when no such certificate exists), and ``theta``
    the transport exponent the measure dependence is certified for.
    """

    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    theta: float = 1.0

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "theta"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class IntegrabilityMeta:
    """Optional declared integrability class (p, q) plus a growth bound.

    ``growth`` certifies <b(x, delta_0), x> <= growth(|x|^2); validation
    probes it numerically but nothing enforces it during simulation.
    """

    p: float
    q: float
    growth: Callable[[float], float] | None = None
    note: str = ""

    def in_k_class(self, dim: int) -> bool:
        return dim / self.p + 2.0 / self.q < 2.0


@dataclass(frozen=True)
class CoefficientSet:
    """Drift/diffusion pair with declared constants."""

    drift: Callable
    diffusion: Callable
    dim_state: int
    dim_noise: int
    constants: CoefficientConstants = field(default_factory=CoefficientConstants)
    integrability_meta: IntegrabilityMeta | None = None

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("state and noise dimensions must be >= 1")


class InitialSampler:
    """Initial-law sampler: dirac, gaussian, mixture, or empirical.

    ``draw(gen, size)`` consumes the given generator, which is how
    per-path substreams stay deterministic: path i hands its own
    generator to the sampler before drawing any noise.
    """

    def __init__(self, kind: str, dim: int, theta_moment_finite: bool = True, **params):
        self.kind = kind
        self.dim = dim
        self.theta_moment_finite = theta_moment_finite
        self._params = params

    @classmethod
    def dirac(cls, x) -> "InitialSampler":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls("dirac", dim=x.size, point=x)

    @classmethod
    def gaussian(cls, mean, cov) -> "InitialSampler":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = mean.size
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            factor = np.eye(d) * np.sqrt(float(cov))
        elif cov.ndim == 1:
            if cov.size != d:
                raise ValueError("diagonal covariance has wrong length")
            factor = np.diag(np.sqrt(cov))
        else:
            if cov.shape != (d, d) or not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("covariance must be a symmetric (d, d) matrix")
            vals, vecs = np.linalg.eigh(cov)
            if vals.min() < -1e-10 * max(1.0, abs(vals.max())):
                raise ValueError("covariance must be positive semidefinite")
            factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
        if np.any(~np.isfinite(factor)):
            raise ValueError("covariance factor is not finite")
        return cls("gaussian", dim=d, mean=mean, factor=factor)

    @classmethod
    def mixture(cls, components) -> "InitialSampler":
        components = [(float(w), s) for w, s in components]
        if not components:
            raise ValueError("mixture needs at least one component")
        total = sum(w for w, _ in components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1 within 1e-12")
        if any(w < 0.0 for w, _ in components):
            raise ValueError("mixture weights must be nonnegative")
        dims = {s.dim for _, s in components}
        if len(dims) != 1:
            raise ValueError("mixture components must share one dimension")
        finite = all(s.theta_moment_finite for _, s in components)
        return cls("mixture", dim=dims.pop(), theta_moment_finite=finite,
                   components=components)

    @classmethod
    def empirical(cls, measure: EmpiricalMeasure) -> "InitialSampler":
        return cls("empirical", dim=measure.dim, measure=measure)

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` points, shape (size, dim), from ``gen``."""
        p = self._params
        if self.kind == "dirac":
            return np.tile(p["point"], (size, 1))
        if self.kind == "gaussian":
            z = gen.standard_normal((size, self.dim))
            return p["mean"] + z @ p["factor"].T
        if self.kind == "mixture":
            weights = np.array([w for w, _ in p["components"]])
            idx = gen.choice(len(weights), size=size, p=weights)
            out = np.empty((size, self.dim))
            for c, (_, sampler) in enumerate(p["components"]):
                hits = np.flatnonzero(idx == c)
                if hits.size:
                    out[hits] = sampler.draw(gen, hits.size)
            return out
        if self.kind == "empirical":
            m: EmpiricalMeasure = p["measure"]
            probs = None if m.uniform else m.weights
            idx = gen.choice(m.n, size=size, p=probs)
            return m.points[idx]
        raise ValueError(f"unknown initial sampler kind {self.kind!r}")


class PathEnsemble:
    """Simulated trajectories with full seed provenance.

    ``paths`` has shape (n_paths, n_steps + 1, d); internally storage is
    time-major so per-time slices (the measure flow) are contiguous.
    """

    def __init__(self, grid: TimeGrid, data: np.ndarray, seed: int, stream: int):
        self.grid = grid
        self._data = data  # (n_steps + 1, n_paths, d)
        self.seed = seed
        self.stream = stream
        self.n_paths = data.shape[1]
        self.path_stream_ids = np.arange(self.n_paths, dtype=np.uint64)

    @property
    def paths(self) -> np.ndarray:
        return self._data.transpose(1, 0, 2)

    @property
    def dim(self) -> int:
        return self._data.shape[2]

    def positions_at(self, k: int) -> np.ndarray:
        """All path positions at grid index ``k`` (a contiguous view)."""
        return self._data[k]


# ---------------------------------------------------------------------------
# Stepping core
# ---------------------------------------------------------------------------
def _eval_drift(coeffs: CoefficientSet, t: float, x: np.ndarray,
                measure: EmpiricalMeasure) -> np.ndarray:
    out = np.asarray(coeffs.drift(t, x, measure), dtype=float)
    if out.shape == (coeffs.dim_state,):
        out = np.broadcast_to(out, x.shape)
    if out.shape != x.shape:
        raise SimulationError(f"drift returned shape {out.shape}, expected {x.shape}")
    return out


def _eval_diffusion(coeffs: CoefficientSet, t: float, x: np.ndarray) -> np.ndarray:
    out = np.asarray(coeffs.diffusion(t, x), dtype=float)
    want = (x.shape[0], coeffs.dim_state, coeffs.dim_noise)
    if out.shape == want[1:]:
        return out
    if out.shape != want:
        raise SimulationError(f"diffusion returned shape {out.shape}, expected {want}")
    return out


def _first_bad(arr: np.ndarray) -> int:
    return int(np.argwhere(~np.isfinite(arr))[0][0])


def _advance(coeffs: CoefficientSet, t: float, x: np.ndarray,
             measure: EmpiricalMeasure, dw: np.ndarray, h: float,
             path_offset: int) -> np.ndarray:
    """One Euler step for a block of paths; aborts on non-finite values."""
    b = _eval_drift(coeffs, t, x, measure)
    if not np.all(np.isfinite(b)):
        i = _first_bad(b)
        raise SimulationError(
            f"non-finite drift at t={t:.6g}, path={path_offset + i}, x={x[i]}")
    sig = _eval_diffusion(coeffs, t, x)
    if not np.all(np.isfinite(sig)):
        i = _first_bad(sig.reshape(sig.shape[0], -1)) if sig.ndim == 3 else 0
        raise SimulationError(
            f"non-finite diffusion at t={t:.6g}, path={path_offset + i}")
    if sig.ndim == 2:
        nxt = x + b * h + dw @ sig.T
    else:
        nxt = x + b * h + np.einsum("pdm,pm->pd", sig, dw)
    if not np.all(np.isfinite(nxt)):
        i = _first_bad(nxt)
        raise SimulationError(
            f"non-finite state at t={t:.6g}, path={path_offset + i}, x={x[i]}")
    return nxt


def _resolve_threads(n_threads: int | None) -> int:
    if n_threads is None:
        n_threads = int(os.environ.get(THREADS_ENV_VAR, "1"))
    return max(1, n_threads)


def initial_draws(init: InitialSampler, n_paths: int, seed: int,
                  stream: int = 0) -> np.ndarray:
    """The initial positions euler_maruyama would produce, without stepping.

    Per-path substreams restart from their counters on every call, so
    previewing the first draw here and letting the solver redraw it
    yields bitwise-identical values.
    """
    out = np.empty((n_paths, init.dim))
    for i in range(n_paths):
        out[i] = init.draw(substream(seed, i, stream), 1)[0]
    return out


def euler_maruyama(coeffs: CoefficientSet, frozen_flow: MeasureFlow,
                   init: InitialSampler, grid: TimeGrid, n_paths: int,
                   seed: int, *, stream: int = 0, t_offset: float = 0.0,
                   noise: np.ndarray | None = None,
                   path_block: int = DEFAULT_PATH_BLOCK,
                   n_threads: int | None = None) -> PathEnsemble:
    """Simulate X_{k+1} = X_k + b(t_k, X_k, mu_{t_k}) h + sigma(t_k, X_k) dW_k.

    The frozen flow is looked up piecewise-constant from the left at each
    grid time.  Path ``i`` consumes its substream in a fixed order (one
    initial draw, then all Brownian increments), so results do not depend
    on ``path_block`` or ``n_threads``.

    ``t_offset`` shifts the time argument passed to the coefficients
    (used when solving a window of a longer horizon); the flow lookup
    stays on the grid's own clock.  ``noise``, if given, must hold
    Brownian increments of variance h with shape (n_paths, n_steps, m)
    and replaces the internal RNG (refinement studies).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if init.dim != coeffs.dim_state:
        raise ValueError("initial sampler dimension does not match the state")
    if frozen_flow.dim != coeffs.dim_state:
        raise ValueError("frozen flow dimension does not match the state")
    n_steps, h, d, m = grid.n_steps, grid.h, coeffs.dim_state, coeffs.dim_noise
    if noise is not None and noise.shape != (n_paths, n_steps, m):
        raise ValueError(f"noise must have shape {(n_paths, n_steps, m)}")

    step_measures = [frozen_flow.at_time(t) for t in grid.times[:-1]]
    data = np.empty((n_steps + 1, n_paths, d))

    def run_block(i0: int, i1: int) -> None:
        nb = i1 - i0
        x = np.empty((nb, d))
        if noise is None:
            dw = np.empty((nb, n_steps, m))
            for j in range(nb):
                gen = substream(seed, i0 + j, stream)
                x[j] = init.draw(gen, 1)[0]
                dw[j] = gen.standard_normal((n_steps, m))
            dw *= np.sqrt(h)
        else:
            dw = noise[i0:i1]
            for j in range(nb):
                gen = substream(seed, i0 + j, stream)
                x[j] = init.draw(gen, 1)[0]
        data[0, i0:i1] = x
        for k in range(n_steps):
            x = _advance(coeffs, t_offset + grid.times[k], x,
                         step_measures[k], dw[:, k, :], h, i0)
            data[k + 1, i0:i1] = x

    blocks = [(i, min(i + path_block, n_paths)) for i in range(0, n_paths, path_block)]
    workers = _resolve_threads(n_threads)
    if workers == 1 or len(blocks) == 1:
        for i0, i1 in blocks:
            run_block(i0, i1)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_block, i0, i1) for i0, i1 in blocks]
            for fut in futures:
                fut.result()
    return PathEnsemble(grid, data, seed, stream)


def ensemble_flow(ens: PathEnsemble) -> MeasureFlow:
    """The empirical law of the ensemble at every grid time (uniform weights)."""
    measures = [EmpiricalMeasure(ens.positions_at(k))
                for k in range(ens.grid.n_steps + 1)]
    return MeasureFlow(ens.grid.times, measures)


def sample_initial(init: InitialSampler, n: int, seed: int) -> EmpiricalMeasure:
    """n uniform-weight draws from the initial sampler, deterministic in seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = substream(seed, 0, STREAM_SAMPLE)
    return EmpiricalMeasure(init.draw(gen, n))


def save_ensemble(ens: PathEnsemble, path: str) -> None:
    """CSV export, one row per (path, time): path,t,x1..xd."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "t"] + [f"x{i + 1}" for i in range(ens.dim)])
        times = ens.grid.times
        for i in range(ens.n_paths):
            for k in range(ens.grid.n_steps + 1):
                row = [i, str(float(times[k]))]
                row += [str(float(c)) for c in ens._data[k, i]]
                writer.writerow(row)
