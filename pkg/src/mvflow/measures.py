"""Weighted empirical measures, measure flows, and the distances between them.

A law on R^d is represented by a weighted point cloud; a measure flow is
one such cloud per grid time.  The two distances exposed here follow the
conventions used everywhere else in the package:

* total variation in the ``sup_A |mu(A) - nu(A)|`` normalization, valued
  in [0, 1], estimated on a common histogram lattice;
* the L^theta transport distance with outer exponent ``1/theta`` for
  ``theta >= 1``, computed exactly where an exact route exists (1-D
  quantile coupling, or minimum-cost assignment for small equal-size
  uniform supports) and by entropic regularization otherwise.

Flow-level metrics take the max over grid times of the per-time
distances.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------
class EmpiricalMeasure:
    """A probability law given by points in R^d with nonnegative weights.

    Immutable after construction.  ``weights=None`` means uniform weights
    1/n; the uniform case is kept symbolic so ensembles of 1e5+ points do
    not materialize a weight vector per time step.

    Parameters
    ----------
    points : array_like
        Shape ``(n, d)``, or ``(n,)`` for d = 1.
    weights : array_like or None
        Length-n nonnegative weights summing to 1 within 1e-12.
    """

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (n, d) array")
        pts = pts.view()
        pts.setflags(write=False)
        self.points = pts
        self.n = pts.shape[0]
        self.dim = pts.shape[1]
        if weights is None:
            self._weights = None
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (self.n,):
                raise ValueError(f"weights must have shape ({self.n},)")
            if np.any(w < 0.0):
                raise ValueError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1 within 1e-12")
            w = w.view()
            w.setflags(write=False)
            self._weights = w
        self._atom = None  # cached single-atom flag / point

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        """Point mass at ``x`` (scalar or length-d vector)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x[None, :])

    @property
    def uniform(self) -> bool:
        return self._weights is None

    @property
    def weights(self) -> np.ndarray:
        """Weight vector; materialized on demand in the uniform case."""
        if self._weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self._weights

    def single_atom(self):
        """The support point if all mass sits on one point, else None."""
        if self._atom is None:
            if self.n == 1 or bool(np.all(self.points == self.points[0])):
                self._atom = self.points[0]
            else:
                self._atom = False
        return None if self._atom is False else self._atom

    def mean(self) -> np.ndarray:
        if self._weights is None:
            return self.points.mean(axis=0)
        return self._weights @ self.points

    def __repr__(self) -> str:
        kind = "uniform" if self.uniform else "weighted"
        return f"EmpiricalMeasure(n={self.n}, dim={self.dim}, {kind})"


class MeasureFlow:
    """A measure per grid time: the discrete stand-in for a path of laws.

    Times form a strictly increasing grid starting at 0; all measures
    share one dimension.
    """

    def __init__(self, times, measures):
        t = np.asarray(times, dtype=float)
        measures = tuple(measures)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("times must be a non-empty 1-D array")
        if t[0] != 0.0:
            raise ValueError("flow times must start at 0")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("flow times must be strictly increasing")
        if len(measures) != t.size:
            raise ValueError("one measure per time is required")
        dims = {m.dim for m in measures}
        if len(dims) != 1:
            raise ValueError("all measures in a flow must share one dimension")
        t = t.view()
        t.setflags(write=False)
        self.times = t
        self.measures = measures
        self.dim = measures[0].dim

    @classmethod
    def constant(cls, times, measure: EmpiricalMeasure) -> "MeasureFlow":
        """Flow equal to ``measure`` at every grid time."""
        return cls(times, [measure] * len(np.atleast_1d(times)))

    def __len__(self) -> int:
        return len(self.measures)

    def at_time(self, t: float) -> EmpiricalMeasure:
        """Piecewise-constant-from-the-left lookup."""
        if t < self.times[0]:
            raise ValueError(f"flow lookup failure: t={t} precedes the flow start")
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.measures[min(idx, len(self.measures) - 1)]


@dataclass(frozen=True)
class BinningRule:
    """How to build the common histogram lattice for TV estimation.

    With no overrides the per-axis bin width is Freedman-Diaconis
    (2 * IQR * n^(-1/3)) on the pooled sample, clamped to ``max_bins``
    bins per axis.  Setting ``origin``, ``bin_width`` and ``n_bins``
    together pins the lattice exactly, which makes TV values from
    separate calls comparable on the shared lattice.
    """

    max_bins: int = 512
    bin_width: float | tuple | None = None
    origin: float | tuple | None = None
    n_bins: int | tuple | None = None

    def __post_init__(self):
        if self.max_bins < 1:
            raise ValueError("max_bins must be >= 1")
        fixed = (self.origin is not None, self.n_bins is not None)
        if any(fixed) and not (all(fixed) and self.bin_width is not None):
            raise ValueError("a fixed lattice needs origin, bin_width and n_bins together")

    @property
    def fixed_lattice(self) -> bool:
        return self.origin is not None


@dataclass(frozen=True)
class HistogramPair:
    """Two point-count histograms on one shared bin lattice."""

    origin: np.ndarray       # (d,) lower corner of the lattice
    bin_width: np.ndarray    # (d,) per-axis widths
    counts_a: np.ndarray     # integer counts, shape = bins per axis
    counts_b: np.ndarray

    def __post_init__(self):
        if self.counts_a.shape != self.counts_b.shape:
            raise ValueError("histograms must share one bin lattice")
        if np.any(self.counts_a < 0) or np.any(self.counts_b < 0):
            raise ValueError("histogram counts must be nonnegative")


def _per_axis(value, dim: int) -> list[float]:
    if np.isscalar(value):
        return [float(value)] * dim
    vals = [float(v) for v in value]
    if len(vals) != dim:
        raise ValueError(f"expected {dim} per-axis values, got {len(vals)}")
    return vals


def _lattice_edges(mu: EmpiricalMeasure, nu: EmpiricalMeasure, rule: BinningRule) -> list[np.ndarray]:
    """Per-axis bin edges for the shared lattice of a measure pair."""
    dim = mu.dim
    if rule.fixed_lattice:
        origins = _per_axis(rule.origin, dim)
        widths = _per_axis(rule.bin_width, dim)
        nbins = [int(b) for b in _per_axis(rule.n_bins, dim)]
        edges = []
        for o, w, k in zip(origins, widths, nbins):
            if w <= 0 or k < 1 or k > rule.max_bins:
                raise ValueError("fixed lattice needs positive widths and 1..max_bins bins")
            edges.append(o + w * np.arange(k + 1))
        return edges

    pooled = np.concatenate([mu.points, nu.points], axis=0)
    n = pooled.shape[0]
    widths = None if rule.bin_width is None else _per_axis(rule.bin_width, dim)
    edges = []
    for ax in range(dim):
        col = pooled[:, ax]
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            edges.append(np.array([lo - 0.5, lo + 0.5]))
            continue
        if widths is not None:
            w = widths[ax]
        else:
            q25, q75 = np.percentile(col, [25.0, 75.0])
            w = 2.0 * (q75 - q25) * n ** (-1.0 / 3.0)
        if w <= 0.0:
            w = (hi - lo) / min(64, rule.max_bins)
        k = int(np.clip(math.ceil((hi - lo) / w), 1, rule.max_bins))
        edges.append(np.linspace(lo, hi, k + 1))
    return edges


def histogram_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                   binning: BinningRule = BinningRule()) -> HistogramPair:
    """Bin both point clouds (counting points, not weights) on one lattice."""
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    edges = _lattice_edges(mu, nu, binning)
    counts_a, _ = np.histogramdd(mu.points, bins=edges)
    counts_b, _ = np.histogramdd(nu.points, bins=edges)
    ca = counts_a.astype(np.int64)
    cb = counts_b.astype(np.int64)
    if int(ca.sum()) != mu.n or int(cb.sum()) != nu.n:
        raise ValueError("points fall outside the fixed bin lattice")
    origin = np.array([e[0] for e in edges])
    width = np.array([e[1] - e[0] for e in edges])
    return HistogramPair(origin=origin, bin_width=width, counts_a=ca, counts_b=cb)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------
def tv_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                binning: BinningRule = BinningRule()) -> float:
    """Total variation between the binned laws, in [0, 1].

    This is the TV of the histogram projections, an estimator (not the
    exact value) of the TV between the underlying continuous laws.  A
    pair of single-atom measures bypasses the histogram entirely.
    """
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    a, b = mu.single_atom(), nu.single_atom()
    if a is not None and b is not None:
        return 0.0 if bool(np.all(a == b)) else 1.0
    if mu.dim > 3:
        raise ValueError("TV histogram estimation supports dim <= 3")
    edges = _lattice_edges(mu, nu, binning)
    wa = None if mu.uniform else mu.weights
    wb = None if nu.uniform else nu.weights
    mass_a, _ = np.histogramdd(mu.points, bins=edges, weights=wa)
    mass_b, _ = np.histogramdd(nu.points, bins=edges, weights=wb)
    if wa is None:
        mass_a /= mu.n
    if wb is None:
        mass_b /= nu.n
    if binning.fixed_lattice:
        if abs(mass_a.sum() - 1.0) > 1e-9 or abs(mass_b.sum() - 1.0) > 1e-9:
            raise ValueError("points fall outside the fixed bin lattice")
    return float(np.clip(0.5 * np.abs(mass_a - mass_b).sum(), 0.0, 1.0))


def tv_discrete(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact TV between atomic measures (atoms matched by exact equality)."""
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    pts = np.concatenate([mu.points, nu.points], axis=0)
    signed = np.concatenate([mu.weights, -nu.weights])
    _, inverse = np.unique(pts, axis=0, return_inverse=True)
    masses = np.zeros(int(inverse.max()) + 1)
    np.add.at(masses, inverse, signed)
    return float(np.clip(0.5 * np.abs(masses).sum(), 0.0, 1.0))


def _quantile_coupling_cost(theta: float, x, w, y, v) -> float:
    """Exact 1-D transport cost via the monotone (quantile) coupling."""
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    xs, ys = x[ix], y[iy]
    cx = np.cumsum(w[ix])
    cy = np.cumsum(v[iy])
    bounds = np.union1d(cx[:-1], cy[:-1])
    bounds = bounds[(bounds > 0.0) & (bounds < 1.0)]
    edges = np.concatenate(([0.0], bounds, [1.0]))
    mass = np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    xi = np.minimum(np.searchsorted(cx, mid, side="left"), xs.size - 1)
    yi = np.minimum(np.searchsorted(cy, mid, side="left"), ys.size - 1)
    return float(np.sum(mass * np.abs(xs[xi] - ys[yi]) ** theta))


def _sinkhorn_cost(theta: float, xp, wa, yp, wb, epsilon, diagnostics,
                   max_iter: int = 10_000, tol: float = 1e-9) -> float:
    """Entropically regularized transport cost (log-domain iterations)."""
    dist = cdist(xp, yp)
    if epsilon is None:
        epsilon = 0.01 * float(np.median(dist))
        if epsilon <= 0.0:
            epsilon = 1e-6
    cost = dist**theta
    logw = np.log(np.maximum(wa, 1e-300))
    logv = np.log(np.maximum(wb, 1e-300))
    f = np.zeros(len(wa))
    g = np.zeros(len(wb))
    iterations = max_iter
    for it in range(max_iter):
        m = (g[None, :] - cost) / epsilon + logv[None, :]
        f = -epsilon * logsumexp(m, axis=1)
        m = (f[:, None] - cost) / epsilon + logw[:, None]
        g = -epsilon * logsumexp(m, axis=0)
        log_plan = (f[:, None] + g[None, :] - cost) / epsilon + logw[:, None] + logv[None, :]
        row_err = np.abs(np.exp(logsumexp(log_plan, axis=1)) - wa).max()
        if row_err < tol:
            iterations = it + 1
            break
    plan = np.exp(log_plan)
    value = float(np.sum(plan * cost)) ** (1.0 / theta)
    if diagnostics is not None:
        n = max(len(wa), len(wb))
        diagnostics.update(
            method="sinkhorn",
            epsilon=epsilon,
            iterations=iterations,
            accuracy_note=(
                f"entropic approximation: value accurate to about "
                f"+/-{epsilon * math.log(max(n, 2)):.3g} (epsilon={epsilon:.3g}, N={n})"
            ),
        )
    return value


def wasserstein(theta: float, mu: EmpiricalMeasure, nu: EmpiricalMeasure, *,
                assignment_cap: int = 512, epsilon: float | None = None,
                max_cost_entries: int = 40_000_000,
                diagnostics: dict | None = None) -> float:
    """L^theta transport distance between two empirical measures.

    Exact routes: 1-D quantile coupling (any weights), and minimum-cost
    assignment when both supports are uniform, equal-size and no larger
    than ``assignment_cap``.  Everything else falls back to entropic
    regularization; pass ``diagnostics`` to receive the declared epsilon
    and its accuracy note.
    """
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    if theta < 1.0:
        raise ValueError("theta must be >= 1")
    a, b = mu.single_atom(), nu.single_atom()
    if a is not None and b is not None:
        if diagnostics is not None:
            diagnostics.update(method="atoms")
        return float(np.linalg.norm(a - b))
    if mu.dim == 1:
        if diagnostics is not None:
            diagnostics.update(method="quantile")
        x, y = mu.points[:, 0], nu.points[:, 0]
        if mu.uniform and nu.uniform and mu.n == nu.n:
            cost = float(np.mean(np.abs(np.sort(x) - np.sort(y)) ** theta))
        else:
            cost = _quantile_coupling_cost(theta, x, mu.weights, y, nu.weights)
        return cost ** (1.0 / theta)
    if mu.uniform and nu.uniform and mu.n == nu.n and mu.n <= assignment_cap:
        if diagnostics is not None:
            diagnostics.update(method="assignment")
        cost = cdist(mu.points, nu.points) ** theta
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / mu.n) ** (1.0 / theta)
    if mu.n * nu.n > max_cost_entries:
        raise ValueError(
            f"transport cost matrix would hold {mu.n * nu.n} entries "
            f"(limit {max_cost_entries}); reduce the supports before comparing"
        )
    return _sinkhorn_cost(theta, mu.points, mu.weights, nu.points, nu.weights,
                          epsilon, diagnostics)


def moment(mu: EmpiricalMeasure, theta: float) -> float:
    """theta-th absolute moment: sum of w_i |x_i|^theta."""
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    norms = np.linalg.norm(mu.points, axis=1)
    if mu.uniform:
        return float(np.mean(norms**theta))
    return float(mu.weights @ norms**theta)


# ---------------------------------------------------------------------------
# Flow metrics
# ---------------------------------------------------------------------------
def _check_grids(a: MeasureFlow, b: MeasureFlow) -> None:
    if not np.array_equal(a.times, b.times):
        raise ValueError("flow grids do not match")


def flow_metric_rho(a: MeasureFlow, b: MeasureFlow,
                    binning: BinningRule = BinningRule()) -> float:
    """sup-TV metric over the grid: max_t TV(a_t, b_t)."""
    _check_grids(a, b)
    return max(tv_distance(ma, mb, binning) for ma, mb in zip(a.measures, b.measures))


def flow_metric_rho_tilde(theta: float, a: MeasureFlow, b: MeasureFlow,
                          binning: BinningRule = BinningRule()) -> float:
    """max_t of TV(a_t, b_t) + W_theta(a_t, b_t)."""
    _check_grids(a, b)
    return max(
        tv_distance(ma, mb, binning) + wasserstein(theta, ma, mb)
        for ma, mb in zip(a.measures, b.measures)
    )


# ---------------------------------------------------------------------------
# Serialization: CSV with header w,x1..xd; flows as a directory of CSVs
# ---------------------------------------------------------------------------
def save_measure(measure: EmpiricalMeasure, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w"] + [f"x{i + 1}" for i in range(measure.dim)])
        for w, p in zip(measure.weights, measure.points):
            writer.writerow([str(float(w))] + [str(float(c)) for c in p])


def load_measure(path: str) -> EmpiricalMeasure:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "w":
            raise ValueError(f"{path}: expected header starting with 'w'")
        rows = [[float(c) for c in row] for row in reader if row]
    data = np.asarray(rows)
    if data.size == 0:
        raise ValueError(f"{path}: empty measure file")
    weights = data[:, 0]
    weights = weights / weights.sum()  # absorb round-trip formatting error
    return EmpiricalMeasure(data[:, 1:], weights)


def save_flow(flow: MeasureFlow, directory: str) -> None:
    """One CSV per time plus an index file listing the grid times."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "index.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "t", "file"])
        for k, t in enumerate(flow.times):
            writer.writerow([k, str(float(t)), f"t{k:05d}.csv"])
    for k, m in enumerate(flow.measures):
        save_measure(m, os.path.join(directory, f"t{k:05d}.csv"))


def load_flow(directory: str) -> MeasureFlow:
    index = os.path.join(directory, "index.csv")
    with open(index, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [row for row in reader if row]
    times = np.array([float(r[1]) for r in rows])
    measures = [load_measure(os.path.join(directory, r[2])) for r in rows]
    return MeasureFlow(times, measures)
