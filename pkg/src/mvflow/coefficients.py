"""Ready-made drift families with declared constants, plus numeric probes.

Constructors return batch-valued drift callables ``(t, x, gamma) ->
(n, d)``; the declared constants (ellipticity k1, Lipschitz k2,
TV-Lipschitz k3, exponent theta) are documented per preset and
spot-checked by :func:`validate_coefficients` rather than inferred.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measures import BinningRule, EmpiricalMeasure, tv_discrete, tv_distance, wasserstein
from .rng import STREAM_PROBE, substream
from .sde_solver import (
    CoefficientConstants,
    CoefficientSet,
    IntegrabilityMeta,
    _eval_diffusion,
)


def constant_diffusion(matrix) -> Callable:
    """Diffusion callable returning a fixed (d, m) matrix."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))

    def diffusion(t, x):
        return mat

    return diffusion


def isotropic_diffusion(scale: float, dim: int) -> Callable:
    return constant_diffusion(scale * np.eye(dim))


def isotropic_k1(scale: float) -> float:
    """Smallest valid ellipticity constant for sigma = scale * I."""
    s2 = scale * scale
    return max(s2, 1.0 / s2)


# ---------------------------------------------------------------------------
# Drift families
# ---------------------------------------------------------------------------
def conv_drift(kernel: Callable, bound: float, lip: float) -> Callable:
    """Drift averaging a two-point kernel against the measure.

    ``kernel(t, x, y)`` must broadcast over leading axes: it is called
    with x of shape (n, 1, d) and y of shape (1, k, d) and must return
    (n, k, d).  ``bound`` and ``lip`` are user-certified: |kernel| <=
    bound and kernel Lipschitz in (x, y) with constant lip.  A kernel
    bounded by ``bound`` makes the drift TV-Lipschitz with constant
    2 * bound (total mass of a signed measure is twice its TV), recorded
    on the returned callable as ``k3_certificate``.
    """

    def drift(t, x, gamma: EmpiricalMeasure):
        x = np.asarray(x, dtype=float)
        vals = np.asarray(kernel(t, x[:, None, :], gamma.points[None, :, :]), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite kernel value at t={t:.6g}")
        if gamma.uniform:
            return vals.mean(axis=1)
        return np.einsum("nkd,k->nd", vals, gamma.weights)

    drift.k3_certificate = 2.0 * bound
    drift.bound = bound
    drift.lip = lip
    return drift


def moment_drift(outer: Callable, phi: Callable) -> Callable:
    """Drift depending on the measure only through the functional gamma(phi).

    ``phi`` maps points (k, d) to reals (k,); ``outer(t, x, r)`` must be
    vectorized over x of shape (n, d) for scalar r.
    """

    def drift(t, x, gamma: EmpiricalMeasure):
        vals = np.asarray(phi(gamma.points), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite phi value at t={t:.6g}")
        if gamma.uniform:
            r = float(vals.mean())
        else:
            r = float(gamma.weights @ vals)
        return np.asarray(outer(t, np.asarray(x, dtype=float), r), dtype=float)

    return drift


def feedback_drift(base: Callable | None, h: Callable,
                   reference: EmpiricalMeasure, theta: float,
                   binning: BinningRule = BinningRule()) -> Callable:
    """Drift steered by the distances between the current law and a reference.

    Evaluates r = W_theta(gamma, reference) and s = TV(gamma, reference)
    through the measures module (exact fast paths where available) and
    adds ``h(t, x, r, s)`` to the base drift.  ``h`` must be bounded in t
    and Lipschitz in (x, r, s); compose the declared constants from its
    certificates.
    """

    def drift(t, x, gamma: EmpiricalMeasure):
        x = np.asarray(x, dtype=float)
        r = wasserstein(theta, gamma, reference)
        s = tv_distance(gamma, reference, binning)
        out = np.asarray(h(t, x, r, s), dtype=float)
        out = np.broadcast_to(out, x.shape).copy() if out.shape != x.shape else out
        if base is not None:
            out = out + np.asarray(base(t, x, gamma), dtype=float)
        return out

    return drift


def singular_drift_1d() -> CoefficientSet:
    """1-D coefficient set with an integrable power singularity at the origin.

    Drift sign(x) |x|^(-1/4) on |x| <= 1 (set to 0 at x = 0), diffusion
    identically 1.  |drift|^2 = |x|^(-1/2) on [-1, 1] lies in L^{3/2} in
    space, and the declared pair (p, q) = (3/2, 4) satisfies
    1/p + 2/q = 7/6 < 2.
    """

    def drift(t, x, gamma):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        inside = (ax <= 1.0) & (ax > 0.0)
        out = np.zeros_like(x)
        np.divide(np.sign(x), ax**0.25, out=out, where=inside)
        return out

    meta = IntegrabilityMeta(
        p=1.5, q=4.0,
        note="|drift|^2 = |x|^(-1/2) 1_{|x|<=1}; L^{3/2}-norm cubed of |drift|^2 is 8",
    )
    return CoefficientSet(
        drift=drift,
        diffusion=constant_diffusion([[1.0]]),
        dim_state=1,
        dim_noise=1,
        constants=CoefficientConstants(k1=1.0, k2=1.0, k3=1.0, theta=1.0),
        integrability_meta=meta,
    )


# ---------------------------------------------------------------------------
# Presets addressable from CLI configs
# ---------------------------------------------------------------------------
def _mean_reverting_drift(rate: float, coupling: str, bound: float) -> Callable:
    """-rate * (x - m(gamma)) with m the (possibly saturated) measure mean.

    coupling "mean" uses the plain mean (the average of the kernel
    -rate*(x - y), evaluated in O(n + k) via its closed form); coupling
    "tanh" saturates each coordinate through bound * tanh(y / bound),
    making the measure dependence TV-Lipschitz with constant
    2 * rate * bound.
    """

    def drift(t, x, gamma: EmpiricalMeasure):
        pts = gamma.points
        if coupling == "tanh":
            pts = bound * np.tanh(pts / bound)
        if gamma.uniform:
            m = pts.mean(axis=0)
        else:
            m = gamma.weights @ pts
        return -rate * (np.asarray(x, dtype=float) - m)

    return drift


def preset_conv_ou(rate: float = 1.0, coupling: str = "mean", bound: float = 1.0,
                   sigma: float = 1.0, dim: int = 1) -> CoefficientSet:
    """Mean-reverting coupling to the measure mean; sigma * I diffusion.

    Constants: k1 = max(sigma^2, 1/sigma^2); k2 = rate (Lipschitz in x
    and, via the mean functional, in W_1); k3 = 2 * rate * bound for the
    saturated coupling and inf for the raw mean (whose kernel is
    unbounded, so no TV certificate exists).
    """
    if coupling not in ("mean", "tanh"):
        raise ValueError(f"unknown coupling {coupling!r}")
    if rate <= 0.0 or bound <= 0.0 or sigma <= 0.0:
        raise ValueError("rate, bound and sigma must be positive")
    k3 = 2.0 * rate * bound if coupling == "tanh" else np.inf
    return CoefficientSet(
        drift=_mean_reverting_drift(rate, coupling, bound),
        diffusion=isotropic_diffusion(sigma, dim),
        dim_state=dim,
        dim_noise=dim,
        constants=CoefficientConstants(
            k1=isotropic_k1(sigma), k2=max(1.0, rate), k3=max(1.0, k3)
            if np.isfinite(k3) else np.inf, theta=1.0,
        ),
    )


_PHI_CHOICES: dict[str, Callable] = {
    "identity": lambda pts: pts[:, 0],
    "square": lambda pts: np.einsum("kd,kd->k", pts, pts),
    "tanh": lambda pts: np.tanh(pts[:, 0]),
}


def preset_moment(phi: str = "identity", rate: float = 1.0,
                  sigma: float = 1.0) -> CoefficientSet:
    """1-D drift -rate * (x - gamma(phi)) for a scalar moment functional.

    k3 = 2 * rate for the bounded tanh functional, inf otherwise;
    theta = 2 for the square functional (second-moment dependence),
    1 otherwise.
    """
    if phi not in _PHI_CHOICES:
        raise ValueError(f"unknown phi {phi!r}; choices: {sorted(_PHI_CHOICES)}")
    if rate <= 0.0 or sigma <= 0.0:
        raise ValueError("rate and sigma must be positive")
    drift = moment_drift(lambda t, x, r: -rate * (x - r), _PHI_CHOICES[phi])
    k3 = 2.0 * rate if phi == "tanh" else np.inf
    return CoefficientSet(
        drift=drift,
        diffusion=constant_diffusion([[sigma]]),
        dim_state=1,
        dim_noise=1,
        constants=CoefficientConstants(
            k1=isotropic_k1(sigma), k2=max(1.0, rate),
            k3=max(1.0, k3) if np.isfinite(k3) else np.inf,
            theta=2.0 if phi == "square" else 1.0,
        ),
    )


def preset_feedback(gain: float = 0.5, rate: float = 1.0, sigma: float = 1.0,
                    ref_point: float = 0.0, theta: float = 1.0,
                    dim: int = 1) -> CoefficientSet:
    """Mean reversion plus a push proportional to the distances from a
    reference law: b = -rate * x + gain * (W_theta + TV) * e_1.

    The correction is Lipschitz in (r, s) with constant gain and constant
    in x, so k2 = max(rate, gain).  The W_theta dependence rules out a
    pure-TV certificate: k3 = inf.
    """
    if gain < 0.0 or rate <= 0.0 or sigma <= 0.0:
        raise ValueError("gain must be >= 0; rate and sigma positive")
    reference = EmpiricalMeasure.dirac(np.full(dim, float(ref_point)))
    direction = np.zeros(dim)
    direction[0] = 1.0

    def correction(t, x, r, s):
        return gain * (r + s) * direction

    drift = feedback_drift(lambda t, x, g: -rate * np.asarray(x, dtype=float),
                           correction, reference, theta)
    return CoefficientSet(
        drift=drift,
        diffusion=isotropic_diffusion(sigma, dim),
        dim_state=dim,
        dim_noise=dim,
        constants=CoefficientConstants(
            k1=isotropic_k1(sigma), k2=max(1.0, rate, gain), k3=np.inf,
            theta=max(1.0, theta),
        ),
    )


def preset_singular1d() -> CoefficientSet:
    return singular_drift_1d()


_PRESETS: dict[str, Callable[..., CoefficientSet]] = {
    "conv_ou": preset_conv_ou,
    "moment": preset_moment,
    "feedback": preset_feedback,
    "singular1d": preset_singular1d,
}


def make_preset(name: str, **params) -> CoefficientSet:
    """Build a named coefficient preset; unknown names or params raise."""
    if name not in _PRESETS:
        raise ValueError(f"unknown coefficient preset {name!r}; "
                         f"choices: {sorted(_PRESETS)}")
    try:
        return _PRESETS[name](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for preset {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# Numeric validation probes
# ---------------------------------------------------------------------------
@dataclass
class ValidationReport:
    """Worst-case observations from random probing of a coefficient set.

    Probing checks necessary conditions only; it can refute a declared
    certificate but never confirm it.
    """

    probes: int
    ellipticity_min: float
    ellipticity_max: float
    k1_declared: float
    ellipticity_ok: bool
    tv_ratio_max: float
    k3_declared: float
    k3_ok: bool | None
    growth_margin: float | None
    growth_ok: bool | None
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "probes": self.probes,
            "ellipticity_min": self.ellipticity_min,
            "ellipticity_max": self.ellipticity_max,
            "k1_declared": self.k1_declared,
            "ellipticity_ok": self.ellipticity_ok,
            "tv_ratio_max": self.tv_ratio_max,
            "k3_declared": None if not np.isfinite(self.k3_declared) else self.k3_declared,
            "k3_ok": self.k3_ok,
            "growth_margin": self.growth_margin,
            "growth_ok": self.growth_ok,
            "failures": self.failures,
        }

    @property
    def all_ok(self) -> bool:
        checks = [self.ellipticity_ok]
        if self.k3_ok is not None:
            checks.append(self.k3_ok)
        if self.growth_ok is not None:
            checks.append(self.growth_ok)
        return all(checks)


def _probe_measure_pair(gen: np.random.Generator, dim: int, scale: float):
    """A pair of small atomic measures with exactly computable TV."""
    k = int(gen.integers(2, 9))
    atoms = gen.normal(scale=scale, size=(k, dim))
    w = gen.dirichlet(np.ones(k))
    if gen.random() < 0.5:
        v = gen.dirichlet(np.ones(k))
        return EmpiricalMeasure(atoms, w / w.sum()), EmpiricalMeasure(atoms, v / v.sum())
    other = gen.normal(scale=scale, size=(k, dim))
    return EmpiricalMeasure(atoms, w / w.sum()), EmpiricalMeasure(other)


def validate_coefficients(coeffs: CoefficientSet, probes: int, seed: int, *,
                          t_end: float = 1.0, x_scale: float = 3.0,
                          tol: float = 1e-9) -> ValidationReport:
    """Probe ellipticity, TV-Lipschitz ratio and (optionally) growth.

    Deterministic given the seed; never mutates the coefficient set.
    Reports worst observations instead of aborting.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    gen = substream(seed, 0, STREAM_PROBE)
    d = coeffs.dim_state
    k1 = coeffs.constants.k1
    k3 = coeffs.constants.k3
    growth = None
    if coeffs.integrability_meta is not None:
        growth = coeffs.integrability_meta.growth

    eig_min, eig_max = np.inf, -np.inf
    tv_ratio_max = 0.0
    growth_margin = -np.inf if growth is not None else None
    failures: list[str] = []
    delta0 = EmpiricalMeasure.dirac(np.zeros(d))

    for _ in range(probes):
        t = float(gen.uniform(0.0, t_end))
        x = gen.normal(scale=x_scale, size=(1, d))
        sig = _eval_diffusion(coeffs, t, x)
        sig = sig[0] if sig.ndim == 3 else sig
        eigs = np.linalg.eigvalsh(sig @ sig.T)
        eig_min = min(eig_min, float(eigs.min()))
        eig_max = max(eig_max, float(eigs.max()))

        mu, nu = _probe_measure_pair(gen, d, x_scale)
        tv = tv_discrete(mu, nu)
        if tv > 1e-12:
            diff = np.linalg.norm(
                np.asarray(coeffs.drift(t, x, mu), dtype=float)
                - np.asarray(coeffs.drift(t, x, nu), dtype=float))
            tv_ratio_max = max(tv_ratio_max, float(diff) / tv)

        if growth is not None:
            bx = np.asarray(coeffs.drift(t, x, delta0), dtype=float)[0]
            margin = float(bx @ x[0]) - growth(float(x[0] @ x[0]))
            growth_margin = max(growth_margin, margin)

    ellipticity_ok = (eig_min >= 1.0 / k1 - tol) and (eig_max <= k1 + tol)
    if not ellipticity_ok:
        failures.append(
            f"ellipticity outside [1/K1, K1]: observed [{eig_min:.6g}, {eig_max:.6g}]")
    k3_ok = None
    if np.isfinite(k3):
        k3_ok = tv_ratio_max <= k3 + tol
        if not k3_ok:
            failures.append(
                f"TV-Lipschitz ratio {tv_ratio_max:.6g} exceeds declared K3={k3:.6g}")
    growth_ok = None
    if growth is not None:
        growth_ok = growth_margin <= tol
        if not growth_ok:
            failures.append(f"growth bound violated by {growth_margin:.6g}")
    return ValidationReport(
        probes=probes,
        ellipticity_min=eig_min,
        ellipticity_max=eig_max,
        k1_declared=k1,
        ellipticity_ok=ellipticity_ok,
        tv_ratio_max=tv_ratio_max,
        k3_declared=k3,
        k3_ok=k3_ok,
        growth_margin=growth_margin,
        growth_ok=growth_ok,
        failures=failures,
    )
