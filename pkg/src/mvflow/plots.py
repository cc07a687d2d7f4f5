"""Figure rendering for experiment reports.

Each experiment kind with a time series or ladder gets one PNG next to
its CSV output.  Rendering is pure file output (Agg backend) and, like
the delimited data, byte-identical across reruns of the same config.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_PNG_META = {"Software": "mvflow"}


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    tmp = path + ".tmp"
    fig.savefig(tmp, dpi=150, format="png", metadata=_PNG_META)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def render_stability(report, out_dir: str) -> str:
    fields, rows = report.tables["distances"]
    t = [r["t"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4), constrained_layout=True)
    ax1.plot(t, [r["tv"] for r in rows], label="TV")
    ax1.plot(t, [r["w_theta"] for r in rows], label=r"$W_\theta$")
    ax1.set_xlabel("t")
    ax1.set_ylabel("distance")
    ax1.set_title("distances between the two solution laws")
    ax1.legend()
    ax2.plot(t, [r["tv_sq"] for r in rows], label="TV$^2$")
    if rows[0]["b1_envelope"] is not None:
        allowance = report.summary.get("allowance", 0.0)
        ax2.plot(t, [r["b1_envelope"] + allowance for r in rows],
                 linestyle="--", label="envelope + allowance")
    ax2.set_xlabel("t")
    ax2.set_yscale("log")
    ax2.set_title("squared-TV stability envelope")
    ax2.legend()
    return _save(fig, out_dir, "stability.png")


def render_contraction(report, out_dir: str) -> str:
    fields, rows = report.tables["bounds"]
    t = [r["t"] for r in rows]
    allowance = report.summary.get("allowance", 0.0)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4), constrained_layout=True)
    ax1.plot(t, [r["lhs_tv_sq"] for r in rows], label="LHS$^2$")
    ax1.plot(t, [r["rhs_quadrature"] + allowance for r in rows],
             linestyle="--", label="quadrature + allowance")
    ax1.set_xlabel("t")
    ax1.set_title("squared-TV contraction bound")
    ax1.legend()
    ax2.plot(t, [r["lhs_tv"] for r in rows], label="measured TV")
    ax2.plot(t, [r["pinsker_bound"] for r in rows], linestyle="--",
             label="entropy route bound")
    ax2.set_xlabel("t")
    ax2.set_title("TV against the entropy bound")
    ax2.legend()
    return _save(fig, out_dir, "contraction.png")


def render_picard(report, out_dir: str) -> str:
    fields, rows = report.tables["diagnostics"]
    fig, ax = plt.subplots(figsize=(5.5, 3.4), constrained_layout=True)
    for window in sorted({r["window"] for r in rows}):
        sub = [r for r in rows if r["window"] == window]
        ax.semilogy([r["iter"] for r in sub],
                    [max(r["distance"], 1e-16) for r in sub],
                    marker="o", label=f"window {window}")
    ax.axhline(report.summary["tol"], color="gray", linestyle=":", label="tol")
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"{report.summary['metric']} distance")
    ax.set_title("fixed-point iteration")
    ax.legend()
    return _save(fig, out_dir, "picard.png")


def render_chaos(report, out_dir: str) -> str:
    fields, rows = report.tables["chaos"]
    fig, ax = plt.subplots(figsize=(5.5, 3.4), constrained_layout=True)
    ax.loglog([r["n_particles"] for r in rows],
              [r["rho_tilde"] for r in rows], marker="o")
    ax.set_xlabel("particles")
    ax.set_ylabel(r"$\tilde\rho$ to fixed-point flow")
    ax.set_title("particle-system cross-check")
    return _save(fig, out_dir, "chaos.png")


_RENDERERS = {
    "stability": render_stability,
    "contraction": render_contraction,
    "picard": render_picard,
    "chaos": render_chaos,
}


def render_report(report, out_dir: str) -> list[str]:
    """Render the figures for a report; kinds without one are a no-op."""
    renderer = _RENDERERS.get(report.kind)
    if renderer is None:
        return []
    return [renderer(report, out_dir)]
