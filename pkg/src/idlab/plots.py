"""Figure rendering for the report-producing subcommands.

Each writer takes the already-computed rows and saves a PNG next to the
delimited output.  Rendering never feeds back into the numerics; disable
with --no-plot when running headless pipelines that only consume CSVs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def scaling_figure(rows: list[dict], out_path: str | Path) -> Path:
    """Log-log growth of every kernel-norm quantity against its prediction."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("regime") == "constant":
            continue
        groups.setdefault((r["quantity"], r["p"], r["dim"]), []).append(r)
    n = max(len(groups), 1)
    ncols = 3
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4 * ncols, 3 * nrows), squeeze=False)
    for ax, (key, grp) in zip(axes.ravel(), sorted(groups.items(), key=str)):
        grp = sorted(grp, key=lambda r: r["eps"])
        eps = np.array([r["eps"] for r in grp])
        val = np.array([r["value"] for r in grp])
        ax.loglog(eps, val, "o-", ms=4, label="measured")
        r0 = grp[0]
        if r0["regime"] == "power":
            ref = val[-1] * (eps / eps[-1]) ** r0["predicted_exponent"]
            ax.loglog(eps, ref, "k--", lw=1, label=f"slope {r0['predicted_exponent']:+.2f}")
        elif r0["regime"] == "log":
            ref = val[-1] * (np.abs(np.log(eps)) / abs(np.log(eps[-1]))) ** r0["log_power"]
            ax.loglog(eps, ref, "k--", lw=1, label=f"|log eps|^{r0['log_power']:.2f}")
        ax.set_title(f"{key[0]} p={key[1]:g} d={key[2]}", fontsize=9)
        ax.legend(fontsize=7)
        ax.set_xlabel("eps")
    for ax in axes.ravel()[len(groups) :]:
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, out_path)


def discrimination_figure(rows: list[dict], manifest: dict, out_path: str | Path) -> Path:
    rows = sorted(rows, key=lambda r: r["eps"])
    eps = np.array([r["eps"] for r in rows])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    principal = np.abs([r["principal"] for r in rows])
    ax1.loglog(eps, principal, "o-", label="principal term")
    lower = np.array([r.get("lower_order_sum", np.nan) for r in rows], dtype=float)
    if np.isfinite(lower).any():
        ax1.loglog(eps, lower, "s-", label="lower-order sum")
    if principal.max() > 0:
        ref = principal[-1] * (eps / eps[-1]) ** manifest.get("predicted_slope", -0.5)
        ax1.loglog(eps, ref, "k--", lw=1, label="predicted slope")
    ax1.set_xlabel("eps")
    ax1.legend(fontsize=8)
    ax1.set_title(f"verdict: {manifest.get('verdict', '?')}", fontsize=10)
    flux = np.array([abs(r.get("flux", np.nan)) for r in rows], dtype=float)
    if np.isfinite(flux).any():
        ax2.loglog(eps, flux, "o-", label="|flux pairing|")
        near = np.array([abs(r.get("flux_near", np.nan)) for r in rows], dtype=float)
        far = np.array([abs(r.get("flux_far", np.nan)) for r in rows], dtype=float)
        if np.isfinite(near).any():
            ax2.loglog(eps, near, "^-", ms=4, label="near field")
            ax2.loglog(eps, far, "v-", ms=4, label="far field")
        ax2.set_xlabel("eps")
        ax2.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)


def trace_figure(times: np.ndarray, xs: np.ndarray, trace: np.ndarray, out_path: str | Path) -> Path:
    """Space-time heat map of the measurement-segment trace."""
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    pm = ax.pcolormesh(xs, times, trace, shading="nearest")
    fig.colorbar(pm, ax=ax, label="u on Gamma_M")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    fig.tight_layout()
    return _save(fig, out_path)


def gaps_figure(rows: list[dict], out_path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    vals = [r.get("normalized_gap", r.get("pairing", 0.0)) for r in rows]
    ax.bar(range(len(vals)), vals)
    ax.set_xlabel("battery member")
    ax.set_ylabel("normalized gap")
    ax.set_yscale("log" if max(vals, default=0) > 0 else "linear")
    fig.tight_layout()
    return _save(fig, out_path)


def recovery_figure(
    u_knots: np.ndarray,
    recovered: np.ndarray,
    init: np.ndarray,
    objective_history: list[float],
    out_path: str | Path,
    true_values: np.ndarray | None = None,
) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(u_knots, init, "s--", label="initial", color="gray")
    ax1.plot(u_knots, recovered, "o-", label="recovered")
    if true_values is not None:
        ax1.plot(u_knots, true_values, "k:", label="true")
    ax1.set_xlabel("u")
    ax1.set_ylabel("a(u)")
    ax1.legend(fontsize=8)
    ax2.semilogy(objective_history, "o-")
    ax2.set_xlabel("accepted step")
    ax2.set_ylabel("objective")
    fig.tight_layout()
    return _save(fig, out_path)
