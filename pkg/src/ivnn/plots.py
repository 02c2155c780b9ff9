"""SVG figures of sweep results: coefficient scatter, residual-norm scatter, residual traces."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import EmptyResults  # noqa: E402
from .train import IV, LS  # noqa: E402

STYLE = {LS: dict(color="tab:red", marker="x"), IV: dict(color="tab:blue", marker="o")}


def _apply_rc():
    # fixed hash salt and no date keep the SVG bytes reproducible
    plt.rcParams["svg.hashsalt"] = "ivnn"
    plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "ivnn"})
    plt.close(fig)
    return path


def _finite(rows, column):
    return [r for r in rows if np.isfinite(r[column])]


def scatter_with_means(rows, column: str, path, *, ylabel: str, reference: float | None = None, logy=False):
    """Per-criterion scatter of ``column`` against sigma, with the mean at each level."""
    rows = _finite(rows, column)
    if not rows:
        raise EmptyResults(f"no finite '{column}' values to plot")
    _apply_rc()
    fig, ax = plt.subplots(figsize=(6, 4))
    for crit in (LS, IV):
        sel = [r for r in rows if r["criterion"] == crit]
        if not sel:
            continue
        x = np.array([r["sigma_nu"] for r in sel])
        y = np.array([r[column] for r in sel])
        st = STYLE[crit]
        ax.scatter(x, y, s=12, alpha=0.5, color=st["color"], marker=st["marker"], label=f"{crit} realizations")
        levels = np.unique(x)
        means = [y[x == s].mean() for s in levels]
        ax.plot(levels, means, color=st["color"], lw=1.5, label=f"{crit} mean")
    if reference is not None:
        ax.axhline(reference, color="k", ls="--", lw=1, label="$\\phi_0$")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("$\\sigma_\\nu$")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_coefficients(rows, path, phi0_value: float | None = None):
    return scatter_with_means(rows, "monitored_coeff", path, ylabel="$W_0(3,1)$", reference=phi0_value)


def plot_residual_norms(rows, path):
    return scatter_with_means(rows, "residual_norm", path, ylabel="$\\|f_0 - F_{\\hat\\phi}(y_0)\\|_2$")


def plot_traces(traces: dict, path, *, ts: float, title: str = ""):
    """``traces`` maps a label (``LS`` / ``IV`` or free text) to a normalized residual array."""
    traces = {k: np.asarray(v) for k, v in traces.items() if v is not None and len(v)}
    if not traces:
        raise EmptyResults("no residual traces to plot")
    _apply_rc()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, v in traces.items():
        color = STYLE.get(label, {}).get("color")
        ax.plot(np.arange(v.size) * ts, v, lw=1, color=color, label=label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("normalized residual")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
