"""Static figures from parsed artifacts.

All statistics come from the files: every x/y series handed to matplotlib is
a column returned by :mod:`meta_oed_figures.artifacts`, untouched.  Figures
are written with the Agg backend, so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from meta_oed_figures.artifacts import LEVELS, load_atlas, load_curves

LEVEL_COLORS = {"none": "tab:gray", "mild": "tab:orange", "extreme": "tab:red"}
_DPI = 150


def render_atlas(atlas_path, out_path):
    """Three-panel threat atlas; returns the saved figure.

    Panels: the task population in (transferable, task) parameter space
    colored by threat level; task-parameter plausibility against the transfer
    score at the chosen design; and per-task score-at-chosen-design against
    the best score over all designs, with the all-negative quadrant shaded.
    """
    table = load_atlas(atlas_path)
    frame = table.frame
    psi_col = "psi" if "psi" in frame.columns else "psi_avg"
    psi_label = "task parameter" if psi_col == "psi" else "task parameter (mean)"

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.6))
    for level in LEVELS:
        rows = frame[frame["level"] == level]
        if len(rows) == 0:
            continue
        style = dict(s=12, alpha=0.7, color=LEVEL_COLORS[level], label=level)
        axes[0].scatter(rows["theta"], rows[psi_col], **style)
        axes[1].scatter(rows["p_psi_given_theta"], rows["rt_at_xetig"], **style)
        axes[2].scatter(rows["rt_at_xetig"], rows["max_rt"], **style)

    axes[0].set_xlabel("transferable parameter")
    axes[0].set_ylabel(psi_label)
    axes[0].set_title("threat level over the task population")
    axes[0].legend(title="level", fontsize=8)

    axes[1].axhline(0.0, color="black", lw=0.8)
    axes[1].set_xlabel("task-parameter plausibility p(task | transferable)")
    axes[1].set_ylabel("transfer score at chosen design")
    axes[1].set_title("plausibility vs transfer score")

    axes[2].axhline(0.0, color="black", lw=0.8)
    axes[2].axvline(0.0, color="black", lw=0.8)
    x0 = min(float(frame["rt_at_xetig"].min()), 0.0)
    y0 = min(float(frame["max_rt"].min()), 0.0)
    axes[2].fill([x0, 0.0, 0.0, x0], [y0, y0, 0.0, 0.0], color="tab:red", alpha=0.08, zorder=0)
    axes[2].set_xlabel("transfer score at chosen design")
    axes[2].set_ylabel("best transfer score over designs")
    axes[2].set_title("no design helps inside the shaded quadrant")

    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    return fig


def render_curves(curves_paths, out_path):
    """Mean learning curves with interquartile bands; returns the saved figure.

    Accepts one or two curves files; with two, both are overlaid for a
    policy-vs-policy comparison.  A ``bound_line`` column, when present, is
    drawn as a dashed reference line.
    """
    if isinstance(curves_paths, (str, bytes)) or not hasattr(curves_paths, "__iter__"):
        curves_paths = [curves_paths]
    fig, ax = plt.subplots(figsize=(7, 4.6))
    for path, color in zip(curves_paths, ("tab:blue", "tab:green")):
        table = load_curves(path)
        frame = table.frame
        label = str(table.config.get("policy", path))
        ax.plot(frame["t"], frame["mean"], color=color, label=label)
        ax.fill_between(frame["t"], frame["q25"], frame["q75"], color=color, alpha=0.25)
        if "bound_line" in frame.columns:
            ax.plot(
                frame["t"],
                frame["bound_line"],
                color="black",
                linestyle="--",
                lw=1.0,
                label=f"damage bound ({label})",
            )
    ax.set_xlabel("step")
    ax.set_ylabel("generalisation metric")
    ax.set_title("mean and interquartile range over replications")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    return fig
