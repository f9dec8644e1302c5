import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy.stats import norm

from plot_constants import COLORS, FIGSIZE, PROVIDER_COLORS

# DET axes are drawn on the normal deviate scale between these rates
DET_LIMITS = (1e-3, 0.5)


def savefig(path, fig):
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    fig.savefig(path, dpi = 300)


def set_tick_params(ax):
    ax.tick_params(
        direction = "in",
        length = 3,
        width = 1,
        labelsize = 12,
        bottom = True,
        top = True,
        left = True,
        right = True
    )


def provider_color(provider, index = 0):
    return PROVIDER_COLORS.get(provider, COLORS[index % len(COLORS)])


def plot_det(curves: dict, path, eers = None):
    """ DET curves on normal deviate axes.

    Args:
        curves: Label to (FAR, FRR) points.
        path: Output image.
        eers: Optional label to EER, marked on each curve.
    """
    lo, hi = DET_LIMITS
    fig = plt.figure(figsize = FIGSIZE)
    ax = fig.add_subplot(111)
    for i, (label, points) in enumerate(curves.items()):
        points = np.clip(np.array(points, dtype = np.float64), lo, hi)
        color = provider_color(label, i + 1)
        ax.plot(
            norm.ppf(points[:, 0]), norm.ppf(points[:, 1]), c = color,
            label = label,
        )
        if eers is not None and label in eers:
            eer = np.clip(eers[label], lo, hi)
            ax.scatter(
                [norm.ppf(eer)], [norm.ppf(eer)], c = [list(color)], s = 20,
                marker = "o",
            )

    ticks = np.array([0.001, 0.01, 0.05, 0.1, 0.2, 0.4])
    labels = ["{:g}".format(100. * t) for t in ticks]
    ax.set_xticks(norm.ppf(ticks))
    ax.set_xticklabels(labels)
    ax.set_yticks(norm.ppf(ticks))
    ax.set_yticklabels(labels)
    ax.set_xlim(norm.ppf(lo), norm.ppf(hi))
    ax.set_ylim(norm.ppf(lo), norm.ppf(hi))
    ax.plot([norm.ppf(lo), norm.ppf(hi)], [norm.ppf(lo), norm.ppf(hi)],
            c = COLORS[0], linestyle = "dotted")
    ax.set_xlabel("false accept rate (%)")
    ax.set_ylabel("false reject rate (%)")
    set_tick_params(ax)
    ax.legend(fontsize = "small")

    savefig(path, fig)
    plt.close(fig)


def plot_size_sweep(rows, path, prefix = "Multi 4"):
    """ Median EER against training-set size for the rows named `prefix`
    and `prefix.k`, one line per provider, or per base and provider when the
    rows come from several bases.
    """
    several = len({row.get("base") for row in rows}) > 1
    points = {}
    for row in rows:
        if row["seed"] != "median":
            continue
        name = row["name"]
        if name != prefix and not name.startswith(prefix + "."):
            continue
        for provider, eer in row["eer"].items():
            if several:
                provider = "{} {}".format(row["base"], provider)
            points.setdefault(provider, []).append(
                (row["train_size"], 100. * eer)
            )

    fig = plt.figure(figsize = FIGSIZE)
    ax = fig.add_subplot(111)
    ax.set_xscale("log")
    for i, (provider, xy) in enumerate(points.items()):
        xy = sorted(xy)
        ax.plot(
            [p[0] for p in xy], [p[1] for p in xy], marker = ".",
            c = provider_color(provider, i + 1), label = provider,
        )
    ax.set_xlabel("training examples")
    ax.set_ylabel("EER (%)")
    set_tick_params(ax)
    if points:
        ax.legend(fontsize = "small")

    savefig(path, fig)
    plt.close(fig)
