"""SVG figures: training loss curves and predicted-versus-true score scatter."""
import os

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from helpers.misc import ensure_dir  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.5),
    "svg.hashsalt": "vgan",
    "svg.fonttype": "none",
}


def savefig(fig, path):
    """Write an SVG without a creation date."""

    ensure_dir(os.path.dirname(path))
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_loss_curves(loss_frame, path):
    """Training (solid) and validation (dashed) loss per fold against epoch."""

    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        for fold, curve in loss_frame.groupby("fold", sort=True):
            line = ax.plot(curve["epoch"], curve["train_loss"], linewidth=0.8, label=f"fold {fold}")[0]
            validation = curve["validation_loss"].dropna()
            if len(validation):
                ax.plot(
                    curve.loc[validation.index, "epoch"],
                    validation,
                    linestyle="--",
                    linewidth=0.8,
                    color=line.get_color(),
                )
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss (standardized MSE)")
        ax.set_yscale("log")
        if loss_frame["fold"].nunique() <= 10:
            ax.legend(ncol=2, frameon=False)
        fig.tight_layout()
        savefig(fig, path)


def plot_score_scatter(truth, predictions, scale_max, path, title=None):
    """Predicted against true subject scores with the identity line."""

    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([0, scale_max], [0, scale_max], color="0.6", linewidth=0.8)
        ax.scatter(truth, predictions, s=12)
        ax.set_xlim(0, scale_max)
        ax.set_ylim(0, scale_max)
        ax.set_xlabel("true score")
        ax.set_ylabel("predicted score")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        savefig(fig, path)
