import contextlib

import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns
from matplotlib.colors import LinearSegmentedColormap

from structural_analysis import KalmanDecomposition

###############
# PLOT CONFIG #
###############


def invert_color(hex_color):
    """Invert a color from hexadecimal to its complementary color."""
    hex_color = hex_color.lstrip("#")
    rgb = (int(hex_color[i : i + 2], 16) for i in (0, 2, 4))
    return "#" + "".join(f"{255 - c:02X}" for c in rgb)


############### Colormap and dark mode
COLORMAP_LIGHT = [
    "#4CC9F0",  # light blue - q quadrature, input pulse
    "#4361EE",  # dark blue - p quadrature, output pulse
    "#7209B7",  # purple - covariance
    "#F72585",  # pink - literal convention
    "#FF4D00",  # orange - consistent convention
]
COLORMAP_DARK = [invert_color(color) for color in COLORMAP_LIGHT]
DARK_MODE = False
COLORMAP = COLORMAP_DARK if DARK_MODE else COLORMAP_LIGHT
SEQUENTIAL_COLORMAP = LinearSegmentedColormap.from_list(
    "sequential_colormap", ["#FFFFFF", COLORMAP[1], COLORMAP[3]]
)
COLORS_DICT = {
    "q": COLORMAP[0],
    "p": COLORMAP[1],
    "in": COLORMAP[0],
    "out": COLORMAP[1],
    "cov": COLORMAP[2],
    "literal": COLORMAP[3],
    "consistent": COLORMAP[4],
}
################ Plot settings
DPI = 200
FONT_SIZE = 20
TITLE_FONT_SIZE = np.floor(FONT_SIZE * 1.25)
LABEL_FONT_SIZE = np.floor(FONT_SIZE * 1)
LEGEND_FONT_SIZE = np.floor(FONT_SIZE * 0.75)
LOC = "best"
################


def show_params():
    print("Plot parameters (set in plots.py) : \n- COLORMAP : ", end="")
    for color in COLORMAP:
        print(
            f"\033[38;2;{int(color[1:3], 16)};{int(color[3:5], 16)};{int(color[5:], 16)}m█\033[0m",
            end="",
        )
    print(
        f"\n- DPI : {DPI}\n- Font size : {FONT_SIZE}\n- Title font size : {TITLE_FONT_SIZE}\n- Label font size : {LABEL_FONT_SIZE}"
    )


def get_style_context():
    """Used to render plots with a custom palette and in dark mode if DARK_MODE is True, else in regular mode."""
    sns.set_palette(COLORMAP)
    if DARK_MODE:
        return plt.style.context("dark_background")
    return contextlib.nullcontext()


def _format_plot(
    ax,
    xlabel=None,
    ylabel=None,
    xlims=None,
    ylims=None,
    title=None,
    legend=False,
):
    """Format the plot with the specified elements."""
    if xlims is not None:
        ax.set_xlim(xmin=xlims[0], xmax=xlims[1])
    if ylims is not None:
        ax.set_ylim(ymin=ylims[0], ymax=ylims[1])
    ax.tick_params(axis="both", which="major", labelsize=LEGEND_FONT_SIZE)
    if xlabel is not None:
        ax.set_xlabel(xlabel, fontsize=LABEL_FONT_SIZE)
    if ylabel is not None:
        ax.set_ylabel(ylabel, fontsize=LABEL_FONT_SIZE)
    if title is not None:
        ax.set_title(title, fontsize=TITLE_FONT_SIZE)
    if legend:
        ax.legend(fontsize=LEGEND_FONT_SIZE, loc=LOC, frameon=False)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.grid(False)


###################
# PLOT FUNCTIONS  #
###################


def plot_filter_trajectory(frame, title="Conditional moments"):
    """Conditional means and covariance entries of a single-mode filter table.

    Args:
        frame: Table with columns t, pi_q, pi_p, V11, V12, V22.
        title: Figure title.
    """
    with get_style_context():
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(16, 6), dpi=DPI)
        for name in ("q", "p"):
            ax1.plot(frame["t"], frame[f"pi_{name}"], lw=2, color=COLORS_DICT[name], label=rf"$\pi_t({name})$")
        _format_plot(ax1, xlabel="t", ylabel="Conditional mean", title=title, legend=True)
        for column, style in (("V11", "-"), ("V12", ":"), ("V22", "--")):
            ax2.plot(frame["t"], frame[column], lw=2, ls=style, color=COLORS_DICT["cov"], label=column)
        _format_plot(ax2, xlabel="t", ylabel="Covariance", legend=True)
        fig.tight_layout()
    return fig


def plot_back_action(finals, bins=40, title="Spread of the final p estimate"):
    """Histograms of π_T(p) over an ensemble, one per detuning.

    Args:
        finals: Mapping from a label such as "ω = 0.5" to the final p means.
    """
    with get_style_context():
        fig, ax = plt.subplots(figsize=(8, 6), dpi=DPI)
        for k, (label, values) in enumerate(finals.items()):
            sns.histplot(
                np.asarray(values),
                bins=bins,
                ax=ax,
                color=COLORMAP[k % len(COLORMAP)],
                label=label,
                element="step",
                stat="density",
            )
        _format_plot(ax, xlabel=r"$\pi_T(p)$", ylabel="Density", title=title, legend=True)
    return fig


def plot_wigner(frame, title="Wigner function"):
    """Filled contours of a Wigner grid table with columns w1, w2, W."""
    grid = frame.pivot(index="w2", columns="w1", values="W")
    with get_style_context():
        fig, ax = plt.subplots(figsize=(7, 6), dpi=DPI)
        contours = ax.contourf(
            grid.columns.to_numpy(),
            grid.index.to_numpy(),
            grid.to_numpy(),
            levels=20,
            cmap=SEQUENTIAL_COLORMAP,
        )
        fig.colorbar(contours, ax=ax)
        ax.set_aspect("equal")
        _format_plot(ax, xlabel="q", ylabel="p", title=title)
    return fig


def plot_pulses(frame, title="Single-photon pulse"):
    """Input and output pulse amplitudes from a table with re_in, im_in, re_out, im_out."""
    with get_style_context():
        fig, ax = plt.subplots(figsize=(10, 6), dpi=DPI)
        for side in ("in", "out"):
            amplitude = frame[f"re_{side}"] ** 2 + frame[f"im_{side}"] ** 2
            ax.plot(frame["t"], amplitude, lw=2, color=COLORS_DICT[side], label=rf"$|\xi_{{{side}}}(t)|^2$")
        _format_plot(ax, xlabel="t", ylabel="Photon density", title=title, legend=True)
    return fig


def plot_transfer_residuals(frame, tol=None, title="Unitarity of the transfer function"):
    with get_style_context():
        fig, ax = plt.subplots(figsize=(10, 6), dpi=DPI)
        residual = np.maximum(frame["unitarity_residual"].to_numpy(), np.finfo(float).tiny)
        ax.semilogy(frame["omega"], residual, lw=2, marker="o", ms=3)
        if tol is not None:
            ax.axhline(tol, color="black", linestyle="--")
        _format_plot(ax, xlabel=r"$\omega$", ylabel=r"$\|\Xi^\flat\Xi - I\|$", title=title)
    return fig


def plot_kalman_blocks(kd: KalmanDecomposition, title="Kalman canonical form"):
    """Heatmap of |Ā| with the q_h, p_h, co and c̄ō blocks outlined."""
    with get_style_context():
        fig, ax = plt.subplots(figsize=(8, 7), dpi=DPI)
        sns.heatmap(
            np.abs(kd.A_bar),
            ax=ax,
            cmap=SEQUENTIAL_COLORMAP,
            xticklabels=kd.labels,
            yticklabels=kd.labels,
            square=True,
            cbar_kws={"label": r"$|\bar{A}_{ij}|$"},
        )
        size = kd.A_bar.shape[0]
        edges = np.cumsum([len(block) for block in kd.blocks.values()])
        for edge in edges[(edges > 0) & (edges < size)]:
            ax.axhline(edge, color="black", lw=1)
            ax.axvline(edge, color="black", lw=1)
        ax.set_title(title, fontsize=TITLE_FONT_SIZE)
    return fig
