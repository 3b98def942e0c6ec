"""Shared plotting helpers: the colour-blind safe palette, tick limits and saving."""

import matplotlib.pyplot as plt

# Color Universal Design palette (Okabe & Ito)
colorscale_okabe_ito = {"orange": "#E69F00", "light_blue": "#56B4E9",
                        "green": "#009E73", "yellow": "#F0E442",
                        "blue": "#0072B2", "red": "#D55E00",
                        "pink": "#CC79A7", "black": "#000000"}


def _apply_tick_locator(ax, nx=5, ny=5):
    """Limit the number of major ticks on both axes."""
    ax.xaxis.set_major_locator(plt.MaxNLocator(nx))
    ax.yaxis.set_major_locator(plt.MaxNLocator(ny))
    return ax


def _save(filename, dpi=150):
    """Write the current figure when a filename is given."""
    if filename:
        plt.savefig(filename, dpi=dpi, bbox_inches='tight')
