import matplotlib.pyplot as plt
import numpy as np

from .utils import colorscale_okabe_ito
from .utils import _apply_tick_locator, _save


def calibration_scatter(p_hat, score, q_true, filename=None, *, axes=None, **kwargs):
    """Scatter the true overlap against the classification confidence and a fused score

    Parameters
    ----------
    p_hat : np.ndarray
        Classification confidence per candidate.
    score : np.ndarray
        Fused ranking score per candidate.
    q_true : np.ndarray
        True overlap of every candidate with its lane.
    filename : str, optional
        Save the figure to this path.
    axes : pair of matplotlib.axes.Axes, optional
        If provided, the two panels are drawn on these axes.
    **kwargs :
        Keyword arguments are passed to matplotlib's scatter function

    Returns
    -------
    axes : pair of matplotlib.axes.Axes
    """
    if axes is None:
        fig, axes = plt.subplots(1, 2, figsize=(10, 4.5), sharey=True)
    kwargs.setdefault("s", 4)
    kwargs.setdefault("alpha", 0.4)

    for ax, x, color, label in zip(axes, (p_hat, score),
                                   ("light_blue", "orange"),
                                   ("classification confidence", "fused score")):
        x = np.asarray(x)
        ax.scatter(x, q_true, color=colorscale_okabe_ito[color], **kwargs)
        r = np.corrcoef(x, q_true)[0, 1]
        ax.set_title("Pearson {0:.2f}".format(r))
        ax.set_xlabel(label)
        _apply_tick_locator(ax)
    axes[0].set_ylabel('true LaneIoU')

    _save(filename)
    return axes


def gate_profile(offsets, gates, filename=None, *, ax=None):
    """Plot raw offsets, gates and gated offsets along the sample points of one prior"""
    offsets = np.asarray(offsets)
    gates = np.asarray(gates)
    if ax is None:
        fig, ax = plt.subplots()
    s = np.arange(len(offsets))
    ax.plot(s, offsets, color=colorscale_okabe_ito["blue"], label='offset')
    ax.plot(s, gates * offsets, color=colorscale_okabe_ito["red"], label='gated offset')
    ax.set_xlabel('sample point')
    ax.set_ylabel('pixels')
    ax2 = ax.twinx()
    ax2.plot(s, gates, color=colorscale_okabe_ito["green"], linestyle='--', label='gate')
    ax2.set_ylim(0, 1)
    ax2.set_ylabel('gate')
    ax.legend(loc="upper left")
    ax = _apply_tick_locator(ax)

    _save(filename)
    return ax
