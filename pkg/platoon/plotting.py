"""Static figures of platoon traces, one PNG per panel."""

import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .traces import vehicle_series  # noqa: E402

logger = logging.getLogger(__name__)

# panel name -> [(column, y label, title)]; one figure per panel, one axis per entry
PANELS = {
    "positions": [("x", "Position (m)", "Positions")],
    "speeds": [("v", "Speed (m/s)", "Speed Profiles")],
    "controls": [("u", "Control (m/s^2)", "Controls")],
    "errors": [
        ("dx_err", "Spacing Error (m)", "Spacing Errors"),
        ("dv_err", "Speed Error (m/s)", "Speed Errors"),
    ],
}


def _label(vehicle_id):
    return "HDV" if vehicle_id == 0 else f"CAV {vehicle_id}"


def _draw(ax, frame, column, ylabel, title):
    table = vehicle_series(frame, column)
    for vehicle_id in table.columns:
        series = table[vehicle_id]
        if series.isna().all():
            continue
        ax.plot(table.index, series, label=_label(vehicle_id))
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="upper right")


def plot_trace(frame, plot_dir, stem, title=None):
    """Save the position, speed, control and error figures of a trace.

    Args:
        frame (pandas.DataFrame): Trace in the CSV column layout.
        plot_dir (str): Output directory, created if missing.
        stem (str): File name prefix; files are ``<stem>_<panel>.png``.
        title (str|None): Figure title prefix.

    Returns:
        list[str]: Paths written, in panel order.
    """
    os.makedirs(plot_dir, exist_ok=True)
    paths = []
    for panel, entries in PANELS.items():
        fig, axes = plt.subplots(len(entries), 1, figsize=(12, 4 * len(entries)), squeeze=False)
        for ax, (column, ylabel, panel_title) in zip(axes[:, 0], entries):
            _draw(ax, frame, column, ylabel, panel_title)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        path = os.path.join(plot_dir, f"{stem}_{panel}.png")
        fig.savefig(path, dpi=100)
        plt.close(fig)
        logger.debug("saved %s", path)
        paths.append(path)
    return paths


def trace_stem(trace_path):
    return os.path.splitext(os.path.basename(trace_path))[0]
