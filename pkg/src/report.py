"""
report.py
Summary tables and plots of FID curves and projection sweeps.
"""
import io
from pathlib import Path
from typing import Dict, Optional, Union

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from storage.formats import atomic_write  # noqa: E402
from storage.images import PNG_HASH_KEY  # noqa: E402

plt.rcParams["savefig.bbox"] = "tight"


def fid_table(curve: pd.DataFrame) -> pd.DataFrame:
    """Pivot of FID with one row per embedding source and one column per alpha"""
    return curve.pivot_table(index="embedding_source", columns="alpha", values="fid", aggfunc="mean")


def peak_ratios(curve: pd.DataFrame) -> Dict[str, float]:
    """FID at the largest alpha divided by FID at alpha 0, per source"""
    table = fid_table(curve)
    first, last = table.columns.min(), table.columns.max()
    return {source: float(row[last] / row[first]) if row[first] > 0 else float("inf")
            for source, row in table.iterrows()}


def _save_figure(fig, path: Union[str, Path], config_hash: str = "") -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=150, metadata={PNG_HASH_KEY: config_hash})
    plt.close(fig)
    atomic_write(path, buffer.getvalue())
    return Path(path)


def plot_fid_curve(curve: pd.DataFrame, path: Union[str, Path], config_hash: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for source, group in curve.groupby("embedding_source"):
        group = group.sort_values("alpha")
        ax.plot(group["alpha"], group["fid"], marker="o", label=source)
    ax.set_xlabel("mixing coefficient α")
    ax.set_ylabel("FID")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save_figure(fig, path, config_hash)


def plot_sweep(sweep: pd.DataFrame, path: Union[str, Path], config_hash: str = "") -> Path:
    """Heat map of reconstruction error, rows = projection dim, columns = density"""
    table = sweep.pivot_table(index="proj_dim", columns="density", values="recon_error", aggfunc="mean")
    fig, ax = plt.subplots(figsize=(1.2 * len(table.columns) + 2, 0.8 * len(table.index) + 1.5))
    image = ax.imshow(table.values, cmap="viridis_r")
    ax.set_xticks(np.arange(len(table.columns)), [f"{d:g}" for d in table.columns])
    ax.set_yticks(np.arange(len(table.index)), [str(d) for d in table.index])
    ax.set_xlabel("density")
    ax.set_ylabel("projection dim")
    for (r, c), value in np.ndenumerate(table.values):
        ax.text(c, r, f"{value:.3f}", ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(image, ax=ax, label="nats / pixel")
    return _save_figure(fig, path, config_hash)


def render_report(curve: pd.DataFrame, plot_path: Union[str, Path], config_hash: Optional[str] = None) -> str:
    """
    Text summary of an FID curve; also writes the curve plot, stamped with
    `config_hash` (default: the hash the curve was read with, if any).
    """
    if config_hash is None:
        config_hash = curve.attrs.get("config_hash", "")
    table = fid_table(curve)
    lines = ["FID by embedding source and α", table.to_string(float_format=lambda v: f"{v:.4f}"), ""]
    for source, ratio in peak_ratios(curve).items():
        lines.append(f"{source}: FID(α={table.columns.max():g}) / FID(α={table.columns.min():g}) = {ratio:.3f}")
    plot_fid_curve(curve, plot_path, config_hash)
    lines.append(f"\nCurve plot: {plot_path}")
    return "\n".join(lines)
