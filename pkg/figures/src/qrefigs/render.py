"""Render figures from the solver CLI's CSV exports.

Strictly presentational: every number plotted comes straight out of the CSV
(the one allowed arithmetic is the socialism-minus-market difference, which
is itself the quantity the welfare figure displays).  Outputs are
deterministic: fixed canvas, fixed colors, no timestamps, and a provenance
footer carrying the input file names and the repository revision.
"""
from __future__ import annotations

import csv
import subprocess
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "FigureError",
    "KINDS",
    "load_csv",
    "render",
    "render_path_cross_section",
    "render_procedure_overlay",
    "render_surface",
    "render_welfare_diff",
]

KINDS = ("surface", "path-cross-section", "path-overlay", "welfare-diff")

_PROCEDURE_COLORS = {"anarchy": "red", "socialism": "blue", "market": "purple"}


class FigureError(ValueError):
    """Bad or missing figure input; the message names the offending piece."""


def load_csv(path: str | Path, required: Sequence[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FigureError(f"input file {path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FigureError(f"{path}: empty CSV (no header)")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise FigureError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise FigureError(f"{path}: empty CSV (no data rows)")
    out: dict[str, np.ndarray] = {}
    for name in reader.fieldnames:
        out[name] = np.array([float(r[name]) for r in rows])
    return out


def _revision() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if res.returncode == 0:
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _finish(fig, inputs: Sequence[str | Path], output: str | Path) -> None:
    names = ", ".join(Path(p).name for p in inputs)
    fig.text(0.01, 0.005, f"input: {names} | rev: {_revision()}", fontsize=6)
    fig.savefig(output, dpi=150)
    plt.close(fig)


def _branch_groups(data: dict[str, np.ndarray]):
    for bid in np.unique(data["branch_id"]):
        mask = data["branch_id"] == bid
        yield int(bid), mask


def render_surface(
    inputs: Sequence[str | Path],
    output: str | Path,
    z_column: str = "eu_1",
    fold_threshold: float = 0.05,
    title: str = "",
) -> None:
    """3D view of an expected-utility surface, branch-colored, folds marked.

    The first input is the surface CSV; an optional second input is a trace
    CSV drawn on top of the surface as a highlighted parameter path.
    """
    if not inputs:
        raise FigureError("surface figure needs a surface CSV input")
    data = load_csv(inputs[0], ["beta_0", "beta_1", "branch_id", z_column, "fold_indicator"])
    fig = plt.figure(figsize=(8, 6))
    ax = fig.add_subplot(projection="3d")
    cmap = plt.get_cmap("tab10")
    for bid, mask in _branch_groups(data):
        ax.scatter(
            data["beta_0"][mask],
            data["beta_1"][mask],
            data[z_column][mask],
            s=4,
            color=cmap(bid % 10),
            label=f"branch {bid}",
            depthshade=False,
        )
    folds = np.abs(data["fold_indicator"]) < fold_threshold
    if np.any(folds):
        ax.scatter(
            data["beta_0"][folds],
            data["beta_1"][folds],
            data[z_column][folds],
            s=10,
            color="black",
            marker="x",
            label="fold edge",
            depthshade=False,
        )
    if len(inputs) > 1:
        path = load_csv(inputs[1], ["beta_0", "beta_1", z_column])
        ax.plot(
            path["beta_0"],
            path["beta_1"],
            path[z_column],
            color="black",
            linewidth=2,
            label="path",
        )
    ax.set_xlabel("beta_0")
    ax.set_ylabel("beta_1")
    ax.set_zlabel(z_column)
    ax.legend(loc="upper left", fontsize=7)
    if title:
        ax.set_title(title)
    _finish(fig, inputs, output)


def render_path_cross_section(
    inputs: Sequence[str | Path],
    output: str | Path,
    x_column: str = "beta_0",
    y_column: str = "eu_0",
    title: str = "",
) -> None:
    """Expected utility along a traced path against one rationality axis."""
    if not inputs:
        raise FigureError("cross-section figure needs a trace CSV input")
    data = load_csv(inputs[0], ["t", x_column, y_column, "jump_flag"])
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(data[x_column], data[y_column], "-o", markersize=3, color="tab:blue")
    jumps = data["jump_flag"] > 0
    if np.any(jumps):
        ax.scatter(
            data[x_column][jumps], data[y_column][jumps],
            color="red", zorder=3, label="jump",
        )
        ax.legend(fontsize=8)
    ax.set_xlabel(x_column)
    ax.set_ylabel(y_column)
    if title:
        ax.set_title(title)
    _finish(fig, inputs, output)


def render_procedure_overlay(
    inputs: Sequence[str | Path],
    output: str | Path,
    z_column: str = "eu_0",
    title: str = "",
) -> None:
    """Surface plus the anarchy (red), socialism (blue), market (purple) paths.

    Inputs: surface CSV, then the three procedure trace CSVs in that order.
    """
    if len(inputs) != 4:
        raise FigureError(
            "overlay figure needs 4 inputs: surface, anarchy, socialism, market"
        )
    surface = load_csv(inputs[0], ["beta_0", "beta_1", "branch_id", z_column])
    fig = plt.figure(figsize=(8, 6))
    ax = fig.add_subplot(projection="3d")
    cmap = plt.get_cmap("Greys")
    for bid, mask in _branch_groups(surface):
        ax.scatter(
            surface["beta_0"][mask],
            surface["beta_1"][mask],
            surface[z_column][mask],
            s=3,
            color=cmap(0.3 + 0.15 * (bid % 4)),
            depthshade=False,
        )
    for name, path in zip(_PROCEDURE_COLORS, inputs[1:]):
        trace = load_csv(path, ["beta_0", "beta_1", z_column])
        ax.plot(
            trace["beta_0"],
            trace["beta_1"],
            trace[z_column],
            color=_PROCEDURE_COLORS[name],
            linewidth=2,
            label=name,
        )
    ax.set_xlabel("beta_0")
    ax.set_ylabel("beta_1")
    ax.set_zlabel(z_column)
    ax.legend(loc="upper left", fontsize=8)
    if title:
        ax.set_title(title)
    _finish(fig, inputs, output)


def render_welfare_diff(
    inputs: Sequence[str | Path],
    output: str | Path,
    title: str = "",
) -> None:
    """Socialism-minus-market discounted welfare against the discount factor."""
    if not inputs:
        raise FigureError("welfare figure needs a welfare CSV input")
    data = load_csv(inputs[0], ["gamma", "Q_socialism", "Q_market"])
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(
        data["gamma"],
        data["Q_socialism"] - data["Q_market"],
        "-o",
        markersize=3,
        color="tab:green",
    )
    ax.axhline(0.0, color="black", linewidth=1)
    ax.set_xlabel("gamma")
    ax.set_ylabel("Q_socialism - Q_market")
    if title:
        ax.set_title(title)
    _finish(fig, inputs, output)


def render(kind: str, inputs: Sequence[str | Path], output: str | Path, **kwargs) -> None:
    if kind == "surface":
        render_surface(inputs, output, **kwargs)
    elif kind == "path-cross-section":
        render_path_cross_section(inputs, output, **kwargs)
    elif kind == "path-overlay":
        render_procedure_overlay(inputs, output, **kwargs)
    elif kind == "welfare-diff":
        render_welfare_diff(inputs, output, **kwargs)
    else:
        raise FigureError(f"unknown figure kind {kind!r}; choose from {KINDS}")
