"""Figure specifications and renderers for the scenario datasets.

Each registered scenario maps to a :class:`FigureSpec` that records the
columns the renderer needs, the axis labels with units, and the drawing
routine.  Renderers read the parsed CSV rows only; they never write back
to the scenario directory.

Color convention: sweep-up traces are red, sweep-down traces are blue.
Polarization heatmaps use a fixed diverging scale over [-1, 1] so that
panels from different runs are directly comparable.
"""

import csv
import json
import os
from dataclasses import dataclass
from typing import Callable

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

UP_COLOR = "tab:red"
DOWN_COLOR = "tab:blue"
POL_CMAP = "RdBu_r"
DPI = 120


class SchemaError(ValueError):
    """Dataset is missing a column the figure needs."""


@dataclass(frozen=True)
class FigureSpec:
    """Binding between a scenario dataset and its figure panel.

    Parameters
    ----------
    scenario : str
        Registered scenario name, matches ``meta.json``'s ``scenario``.
    required : tuple of str
        Columns the renderer reads.  A missing column raises
        :class:`SchemaError` naming it before any drawing happens.
    draw : callable
        ``draw(ax, data)`` with ``data`` a dict of column arrays.
    """

    scenario: str
    required: tuple
    draw: Callable


_NON_NUMERIC = {"event_tag", "direction", "variant", "part", "error", "label"}


def load_dataset(scenario_dir):
    """Read ``data.csv`` and ``meta.json`` from a scenario run directory.

    Returns
    -------
    data : dict
        Column name to numpy array.  Columns with known categorical
        content stay string arrays, everything else is parsed as float.
    meta : dict
        Parsed ``meta.json``.
    """
    csv_path = os.path.join(scenario_dir, "data.csv")
    meta_path = os.path.join(scenario_dir, "meta.json")
    for path in (csv_path, meta_path):
        if not os.path.exists(path):
            raise SchemaError(f"missing file: {path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    data = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        if name in _NON_NUMERIC:
            data[name] = np.array(col, dtype=object)
        else:
            data[name] = np.array([float(v) if v != "" else np.nan
                                   for v in col])
    return data, meta


def _require(data, columns):
    for name in columns:
        if name not in data:
            raise SchemaError(f"missing column: {name}")


def _pivot(data, xcol, ycol, zcol):
    """Reshape sorted grid rows into (x values, y values, z matrix)."""
    x = np.unique(data[xcol])
    y = np.unique(data[ycol])
    z = np.full((len(y), len(x)), np.nan)
    xi = np.searchsorted(x, data[xcol])
    yi = np.searchsorted(y, data[ycol])
    z[yi, xi] = data[zcol]
    return x, y, z


# --- renderers -------------------------------------------------------------


def _draw_buildup(ax, data):
    ax.plot(data["t_ms"], data["pol_H"], color=UP_COLOR, lw=1.5)
    ax.axhline(0.0, color="0.8", lw=0.8, zorder=0)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("proton polarization")


def _draw_single_sweeps(ax, data):
    for direction, color in (("up", UP_COLOR), ("down", DOWN_COLOR)):
        sel = data["direction"] == direction
        ax.plot(data["B_mT"][sel], data["pol_H"][sel], color=color,
                lw=1.5, label=f"sweep {direction}")
    ax.axhline(0.0, color="0.8", lw=0.8, zorder=0)
    ax.set_xlabel("magnetic field (mT)")
    ax.set_ylabel("proton polarization")
    if len(data["pol_H"]):
        ax.legend(frameon=False)


def _draw_rate_scan(ax, data):
    ax.plot(data["beta_mT_per_ms"], data["pol_H"], color=UP_COLOR,
            lw=1.5, label="proton")
    ax.plot(data["beta_mT_per_ms"], data["pol_P1"], color="0.5",
            lw=1.0, label="P1")
    ax.set_xscale("log")
    ax.set_xlabel("sweep rate (mT/ms)")
    ax.set_ylabel("polarization")
    if len(data["pol_H"]):
        ax.legend(frameon=False)


def _draw_l_cycle(ax, data):
    values = sorted(set(data["l_cycles"])) if len(data["l_cycles"]) else []
    cmap = plt.get_cmap("viridis")
    for k, l in enumerate(values):
        sel = data["l_cycles"] == l
        color = cmap(k / max(len(values) - 1, 1))
        ax.plot(data["t_ms"][sel], data["pol_H"][sel], color=color,
                lw=1.2, label=f"l = {int(l)}")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("proton polarization")
    if values:
        ax.legend(frameon=False, title="pulse spacing")


def _draw_bystander(ax, data):
    sel_cycles = data["part"] == "cycles"
    variants = sorted(set(data["variant"][sel_cycles]))
    cmap = plt.get_cmap("tab10")
    for k, variant in enumerate(variants):
        sel = sel_cycles & (data["variant"] == variant)
        ax.plot(data["cycle_index"][sel], data["pol_H"][sel],
                color=cmap(k), lw=1.5, marker="o", ms=3, label=variant)
    ax.set_xlabel("cycle")
    ax.set_ylabel("proton polarization")
    if variants:
        ax.legend(frameon=False)


def _heatmap(xcol, ycol, xlabel, ylabel, log=False, vmin=-1.0, vmax=1.0):
    def draw(ax, data):
        if len(data[xcol]) == 0:
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            return
        x, y, z = _pivot(data, xcol, ycol, "pol_H")
        mesh = ax.pcolormesh(x, y, z, cmap=POL_CMAP, vmin=vmin, vmax=vmax,
                             shading="nearest")
        if log:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.figure.colorbar(mesh, ax=ax, label="proton polarization")
    return draw


def _draw_matching_curve(ax, data):
    ax.plot(data["theta_deg"], data["b_matching_mT"], color=UP_COLOR, lw=1.5)
    ax.set_xlabel("field tilt (deg)")
    ax.set_ylabel("matching field (mT)")


def _draw_tm_buildup(ax, data):
    values = sorted(set(data["p1_up"])) if len(data["p1_up"]) else []
    cmap = plt.get_cmap("viridis")
    for k, p1 in enumerate(values):
        sel = data["p1_up"] == p1
        color = cmap(k / max(len(values) - 1, 1))
        ax.plot(data["cycle"][sel], data["pol_with_t1"][sel], color=color,
                lw=1.5, label=f"p1 = {p1:g}")
        ax.plot(data["cycle"][sel], data["pol_without_t1"][sel], color=color,
                lw=1.0, ls="--")
    ax.set_xlabel("cycle")
    ax.set_ylabel("proton polarization")
    if values:
        ax.legend(frameon=False, title="solid: with T1")


def _draw_tm_variants(ax, data):
    for variant, color, ls in (("with_t1", UP_COLOR, "-"),
                               ("without_t1", DOWN_COLOR, "--")):
        sel = data["variant"] == variant
        ax.plot(data["cycle"][sel], data["pol_H"][sel], color=color,
                ls=ls, lw=1.5, label=variant.replace("_", " "))
    ax.set_xlabel("cycle")
    ax.set_ylabel("proton polarization")
    if len(data["pol_H"]):
        ax.legend(frameon=False)


_TS = ("t_ms", "B_mT", "cycle_index", "event_tag", "pol_H")
_SCAN = ("beta_mT_per_ms", "pol_H", "pol_P1")
_TM = ("p1_up", "cycle", "pol_with_t1", "pol_without_t1")

FIGURES = {}


def _spec(scenario, required, draw):
    FIGURES[scenario] = FigureSpec(scenario, tuple(required), draw)


_spec("fig1e", _TS + ("direction",), _draw_single_sweeps)
_spec("figS1", _SCAN, _draw_rate_scan)
_spec("fig1f-hosts", _SCAN, _draw_rate_scan)
for _name in ("fig2a", "fig2b", "fig2c", "fig2e"):
    _spec(_name, _TS, _draw_buildup)
_spec("figS2", _TS + ("l_cycles",), _draw_l_cycle)
_spec("figS8", ("part", "variant", "cycle_index", "pol_H"), _draw_bystander)
for _name in ("fig3b", "fig3c", "fig3d", "fig3e"):
    _spec(_name, ("beta_up", "beta_down", "pol_H"),
          _heatmap("beta_up", "beta_down",
                   "sweep-up rate (mT/ms)", "sweep-down rate (mT/ms)",
                   log=True))
_spec("fig4a", ("j_nv_p1", "j_h_p1", "pol_H"),
      _heatmap("j_nv_p1", "j_h_p1",
               "NV-P1 coupling (MHz)", "P1-1H coupling (MHz)",
               vmin=0.0, vmax=1.0))
_spec("fig4c", ("theta_deg", "b_matching_mT"), _draw_matching_curve)
_spec("fig4d", ("theta2", "phi2", "pol_H"),
      _heatmap("theta2", "phi2",
               "proton polar angle (rad)", "proton azimuth (rad)",
               vmin=0.0, vmax=1.0))
_spec("figS6", _TM, _draw_tm_buildup)
_spec("figS7", _TM, _draw_tm_buildup)
_spec("fig3f", ("variant", "cycle", "pol_H"), _draw_tm_variants)


def render_scenario_dir(scenario_dir, out_path):
    """Render one scenario run directory to an image file.

    The scenario is taken from ``meta.json``.  An empty dataset still
    produces a figure with labeled, empty axes.

    Raises
    ------
    SchemaError
        Unknown scenario, missing file, or missing column.
    """
    data, meta = load_dataset(scenario_dir)
    scenario = meta.get("scenario")
    if scenario not in FIGURES:
        known = ", ".join(sorted(FIGURES))
        raise SchemaError(f"unknown scenario {scenario!r}; known: {known}")
    spec = FIGURES[scenario]
    _require(data, spec.required)
    fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
    spec.draw(ax, data)
    ax.set_title(f"{scenario} ({meta.get('figure', '')})")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    fig.savefig(out_path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return out_path
