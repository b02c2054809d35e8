"""Figure-reproduction scenarios and the parallel grid runner.

Every scenario is a named recipe that builds a cluster and protocol,
runs it, and returns a tabular :class:`ScenarioResult`.  The registry
maps scenario names to the figure panels they reproduce; resolved
parameters always land
in the emitted metadata so a dataset can be reproduced from its
meta.json alone.

Datasets are written as ``<out_root>/<scenario>/<run_id>/data.csv``
plus ``meta.json``.  The output root comes from the ``NVRATCHET_OUT``
environment variable, falling back to ``./out``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model, transfer_matrix
from .dynamics import (
    DensityMatrix,
    SweepSegment,
    make_ratchet_protocol,
    nv_ms0_contrast,
    polarization,
    propagate_segment,
    ratchet_initial_state,
    run_protocol,
)

OUTPUT_ROOT_ENV = "NVRATCHET_OUT"


class UnknownScenarioError(KeyError):
    pass


class InvalidOverrideError(ValueError):
    pass


@dataclass(frozen=True)
class AxisSpec:
    """One swept parameter of a grid scenario."""

    name: str
    lo: float
    hi: float
    points: int
    scale: str = "linear"

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError(f"axis {self.name}: bounds must be finite")
        if self.points < 2:
            raise ValueError(f"axis {self.name}: need at least 2 points")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"axis {self.name}: unknown scale {self.scale!r}")

    def values(self) -> np.ndarray:
        if self.scale == "log":
            return np.geomspace(self.lo, self.hi, self.points)
        return np.linspace(self.lo, self.hi, self.points)


@dataclass
class ScenarioResult:
    name: str
    columns: list[str]
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows:
            missing = [c for c in self.columns if c not in row]
            if missing:
                raise ValueError(f"row missing columns {missing}")

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def write(self, out_root: str | None = None, run_id: str | None = None) -> str:
        """Write data.csv and meta.json, returning the run directory."""
        if out_root is None:
            out_root = os.environ.get(OUTPUT_ROOT_ENV, "out")
        if run_id is None:
            run_id = time.strftime("%Y%m%dT%H%M%S")
        run_dir = os.path.join(out_root, self.name, run_id)
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "data.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_format_cell(row[c]) for c in self.columns])
        with open(os.path.join(run_dir, "meta.json"), "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return run_dir


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.12g}"
    return str(v)


def _metadata(name: str, figure: str, params: dict) -> dict:
    payload = json.dumps(params, sort_keys=True, default=str)
    return {
        "scenario": name,
        "figure": figure,
        "params": params,
        "config_hash": hashlib.sha256(payload.encode()).hexdigest()[:16],
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


# --- registry -------------------------------------------------------------

_REGISTRY: dict[str, dict] = {}


def register(name: str, figure: str, defaults: dict, slow: bool = False):
    def wrap(fn):
        _REGISTRY[name] = {"figure": figure, "defaults": defaults, "runner": fn,
                           "slow": slow}
        return fn
    return wrap


def list_scenarios() -> list[dict]:
    return [
        {"name": k, "figure": v["figure"], "slow": v["slow"],
         "defaults": dict(v["defaults"])}
        for k, v in sorted(_REGISTRY.items())
    ]


def run_scenario(name: str, overrides: dict | None = None,
                 workers: int = 1) -> ScenarioResult:
    """Run a registered scenario with optional parameter overrides."""
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise UnknownScenarioError(f"unknown scenario {name!r}; registered: {known}")
    entry = _REGISTRY[name]
    params = dict(entry["defaults"])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise InvalidOverrideError(
                f"scenario {name!r} has no parameter {key!r}; "
                f"valid keys: {sorted(params)}")
        params[key] = value
    result = entry["runner"](params, workers=workers)
    result.metadata.setdefault("figure", entry["figure"])
    return result


# --- shared protocol plumbing ---------------------------------------------


def _build_cluster(params: dict) -> model.ClusterConfig:
    kw = {}
    for key in ("j_nv_p1", "j_h_p1", "theta1", "phi1", "theta2", "phi2",
                "field_theta", "include_hosts", "include_bystander", "j_nv_b1"):
        if key in params:
            kw[key] = params[key]
    return model.make_cluster(**kw)


def _cycles_for_budget(params: dict) -> int:
    """Number of cycles, either explicit or from a total time budget."""
    if params.get("budget_ms") is not None:
        t_cycle = (params["field_range"] / params["beta_up"]
                   + params["field_range"] / params["beta_down"])
        return max(1, int(params["budget_ms"] // t_cycle))
    return int(params["n_cycles"])


def _ratchet_point(params: dict) -> dict:
    """One full multi-cycle protocol run; returns summary values.

    Standalone (picklable) so grid scenarios can farm it out to worker
    processes.
    """
    cfg = _build_cluster(params)
    proto = make_ratchet_protocol(
        cfg,
        beta_up=params["beta_up"],
        beta_down=params["beta_down"],
        field_range=params["field_range"],
        optical_placement=params.get("placement", "low-end"),
        l_cycles=params.get("l_cycles", 1),
        n_cycles=_cycles_for_budget(params),
        dephase=params.get("dephase", True),
        with_t1=params.get("with_t1", False),
    )
    rho0 = ratchet_initial_state(cfg, params.get("init", "thermal"))
    ts = run_protocol(cfg, proto, rho0=rho0)
    rec = ts.final()
    return {"pol_H": rec.pol_H, "pol_NV": rec.pol_NV, "pol_P1": rec.pol_P1,
            "n_cycles": proto.n_cycles}


def _timeseries_rows(ts, extra: dict | None = None) -> list[dict]:
    rows = []
    for rec in ts.records:
        row = {"t_ms": rec.t_ms, "B_mT": rec.B_mT, "cycle_index": rec.cycle_index,
               "event_tag": rec.event_tag, "pol_H": rec.pol_H,
               "pol_NV": rec.pol_NV, "pol_P1": rec.pol_P1}
        if extra:
            row.update(extra)
        rows.append(row)
    return rows


_TS_COLUMNS = ["t_ms", "B_mT", "cycle_index", "event_tag",
               "pol_H", "pol_NV", "pol_P1"]


def _single_sweep_trace(cfg, b_lo, b_hi, beta, direction, rho0, n_trace=50,
                        extra=None):
    """One sweep split into short chunks so the trace has interior points."""
    edges = np.linspace(b_lo, b_hi, n_trace + 1)
    if direction == "down":
        edges = edges[::-1]
    rho = rho0.copy()
    rows = []
    t = 0.0
    gaps = model.gap_estimates(cfg)
    terms = model.hamiltonian_terms(cfg)
    for a, b in zip(edges[:-1], edges[1:]):
        seg = SweepSegment(a, b, beta, dephase_at_end=False)
        rho = propagate_segment(rho, seg, cfg, gaps=gaps, terms=terms)
        t += seg.duration
        row = {"t_ms": t, "B_mT": b, "cycle_index": 0, "event_tag": "sweep_" + direction,
               "pol_H": polarization(rho, model.SITE_H),
               "pol_NV": nv_ms0_contrast(rho),
               "pol_P1": polarization(rho, model.SITE_P1)}
        if extra:
            row.update(extra)
        rows.append(row)
    return rows, rho


# --- grid runner ----------------------------------------------------------


def _grid_point_wrapper(args):
    idx, params = args
    try:
        return idx, _ratchet_point(params), None
    except Exception as exc:   # noqa: BLE001 - per-point isolation is the contract
        return idx, None, f"{type(exc).__name__}: {exc}"


def grid_run(name: str, base_params: dict, axis1: AxisSpec, axis2: AxisSpec,
             workers: int = 1, checkpoint: str | None = None,
             figure: str = "") -> ScenarioResult:
    """Evaluate a 2-D parameter map of multi-cycle protocol runs.

    Results are deterministic and independent of ``workers``; rows come
    out sorted by (axis1, axis2).  With ``checkpoint`` set, finished
    points are appended to a JSON-lines file and an interrupted run
    resumes from it.
    """
    points = []
    for v1 in axis1.values():
        for v2 in axis2.values():
            p = dict(base_params)
            p[axis1.name] = float(v1)
            p[axis2.name] = float(v2)
            points.append(p)

    done: dict[int, dict] = {}
    if checkpoint and os.path.exists(checkpoint):
        with open(checkpoint) as fh:
            for line in fh:
                rec = json.loads(line)
                done[rec["idx"]] = rec
    todo = [(i, p) for i, p in enumerate(points) if i not in done]

    ck = open(checkpoint, "a") if checkpoint else None
    try:
        if workers > 1 and todo:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for idx, res, err in pool.map(_grid_point_wrapper, todo):
                    done[idx] = {"idx": idx, "result": res, "error": err}
                    if ck:
                        ck.write(json.dumps(done[idx]) + "\n")
                        ck.flush()
        else:
            for item in todo:
                idx, res, err = _grid_point_wrapper(item)
                done[idx] = {"idx": idx, "result": res, "error": err}
                if ck:
                    ck.write(json.dumps(done[idx]) + "\n")
                    ck.flush()
    finally:
        if ck:
            ck.close()

    rows = []
    for idx, p in enumerate(points):
        rec = done[idx]
        row = {axis1.name: p[axis1.name], axis2.name: p[axis2.name],
               "error": rec["error"] or ""}
        if rec["result"] is not None:
            row.update({k: rec["result"][k] for k in ("pol_H", "pol_NV", "pol_P1")})
        else:
            row.update({"pol_H": float("nan"), "pol_NV": float("nan"),
                        "pol_P1": float("nan")})
        rows.append(row)
    rows.sort(key=lambda r: (r[axis1.name], r[axis2.name]))
    columns = [axis1.name, axis2.name, "pol_H", "pol_NV", "pol_P1", "error"]
    meta = _metadata(name, figure, {**base_params,
                                    "axis1": vars(axis1), "axis2": vars(axis2)})
    return ScenarioResult(name, columns, rows, meta)


# --- single-sweep scenarios -----------------------------------------------


@register("fig1e", "Fig. 1e", {
    "j_nv_p1": 0.5, "j_h_p1": 0.2, "beta": 0.26, "field_range": 0.5,
    "init": "active", "n_trace": 50,
})
def _fig1e(params, workers=1):
    """Single sweeps in both directions across the anti-crossing.

    The initial state is the optically pumped NV with the P1 proxy in
    its participating projection; only that manifold exchanges
    population at the crossings, so this is the population cartoon the
    single-sweep traces are drawn for.
    """
    cfg = _build_cluster(params)
    bm = model.matching_field(cfg)
    half = params["field_range"] / 2.0
    rho0 = ratchet_initial_state(cfg, params["init"])
    rows = []
    for direction in ("up", "down"):
        trace, _ = _single_sweep_trace(
            cfg, bm - half, bm + half, params["beta"], direction, rho0,
            n_trace=params["n_trace"], extra={"direction": direction})
        rows.extend(trace)
    meta = _metadata("fig1e", "Fig. 1e", {**params, "b_matching_mT": bm})
    return ScenarioResult("fig1e", _TS_COLUMNS + ["direction"], rows, meta)


@register("figS1", "Fig. S1(a)", {
    "j_nv_p1": 0.5, "j_h_p1": 0.2, "beta_lo": 0.05, "beta_hi": 1.0,
    "points": 20, "field_range": 0.5, "init": "active",
})
def _figS1(params, workers=1):
    """Final single-sweep polarization versus sweep rate."""
    cfg = _build_cluster(params)
    bm = model.matching_field(cfg)
    half = params["field_range"] / 2.0
    rho0 = ratchet_initial_state(cfg, params["init"])
    gaps = model.gap_estimates(cfg)
    terms = model.hamiltonian_terms(cfg)
    rows = []
    for beta in np.linspace(params["beta_lo"], params["beta_hi"], params["points"]):
        seg = SweepSegment(bm - half, bm + half, float(beta), dephase_at_end=False)
        out = propagate_segment(rho0, seg, cfg, gaps=gaps, terms=terms)
        rows.append({"beta_mT_per_ms": float(beta),
                     "pol_H": polarization(out, model.SITE_H),
                     "pol_NV": nv_ms0_contrast(out),
                     "pol_P1": polarization(out, model.SITE_P1)})
    meta = _metadata("figS1", "Fig. S1(a)", {**params, "b_matching_mT": bm})
    return ScenarioResult("figS1", ["beta_mT_per_ms", "pol_H", "pol_NV", "pol_P1"],
                          rows, meta)


@register("fig1f-hosts", "Fig. 1f", {
    "j_nv_p1": 0.5, "j_h_p1": 0.2, "field_range": 5.5,
    "betas": (0.365, 0.259, 0.177), "init": "active",
}, slow=True)
def _fig1f_hosts(params, workers=1):
    """Single sweeps with both 14N hosts included (108-dim space).

    The host hyperfine splittings spread the anti-crossing into nine
    branches, so the sweep window is widened to cover all of them and
    the documented combined sweep rates are used.
    """
    cfg = _build_cluster({**params, "include_hosts": True})
    bm = model.matching_field(cfg)
    half = params["field_range"] / 2.0
    rho0 = ratchet_initial_state(cfg, params["init"])
    gaps = model.gap_estimates(cfg)
    terms = model.hamiltonian_terms(cfg)
    rows = []
    for beta in params["betas"]:
        seg = SweepSegment(bm - half, bm + half, float(beta), dephase_at_end=False)
        out = propagate_segment(rho0, seg, cfg, gaps=gaps, terms=terms)
        rows.append({"beta_mT_per_ms": float(beta),
                     "pol_H": polarization(out, model.SITE_H),
                     "pol_NV": nv_ms0_contrast(out),
                     "pol_P1": polarization(out, model.SITE_P1)})
    meta = _metadata("fig1f-hosts", "Fig. 1f", {**params, "b_matching_mT": bm})
    return ScenarioResult("fig1f-hosts",
                          ["beta_mT_per_ms", "pol_H", "pol_NV", "pol_P1"],
                          rows, meta)


# --- multi-cycle scenarios ------------------------------------------------


def _ratchet_series(name, figure, params):
    cfg = _build_cluster(params)
    proto = make_ratchet_protocol(
        cfg, beta_up=params["beta_up"], beta_down=params["beta_down"],
        field_range=params["field_range"], optical_placement=params["placement"],
        l_cycles=params.get("l_cycles", 1), n_cycles=_cycles_for_budget(params),
        dephase=params.get("dephase", True), with_t1=params.get("with_t1", False))
    rho0 = ratchet_initial_state(cfg, params.get("init", "thermal"))
    ts = run_protocol(cfg, proto, rho0=rho0)
    meta = _metadata(name, figure, params)
    return ScenarioResult(name, _TS_COLUMNS, _timeseries_rows(ts), meta)


_FIG2_BASE = {"j_nv_p1": 0.5, "j_h_p1": 0.1, "beta_up": 3.0, "beta_down": 3.0,
              "field_range": 0.5, "n_cycles": 20, "budget_ms": None,
              "dephase": True, "with_t1": False, "init": "thermal"}


@register("fig2a", "Fig. 2a", {**_FIG2_BASE, "placement": "low-end",
                               "with_t1": True})
def _fig2a(params, workers=1):
    """Low-end illumination: positive buildup.

    These three sign-rule scenarios keep the P1 T1 channel on: without
    it the light pulse gradually parks all population in the P1
    projection that has no crossings, and the high-end buildup dies
    instead of mirroring the low-end one.
    """
    return _ratchet_series("fig2a", "Fig. 2a", params)


@register("fig2b", "Fig. 2b", {**_FIG2_BASE, "placement": "high-end",
                               "with_t1": True})
def _fig2b(params, workers=1):
    return _ratchet_series("fig2b", "Fig. 2b", params)


@register("fig2c", "Fig. 2c", {**_FIG2_BASE, "placement": "both-ends",
                               "with_t1": True})
def _fig2c(params, workers=1):
    return _ratchet_series("fig2c", "Fig. 2c", params)


@register("fig2e", "Fig. 2e", {**_FIG2_BASE, "placement": "low-end",
                               "n_cycles": 120, "init": "active"})
def _fig2e(params, workers=1):
    """Polarization buildup over many cycles with inter-sweep dephasing.

    Starts from the participating P1 manifold; the optical pulse then
    parks transferred proton polarization in the idle manifold where the
    sweeps cannot touch it, which is what lets the buildup approach the
    full NV polarization instead of saturating at one half.
    """
    return _ratchet_series("fig2e", "Fig. 2e", params)


@register("figS2", "Fig. S2", {**_FIG2_BASE, "placement": "every-l-cycles",
                               "n_cycles": 24, "l_values": (1, 2, 4, 8)})
def _figS2(params, workers=1):
    """Buildup with optical repolarization applied only every l cycles."""
    rows = []
    for l in params["l_values"]:
        p = {k: v for k, v in params.items() if k != "l_values"}
        p["l_cycles"] = int(l)
        res = _ratchet_series("figS2", "Fig. S2", p)
        for row in res.rows:
            row["l_cycles"] = int(l)
        rows.extend(res.rows)
    meta = _metadata("figS2", "Fig. S2", params)
    return ScenarioResult("figS2", _TS_COLUMNS + ["l_cycles"], rows, meta)


@register("figS8", "Fig. S8", {
    "j_nv_p1": 0.3, "j_h_p1": 0.2, "j_nv_b1": 1.0, "beta_single": 0.25,
    "beta_up": 3.0, "beta_down": 10.0, "field_range": 0.5, "n_cycles": 30,
    "budget_ms": None, "init": "active",
})
def _figS8(params, workers=1):
    """Bystander P1 impact: single sweep and multi-cycle comparisons.

    Variants: ``no-bystander`` is the plain three-spin cluster;
    ``bystander-relaxed`` adds the strongly coupled B1 with the proxy
    P1 recycled after every sweep and the B1 recycled once per cycle
    (its recycling window is the cycle period, long enough to leave
    each crossing passage coherent); ``bystander-coherent`` keeps the
    B1 coherent (relaxation on the proxy P1 only).
    """
    rows = []
    half = params["field_range"] / 2.0
    variants = (("no-bystander", False, None, ()),
                ("bystander-relaxed", True, (model.SITE_P1,), (model.SITE_B1,)),
                ("bystander-coherent", True, (model.SITE_P1,), ()))
    for variant, with_b1, t1_sites, t1_cycle_sites in variants:
        cfg = _build_cluster({**params, "include_bystander": with_b1})
        bm = model.matching_field(cfg)
        rho0 = ratchet_initial_state(cfg, params["init"])
        gaps = model.gap_estimates(cfg)
        terms = model.hamiltonian_terms(cfg)
        if variant != "bystander-coherent":
            seg = SweepSegment(bm - half, bm + half, params["beta_single"],
                               dephase_at_end=False)
            out = propagate_segment(rho0, seg, cfg, gaps=gaps, terms=terms)
            rows.append({"part": "single-sweep", "variant": variant,
                         "cycle_index": 0,
                         "pol_H": polarization(out, model.SITE_H)})
        proto = make_ratchet_protocol(
            cfg, beta_up=params["beta_up"], beta_down=params["beta_down"],
            field_range=params["field_range"], optical_placement="low-end",
            n_cycles=int(params["n_cycles"]), dephase=True, with_t1=True,
            t1_sites=t1_sites, t1_cycle_sites=t1_cycle_sites)
        ts = run_protocol(cfg, proto, rho0=ratchet_initial_state(cfg, "thermal"))
        for rec in ts.records:
            if rec.event_tag.startswith("sweep_down"):
                rows.append({"part": "cycles", "variant": variant,
                             "cycle_index": rec.cycle_index, "pol_H": rec.pol_H})
    meta = _metadata("figS8", "Fig. S8", params)
    return ScenarioResult("figS8", ["part", "variant", "cycle_index", "pol_H"],
                          rows, meta)


# --- map scenarios --------------------------------------------------------

_FIG3_BASE = {"j_nv_p1": 0.5, "j_h_p1": 0.1, "field_range": 0.5,
              "budget_ms": 10.0, "n_cycles": 1, "dephase": True,
              "init": "thermal", "beta_lo": 1.0, "beta_hi": 30.0, "points": 8}


def _beta_map(name, figure, params, workers):
    base = {k: v for k, v in params.items()
            if k not in ("beta_lo", "beta_hi", "points")}
    ax1 = AxisSpec("beta_up", params["beta_lo"], params["beta_hi"],
                   params["points"], scale="log")
    ax2 = AxisSpec("beta_down", params["beta_lo"], params["beta_hi"],
                   params["points"], scale="log")
    return grid_run(name, base, ax1, ax2, workers=workers, figure=figure)


@register("fig3b", "Fig. 3b", {**_FIG3_BASE, "with_t1": False,
                               "placement": "low-end"})
def _fig3b(params, workers=1):
    return _beta_map("fig3b", "Fig. 3b", params, workers)


@register("fig3c", "Fig. 3c", {**_FIG3_BASE, "with_t1": True,
                               "placement": "low-end"})
def _fig3c(params, workers=1):
    return _beta_map("fig3c", "Fig. 3c", params, workers)


@register("fig3d", "Fig. 3d", {**_FIG3_BASE, "with_t1": True,
                               "placement": "high-end"})
def _fig3d(params, workers=1):
    return _beta_map("fig3d", "Fig. 3d", params, workers)


@register("fig3e", "Fig. 3e", {**_FIG3_BASE, "with_t1": True,
                               "placement": "both-ends"})
def _fig3e(params, workers=1):
    return _beta_map("fig3e", "Fig. 3e", params, workers)


@register("fig4a", "Fig. 4a", {
    "beta_up": 3.0, "beta_down": 3.0, "field_range": 0.5, "n_cycles": 56,
    "budget_ms": None, "dephase": True, "with_t1": False, "init": "thermal",
    "placement": "low-end", "j1_lo": 0.35, "j1_hi": 1.25, "j2_lo": 0.25,
    "j2_hi": 0.70, "points": 10,
})
def _fig4a(params, workers=1):
    """Polarization map over the two dipolar couplings, Fig. 2a conditions."""
    base = {k: v for k, v in params.items()
            if k not in ("j1_lo", "j1_hi", "j2_lo", "j2_hi", "points")}
    ax1 = AxisSpec("j_nv_p1", params["j1_lo"], params["j1_hi"], params["points"])
    ax2 = AxisSpec("j_h_p1", params["j2_lo"], params["j2_hi"], params["points"])
    return grid_run("fig4a", base, ax1, ax2, workers=workers, figure="Fig. 4a")


@register("fig4c", "Fig. 4c", {"theta_max_deg": 40.0, "points": 21,
                               "j_nv_p1": 0.5, "j_h_p1": 0.1})
def _fig4c(params, workers=1):
    """Matching field versus the static-field tilt from the NV axis."""
    rows = []
    for th in np.linspace(0.0, params["theta_max_deg"], params["points"]):
        cfg = _build_cluster({**params, "field_theta": float(np.deg2rad(th))})
        rows.append({"theta_deg": float(th),
                     "b_matching_mT": model.matching_field(cfg, bracket=(40.0, 200.0))})
    meta = _metadata("fig4c", "Fig. 4c", params)
    return ScenarioResult("fig4c", ["theta_deg", "b_matching_mT"], rows, meta)


@register("fig4d", "Fig. 4d", {
    "j_nv_p1": 0.5, "j_h_p1": 0.1, "beta_up": 6.0, "beta_down": 10.0,
    "field_range": 0.5, "budget_ms": 10.0, "n_cycles": 1, "dephase": True,
    "with_t1": True, "init": "thermal", "placement": "low-end",
    "theta_points": 7, "phi_points": 8,
})
def _fig4d(params, workers=1):
    """Polar map of the proton position relative to the NV-P1 pair."""
    base = {k: v for k, v in params.items()
            if k not in ("theta_points", "phi_points")}
    ax1 = AxisSpec("theta2", 0.05, float(np.pi / 2), params["theta_points"])
    ax2 = AxisSpec("phi2", 0.0, float(2 * np.pi * (1 - 1 / params["phi_points"])),
                   params["phi_points"])
    return grid_run("fig4d", base, ax1, ax2, workers=workers, figure="Fig. 4d")


# --- transfer-matrix scenarios --------------------------------------------


def _tm_buildup(name, figure, params, analytic):
    p1_values = np.linspace(params["p1_lo"], params["p1_hi"], params["p1_points"])
    n = int(params["n_cycles"])
    v0 = transfer_matrix.BranchPopulations.thermal_ms0()
    rows = []
    for p1 in p1_values:
        p1 = float(p1)
        if analytic:
            T_t1 = transfer_matrix.analytic_cycle_t1(p1)
            T_nr = transfer_matrix.analytic_cycle_no_t1(p1)
        else:
            lz = transfer_matrix.LZParams(p0_up=0.5, p1_up=p1, p0_down=0.5,
                                          p1_down=1.0, sd_mode=True)
            T_t1 = transfer_matrix.compose_cycle(lz, with_t1=True)
            T_nr = transfer_matrix.compose_cycle(lz, with_t1=False)
        with_t1 = transfer_matrix.iterate(T_t1, v0, n)
        without = transfer_matrix.iterate(T_nr, v0, n)
        for (k, pa), (_, pb) in zip(with_t1, without):
            rows.append({"p1_up": p1, "cycle": k, "pol_with_t1": pa,
                         "pol_without_t1": pb})
    meta = _metadata(name, figure, params)
    return ScenarioResult(name, ["p1_up", "cycle", "pol_with_t1", "pol_without_t1"],
                          rows, meta)


@register("figS6", "Fig. S6", {"p1_lo": 0.5, "p1_hi": 1.0, "p1_points": 26,
                               "n_cycles": 100})
def _figS6(params, workers=1):
    """Composed strong-dephasing cycle matrices, with and without T1."""
    return _tm_buildup("figS6", "Fig. S6", params, analytic=False)


@register("figS7", "Fig. S7", {"p1_lo": 0.5, "p1_hi": 1.0, "p1_points": 26,
                               "n_cycles": 100})
def _figS7(params, workers=1):
    """Closed-form cycle matrices, with and without T1."""
    return _tm_buildup("figS7", "Fig. S7", params, analytic=True)


@register("fig3f", "Fig. 3f", {"p1_up": 0.98, "n_cycles": 100,
                               "t2_ns": 100.0, "beta_mT_per_ms": 3.0})
def _fig3f(params, workers=1):
    """Strong-dephasing buildup via the transfer matrix.

    A T2 of ~100 ns is far below the wide-gap passage time at these
    sweep rates, so the wide crossings are taken in the strong-dephasing
    limit and the coherent propagator is not used at all.
    """
    p1 = float(params["p1_up"])
    v0 = transfer_matrix.BranchPopulations.thermal_ms0()
    curves = {
        "with_t1": transfer_matrix.analytic_cycle_t1(p1),
        "without_t1": transfer_matrix.analytic_cycle_no_t1(p1),
    }
    rows = []
    for variant, T in curves.items():
        for k, pol in transfer_matrix.iterate(T, v0, int(params["n_cycles"])):
            rows.append({"variant": variant, "cycle": k, "pol_H": pol})
    meta = _metadata("fig3f", "Fig. 3f", {**params, "regime": "strong-dephasing",
                                          "t2_note": "T2 << tau_LZ at the wide gap"})
    return ScenarioResult("fig3f", ["variant", "cycle", "pol_H"], rows, meta)


def bystander_scenario(overrides: dict | None = None,
                       workers: int = 1) -> ScenarioResult:
    """Convenience wrapper for the bystander study (figS8)."""
    return run_scenario("figS8", overrides, workers=workers)
