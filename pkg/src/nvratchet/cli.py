"""Command-line front end.

Subcommands
-----------
simulate   run a protocol described by a YAML config, emit a time-series CSV
diagram    eigenvalue branches over a field window, with crossing annotations
tm         transfer-matrix buildup curves
scan       run a registered scenario (optionally a parameter grid)
scenario   registry inspection (``scenario list``)

Physical config keys carry their unit in the key name
(``beta_up_mT_per_ms``, ``field_range_mT``); a key without its unit
suffix is rejected with a message naming the expected spelling.  Exit
codes: 0 success, 1 configuration error, 2 physics or invariant error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np
import yaml

from . import experiments, model, transfer_matrix
from .dynamics import (
    StepSizeError,
    make_ratchet_protocol,
    ratchet_initial_state,
    run_protocol,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PHYSICS = 2


class ConfigError(ValueError):
    pass


# --- config schema --------------------------------------------------------

# internal name -> (config key with unit suffix, type, validator)
_CLUSTER_KEYS = {
    "j_nv_p1": ("j_nv_p1_MHz", float, lambda v: v >= 0),
    "j_h_p1": ("j_h_p1_MHz", float, lambda v: v >= 0),
    "j_nv_b1": ("j_nv_b1_MHz", float, lambda v: v >= 0),
    "theta1": ("theta1_rad", float, lambda v: True),
    "phi1": ("phi1_rad", float, lambda v: True),
    "theta2": ("theta2_rad", float, lambda v: True),
    "phi2": ("phi2_rad", float, lambda v: True),
    "field_theta": ("field_theta_rad", float, lambda v: True),
    "field_phi": ("field_phi_rad", float, lambda v: True),
    "include_hosts": ("include_hosts", bool, lambda v: True),
    "include_bystander": ("include_bystander", bool, lambda v: True),
}

_PROTOCOL_KEYS = {
    "beta_up": ("beta_up_mT_per_ms", float, lambda v: v > 0),
    "beta_down": ("beta_down_mT_per_ms", float, lambda v: v > 0),
    "field_range": ("field_range_mT", float, lambda v: v > 0),
    "b_center": ("b_center_mT", float, lambda v: v > 0),
    "optical_placement": ("optical_placement", str,
                          lambda v: v in ("low-end", "high-end", "both-ends",
                                          "every-l-cycles")),
    "l_cycles": ("l_cycles", int, lambda v: v >= 1),
    "epsilon": ("epsilon", float, lambda v: 0 <= v <= 2),
    "eta_nv": ("eta_nv", float, lambda v: 0 <= v <= 1),
    "n_cycles": ("n_cycles", int, lambda v: v >= 0),
    "dephase": ("dephase", bool, lambda v: True),
    "with_t1": ("with_t1", bool, lambda v: True),
}


def _parse_section(section: dict, schema: dict, section_name: str) -> dict:
    by_key = {cfg_key: (name, typ, check)
              for name, (cfg_key, typ, check) in schema.items()}
    # bare physical names that should have been written with a suffix
    bare = {name: cfg_key for name, (cfg_key, _, _) in schema.items()
            if cfg_key != name}
    out = {}
    for key, raw in section.items():
        if key in bare:
            raise ConfigError(
                f"{section_name}.{key}: missing unit suffix, "
                f"write {section_name}.{bare[key]}")
        if key not in by_key:
            raise ConfigError(
                f"{section_name}.{key}: unknown key; valid keys: "
                f"{sorted(by_key)}")
        name, typ, check = by_key[key]
        if raw is None:
            continue
        try:
            value = typ(raw) if typ is not bool else _as_bool(raw, key)
        except ConfigError:
            raise
        except (TypeError, ValueError):
            raise ConfigError(
                f"{section_name}.{key}: cannot read {raw!r} as {typ.__name__}")
        if not check(value):
            raise ConfigError(f"{section_name}.{key}: value {value!r} out of range")
        out[name] = value
    return out


def _as_bool(raw, key):
    if isinstance(raw, bool):
        return raw
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def load_run_config(path: str, overrides: list[str] | None = None) -> dict:
    """Parse and validate a simulate config file, applying key=value overrides."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    for dotted in overrides or []:
        if "=" not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key=value")
        key, _, value = dotted.partition("=")
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(value)

    known_sections = {"cluster", "protocol", "initial_state", "output",
                      "seed", "verbosity"}
    unknown = set(doc) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; "
                          f"valid: {sorted(known_sections)}")

    cluster = _parse_section(doc.get("cluster", {}) or {}, _CLUSTER_KEYS, "cluster")
    protocol = _parse_section(doc.get("protocol", {}) or {}, _PROTOCOL_KEYS,
                              "protocol")
    init = doc.get("initial_state", "thermal")
    if init not in ("thermal", "active"):
        raise ConfigError(f"initial_state must be 'thermal' or 'active', got {init!r}")
    out = doc.get("output", {}) or {}
    if not isinstance(out, dict):
        raise ConfigError("output: must be a mapping")
    return {"cluster": cluster, "protocol": protocol, "initial_state": init,
            "output": out, "seed": int(doc.get("seed", 0) or 0),
            "verbosity": int(doc.get("verbosity", 1) or 1)}


def resolved_config(run_cfg: dict) -> dict:
    """Re-express a parsed run config with the unit-suffixed key spellings.

    The returned mapping is itself a valid simulate config, so the copy
    embedded in meta.json re-runs to identical output.
    """
    out = {
        "cluster": {_CLUSTER_KEYS[k][0]: v for k, v in run_cfg["cluster"].items()},
        "protocol": {_PROTOCOL_KEYS[k][0]: v for k, v in run_cfg["protocol"].items()},
        "initial_state": run_cfg["initial_state"],
        "seed": run_cfg["seed"],
        "verbosity": run_cfg["verbosity"],
    }
    if run_cfg.get("output"):
        out["output"] = dict(run_cfg["output"])
    return out


def bundled_config_path(name: str) -> str:
    """Path of a config shipped with the package (e.g. ``fig2a``)."""
    here = os.path.dirname(__file__)
    candidate = os.path.join(here, "configs", name if name.endswith(".yaml")
                             else name + ".yaml")
    if not os.path.exists(candidate):
        raise ConfigError(f"no bundled config named {name!r}")
    return candidate


# --- output helpers -------------------------------------------------------


def _out_dir(args, default_name: str) -> str:
    if getattr(args, "out", None):
        return args.out
    root = os.environ.get(experiments.OUTPUT_ROOT_ENV, "out")
    return os.path.join(root, default_name, time.strftime("%Y%m%dT%H%M%S"))


def _write_csv(path: str, columns: list[str], rows: list[dict]):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.12g}"
    return str(v)


def _write_meta(dirpath: str, payload: dict):
    with open(os.path.join(dirpath, "meta.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# --- subcommands ----------------------------------------------------------


def cmd_simulate(args) -> int:
    run_cfg = load_run_config(args.config, args.set)
    cluster = model.make_cluster(**run_cfg["cluster"])
    proto_kw = dict(run_cfg["protocol"])
    n_cycles = proto_kw.pop("n_cycles", 1)
    proto = make_ratchet_protocol(cluster, n_cycles=n_cycles, **proto_kw)
    if n_cycles == 0:
        rows = []
    else:
        rho0 = ratchet_initial_state(cluster, run_cfg["initial_state"])
        series = run_protocol(cluster, proto, rho0=rho0)
        rows = series.to_rows()
    out_dir = args.out or run_cfg["output"].get("path") or _out_dir(args, "simulate")
    columns = ["t_ms", "B_mT", "pol_H", "pol_NV", "pol_P1", "cycle_index",
               "event_tag"]
    _write_csv(os.path.join(out_dir, "data.csv"), columns, rows)
    _write_meta(out_dir, {"command": "simulate",
                          "config": resolved_config(run_cfg),
                          "rows": len(rows)})
    if run_cfg["verbosity"]:
        final = rows[-1]["pol_H"] if rows else float("nan")
        print(f"simulate: {len(rows)} records -> {out_dir} (final pol_H {final:.4f})")
    return EXIT_OK


def cmd_diagram(args) -> int:
    run_cfg = load_run_config(args.config, args.set) if args.config else {
        "cluster": {}, "verbosity": 1}
    cluster = model.make_cluster(**run_cfg["cluster"])
    if args.b_min is None or args.b_max is None:
        bm = model.matching_field(cluster)
        b_lo = args.b_min if args.b_min is not None else bm - 0.25
        b_hi = args.b_max if args.b_max is not None else bm + 0.25
    else:
        b_lo, b_hi = args.b_min, args.b_max
    if not (b_hi > b_lo):
        raise ConfigError("diagram: need b-max > b-min")
    grid = np.linspace(b_lo, b_hi, args.points)
    diagram = model.eigen_branches(cluster, grid)
    out_dir = _out_dir(args, "diagram")
    rows = diagram.to_rows()
    columns = list(rows[0].keys()) if rows else ["B_mT"]
    _write_csv(os.path.join(out_dir, "data.csv"), columns, rows)
    _write_meta(out_dir, {"command": "diagram", "b_min_mT": b_lo,
                          "b_max_mT": b_hi, "points": args.points,
                          "crossings": diagram.crossings})
    print(f"diagram: {len(grid)} fields, {len(diagram.crossings)} crossings "
          f"-> {out_dir}")
    return EXIT_OK


def cmd_tm(args) -> int:
    if args.sd:
        params = transfer_matrix.LZParams(p0_up=0.5, p1_up=args.p1, p0_down=0.5,
                                          p1_down=args.p1_down, sd_mode=True)
    else:
        params = transfer_matrix.LZParams(p0_up=args.p0, p1_up=args.p1,
                                          p0_down=args.p0_down,
                                          p1_down=args.p1_down)
    T = transfer_matrix.compose_cycle(params, with_t1=args.t1)
    v0 = transfer_matrix.BranchPopulations.thermal_ms0()
    trace = transfer_matrix.iterate(T, v0, args.cycles, record_vectors=True)
    rows = []
    for k, pol, pops in trace:
        row = {"cycle_index": k, "pol_H": pol}
        row.update({f"v{i+1}": pops.v[i] for i in range(8)})
        rows.append(row)
    out_dir = _out_dir(args, "tm")
    columns = ["cycle_index", "pol_H"] + [f"v{i+1}" for i in range(8)]
    _write_csv(os.path.join(out_dir, "data.csv"), columns, rows)
    from dataclasses import asdict
    _write_meta(out_dir, {"command": "tm", "params": asdict(params),
                          "with_t1": args.t1, "cycles": args.cycles})
    final = rows[-1]["pol_H"] if rows else float("nan")
    print(f"tm: {args.cycles} cycles, final pol_H {final:.4f} -> {out_dir}")
    return EXIT_OK


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, value = item.partition("=")
        out[key] = yaml.safe_load(value)
    return out


def cmd_scan(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.points is not None:
        for candidate in ("points", "p1_points", "n_trace"):
            entry = experiments._REGISTRY.get(args.scenario)
            if entry and candidate in entry["defaults"]:
                overrides.setdefault(candidate, args.points)
                break
    result = experiments.run_scenario(args.scenario, overrides,
                                      workers=args.workers)
    run_dir = result.write(out_root=args.out)
    print(f"scan {args.scenario}: {len(result.rows)} rows -> {run_dir}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action == "list":
        for entry in experiments.list_scenarios():
            tag = " (slow)" if entry["slow"] else ""
            print(f"{entry['name']:12s} {entry['figure']}{tag}")
        return EXIT_OK
    raise ConfigError(f"unknown scenario action {args.action!r}")


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvratchet",
        description="Sweep-based nuclear polarization transfer simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a protocol from a config file")
    p.add_argument("config", help="YAML config path or bundled name (fig2a)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config entry")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagram", help="eigenvalue branches over a field window")
    p.add_argument("config", nargs="?", help="optional cluster config")
    p.add_argument("--b-min", type=float, help="window start, mT")
    p.add_argument("--b-max", type=float, help="window end, mT")
    p.add_argument("--points", type=int, default=401)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_diagram)

    p = sub.add_parser("tm", help="transfer-matrix buildup")
    p.add_argument("--p1", type=float, required=True, help="narrow-gap survival")
    p.add_argument("--p0", type=float, default=0.0, help="wide-gap survival (up)")
    p.add_argument("--p0-down", type=float, default=1.0)
    p.add_argument("--p1-down", type=float, default=1.0)
    p.add_argument("--sd", action="store_true", help="strong-dephasing wide gap")
    p.add_argument("--t1", action="store_true", help="include P1 relaxation")
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_tm)

    p = sub.add_parser("scan", help="run a registered scenario")
    p.add_argument("scenario")
    p.add_argument("--points", type=int, help="override the scenario resolution")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output root directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("scenario", help="registry inspection")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) and not os.path.exists(args.config):
        # allow bundled config names for simulate
        if args.command == "simulate" and os.sep not in args.config:
            try:
                args.config = bundled_config_path(args.config)
            except ConfigError:
                pass
    try:
        return args.func(args)
    except (ConfigError, experiments.UnknownScenarioError,
            experiments.InvalidOverrideError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepSizeError, ValueError, RuntimeError) as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS


if __name__ == "__main__":
    sys.exit(main())
