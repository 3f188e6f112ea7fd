"""Command-line front end.

Subcommands:

* ``price``    - nonlinear PDE solve; writes surface, source field,
                 convergence records, metadata.
* ``analytic`` - closed-form benchmark surface on the same grid.
* ``leland``   - per-asset Leland numbers and classification; optionally a
                 node-by-node scan of the operator derivative on the solved
                 surface.
* ``converge`` - runs the fixed-point iteration and reports its records.
* ``sweep``    - re-solves across a range of rebalancing intervals.

All commands read one JSON config (sections ``market``, ``cost``, ``payoff``,
``dt_tc``, optional ``grid``, ``solver``, ``output``), accept repeated
``--flag dotted.key=value`` overrides (values parsed as JSON, falling back to
bare strings), and write deterministic artifacts: CSV numbers with repr-exact
%.17g formatting, LF line endings, and sorted-key metadata JSON.

Exit codes: 0 success, 2 invalid config, 3 numerical non-convergence,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Any

import numpy as np

from .adi_solver import GridSpec, SolverFlags, solve_nonlinear
from .analytic_pricing import cbest_price
from .cost_engine import QuadratureError, assemble_G
from .diagnostics import dt_sensitivity_sweep, error_vs_analytic
from .ellipticity import leland_number, scan_surface
from .market_model import Scenario, ValidationError, validate

__all__ = ["main"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _set_dotted(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def _apply_flags(cfg: dict, flag_args: list[str]) -> None:
    for item in flag_args:
        if "=" not in item:
            raise ValidationError("flag", f"expected dotted.key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if not key:
            raise ValidationError("flag", f"empty key in {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_dotted(cfg, key, value)


def _solver_flags(cfg: dict) -> SolverFlags:
    s = cfg.get("solver", {}) or {}
    return SolverFlags(
        first_derivative=s.get("first_derivative", "forward"),
        mixed_stencil=s.get("mixed_stencil", "four_corner"),
        cost_prefactor=s.get("cost_prefactor", "sqrt_dt"),
        boundary=s.get("boundary", "edges_1d"),
        cbest_formula=s.get("cbest_formula", "standard"),
        smoothing=s.get("smoothing", "cell_average"),
    )


def _resolved_config(cfg: dict, scenario: Scenario) -> dict:
    grid = scenario.grid
    out = {
        "market": {
            "sigmas": list(scenario.market.sigmas),
            "rho": [[float(v) for v in row] for row in scenario.market.rho],
            "r": scenario.market.r,
            "T": scenario.market.T,
        },
        "cost": dict(cfg.get("cost", {})),
        "payoff": {"type": "best_cash_or_nothing", "K": scenario.payoff.K, "X": scenario.payoff.X},
        "dt_tc": scenario.dt_tc,
        "grid": {"a": grid.a, "b": grid.b, "nx": grid.nx, "nt": grid.nt, "coord": grid.coord},
    }
    for section in ("solver", "output"):
        if cfg.get(section):
            out[section] = cfg[section]
    return out


def _write_surface_csv(path: Path, grid: GridSpec, values: np.ndarray, value_name: str = "value") -> None:
    axis = grid.axis()
    spots = grid.spot_axis()
    with open(path, "w", newline="") as fh:
        fh.write(f"x1,x2,S1,S2,{value_name}\n")
        for i in range(grid.nx + 1):
            for j in range(grid.nx + 1):
                fh.write(
                    f"{_fmt(axis[i])},{_fmt(axis[j])},{_fmt(spots[i])},{_fmt(spots[j])},"
                    f"{_fmt(values[i, j])}\n"
                )


def _write_convergence_csv(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("n,d1,d2,dinf\n")
        for rec in records:
            fh.write(f"{rec.n},{_fmt(rec.d1)},{_fmt(rec.d2)},{_fmt(rec.dinf)}\n")


def _write_metadata(path: Path, payload: dict) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _records_json(records) -> list[dict]:
    return [{"n": r.n, "d1": r.d1, "d2": r.d2, "dinf": r.dinf} for r in records]


def _load_config(path: str, flag_args: list[str]) -> dict:
    with open(path, "r") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError("config", f"top level must be an object, got {type(cfg).__name__}")
    _apply_flags(cfg, flag_args)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_price(args) -> int:
    cfg = _load_config(args.config, args.flag)
    scenario = validate(cfg)
    flags = _solver_flags(cfg)
    solver = cfg.get("solver", {}) or {}
    out = _out_dir(args)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = solve_nonlinear(
            scenario,
            tol=solver.get("tol", 1e-6),
            max_iter=solver.get("max_iter", 25),
            stop_norm=solver.get("stop_norm", "inf"),
            flags=flags,
        )
    g = assemble_G(
        result.surface.values,
        scenario,
        first_derivative=flags.first_derivative,
        mixed_stencil=flags.mixed_stencil,
        cost_prefactor=flags.cost_prefactor,
    )
    output = cfg.get("output", {}) or {}
    err = error_vs_analytic(
        result.surface.values,
        scenario,
        band=output.get("error_band", 2),
        formula=flags.cbest_formula,
    )

    _write_surface_csv(out / "surface.csv", scenario.grid, result.surface.values)
    _write_surface_csv(out / "cost_field.csv", scenario.grid, g, value_name="G")
    _write_convergence_csv(out / "convergence.csv", result.records)
    _write_metadata(
        out / "metadata.json",
        {
            "command": "price",
            "config": _resolved_config(cfg, scenario),
            "outputs": ["surface.csv", "cost_field.csv", "convergence.csv"],
            "result": {
                "converged": result.converged,
                "iterations": result.iterations,
                "records": _records_json(result.records),
                "error_vs_analytic": {
                    "max_rel": err.max_rel,
                    "mean_abs": err.mean_abs,
                    "n_included": err.n_included,
                    "peak_analytic": err.peak_analytic,
                },
            },
        },
    )
    status = "converged" if result.converged else "NOT converged"
    print(
        f"price: {status} after {result.iterations} sweeps; "
        f"peak-normalized benchmark error {err.max_rel:.3e}; wrote {out}"
    )
    return 0 if result.converged else 3


def _cmd_analytic(args) -> int:
    cfg = _load_config(args.config, args.flag)
    scenario = validate(cfg)
    flags = _solver_flags(cfg)
    out = _out_dir(args)
    grid = scenario.grid
    s = grid.spot_axis()
    output = cfg.get("output", {}) or {}
    tau = output.get("tau")
    tau = scenario.market.T if tau is None else float(tau)
    vals = cbest_price(s[:, None], s[None, :], tau, scenario, flags.cbest_formula)
    vals = np.broadcast_to(vals, (grid.nx + 1, grid.nx + 1))
    _write_surface_csv(out / "surface.csv", grid, vals)
    _write_metadata(
        out / "metadata.json",
        {
            "command": "analytic",
            "config": _resolved_config(cfg, scenario),
            "outputs": ["surface.csv"],
            "result": {"tau": tau, "formula": flags.cbest_formula},
        },
    )
    print(f"analytic: wrote closed-form surface at tau={tau} to {out}")
    return 0


def _cmd_leland(args) -> int:
    cfg = _load_config(args.config, args.flag)
    scenario = validate(cfg)
    flags = _solver_flags(cfg)
    solver = cfg.get("solver", {}) or {}

    upper = scenario.cost.bounds()[1]
    for i, sigma in enumerate(scenario.market.sigmas, start=1):
        le = leland_number(sigma, 2.0 * upper, scenario.dt_tc)
        verdict = "well-posed (Le < 1)" if le.well_posed else "ILL-POSED (Le >= 1)"
        print(
            f"asset {i}: sigma={_fmt(sigma)}, round-trip cost bound={_fmt(2.0 * upper)}, "
            f"dt={_fmt(scenario.dt_tc)} -> Le={le.value:.6g}: {verdict}"
        )

    if solver.get("skip_scan", False):
        return 0

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = solve_nonlinear(
            scenario,
            tol=solver.get("tol", 1e-6),
            max_iter=solver.get("max_iter", 25),
            stop_norm=solver.get("stop_norm", "inf"),
            flags=flags,
        )
    report = scan_surface(
        result.surface.values,
        scenario,
        form=solver.get("dyf_form", "aggregate"),
        eig_tol=solver.get("eig_tol", 1e-10),
        theta_floor=solver.get("theta_floor", 1e-14),
        first_derivative=flags.first_derivative,
        mixed_stencil=flags.mixed_stencil,
    )
    if report.n_checked:
        verdict = "satisfied" if report.satisfied else "violated"
        print(
            f"scan: negative-definiteness {verdict} on {report.n_checked} nodes "
            f"({report.degenerate_count} degenerate); max eigenvalue "
            f"{report.max_eigenvalue:.6g}"
        )
    else:
        print(f"scan: all {report.degenerate_count} interior nodes degenerate")
    if args.out is not None:
        out = _out_dir(args)
        _write_metadata(
            out / "ellipticity.json",
            {
                "command": "leland",
                "config": _resolved_config(cfg, scenario),
                "result": report.to_json_dict(),
            },
        )
        if (cfg.get("output", {}) or {}).get("per_node_csv", False):
            report.write_nodes_csv(out / "ellipticity_nodes.csv")
        print(f"leland: wrote scan report to {out}")
    return 0


def _cmd_converge(args) -> int:
    cfg = _load_config(args.config, args.flag)
    scenario = validate(cfg)
    flags = _solver_flags(cfg)
    solver = cfg.get("solver", {}) or {}
    out = _out_dir(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = solve_nonlinear(
            scenario,
            tol=solver.get("tol", 1e-6),
            max_iter=solver.get("max_iter", 25),
            stop_norm=solver.get("stop_norm", "inf"),
            flags=flags,
        )
    _write_convergence_csv(out / "convergence.csv", result.records)
    _write_metadata(
        out / "metadata.json",
        {
            "command": "converge",
            "config": _resolved_config(cfg, scenario),
            "outputs": ["convergence.csv"],
            "result": {
                "converged": result.converged,
                "iterations": result.iterations,
                "records": _records_json(result.records),
            },
        },
    )
    print("n    d1            d2            dinf")
    for rec in result.records:
        print(f"{rec.n:<4d} {rec.d1:<13.6e} {rec.d2:<13.6e} {rec.dinf:<13.6e}")
    status = "converged" if result.converged else "NOT converged"
    print(f"converge: {status} after {result.iterations} sweeps; wrote {out}")
    return 0 if result.converged else 3


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.flag)
    scenario = validate(cfg)
    flags = _solver_flags(cfg)
    solver = cfg.get("solver", {}) or {}
    output = cfg.get("output", {}) or {}
    out = _out_dir(args)

    dt_values = output.get("dt_values")
    if dt_values is None:
        dt_values = np.logspace(math.log10(7.6e-5), math.log10(7e-3), 20).tolist()
    probes = output.get("probes")
    result = dt_sensitivity_sweep(
        scenario,
        dt_values,
        probes,
        tol=solver.get("tol", 1e-6),
        max_iter=solver.get("max_iter", 25),
        flags=flags,
    )
    n_probe = len(result.probe_nodes)
    with open(out / "sweep.csv", "w", newline="") as fh:
        heads = ["dt", "converged", "iterations"]
        heads += [f"price_{k + 1}" for k in range(n_probe)]
        heads += [f"G_{k + 1}" for k in range(n_probe)]
        fh.write(",".join(heads) + "\n")
        for row in result.rows:
            cells = [_fmt(row.dt), str(int(row.converged)), str(row.iterations)]
            cells += [_fmt(v) for v in row.prices]
            cells += [_fmt(v) for v in row.g_values]
            fh.write(",".join(cells) + "\n")
    _write_metadata(
        out / "metadata.json",
        {
            "command": "sweep",
            "config": _resolved_config(cfg, scenario),
            "outputs": ["sweep.csv"],
            "result": {
                "probe_nodes": [list(n) for n in result.probe_nodes],
                "probe_spots": [list(s) for s in result.probe_spots],
                "n_dt": len(result.rows),
                "n_converged": sum(r.converged for r in result.rows),
            },
        },
    )
    print(f"sweep: solved {len(result.rows)} rebalancing intervals; wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlbs",
        description="Two-asset option pricing under nonlinear transaction-cost models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "price": (_cmd_price, True),
        "analytic": (_cmd_analytic, True),
        "leland": (_cmd_leland, False),
        "converge": (_cmd_converge, True),
        "sweep": (_cmd_sweep, True),
    }
    for name, (handler, out_required) in specs.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON scenario config")
        p.add_argument(
            "--out",
            required=out_required,
            default=None,
            help="output directory (created if missing)",
        )
        p.add_argument(
            "--flag",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="config override with a dotted key, e.g. --flag solver.tol=1e-8",
        )
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except QuadratureError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
