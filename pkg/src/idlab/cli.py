"""idlab command line: orchestrates the experiments and writes artifacts.

Subcommands: verify-scaling, solve, flux, discriminate, reverse-check,
synthesize, reconstruct, examples.  Exit codes: 0 success, 2 config/schema
violation (message names the offending field), 3 numerical failure (partial
artifacts are kept next to a .FAILED marker).

Report-producing commands render a PNG figure alongside each CSV; pass
--no-plot to skip rendering.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import plots, report
from .config import ConfigError
from .coefficients import PiecewiseLinearDiffusion, make_preset
from .flux import FluxFunctional, flux_gap_on_gamma_m
from .geometry import Domain, GeometryError, build_grid
from .identify import LowerOrderMismatch, discrimination_sweep, reverse_check
from .reconstruct import (
    MeasurementSet,
    default_datum_battery,
    recover_a,
    synthesize_measurements,
)
from .singular import patch_constant_rows, scaling_rows
from .solver import ProblemSpec, SolverError, field_bounds, solve_coupled, solve_parabolic
from .testfuncs import measurement_battery
from .util import resolve_threads

SCALING_FIELDS = [
    "quantity",
    "p",
    "dim",
    "eps",
    "value",
    "predicted_exponent",
    "fitted_slope",
    "pass",
    "regime",
    "log_power",
    "ratio_spread",
]

REPORT_FIELDS = [
    "eps",
    "principal",
    "lhs",
    "flux",
    "storage",
    "drift",
    "reaction",
    "rhs_total",
    "residual",
    "relative_residual",
    "lower_order_sum",
    "flux_near",
    "flux_far",
    "energy_1",
    "energy_2",
]


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, GeometryError, ValueError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            report.mark_failed(out, str(exc))
        return 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idlab", description=__doc__)
    p.set_defaults(command=None)
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--no-plot", action="store_true")

    sp = sub.add_parser("verify-scaling", help="kernel norm growth and patch constants")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_verify_scaling)

    sp = sub.add_parser("solve", help="forward solve; writes field.bin + trace.csv")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace", required=True)
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("flux", help="pair a stored field against a test battery")
    sp.add_argument("--field", required=True)
    sp.add_argument("--field2", default=None)
    sp.add_argument("--coeffs", required=True)
    sp.add_argument("--battery", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_flux)

    sp = sub.add_parser("discriminate", help="eps-sweep discrimination experiment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest", required=True)
    common(sp)
    sp.set_defaults(func=cmd_discriminate)

    sp = sub.add_parser("reverse-check", help="identical specs must match fluxes")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_reverse)

    sp = sub.add_parser("synthesize", help="two-grid synthetic measurement data")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("reconstruct", help="recover a(u) knots from measurements")
    sp.add_argument("--data", required=True)
    sp.add_argument("--init", required=True)
    sp.add_argument("--reg", type=float, default=1e-4)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tol", type=float, default=0.05)
    common(sp)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("examples", help="named application presets")
    sp.add_argument("name", choices=["bioheat", "chemotaxis"])
    sp.add_argument("--out-dir", default="examples_out")
    sp.add_argument("--n-cells", type=int, default=24)
    sp.add_argument("--n-steps", type=int, default=32)
    common(sp)
    sp.set_defaults(func=cmd_examples)
    return p


def _maybe_plot(args, fn, *fargs) -> None:
    if not getattr(args, "no_plot", False):
        fn(*fargs)


# ---------------------------------------------------------------------------

def cmd_verify_scaling(args) -> int:
    cfg = cfgmod.load_json(args.config)
    domain2 = cfgmod.domain_from_config(cfg)
    dims = cfg.get("sweep", {}).get("dims", [2, 3])
    factors = tuple(cfg.get("sweep", {}).get("eps_factors", [2.0 ** (-k) for k in range(3, 10)]))
    domains = []
    if 2 in dims:
        domains.append(domain2)
    if 3 in dims:
        domains.append(
            Domain(dim=3, xbar=(domain2.xbar[0], domain2.xbar[0], 0.0), eps0=domain2.eps0, T=domain2.T)
        )
    rows = []
    for dom in domains:
        rows += scaling_rows(dom, None, eps_factors=factors)
        rows += patch_constant_rows(dom, None, eps_factors=factors)
    report.write_csv(args.out, SCALING_FIELDS, rows)
    manifest = report.config_manifest(cfg, {"n_rows": len(rows), "all_pass": all(r["pass"] for r in rows)})
    report.write_json(str(args.out) + ".manifest.json", manifest)
    _maybe_plot(args, plots.scaling_figure, rows, Path(args.out).with_suffix(".png"))
    ok = all(r["pass"] for r in rows)
    print(f"verify-scaling: {len(rows)} rows, {'all pass' if ok else 'FAILURES'}")
    return 0 if ok else 3


def cmd_solve(args) -> int:
    cfg = cfgmod.load_json(args.config)
    domain = cfgmod.domain_from_config(cfg)
    grid = build_grid(domain, cfgmod.n_cells_from_config(cfg))
    coeffs = cfgmod.coefficients_from_config(cfg, "coefficients")
    solve_block = cfg.get("solve", {})
    g = cfgmod.datum_from_config(cfg, "solve.g", domain) if "g" in solve_block else 0.0
    u0 = solve_block.get("u0", 0.0)
    n_steps = int(solve_block.get("n_steps", 32))
    spec = ProblemSpec(
        grid,
        coeffs,
        g=g,
        u0=u0,
        n_steps=n_steps,
        nonlinear_tol=cfgmod.tolerance_from_config(cfg),
    )
    field = solve_parabolic(spec)
    report.save_field(args.out, field)
    report.write_trace_csv(args.trace, field)
    _maybe_plot(
        args,
        plots.trace_figure,
        field.times,
        grid.nodes[grid.gamma_nodes, 0],
        field.gamma_trace(),
        Path(args.trace).with_suffix(".png"),
    )
    lo, hi = field_bounds(field)
    print(f"solve: {field.n_levels} levels, range [{lo:.6g}, {hi:.6g}]")
    return 0


def cmd_flux(args) -> int:
    field = report.load_field(args.field)
    cfg = cfgmod.load_json(args.coeffs)
    coeffs = cfgmod.coefficients_from_config(cfg, "coefficients")
    battery = cfgmod.battery_from_config(cfgmod.load_json(args.battery), field.grid.domain)
    j1 = FluxFunctional(field, coeffs)
    if args.field2:
        j2 = FluxFunctional(report.load_field(args.field2), coeffs)
        res = flux_gap_on_gamma_m(j1, j2, battery)
        rows = res["rows"]
        fields = ["center", "width", "window", "pair_1", "pair_2", "phi_norm", "normalized_gap"]
        print(f"flux: max normalized gap {res['gap']:.3e}")
    else:
        pairs = j1.pair_many(battery)
        from .testfuncs import h1h1_norm

        rows = [
            {
                "center": getattr(phi, "center", float("nan")),
                "width": getattr(phi, "width", float("nan")),
                "window": getattr(phi, "window", ()),
                "pairing": float(v),
                "phi_norm": h1h1_norm(phi, field.grid),
            }
            for phi, v in zip(battery, pairs)
        ]
        fields = ["center", "width", "window", "pairing", "phi_norm"]
        print(f"flux: {len(rows)} pairings")
    report.write_csv(args.out, fields, rows)
    _maybe_plot(args, plots.gaps_figure, rows, Path(args.out).with_suffix(".png"))
    return 0


def cmd_discriminate(args) -> int:
    cfg = cfgmod.load_json(args.config)
    domain = cfgmod.domain_from_config(cfg)
    c1 = cfgmod.coefficients_from_config(cfg, "pair.side1")
    c2 = cfgmod.coefficients_from_config(cfg, "pair.side2")
    pair_block = cfg.get("pair", {})
    mismatch = None
    if pair_block.get("mismatch"):
        m = pair_block["mismatch"]
        mismatch = LowerOrderMismatch(
            reaction_shift=float(m.get("reaction_shift", 0.1)),
            storage_factor=float(m.get("storage_factor", 1.15)),
            u0_amplitude=float(m.get("u0_amplitude", 0.1)),
        )
    factors = tuple(pair_block.get("eps_factors", [2.0 ** (-k) for k in range(3, 8)]))
    rep = discrimination_sweep(
        c1,
        c2,
        domain,
        lower_order_mismatch=mismatch,
        eps_factors=factors,
        mode=pair_block.get("mode", "parabolic"),
        nonlinear_tol=cfgmod.tolerance_from_config(cfg),
        threads=resolve_threads(args.threads),
    )
    report.write_csv(args.out, REPORT_FIELDS, rep.rows)
    manifest = report.config_manifest(
        cfg,
        {
            **rep.as_manifest(),
            "seed": cfgmod.seed_from_config(cfg, args.seed),
            "tolerances": {"nonlinear": cfgmod.tolerance_from_config(cfg)},
            "grid": "graded (fine cell = eps/8 near xbar)",
        },
    )
    report.write_json(args.manifest, manifest)
    _maybe_plot(args, plots.discrimination_figure, rep.rows, rep.as_manifest(), Path(args.out).with_suffix(".png"))
    print(f"discriminate: verdict {rep.verdict}, principal slope {rep.principal_slope:.4f}")
    return 0


def cmd_reverse(args) -> int:
    cfg = cfgmod.load_json(args.config)
    domain = cfgmod.domain_from_config(cfg)
    coeffs = cfgmod.coefficients_from_config(cfg, "coefficients")
    block = cfg.get("reverse", {})
    mode = block.get("mode", "parabolic")
    n_data = int(block.get("n_data", 8))
    lo, hi = coeffs.u_range
    if mode == "elliptic":
        g_battery = [
            (lambda x, t, k=k: lo + (hi - lo) * (0.2 + 0.06 * k) * (1.0 + 0.5 * np.sin((k + 1) * np.pi * np.atleast_2d(x)[:, 0])) / 2.0)
            for k in range(n_data)
        ]
    else:
        g_battery = [
            cfgmod.make_dirichlet_datum(
                domain,
                domain.eps0 / (1 + (k % 3)),
                lo + 0.05 * (hi - lo) * k,
                hi,
                (0.2 * domain.T, 0.8 * domain.T),
            )
            for k in range(n_data)
        ]
    res = reverse_check(
        coeffs,
        g_battery,
        domain,
        mode=mode,
        n_cells=int(block.get("n_cells", 24)),
        n_steps=int(block.get("n_steps", 32)),
        nonlinear_tol=cfgmod.tolerance_from_config(cfg),
    )
    report.write_csv(args.out, ["datum", "gap"], res["rows"])
    report.write_json(
        str(args.out) + ".manifest.json",
        report.config_manifest(cfg, {"max_gap": res["max_gap"], "pass": res["pass"], "mode": mode}),
    )
    print(f"reverse-check[{mode}]: max gap {res['max_gap']:.3e} ({'pass' if res['pass'] else 'FAIL'})")
    return 0 if res["pass"] else 3


def cmd_synthesize(args) -> int:
    cfg = cfgmod.load_json(args.config)
    domain = cfgmod.domain_from_config(cfg)
    coeffs = cfgmod.coefficients_from_config(cfg, "coefficients")
    block = cfg.get("synthesize", {})
    lo, hi = coeffs.u_range
    n_data = int(block.get("n_data", 8))
    datums = default_datum_battery(domain, lo, hi, n=n_data)
    phi_battery = measurement_battery(domain, int(block.get("n_phi", 6)))
    meas = synthesize_measurements(
        coeffs,
        datums,
        phi_battery,
        domain,
        n_cells=int(block.get("n_cells", 48)),
        n_steps=int(block.get("n_steps", 96)),
        inversion_cells=int(block.get("inversion_cells", 24)),
        inversion_steps=int(block.get("inversion_steps", 48)),
        noise=float(block.get("noise", 0.0)),
        seed=cfgmod.seed_from_config(cfg, args.seed),
        threads=resolve_threads(args.threads),
    )
    payload = measurements_to_json(meas, domain)
    if "true_values" in block:
        payload["manifest"]["true_values"] = list(block["true_values"])
        payload["manifest"]["true_u_knots"] = list(block.get("true_u_knots", []))
    if coeffs.u_knots is not None:
        payload["manifest"].setdefault("true_u_knots", np.asarray(coeffs.u_knots).tolist())
        payload["manifest"].setdefault(
            "true_values", [float(v) for v in coeffs.eval_a(0.0, np.asarray(coeffs.u_knots))]
        )
    report.write_json(args.out, payload)
    print(f"synthesize: {meas.data.shape[0]}x{meas.data.shape[1]} pairings")
    return 0


def measurements_to_json(meas: MeasurementSet, domain: Domain) -> dict:
    return {
        "data": meas.data.tolist(),
        "noise": meas.noise,
        "manifest": dict(meas.manifest),
        "domain": {
            "dim": domain.dim,
            "xbar": list(domain.xbar),
            "eps0": domain.eps0,
            "T": domain.T,
        },
        "datums": [
            {
                "eps": d.eps,
                "g1": d.g1,
                "g2": d.g2,
                "window": list(d.cutoffs.window),
            }
            for d in meas.datums
        ],
        "phi_battery": [
            {
                "kind": "smooth",
                "center": p.center,
                "width": p.width,
                "depth": p.depth,
                "window": list(p.window),
            }
            for p in meas.phi_battery
        ],
    }


def measurements_from_json(payload: dict) -> tuple[MeasurementSet, Domain]:
    dom_info = payload["domain"]
    domain = Domain(
        dim=dom_info["dim"],
        xbar=tuple(dom_info["xbar"]),
        eps0=dom_info["eps0"],
        T=dom_info["T"],
    )
    from .singular import make_dirichlet_datum as mk
    from .testfuncs import SmoothBumpTestFn, HatTimeTestFn

    datums = [
        mk(domain, d["eps"], d["g1"], d["g2"], (d["window"][0], d["window"][1]))
        for d in payload["datums"]
    ]
    battery = []
    for b in payload["phi_battery"]:
        cls = SmoothBumpTestFn if b.get("kind", "smooth") == "smooth" else HatTimeTestFn
        battery.append(cls(b["center"], b["width"], b["depth"], (b["window"][0], b["window"][1])))
    meas = MeasurementSet(
        data=np.asarray(payload["data"], dtype=float),
        datums=datums,
        phi_battery=battery,
        noise=float(payload.get("noise", 0.0)),
        manifest=dict(payload.get("manifest", {})),
    )
    return meas, domain


def cmd_reconstruct(args) -> int:
    payload = cfgmod.load_json(args.data)
    try:
        meas, domain = measurements_from_json(payload)
    except (KeyError, TypeError) as exc:
        raise ConfigError("<data>", f"bad measurement file: {exc}")
    init_payload = cfgmod.load_json(args.init)
    try:
        init = PiecewiseLinearDiffusion(
            tuple(init_payload["u_knots"]), tuple(init_payload["values"])
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError("<init>", f"bad init file: {exc}")
    inv_cells = int(meas.manifest.get("inversion_cells") or 24)
    inv_steps = int(meas.manifest.get("inversion_steps") or 48)
    res = recover_a(
        meas,
        init,
        reg_weight=args.reg,
        domain=domain,
        n_cells=inv_cells,
        n_steps=inv_steps,
        threads=resolve_threads(args.threads),
    )
    rec = np.asarray(res.recovered.values)
    out = {
        "u_knots": list(res.recovered.u_knots),
        "values": rec.tolist(),
        "objective_history": res.objective_history,
        "misfit": res.misfit,
        "converged": res.converged,
        "n_solves": res.n_solves,
        "reg_weight": args.reg,
    }
    true_vals = meas.manifest.get("true_values")
    passed = None
    if true_vals and len(true_vals) == len(rec):
        tv = np.asarray(true_vals, dtype=float)
        rel = float(np.max(np.abs(rec - tv) / np.maximum(np.abs(tv), 1e-30)))
        out["relative_linf_error"] = rel
        out["tolerance"] = args.tol
        passed = rel <= args.tol
        out["pass"] = passed
    report.write_json(args.out, out)
    _maybe_plot(
        args,
        plots.recovery_figure,
        np.asarray(res.recovered.u_knots),
        rec,
        np.asarray(init.values),
        res.objective_history,
        Path(args.out).with_suffix(".png"),
        np.asarray(true_vals, dtype=float) if true_vals else None,
    )
    status = "" if passed is None else f", rel error {out['relative_linf_error']:.3%} ({'pass' if passed else 'FAIL'})"
    print(f"reconstruct: misfit {res.misfit:.3e}{status}")
    return 0 if passed in (None, True) else 3


def cmd_examples(args) -> int:
    out_dir = Path(args.out_dir)
    domain = Domain()
    grid = build_grid(domain, args.n_cells)
    if args.name == "bioheat":
        coeffs = make_preset("bioheat")
        u_b = coeffs.u_range[1]

        def g(x, t):
            x = np.atleast_2d(x)
            return 0.3 + 0.3 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * t) ** 2

        def u0(x):
            x = np.atleast_2d(x)
            return 0.3 + 0.2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

        field = solve_parabolic(ProblemSpec(grid, coeffs, g=g, u0=u0, n_steps=args.n_steps))
        lo, hi = field_bounds(field)
        ok = lo >= -1e-10 and hi <= u_b + 1e-10
        label = f"bioheat: range [{lo:.6g}, {hi:.6g}] within [0, {u_b}]"
    else:
        coeffs = make_preset("chemotaxis")

        def u0(x):
            x = np.atleast_2d(x)
            return 0.5 + 0.3 * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])

        field, signal = solve_coupled(
            ProblemSpec(grid, coeffs, g=0.5, u0=u0, n_steps=args.n_steps)
        )
        lo, hi = field_bounds(field)
        ok = lo >= -1e-10 and hi <= 1.0 + 1e-10
        label = f"chemotaxis: range [{lo:.6g}, {hi:.6g}] within [0, 1]"
    report.write_trace_csv(out_dir / "trace.csv", field)
    report.save_field(out_dir / "field.bin", field)
    report.write_json(
        out_dir / "run.json",
        {"example": args.name, "bounds": [lo, hi], "invariant_pass": bool(ok)},
    )
    _maybe_plot(
        args,
        plots.trace_figure,
        field.times,
        grid.nodes[grid.gamma_nodes, 0],
        field.gamma_trace(),
        out_dir / "trace.png",
    )
    print(label + (" (pass)" if ok else " (FAIL)"))
    return 0 if ok else 3


if __name__ == "__main__":
    sys.exit(main())
