"""Command line front end.

Subcommands: converge, stability, energy, simulate, coeffs.  Each report
writes a CSV (RFC-4180-style, 17 significant digits), a JSON run manifest,
and a PNG figure into the output directory.  Exit codes: 0 success,
2 input error, 3 instability detected, 4 internal consistency error.

Options may come from a plain-text config file (one ``key = value`` per
line, ``#`` comments); explicit flags override file values.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import fields as dataclass_fields

from .coefficients import ab_coefficients, alpha_p_table, gamma_poly, gamma_tilde_poly
from .errors import InputError, LtsWaveError
from .harness import (
    RunConfig,
    build_problem,
    exact_solution,
    reference_max_step,
    run_convergence,
    run_energy_trace,
    run_stability_report,
    write_csv,
    write_manifest,
    _integrate_ab,
    _integrate_lf_family,
    _steps_for,
)

_CONFIG_KEYS = {f.name for f in dataclass_fields(RunConfig)}
_FLOAT_KEYS = {"h_coarse", "sigma", "c", "alpha", "final_time", "dt", "dt_fraction"}
_INT_KEYS = {"order", "k", "p", "overlap", "jobs"}


def _read_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{lineno}: expected key = value")
                key, val = (part.strip() for part in line.split("=", 1))
                key = key.replace("-", "_")
                if key not in _CONFIG_KEYS:
                    raise InputError(f"{path}:{lineno}: unknown key {key!r}")
                if key in _FLOAT_KEYS:
                    values[key] = float(val)
                elif key in _INT_KEYS:
                    values[key] = int(val)
                else:
                    values[key] = val
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    return values


def _add_common(sub):
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--disc", choices=["cg", "ipdg", "nodal-dg"])
    sub.add_argument("--order", type=int)
    sub.add_argument("--scheme", choices=["lf2", "lfme4", "lfcn2", "ab"])
    sub.add_argument("--k", type=int, help="multistep order (AB family)")
    sub.add_argument("--p", type=int, help="local refinement ratio")
    sub.add_argument("--overlap", type=int)
    sub.add_argument("--h-coarse", dest="h_coarse", type=float)
    sub.add_argument("--sigma", type=float)
    sub.add_argument("--c", type=float)
    sub.add_argument("--alpha", type=float, help="interior penalty weight")
    sub.add_argument("--flux", choices=["upwind", "central"])
    sub.add_argument("--bc", choices=["dirichlet", "neumann"])
    sub.add_argument("--tfinal", dest="final_time", type=float)
    sub.add_argument("--dt", type=float, help="explicit global step")
    sub.add_argument("--dt-fraction", dest="dt_fraction", type=float)
    sub.add_argument(
        "--exact-ratio",
        action="store_true",
        help="run at the reference maximum step itself (dt_fraction = 1)",
    )
    sub.add_argument("--jobs", type=int)
    sub.add_argument("--out-dir", default=".", help="directory for reports")
    sub.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _build_config(args):
    values = {}
    if getattr(args, "config", None):
        values.update(_read_config_file(args.config))
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "exact_ratio", False):
        values["dt_fraction"] = 1.0
    return RunConfig(**values)


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def cmd_converge(args):
    cfg = _build_config(args)
    h_list = args.h
    t0 = time.perf_counter()
    report = run_convergence(cfg, h_list)
    elapsed = time.perf_counter() - t0
    rows = [
        (r.h, r.n_dofs, r.dt, r.error, r.rate if r.rate is not None else "")
        for r in report.rows
    ]
    csv_path = _out(args, "convergence.csv")
    write_csv(csv_path, ["h_coarse", "n_dofs", "dt", "l2_error", "rate"], rows)
    write_manifest(_out(args, "convergence_manifest.json"), cfg, {"run": elapsed})
    if not args.no_figures:
        from .figures import convergence_figure

        label = f"{cfg.disc} P{cfg.order} {cfg.scheme}" + (
            f"{cfg.k}({cfg.p})" if cfg.scheme == "ab" else f"({cfg.p})"
        )
        convergence_figure(_out(args, "convergence.png"), {label: report})
    print(f"wrote {csv_path}")
    for r in report.rows:
        rate = f"{r.rate:.3f}" if r.rate is not None else "  -  "
        print(f"  h={r.h:<8g} dofs={r.n_dofs:<6d} dt={r.dt:.6g}  error={r.error:.6e}  rate={rate}")
    return 0


def cmd_stability(args):
    cfg = _build_config(args)
    p_values = args.p_list or [cfg.p]
    e_values = args.e_list or [cfg.overlap]
    t0 = time.perf_counter()
    rows = run_stability_report(cfg, p_values, e_values)
    elapsed = time.perf_counter() - t0
    csv_rows = [
        (r["scheme"], r["k"], r["p"], r["overlap"], r["nu_max"], r["nu_last_stable"], r["dt_ref"])
        for r in rows
    ]
    csv_path = _out(args, "stability.csv")
    write_csv(
        csv_path,
        ["scheme", "k", "p", "overlap", "nu_max", "nu_last_stable", "dt_ref"],
        csv_rows,
    )
    write_manifest(_out(args, "stability_manifest.json"), cfg, {"run": elapsed})
    if not args.no_figures:
        from .figures import stability_figure

        stability_figure(_out(args, "stability.png"), rows)
    print(f"wrote {csv_path}")
    for r in rows:
        print(f"  {r['scheme']:>4} p={r['p']} e={r['overlap']}: nu_max={r['nu_max']:.4f}")
    return 0


def cmd_energy(args):
    cfg = _build_config(args)
    t0 = time.perf_counter()
    series = run_energy_trace(cfg, args.steps, dt=cfg.dt, dt_lf_fraction=args.dt_lf_fraction)
    elapsed = time.perf_counter() - t0
    csv_path = _out(args, "energy.csv")
    write_csv(csv_path, ["t", "energy"], series)
    write_manifest(_out(args, "energy_manifest.json"), cfg, {"run": elapsed})
    if not args.no_figures:
        from .figures import energy_figure

        energy_figure(_out(args, "energy.png"), series)
    es = [e for _, e in series]
    e0 = es[0] if es and es[0] != 0 else 1.0
    print(f"wrote {csv_path}; relative spread {(max(es) - min(es)) / e0:.3e}")
    return 0


def cmd_simulate(args):
    cfg = _build_config(args)
    mesh, sd, nsys, mask = build_problem(cfg)
    if cfg.dt is not None:
        dt_target = cfg.dt
    else:
        dt_target = cfg.dt_fraction * reference_max_step(cfg)
    n_steps, dt = _steps_for(cfg.final_time, dt_target)
    t0 = time.perf_counter()
    if cfg.scheme == "ab":
        final = _integrate_ab(cfg, sd, nsys, mask, dt, n_steps, cfg.h_coarse)
    else:
        final = _integrate_lf_family(cfg, sd, nsys, mask, dt, n_steps, cfg.h_coarse)
    elapsed = time.perf_counter() - t0
    csv_path = _out(args, "simulate.csv")
    t_end = cfg.final_time
    if nsys.first_order:
        q = final.ys[0]
        xs = sd.dof_x[sd.v_dofs.ravel()]
        vs = q[sd.v_dofs.ravel()]
        ws = q[sd.w_dofs.ravel()]
        write_csv(csv_path, ["x", "v", "w"], list(zip(xs, vs, ws)))
        fields = {
            "v": (vs, exact_solution(xs, t_end, cfg.sigma)[1]),
            "w": (ws, exact_solution(xs, t_end, cfg.sigma)[2]),
        }
    else:
        z = final.ys[0][: nsys.n] if cfg.scheme == "ab" else final.z
        u_full = sd.embed(nsys.from_z(z))
        xs = sd.dof_x
        write_csv(csv_path, ["x", "u"], list(zip(xs, u_full)))
        fields = {"u": (u_full, exact_solution(xs, t_end, cfg.sigma)[0])}
    write_manifest(_out(args, "simulate_manifest.json"), cfg, {"run": elapsed})
    if not args.no_figures:
        from .figures import snapshot_figure

        snapshot_figure(_out(args, "simulate.png"), xs, fields, t_end)
    print(f"wrote {csv_path} ({n_steps} steps of dt={dt:.6g})")
    return 0


def cmd_coeffs(args):
    k = args.k if args.k is not None else 4
    p = args.p if args.p is not None else 2
    rows = []
    cs = ab_coefficients(k, p)
    print(f"classical weights alpha (k={k}): " + ", ".join(str(a) for a in cs.alpha))
    for ell, a in enumerate(cs.alpha):
        rows.append(("alpha", k, p, ell, "", str(a), float(a)))
    print(f"substep weights beta (k={k}, p={p}):")
    for m, row in enumerate(cs.beta):
        print(f"  m={m}: " + ", ".join(str(b) for b in row))
        for ell, b in enumerate(row):
            rows.append(("beta", k, p, m, ell, str(b), float(b)))
    table = alpha_p_table(p)
    if table.alpha:
        print(f"one-step substep weights (p={p}): " + ", ".join(str(a) for a in table.alpha))
    for j, a in enumerate(table.alpha, start=1):
        rows.append(("alpha_substep", "", p, j, "", str(a), float(a)))
    for j in range(k):
        rows.append(("gamma", "", "", j, "", _poly_str(gamma_poly(j)), ""))
        rows.append(("gamma_tilde", "", "", j, "", _poly_str(gamma_tilde_poly(j)), ""))
    if args.out_dir is not None:
        csv_path = _out(args, "coeffs.csv")
        write_csv(csv_path, ["table", "k", "p", "index", "sub", "exact", "value"], rows)
        write_manifest(
            _out(args, "coeffs_manifest.json"), {"k": k, "p": p}, {"run": 0.0}
        )
        print(f"wrote {csv_path}")
    return 0


def _poly_str(coeffs):
    terms = [f"{c}*x^{i}" for i, c in enumerate(coeffs) if c != 0]
    return " + ".join(terms) if terms else "0"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ltswave",
        description="local time-stepping integrators for the 1-D damped wave equation",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    conv = subs.add_parser("converge", help="mesh-refinement convergence study")
    _add_common(conv)
    conv.add_argument(
        "--h", type=float, nargs="+", default=[0.2, 0.1, 0.05],
        help="coarse mesh sizes, strictly decreasing",
    )
    conv.set_defaults(func=cmd_converge)

    stab = subs.add_parser("stability", help="largest stable step ratios")
    _add_common(stab)
    stab.add_argument("--p-list", type=int, nargs="+", help="refinement ratios to scan")
    stab.add_argument("--e-list", type=int, nargs="+", help="overlaps to scan")
    stab.set_defaults(func=cmd_stability)

    ener = subs.add_parser("energy", help="discrete energy trace")
    _add_common(ener)
    ener.add_argument("--steps", type=int, default=10_000)
    ener.add_argument("--dt-lf-fraction", type=float, default=0.5)
    ener.set_defaults(func=cmd_energy)

    sim = subs.add_parser("simulate", help="integrate and dump the final field")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    coef = subs.add_parser("coeffs", help="dump coefficient tables")
    coef.add_argument("--k", type=int)
    coef.add_argument("--p", type=int)
    coef.add_argument("--out-dir", default=None)
    coef.set_defaults(func=cmd_coeffs)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except LtsWaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


def cli_main(argv=None):
    """Alias kept for in-process invocation."""
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
