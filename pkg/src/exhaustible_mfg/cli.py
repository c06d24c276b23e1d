"""Command-line batch runner: solve, simulate, verify, gap.

Every artifact is a deterministic function of the command line and the model
file: no timestamps, no wall-clock seeds. CSVs write floats with ``repr`` so
re-runs are byte-identical. Exit codes: 0 success, 1 usage or I/O error, 2 the
outer fixed point did not converge (files are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .checks import (bound_checks, consistency_checks, decoupled_limit_check,
                     nash_gap_check, rounds_schedule, uniqueness_check,
                     verification_identity_check)
from .coupler import DEFAULT_DAMPING, DEFAULT_MAX_OUTER, DEFAULT_TOL, MfgSolution, solve_mfg
from .errors import MfgError
from .fokker_planck import fourier_mass, solve_fp_forward
from .game import default_deviation_family, nash_gap_experiment
from .hjb import hjb_residual
from .model import Model, canonical_model, model_from_dict, model_to_dict, project_measure_to_cells
from .particles import simulate_ensemble, thread_count, w1_subprobability, weak_error

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_CONVERGENCE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file (default: canonical model)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--nx", type=int, help="override the model file's nx")
    common.add_argument("--nt", type=int, help="override the model file's nt")
    common.add_argument("--tol", type=float, default=DEFAULT_TOL)
    common.add_argument("--damping", type=float, default=DEFAULT_DAMPING)
    common.add_argument("--max-outer", type=int, default=DEFAULT_MAX_OUTER)
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")

    parser = _Parser(prog="exhaustible-mfg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("solve", parents=[common], help="solve the equilibrium and write fields")

    sim = sub.add_parser("simulate", parents=[common], help="particle simulation vs the PDE")
    sim.add_argument("--particles", type=int, nargs="+", default=[1000])
    sim.add_argument("--substeps", type=int, default=4)
    sim.add_argument("--no-bridge", action="store_true")
    sim.add_argument("--drift", choices=("mfg", "zero"), default="mfg",
                     help="equilibrium rate or q = 0")
    sim.add_argument("--outputs", type=int, default=11, help="number of reported times")

    ver = sub.add_parser("verify", parents=[common], help="run the diagnostic suite")
    ver.add_argument("--particles", type=int, default=100_000, help="Monte Carlo sample size")
    ver.add_argument("--rounds", type=int, default=40_000,
                     help="player-rounds per N in the Nash-gap experiment")
    ver.add_argument("--n-list", type=int, nargs="+", default=[10, 100, 1000, 10000])
    ver.add_argument("--substeps", type=int, default=4)
    ver.add_argument("--skip-gap", action="store_true")

    gap = sub.add_parser("gap", parents=[common], help="Nash-gap experiment")
    gap.add_argument("--particles", type=int, nargs="+", default=[10, 100, 1000, 10000],
                     help="player counts N")
    gap.add_argument("--rounds", type=int, default=40_000, help="player-rounds per N")
    gap.add_argument("--substeps", type=int, default=1)
    return parser


def _load(args) -> tuple[Model, dict]:
    """Model plus the provenance block embedded in every JSON artifact."""
    if args.model:
        raw = Path(args.model).read_bytes()
        cfg = json.loads(raw)
        model = model_from_dict(cfg, nx=args.nx, nt=args.nt)
        file_hash = hashlib.sha256(raw).hexdigest()
    else:
        model = canonical_model(nx=args.nx or 200, nt=args.nt or 400)
        file_hash = None
    options = {k: v for k, v in sorted(vars(args).items()) if k not in ("json",)}
    resolved = {"model": model_to_dict(model), "options": options}
    hashed = {"model": resolved["model"],
              "options": {k: v for k, v in options.items() if k != "out"}}
    digest = hashlib.sha256(json.dumps(hashed, sort_keys=True).encode()).hexdigest()
    return model, {"config": resolved, "input_hash": digest, "model_file_sha256": file_hash}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def write_field(path: Path, values: np.ndarray, model: Model) -> None:
    g = model.grid
    t, x = g.t, g.x
    with open(path, "w", newline="") as fh:
        fh.write("t,x,value\n")
        for n in range(g.nt + 1):
            tn = repr(float(t[n]))
            fh.write("".join(f"{tn},{float(x[j])!r},{float(values[n, j])!r}\n"
                             for j in range(g.nx + 1)))


def _solve(model: Model, args) -> MfgSolution:
    return solve_mfg(model, damping=args.damping, tol=args.tol, max_outer=args.max_outer,
                     raise_on_failure=False)


def cmd_solve(args) -> tuple[int, dict]:
    model, prov = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sol = _solve(model, args)
    for name, fieldv in (("u", sol.u), ("m", sol.m), ("q", sol.q), ("p", sol.p)):
        write_field(out / f"{name}.csv", fieldv.values, model)
    _write_rows(out / "market.csv", ["t", "eta", "qbar", "pbar", "ell"],
                ([t, s.eta, s.qbar, s.pbar, s.ell] for t, s in zip(model.grid.t, sol.market)))
    diag = {
        **prov,
        "converged": sol.converged,
        "outer_iterations": len(sol.picard_history),
        "picard_history": sol.picard_history,
        "hjb_step_residual_max": float(hjb_residual(sol.hjb, model.params, model.grid).max()),
        "hjb_sweeps_max": int(sol.hjb.sweeps.max()),
        "fp_mass_balance_error": float(abs(sol.eta[0] - sol.eta[-1] - sol.fp.absorbed.sum())),
        "eta_T": float(sol.eta[-1]),
        "value_at_start": sol.value_at_start(),
    }
    _write_json(out / "diagnostics.json", diag)
    summary = {"converged": sol.converged, "outer_iterations": len(sol.picard_history),
               "value_at_start": diag["value_at_start"], "eta_T": diag["eta_T"]}
    return (EXIT_OK if sol.converged else EXIT_NO_CONVERGENCE), summary


def cmd_simulate(args) -> tuple[int, dict]:
    model, prov = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = model.grid
    code = EXIT_OK
    if args.drift == "zero":
        q = np.zeros((g.nt + 1, g.nx + 1))
        m = solve_fp_forward(model.params, g, q, project_measure_to_cells(model.initial, g))
        m_ref, eta_ref = m.m.values, m.eta
        converged = True
    else:
        sol = _solve(model, args)
        q, m_ref, eta_ref, converged = sol.q.values, sol.m.values, sol.eta, sol.converged
        if not converged:
            code = EXIT_NO_CONVERGENCE
    steps = np.unique(np.linspace(0, g.nt, max(2, args.outputs)).round().astype(int))
    emp_rows, exit_rows, per_n = [], [], []
    for N in args.particles:
        ens, path = simulate_ensemble(model.params, g, q, model.initial, N, args.seed,
                                      substeps=args.substeps,
                                      bridge_correction=not args.no_bridge,
                                      output_steps=steps, terminal=model.terminal)
        for r, n in enumerate(path.step_indices):
            pos = path.positions[r]
            emp_rows.append([N, float(path.times[r]), float(path.alive_fraction[r]),
                             w1_subprobability(pos, N, m_ref[n], g),
                             weak_error(pos, N, m_ref[n], g)])
        exit_rows.extend([N, float(t), float(e)] for t, e in zip(path.grid_times, path.exit_rate))
        alive = float(ens.alive.mean())
        se = float(np.sqrt(max(eta_ref[-1] * (1 - eta_ref[-1]), 0.0) / N))
        per_n.append({"N": N, "alive_fraction_T": alive, "eta_T": float(eta_ref[-1]),
                      "stderr": se, "within_3_stderr": abs(alive - eta_ref[-1]) <= 3 * se,
                      "w1_T": emp_rows[-1][3]})
    _write_rows(out / "empirical.csv", ["N", "t", "alive_fraction", "w1_to_m", "weak_error"],
                emp_rows)
    _write_rows(out / "exitrate.csv", ["N", "t", "exit_rate"], exit_rows)
    summary = {"converged": converged, "results": per_n}
    if args.drift == "zero":
        summary["fourier_eta_T"] = fourier_mass(model.params, model.initial, model.params.T)
    _write_json(out / "simulate.json", {**prov, **summary})
    return code, summary


def cmd_verify(args) -> tuple[int, dict]:
    model, prov = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sol = _solve(model, args)
    checks = [{"name": "outer_converged", "passed": sol.converged,
               "value": sol.picard_history[-1], "tolerance": args.tol}]
    checks += bound_checks(sol) + consistency_checks(sol, args.tol)
    checks.append(decoupled_limit_check(sol))
    checks.append(verification_identity_check(sol, args.particles, args.seed, args.substeps))
    if sol.converged:
        checks += uniqueness_check(model, args.damping, args.tol, args.max_outer)
    report = None
    if sol.converged and not args.skip_gap:
        gap_checks, rep = nash_gap_check(sol, args.n_list,
                                         rounds_schedule(args.n_list, args.rounds), args.seed)
        checks += gap_checks
        report = rep.to_dict()
    payload = {**prov, "checks": checks, "all_passed": all(c["passed"] for c in checks),
               "nash_gap_report": report}
    _write_json(out / "verify.json", payload)
    summary = {"all_passed": payload["all_passed"],
               "failed": [c["name"] for c in checks if not c["passed"]]}
    return (EXIT_OK if sol.converged else EXIT_NO_CONVERGENCE), summary


def cmd_gap(args) -> tuple[int, dict]:
    model, prov = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sol = _solve(model, args)
    rounds = rounds_schedule(args.particles, args.rounds)
    rep = nash_gap_experiment(sol, args.particles, default_deviation_family(), rounds, args.seed,
                              substeps=args.substeps)
    rep.to_csv(out / "nash_gap.csv")
    _write_json(out / "nash_gap.json", {**prov, "converged": sol.converged,
                                        "report": rep.to_dict()})
    summary = {"N": rep.n_values, "gap": rep.gap, "gap_stderr": rep.gap_stderr,
               "spearman_rho": rep.spearman_rho}
    return (EXIT_OK if sol.converged else EXIT_NO_CONVERGENCE), summary


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "gap": cmd_gap}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code, summary = COMMANDS[args.command](args)
    except (OSError, json.JSONDecodeError, MfgError, ValueError) as exc:
        print(f"exhaustible-mfg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(json.dumps({"command": args.command, "exit_code": code, "threads": thread_count(),
                          **summary}, sort_keys=True, default=_jsonable))
    elif code == EXIT_NO_CONVERGENCE:
        print("warning: outer iteration did not converge", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
