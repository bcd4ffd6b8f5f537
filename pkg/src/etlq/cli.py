"""Command-line front end: ``etlq solve | rhc | tradeoff | constants``.

Exit codes: 0 solved, 1 configuration or I/O error, 2 infeasible,
3 no convergence.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .admm import RHO_RHC, AdmmConfig, rho_for_eps, solve_admm
from .exact import default_workers, solve_exact
from .greedy import TAILS, solve_greedy
from .io import append_jsonl, header_lines, load_instance, solution_record, write_csv, write_trajectory
from .model import InstanceError, Status
from .rhc import INNER_SOLVERS, RhcConfig, compute_stability_constants, run_rhc, tradeoff_sweep
from .tolerances import Tolerances

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NOCONV = 0, 1, 2, 3
_EXIT = {Status.OPTIMAL: EXIT_OK, Status.FEASIBLE: EXIT_OK, Status.INFEASIBLE: EXIT_INFEASIBLE,
         Status.NO_CONVERGENCE: EXIT_NOCONV}


class CliError(Exception):
    pass


def _load(path):
    inst = load_instance(path)
    try:
        tol = Tolerances.from_env()
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return inst.replace(tol=tol)


def _outdir(out) -> Path | None:
    if out is None:
        return None
    p = Path(out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}") from None
    return p


def _finite(v):
    return float(v) if math.isfinite(v) else None


def _emit(record: dict, out: Path | None):
    line = json.dumps(record, sort_keys=True, default=str)
    click.echo(line)
    if out is not None:
        append_jsonl(out / "summary.jsonl", record)


def parse_eps_list(text: str) -> list[float]:
    """``"0.5:4.0:0.25"`` (inclusive range) or ``"0.2,0.4,0.6"``."""
    try:
        if ":" in text:
            a, b, s = (float(v) for v in text.split(":"))
            if not s > 0 or b < a:
                raise ValueError
            k = int(math.floor((b - a) / s + 1e-9))
            return [round(a + i * s, 12) for i in range(k + 1)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--eps: cannot parse {text!r}; use start:stop:step or a comma list") from None


def _cov(scale: float, n: int):
    if scale < 0:
        raise CliError("covariance scale must be non-negative")
    return None if scale == 0 else scale * np.eye(n)


@click.group()
@click.version_option(__version__)
def cli():
    """Event-triggered LQ control: exact, greedy and ADMM solvers."""


@cli.command()
@click.argument("instance", type=click.Path(dir_okay=False))
@click.option("--method", type=click.Choice(["exact", "greedy", "admm"]), default="exact", show_default=True)
@click.option("--rho", type=float, default=None, help="ADMM step size (default: profile for the threshold).")
@click.option("--iters", type=int, default=300, show_default=True, help="ADMM iteration budget.")
@click.option("--eps-tol", type=float, default=1e-4, show_default=True, help="ADMM dynamics residual tolerance.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=None, help="Processes for exact enumeration (default: all cores).")
@click.option("--reference", type=float, default=None, help="Reference cost; adds a relative gap to the record.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for CSV/JSONL artifacts.")
@click.option("--dump-sequences", is_flag=True, help="Write every sequence's outcome (exact only).")
@click.option("--greedy-tail", type=click.Choice(TAILS), default="truncated", show_default=True)
@click.option("--prune/--no-prune", default=False, show_default=True, help="Skip completions of infeasible prefixes.")
def solve(instance, method, rho, iters, eps_tol, seed, workers, reference, out, dump_sequences, greedy_tail, prune):
    """Solve one finite-horizon problem."""
    inst = _load(instance)
    outdir = _outdir(out)
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise CliError("--workers must be >= 1")
    config = {"command": "solve", "instance": str(instance), "method": method, "seed": seed,
              "tolerances": inst.tol.as_dict()}
    report = None
    if method == "exact":
        config.update(workers=workers, prune=prune)
        report = solve_exact(inst, workers=workers, prune=prune, keep_table=dump_sequences)
        sol = report.best
    elif method == "greedy":
        config.update(greedy_tail=greedy_tail)
        sol = solve_greedy(inst, tail=greedy_tail)
    else:
        try:
            cfg = AdmmConfig(rho=rho if rho is not None else rho_for_eps(inst.eps), max_iter=iters,
                             eps_tol=eps_tol, seed=seed)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        config.update(admm=cfg.__dict__)
        trace = outdir / "admm_trace.csv" if outdir is not None else None
        sol = solve_admm(inst, cfg, trace_path=trace)
    record = solution_record(sol)
    record["cost"] = _finite(sol.cost)
    record["config"] = config
    if report is not None:
        record["enumeration"] = report.summary()
    if reference is not None:
        record["reference"] = reference
        record["gap"] = _finite((sol.cost - reference) / reference) if reference != 0 else None
    if outdir is not None:
        if sol.trajectory is not None:
            write_trajectory(outdir / "trajectory.csv", sol, config)
        if dump_sequences and report is not None:
            report.per_sequence.to_csv(outdir / "sequences.csv", header=header_lines(config))
    _emit(record, outdir)
    sys.exit(_EXIT[sol.status])


def _rhc_config(inner, steps, rho, seed, workers, noise_scale, x0_scale, greedy_tail, n) -> RhcConfig:
    try:
        return RhcConfig(inner=inner, sim_len=steps, noise_cov=_cov(noise_scale, n),
                         x0_cov=_cov(x0_scale, n), seed=seed, admm=AdmmConfig(rho=rho, seed=seed),
                         greedy_tail=greedy_tail, workers=workers)
    except ValueError as exc:
        raise CliError(str(exc)) from None


@cli.command()
@click.argument("instance", type=click.Path(dir_okay=False))
@click.option("--method", "--inner", "inner", type=click.Choice(INNER_SOLVERS), default="exact", show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@click.option("--rho", type=float, default=RHO_RHC, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--noise", "noise_scale", type=float, default=0.0, show_default=True, help="w(t) ~ N(0, noise*I).")
@click.option("--x0-random", "x0_scale", type=float, default=0.0, show_default=True,
              help="Draw x0 ~ N(0, scale*I) instead of the instance x0.")
@click.option("--greedy-tail", type=click.Choice(TAILS), default="truncated", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def rhc(instance, inner, steps, rho, seed, workers, noise_scale, x0_scale, greedy_tail, out):
    """Closed-loop receding-horizon simulation."""
    inst = _load(instance)
    outdir = _outdir(out)
    cfg = _rhc_config(inner, steps, rho, seed, workers, noise_scale, x0_scale, greedy_tail, inst.n)
    config = {"command": "rhc", "instance": str(instance), "inner": inner, "steps": steps, "rho": rho,
              "seed": seed, "noise": noise_scale, "x0_random": x0_scale, "greedy_tail": greedy_tail,
              "tolerances": inst.tol.as_dict()}
    run = run_rhc(inst, cfg)
    if outdir is not None:
        n, m = inst.n, inst.m
        cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + ["transmit"]
        rows = [[t, *run.states[t], *run.inputs[t], int(run.transmissions[t])] for t in range(len(run.inputs))]
        write_csv(outdir / "rhc_trace.csv", cols, rows, config)
    record = {"transmissions": run.transmission_count, "steps": int(len(run.inputs)), "total_cost": run.total_cost,
              "J_inf": run.J_inf, "pi_inf": run.pi_inf, "failed_at": run.failed_at, "config": config}
    _emit(record, outdir)
    sys.exit(EXIT_OK if run.ok else EXIT_INFEASIBLE)


@cli.command()
@click.argument("instance", type=click.Path(dir_okay=False))
@click.option("--eps", "eps_text", default="0.5:4.0:0.25", show_default=True)
@click.option("--runs", type=int, default=100, show_default=True)
@click.option("--method", "--inner", "inner", type=click.Choice(INNER_SOLVERS), default="greedy", show_default=True)
@click.option("--steps", type=int, default=500, show_default=True)
@click.option("--rho", type=float, default=RHO_RHC, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise", "noise_scale", type=float, default=0.1, show_default=True)
@click.option("--x0-random", "x0_scale", type=float, default=1.0, show_default=True)
@click.option("--greedy-tail", type=click.Choice(TAILS), default="truncated", show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def tradeoff(instance, eps_text, runs, inner, steps, rho, seed, noise_scale, x0_scale, greedy_tail, workers, out):
    """Monte Carlo sweep of control loss versus communication rate."""
    inst = _load(instance)
    outdir = _outdir(out)
    eps_list = parse_eps_list(eps_text)
    workers = default_workers() if workers is None else workers
    cfg = _rhc_config(inner, steps, rho, seed, 1, noise_scale, x0_scale, greedy_tail, inst.n)
    config = {"command": "tradeoff", "instance": str(instance), "eps": eps_list, "runs": runs, "inner": inner,
              "steps": steps, "rho": rho, "seed": seed, "noise": noise_scale, "x0_random": x0_scale,
              "greedy_tail": greedy_tail, "tolerances": inst.tol.as_dict()}
    try:
        rows = tradeoff_sweep(inst, eps_list, runs, cfg, workers=workers)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    table = [[r.eps, r.J_mean, r.pi_mean, r.runs, r.failures] for r in rows]
    if outdir is not None:
        write_csv(outdir / "tradeoff.csv", ["eps", "J_inf", "pi_inf", "runs", "failures"], table, config)
    for r in table:
        click.echo(",".join(repr(v) for v in r))
    _emit({"rows": len(rows), "failures": int(sum(r.failures for r in rows)), "config": config}, outdir)


@cli.command()
@click.argument("instance", type=click.Path(dir_okay=False))
@click.option("--kappa", type=float, default=None, help="Override kappa (default: a3).")
@click.option("--terminal", type=click.Choice(["Q", "P"]), default="Q", show_default=True,
              help="Terminal weight inside S_Delta.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def constants(instance, kappa, terminal, out):
    """Practical-stability constants and the ultimate-bound radius mu."""
    inst = _load(instance)
    outdir = _outdir(out)
    try:
        c = compute_stability_constants(inst, kappa=kappa, terminal=terminal)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    record = c.as_dict()
    record["config"] = {"command": "constants", "instance": str(instance), "kappa": kappa, "terminal": terminal}
    _emit(record, outdir)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="etlq", standalone_mode=False)
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_CONFIG
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except (CliError, InstanceError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
