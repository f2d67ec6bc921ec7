"""
``mechsynth`` command line.

    mechsynth synthesize --instance demo.json --epsilon 0.3 [--target-revenue 1]
    mechsynth verify     --instance demo.json --mechanism demo.mechanism.json
    mechsynth bruteforce --instance demo.json
    mechsynth execute    --instance demo.json --mechanism m.json --types lo --types hi
    mechsynth bench      data/instances --epsilon 0.5

Exit codes: 2 invalid instance, 3 infeasible target, 4 hard verification
failure, 5 enumeration cap exceeded, 6 mechanism/instance or type mismatch.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Literal, Optional

import typer
from pydantic import BaseModel, Field, ValidationError, field_validator
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from mechsynth.bruteforce import BruteForceResult, brute_force_opt
from mechsynth.errors import CapExceeded
from mechsynth.model import Instance, InstanceError, Setting, load_instance, validate_instance
from mechsynth.reporting import VerificationReport
from mechsynth.runtime import (
    DocumentError,
    InvalidTypeVector,
    SettingMismatch,
    execution_rng,
    execute,
    load_mechanism,
    save_mechanism,
)
from mechsynth.synthesis import (
    Mechanism,
    SynthesisConfig,
    SynthesisError,
    SynthesisRun,
    binary_search_revenue,
    synthesize,
)
from mechsynth.verify import verify_mechanism

logger = logging.getLogger(__name__)

EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_HARD_VIOLATION = 4
EXIT_CAP = 5
EXIT_MISMATCH = 6

app = typer.Typer(no_args_is_help=True, help="Synthesize, run and verify revenue-optimal auctions.")
console = Console()


class ExperimentConfig(BaseModel):
    """One CLI invocation: where the instance lives, how to synthesize and how to verify."""

    instance: Path
    synthesis: SynthesisConfig
    verify_mode: Literal["exact", "mc"] = "exact"
    mc_samples: int = Field(default=10_000, ge=1000)
    out: Optional[Path] = None
    seed: int = 0

    @field_validator("instance")
    @classmethod
    def _exists(cls, v: Path) -> Path:
        if not v.is_file():
            raise ValueError(f"instance file {v} does not exist")
        return v


@app.callback()
def _configure(verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v for INFO, -vv for DEBUG")):
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ── helpers ──────────────────────────────────────────────────────────────


def _fail(code: int, title: str, message: str) -> typer.Exit:
    console.print(Panel(Text(message), title=title, border_style="red", title_align="left"))
    return typer.Exit(code)


def _load(path: Path) -> Instance:
    try:
        inst = load_instance(path)
    except (ValidationError, InstanceError, OSError) as exc:
        raise _fail(EXIT_INVALID, "invalid instance", str(exc))
    problems = validate_instance(inst)
    if problems:
        raise _fail(EXIT_INVALID, "invalid instance", "\n".join(f"- {p}" for p in problems))
    return inst


def _experiment(instance: Path, out: Optional[Path], seed: int, **synthesis) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            instance=instance,
            synthesis=SynthesisConfig(seed=seed, **{k: v for k, v in synthesis.items() if v is not None}),
            out=out,
            seed=seed,
        )
    except ValidationError as exc:
        raise _fail(EXIT_INVALID, "invalid configuration", str(exc))


def _load_mechanism(path: Path) -> Mechanism:
    try:
        return load_mechanism(path)
    except (DocumentError, OSError) as exc:
        raise _fail(EXIT_INVALID, "unreadable mechanism", str(exc))


def _write_log(run: SynthesisRun, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "max_violation", "c_value"])
        for row in run.log:
            writer.writerow([row.round, repr(row.max_violation), repr(row.c_value)])


def _report_table(report: VerificationReport) -> Table:
    table = Table(show_header=True, header_style="bold", padding=(0, 1))
    table.add_column("Check")
    table.add_column("Outcome", justify="center")
    table.add_column("Value", justify="right")
    table.add_column("Threshold", justify="right")
    for c in report.checks:
        style = "green bold" if c.passed else "red bold"
        thr = "-" if c.threshold is None else f"{c.threshold:.6g}"
        table.add_row(c.name + (" (hard)" if c.hard else ""), Text(c.outcome.value.upper(), style=style), f"{c.value:.6g}", thr)
    return table


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.name.removesuffix(".json") + suffix)


# ── commands ─────────────────────────────────────────────────────────────


@app.command("synthesize")
def cmd_synthesize(
    instance: Path = typer.Option(..., "--instance", "-i", help="Instance JSON file"),
    epsilon: float = typer.Option(..., "--epsilon", "-e", help="Target BIC / revenue slack"),
    target_revenue: Optional[float] = typer.Option(None, "--target-revenue", "-R", help="Fixed target; binary search when omitted"),
    delta: Optional[float] = typer.Option(None, "--delta", help="EQ coupling slack (default ε/(n·m·L))"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Scenarios per round when sampling"),
    rounds: Optional[int] = typer.Option(None, "--rounds", help="MWU rounds K"),
    seed: int = typer.Option(0, "--seed", help="Seed for all randomness"),
    threads: int = typer.Option(1, "--threads", help="Oracle worker threads"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Mechanism file (default: next to the instance)"),
):
    """Synthesize a mechanism and write it with its per-round log."""
    cfg = _experiment(instance, out, seed, epsilon=epsilon, delta=delta, samples=samples, rounds=rounds, threads=threads)
    inst = _load(cfg.instance)
    out = cfg.out or _sibling(cfg.instance, ".mechanism.json")
    try:
        if target_revenue is None:
            mech, R = binary_search_revenue(inst, cfg.synthesis)
            run = None
        else:
            run = synthesize(inst, cfg.synthesis, target_revenue)
            if not run.feasible:
                r = run.result
                raise _fail(EXIT_INFEASIBLE, "infeasible", f"target R={r.R:g} declared infeasible ({r.reason}, round {r.round})")
            mech, R = run.result, target_revenue
    except CapExceeded as exc:
        raise _fail(EXIT_CAP, "cap exceeded", str(exc))
    except (SynthesisError, InstanceError) as exc:
        raise _fail(EXIT_INFEASIBLE, "synthesis failed", str(exc))

    save_mechanism(mech, out)
    lines = [f"target R = {R:.6g}", f"snapshots K = {mech.K}", f"mechanism: {out}"]
    if run is not None:
        log_path = _sibling(out, ".log.csv")
        _write_log(run, log_path)
        lines += [f"residual = {run.residual:.4g}", f"log: {log_path}"]
        if run.certificate is not None:
            lines.append(f"certified BIC = {run.certificate.bic_violation:.4g}, value = {run.certificate.value:.6g}")
    console.print(Panel(Text("\n".join(lines)), title="synthesize", border_style="bright_black", title_align="left"))


@app.command("verify")
def cmd_verify(
    instance: Path = typer.Option(..., "--instance", "-i"),
    mechanism: Path = typer.Option(..., "--mechanism", "-m"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", "-e", help="Defaults to the ε the mechanism was built with"),
    verify_mode: str = typer.Option("exact", "--verify-mode", help="exact or mc"),
    mc_samples: int = typer.Option(10_000, "--mc-samples"),
    with_opt: bool = typer.Option(False, "--with-opt", help="Also compare with the brute-force optimum"),
    seed: int = typer.Option(0, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report JSON (a CSV is written next to it)"),
):
    """Certify ε-BIC, ex-post IR, budgets and revenue of a mechanism."""
    inst = _load(instance)
    mech = _load_mechanism(mechanism)
    eps = epsilon if epsilon is not None else float(mech.config.get("epsilon", 0.0))
    try:
        cfg = ExperimentConfig(
            instance=instance,
            synthesis=SynthesisConfig(epsilon=eps, seed=seed),
            verify_mode=verify_mode,
            mc_samples=mc_samples,
            out=out,
            seed=seed,
        )
    except ValidationError as exc:
        raise _fail(EXIT_INVALID, "invalid configuration", str(exc))
    try:
        opt = brute_force_opt(inst).opt if with_opt else None
        report = verify_mechanism(mech, inst, epsilon=eps, mode=cfg.verify_mode, mc_samples=cfg.mc_samples, seed=seed, opt=opt)
    except SettingMismatch as exc:
        raise _fail(EXIT_MISMATCH, "setting mismatch", str(exc))
    except CapExceeded as exc:
        raise _fail(EXIT_CAP, "cap exceeded", str(exc))

    if cfg.out is not None:
        cfg.out.write_text(report.to_json() + "\n")
        _sibling(cfg.out, ".csv").write_text(report.to_csv())
    console.print(Panel(Text(report.summary(), style="bold"), border_style="bright_black", title="verify", title_align="left"))
    console.print(_report_table(report))
    if report.hard_failure:
        raise typer.Exit(EXIT_HARD_VIOLATION)


def _with_payment_grid(inst: Instance, epsilon: Optional[float]) -> Optional[BruteForceResult]:
    if inst.setting is not Setting.SOFT_BUDGET or not epsilon:
        return None
    return brute_force_opt(inst, grid_step=epsilon / 4)


@app.command("bruteforce")
def cmd_bruteforce(
    instance: Path = typer.Option(..., "--instance", "-i"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", "-e", help="Soft budgets: also solve with an ε/4 payment grid"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Optimal action distribution (JSON)"),
):
    """Exact optimal mechanism of a tiny instance."""
    inst = _load(instance)
    try:
        result = brute_force_opt(inst)
        gridded = _with_payment_grid(inst, epsilon)
    except CapExceeded as exc:
        raise _fail(EXIT_CAP, "cap exceeded", str(exc))
    lines = [f"OPT = {result.opt:.9g}", f"LP variables: {result.n_vars}"]
    if gridded is not None:
        lines.append(f"OPT with ε/4 payment grid = {gridded.opt:.9g}")
    if out is not None:
        doc = result.to_dict(inst)
        if gridded is not None:
            doc["opt_with_grid"] = gridded.opt
        out.write_text(json.dumps(doc, indent=1) + "\n")
        lines.append(f"distribution: {out}")
    console.print(Panel(Text("\n".join(lines)), title="bruteforce", border_style="bright_black", title_align="left"))


@app.command("execute")
def cmd_execute(
    instance: Path = typer.Option(..., "--instance", "-i"),
    mechanism: Path = typer.Option(..., "--mechanism", "-m"),
    types: list[str] = typer.Option(..., "--types", "-t", help="Comma-separated type labels; repeat for several runs"),
    seed: int = typer.Option(0, "--seed"),
):
    """Run the mechanism on reported type vectors; one JSON line per execution."""
    inst = _load(instance)
    mech = _load_mechanism(mechanism)
    for k, labels in enumerate(types):
        try:
            tvec = inst.parse_types([s.strip() for s in labels.split(",")])
            trace = execute(mech, inst, tvec, execution_rng(seed, k))
        except (SettingMismatch, InvalidTypeVector, InstanceError) as exc:
            raise _fail(EXIT_MISMATCH, "cannot execute", str(exc))
        typer.echo(trace.to_json_line())


@app.command("bench")
def cmd_bench(
    directory: Path = typer.Argument(..., help="Directory of instance JSON files"),
    epsilon: float = typer.Option(..., "--epsilon", "-e"),
    seed: int = typer.Option(0, "--seed"),
    threads: int = typer.Option(1, "--threads"),
    with_opt: bool = typer.Option(True, "--with-opt/--no-opt"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="CSV summary"),
):
    """Synthesize and verify every instance in a directory."""
    rows = []
    for path in sorted(directory.glob("*.json")):
        inst = _load(path)
        config = SynthesisConfig(epsilon=epsilon, seed=seed, threads=threads)
        try:
            mech, R = binary_search_revenue(inst, config)
            opt = brute_force_opt(inst).opt if with_opt else None
            try:
                report = verify_mechanism(mech, inst, epsilon=epsilon, opt=opt)
            except CapExceeded:
                report = verify_mechanism(mech, inst, epsilon=epsilon, mode="mc", seed=seed, opt=opt)
        except (CapExceeded, SynthesisError) as exc:
            logger.warning("%s skipped: %s", path.name, exc)
            rows.append([path.stem, inst.setting.value, "", "", "", "", f"skipped: {exc}"])
            continue
        gap = "" if opt is None else f"{opt - report.objective:.4g}"
        rows.append([
            path.stem,
            inst.setting.value,
            f"{R:.4g}",
            f"{report.objective:.4g}",
            f"{report.max_bic_violation:.3g}",
            gap,
            "PASS" if report.passed else "FAIL",
        ])

    header = ["instance", "setting", "R", "objective", "bic", "opt_gap", "status"]
    table = Table(show_header=True, header_style="bold", padding=(0, 1))
    for h in header:
        table.add_column(h, justify="right" if h in ("R", "objective", "bic", "opt_gap") else "left")
    for row in rows:
        table.add_row(*row)
    console.print(table)
    if out is not None:
        with out.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)


def main():
    app()


if __name__ == "__main__":
    main()
