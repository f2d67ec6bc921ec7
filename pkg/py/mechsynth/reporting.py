"""
Verification reports.

A report is a list of named checks, each with a measured value, an optional
threshold and an outcome, plus the headline quantities (revenue, BIC and
EQ residuals, ex-post violation counts).  It renders as JSON, as CSV (one
row per check) and as a markdown table for terminals and CI logs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class CheckOutcome(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: Optional[float] = None
    outcome: CheckOutcome = CheckOutcome.SKIPPED
    hard: bool = False
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.outcome is not CheckOutcome.FAIL

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "outcome": self.outcome.value,
            "value": _finite(self.value),
            "threshold": _finite(self.threshold),
            "hard": self.hard,
            "detail": self.detail or None,
        }


def _finite(x: Optional[float]) -> Optional[float]:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


def at_most(name: str, value: float, threshold: float, *, hard: bool = False, detail: str = "") -> CheckResult:
    outcome = CheckOutcome.PASS if value <= threshold else CheckOutcome.FAIL
    return CheckResult(name, value, threshold, outcome, hard, detail)


def at_least(name: str, value: float, threshold: float, *, detail: str = "") -> CheckResult:
    outcome = CheckOutcome.PASS if value >= threshold else CheckOutcome.FAIL
    return CheckResult(name, value, threshold, outcome, False, detail)


@dataclass
class VerificationReport:
    instance: str
    mode: str
    epsilon: float
    revenue: float
    revenue_half_width: float = 0.0
    objective: float = math.nan
    max_eq_residual: float = math.nan
    max_bic_violation: float = 0.0
    ir_violations: int = 0
    budget_violations: int = 0
    supply_violations: int = 0
    opt: Optional[float] = None
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def hard_failure(self) -> bool:
        return any(c.hard and not c.passed for c in self.checks)

    def summary(self) -> str:
        ok = sum(1 for c in self.checks if c.passed)
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: {ok}/{len(self.checks)} checks, revenue {self.revenue:.6g}"
            f" (±{self.revenue_half_width:.3g}), BIC violation {self.max_bic_violation:.3g}"
            f" [{self.mode}] {self.instance}"
        )

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "passed": self.passed,
            "summary": {
                "revenue": self.revenue,
                "revenue_half_width": self.revenue_half_width,
                "objective": _finite(self.objective),
                "max_eq_residual": _finite(self.max_eq_residual),
                "max_bic_violation": self.max_bic_violation,
                "ir_violations": self.ir_violations,
                "budget_violations": self.budget_violations,
                "supply_violations": self.supply_violations,
                "opt": self.opt,
            },
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["check", "outcome", "value", "threshold", "hard"])
        for c in self.checks:
            writer.writerow([c.name, c.outcome.value, repr(c.value), "" if c.threshold is None else repr(c.threshold), int(c.hard)])
        return buf.getvalue()

    def markdown(self) -> str:
        lines = [
            f"# Verification: {self.instance}",
            f"**{self.summary()}**",
            "",
            "| Check | Outcome | Value | Threshold |",
            "|-------|---------|-------|-----------|",
        ]
        for c in self.checks:
            thr = "-" if c.threshold is None else f"{c.threshold:.6g}"
            lines.append(f"| `{c.name}` | {c.outcome.value} | {c.value:.6g} | {thr} |")
        failed = [c for c in self.checks if not c.passed]
        if failed:
            lines += ["", "## Failed checks"]
            for c in failed:
                lines.append(f"- `{c.name}`{' (hard)' if c.hard else ''}: {c.detail or 'threshold exceeded'}")
        return "\n".join(lines)


def build_report(
    instance: str,
    mode: str,
    epsilon: float,
    *,
    revenue: float,
    revenue_half_width: float,
    objective: float,
    target: float,
    max_eq_residual: float,
    eq_tolerance: float,
    max_bic_violation: float,
    ir_violations: int,
    budget_violations: int,
    supply_violations: int,
    opt: Optional[float] = None,
) -> VerificationReport:
    """Assemble the standard checks: counts must be zero, BIC within ε, objective within ε of the target."""
    checks = [
        at_most("ex_post_ir", ir_violations, 0, hard=True, detail=f"{ir_violations} outcomes give negative utility"),
        at_most("budget", budget_violations, 0, hard=True, detail=f"{budget_violations} outcomes exceed a budget"),
        at_most("supply", supply_violations, 0, hard=True, detail=f"{supply_violations} outcomes over-allocate"),
        at_most("bic", max_bic_violation, epsilon + revenue_half_width),
        at_least("objective", objective + revenue_half_width, target - epsilon),
    ]
    if math.isfinite(max_eq_residual):
        checks.append(at_most("eq_residual", max_eq_residual, eq_tolerance))
    if opt is not None:
        checks.append(at_least("opt_gap", objective + revenue_half_width, opt - epsilon, detail=f"OPT = {opt:.6g}"))
    return VerificationReport(
        instance=instance,
        mode=mode,
        epsilon=epsilon,
        revenue=revenue,
        revenue_half_width=revenue_half_width,
        objective=objective,
        max_eq_residual=max_eq_residual,
        max_bic_violation=max_bic_violation,
        ir_violations=ir_violations,
        budget_violations=budget_violations,
        supply_violations=supply_violations,
        opt=opt,
        checks=checks,
    )
