"""Check rows and CSV rendering shared by the verification reports."""

from __future__ import annotations

from dataclasses import dataclass, field


def fmt(x):
    """17-significant-digit decimal rendering used by every CSV writer."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class CheckRow:
    name: str
    lhs: float
    rhs: float
    stderr: float
    tol: float
    passed: bool


@dataclass
class Report:
    """A named bundle of check rows with an overall verdict."""

    title: str
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def add(self, name, lhs, rhs, stderr, tol):
        passed = abs(lhs - rhs) <= tol
        self.rows.append(
            CheckRow(name=name, lhs=float(lhs), rhs=float(rhs),
                     stderr=float(stderr), tol=float(tol), passed=passed)
        )
        return passed

    def add_row(self, name, lhs, rhs, stderr, tol, passed):
        self.rows.append(
            CheckRow(name=name, lhs=float(lhs), rhs=float(rhs),
                     stderr=float(stderr), tol=float(tol), passed=bool(passed))
        )
        return bool(passed)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def to_csv_text(self):
        lines = ["check_name,lhs,rhs,stderr,pass"]
        for r in self.rows:
            lines.append(
                f"{r.name},{fmt(r.lhs)},{fmt(r.rhs)},{fmt(r.stderr)},{int(r.passed)}"
            )
        return "\n".join(lines) + "\n"

    def to_value_csv_text(self):
        """bsde-style rendering: check,value,tolerance,pass."""
        lines = ["check,value,tolerance,pass"]
        for r in self.rows:
            lines.append(
                f"{r.name},{fmt(r.lhs - r.rhs)},{fmt(r.tol)},{int(r.passed)}"
            )
        return "\n".join(lines) + "\n"
