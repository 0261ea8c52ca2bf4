"""
Verification outcomes shared by the verifiers and the command-line workers.
"""

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(frozen=True)
class Verdict:
    """Outcome of a membership or equivalence test.

    Truthiness is the outcome itself, so verdicts can be used wherever a bool is expected.
    ``condition`` names the first condition that broke (or the last one checked).
    """

    holds: bool
    condition: str = ""
    residual: float = 0.0
    rung: Optional[int] = None
    details: dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.holds)

    def to_dict(self) -> dict[str, Any]:
        payload = {"holds": bool(self.holds), "condition": self.condition, "residual": float(self.residual)}
        if self.rung is not None:
            payload["rung"] = self.rung
        payload.update(self.details)
        return payload


def passed(condition: str, residual: float = 0.0, **details) -> Verdict:
    return Verdict(True, condition, residual, None, details)


def failed(condition: str, residual: float = 0.0, rung: Optional[int] = None, **details) -> Verdict:
    return Verdict(False, condition, residual, rung, details)
