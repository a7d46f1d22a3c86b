"""Temperature schedules: iteration index -> temperature."""
from __future__ import annotations

import math
from dataclasses import dataclass

KINDS = ("constant", "exponential", "linear")
_ALIASES = {"const": "constant", "constant": "constant", "exp": "exponential",
            "exponential": "exponential", "lin": "linear", "linear": "linear"}


@dataclass(frozen=True)
class ScheduleSpec:
    """``steps`` is the total step count K; ``None`` is only valid for constant schedules."""

    kind: str
    tau_start: float
    tau_end: float
    steps: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        for tau in (self.tau_start, self.tau_end):
            if not (tau > 0 and math.isfinite(tau)):
                raise ValueError(f"temperatures must be positive and finite, got {tau!r}")
        if self.kind == "constant" and self.tau_start != self.tau_end:
            raise ValueError("constant schedule needs tau_start == tau_end")
        if self.kind != "constant" and (self.steps is None or self.steps < 1):
            raise ValueError(f"{self.kind} schedule needs steps >= 1, got {self.steps!r}")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")

    def with_steps(self, steps: int) -> "ScheduleSpec":
        return ScheduleSpec(self.kind, self.tau_start, self.tau_end, steps)

    def __str__(self):
        short = {"constant": "const", "exponential": "exp", "linear": "lin"}[self.kind]
        if self.kind == "constant":
            return f"const:{self.tau_start:g}"
        return f"{short}:{self.tau_start:g}:{self.tau_end:g}"


def constant(tau: float, steps: int | None = None) -> ScheduleSpec:
    return ScheduleSpec("constant", tau, tau, steps)


def exponential(tau_start: float, tau_end: float, steps: int) -> ScheduleSpec:
    return ScheduleSpec("exponential", tau_start, tau_end, steps)


def linear(tau_start: float, tau_end: float, steps: int) -> ScheduleSpec:
    return ScheduleSpec("linear", tau_start, tau_end, steps)


def default_schedule(steps: int = 10) -> ScheduleSpec:
    return exponential(0.90, 0.25, steps)


def temperature_at(spec: ScheduleSpec, k: int) -> float:
    """tau_k for ``0 <= k <= K``.

    Exponential: ``tau_start * (tau_end / tau_start) ** (k / K)``; the k = K
    endpoint returns ``tau_end`` itself so the final temperature is exact.
    """
    if k < 0 or (spec.steps is not None and k > spec.steps):
        raise ValueError(f"iteration {k} outside schedule range 0..{spec.steps}")
    if spec.kind == "constant":
        return spec.tau_start
    K = spec.steps
    if k == 0:
        return spec.tau_start
    if k == K:
        return spec.tau_end
    if spec.kind == "exponential":
        return spec.tau_start * (spec.tau_end / spec.tau_start) ** (k / K)
    return spec.tau_start + (spec.tau_end - spec.tau_start) * (k / K)


def alpha_at(spec: ScheduleSpec, k: int) -> float:
    return 1.0 / temperature_at(spec, k)


def parse_schedule(text: str, steps: int | None = None) -> ScheduleSpec:
    """Parse ``const:T``, ``exp:T0:T1[:K]`` or ``lin:T0:T1[:K]``.

    An explicit ``K`` in the string wins over ``steps``.
    """
    parts = text.strip().split(":")
    kind = _ALIASES.get(parts[0].lower())
    if kind is None:
        raise ValueError(f"unknown schedule {text!r}; expected const:T, exp:T0:T1 or lin:T0:T1")
    try:
        if kind == "constant":
            if len(parts) != 2:
                raise ValueError
            return constant(float(parts[1]), steps)
        if len(parts) not in (3, 4):
            raise ValueError
        if len(parts) == 4:
            steps = int(parts[3])
        return ScheduleSpec(kind, float(parts[1]), float(parts[2]), steps)
    except ValueError as exc:
        detail = f": {exc}" if str(exc) else ""
        raise ValueError(f"malformed schedule {text!r}{detail}") from None
