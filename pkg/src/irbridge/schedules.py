"""Paired (bridge time, generative time) schedules and their feasibility audit."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InfeasibleSchedule, NoSolution, ZeroF
from .paths import Path
from .transition import critical_timestep, forward_feasible, reverse_feasible

__all__ = [
    "OneStage",
    "TwoStage",
    "Additive",
    "SchedulePolicy",
    "TimestepSchedule",
    "StepCheck",
    "ScheduleReport",
    "build_schedule",
    "validate_schedule",
    "preset",
    "PRESETS",
    "policy_from_dict",
]

J_MIN = 1.0 / 1000


@dataclass(frozen=True)
class OneStage:
    j_max: float
    j_min: float = J_MIN
    kind: str = field(default="one_stage", init=False)


@dataclass(frozen=True)
class TwoStage:
    j_max: float
    j_break: float
    break_fraction: float = 0.5
    j_min: float = J_MIN
    kind: str = field(default="two_stage", init=False)


@dataclass(frozen=True)
class Additive:
    """``j = critical(i) + offset``; the offset ramps linearly when ``offset_to`` is set."""

    offset: float
    offset_to: Optional[float] = None
    kind: str = field(default="additive", init=False)


SchedulePolicy = Union[OneStage, TwoStage, Additive]

PRESETS = {
    "setting1": OneStage(0.850),
    "setting2": OneStage(0.550),
    "setting3": TwoStage(1.000, 0.850),
    "setting4": TwoStage(1.000, 0.550),
    "setting5": TwoStage(0.850, 0.550),
    "setting6": Additive(0.100),
    "setting7": Additive(0.300),
    "setting8": Additive(0.300, 0.100),
}


def preset(name: str) -> SchedulePolicy:
    key = name.lower().replace(" ", "").replace("_", "")
    try:
        return PRESETS[key]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected setting1..setting8") from None


def policy_from_dict(d: dict) -> SchedulePolicy:
    d = dict(d)
    kind = d.pop("kind")
    cls = {"one_stage": OneStage, "two_stage": TwoStage, "additive": Additive}[kind]
    return cls(**d)


@dataclass(frozen=True)
class TimestepSchedule:
    i: np.ndarray
    i_next: np.ndarray
    j: np.ndarray
    policy: Optional[dict] = None

    @property
    def n_steps(self) -> int:
        return len(self.i)

    def __len__(self):
        return len(self.i)

    def steps(self):
        return list(zip(self.i.tolist(), self.i_next.tolist(), self.j.tolist()))

    def to_csv(self, out=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "i", "i_next", "j"])
        for k, (i, n, j) in enumerate(self.steps()):
            w.writerow([k, "%.17g" % i, "%.17g" % n, "%.17g" % j])
        text = buf.getvalue()
        if out is not None:
            with open(out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "TimestepSchedule":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            np.array([float(r["i"]) for r in rows]),
            np.array([float(r["i_next"]) for r in rows]),
            np.array([float(r["j"]) for r in rows]),
        )


def _bridge_grid(n_steps: int, start: float):
    k = np.arange(n_steps + 1)
    taus = start * (1.0 - k / n_steps)
    taus[-1] = 0.0
    return taus[:-1], taus[1:]


def _critical_or_none(bridge_path: Path, gen_path: Path, tau: float):
    src = bridge_path.coeffs(tau)
    if src.sigma == 0.0 and src.f == 0.0:
        return None  # pinned endpoint, skipped by the engine
    return critical_timestep(src, gen_path).value


def build_schedule(
    policy: SchedulePolicy,
    n_steps: int,
    bridge_path: Optional[Path] = None,
    gen_path: Optional[Path] = None,
    start: float = 1.0,
) -> TimestepSchedule:
    """Bridge times fall linearly from ``start`` to 0; generative times follow ``policy``."""
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    i, i_next = _bridge_grid(n_steps, start)
    if isinstance(policy, OneStage):
        j = np.linspace(policy.j_max, policy.j_min, n_steps)
    elif isinstance(policy, TwoStage):
        kb = int(round(policy.break_fraction * (n_steps - 1)))
        kb = min(max(kb, 1), n_steps - 1)
        head = np.linspace(policy.j_max, policy.j_break, kb + 1)
        tail = np.linspace(policy.j_break, policy.j_min, n_steps - kb)
        j = np.concatenate([head, tail[1:]])
    elif isinstance(policy, Additive):
        if bridge_path is None or gen_path is None:
            raise ValueError("additive schedules need bridge and generative paths")
        to = policy.offset if policy.offset_to is None else policy.offset_to
        offsets = np.linspace(policy.offset, to, n_steps)
        j = np.empty(n_steps)
        for k, tau in enumerate(i):
            try:
                crit = _critical_or_none(bridge_path, gen_path, float(tau))
            except (NoSolution, ZeroF) as exc:
                raise InfeasibleSchedule(f"no critical timestep for bridge time {tau:.6g}: {exc}") from exc
            if crit is None:
                j[k] = 1.0
                continue
            jk = min(max(crit + offsets[k], 0.0), 1.0)
            if jk < crit:
                raise InfeasibleSchedule(
                    f"offset {offsets[k]:.6g} puts step {k} below the critical curve ({jk:.6g} < {crit:.6g})"
                )
            j[k] = jk
    else:
        raise TypeError(f"unsupported policy {policy!r}")
    return TimestepSchedule(i, i_next, j, policy=asdict(policy))


@dataclass(frozen=True)
class StepCheck:
    i: float
    i_next: float
    j: float
    forward_ok: bool
    reverse_ok: bool
    skip: bool
    margin: float


@dataclass
class ScheduleReport:
    steps: list

    @property
    def forward_violations(self) -> int:
        return sum(1 for s in self.steps if not (s.forward_ok or s.skip))

    @property
    def reverse_violations(self) -> int:
        return sum(1 for s in self.steps if not s.reverse_ok)

    @property
    def valid(self) -> bool:
        return self.forward_violations == 0 and self.reverse_violations == 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "i", "i_next", "j", "forward_ok", "reverse_ok", "skip", "margin"])
        for k, s in enumerate(self.steps):
            w.writerow([k, "%.17g" % s.i, "%.17g" % s.i_next, "%.17g" % s.j, int(s.forward_ok), int(s.reverse_ok), int(s.skip), "%.17g" % s.margin])
        return buf.getvalue()


def validate_schedule(schedule: TimestepSchedule, bridge_path: Path, gen_path: Path) -> ScheduleReport:
    """Per-step forward/reverse feasibility and margin to the critical curve.

    A zero-noise source at the first step (a pinned bridge endpoint) is
    reported as ``skip`` rather than as a violation.
    """
    checks = []
    for k, (i, i_next, j) in enumerate(schedule.steps()):
        src = bridge_path.coeffs(i)
        gen = gen_path.coeffs(j)
        nxt = bridge_path.coeffs(i_next)
        skip = src.sigma == 0.0 and k == 0 and src.f < 1.0
        if src.sigma == 0.0:
            fwd = False
            margin = math.nan
        else:
            fwd = forward_feasible(src, gen)
            try:
                margin = j - critical_timestep(src, gen_path).value
            except (NoSolution, ZeroF):
                margin = -math.inf
        rev = (True if skip else reverse_feasible(gen, nxt)) if gen.sigma > 0 else False
        checks.append(StepCheck(i, i_next, j, bool(fwd), bool(rev), bool(skip), float(margin)))
    return ScheduleReport(checks)
