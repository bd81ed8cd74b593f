"""Rituximab infusion input v(t): unit conversions, schedules and presets."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .model import DomainError

BSA_M2 = 1.7
BLOOD_VOLUME_L = 5.0
INFUSION_HOURS = 4.0


def dose_to_concentration(dose: float, bsa: float = BSA_M2, blood_volume: float = BLOOD_VOLUME_L) -> float:
    """Blood concentration (ug/mL) reached by a dose given in mg/m^2.

    mg/L and ug/mL are the same unit, so this is ``dose * bsa / blood_volume``.
    """
    if not (dose > 0 and bsa > 0 and blood_volume > 0):
        raise DomainError("dose, body surface area and blood volume must be positive")
    return dose * bsa / blood_volume


def infusion_rate(concentration: float, duration: float) -> float:
    """Constant rate (ug/mL/day) that delivers ``concentration`` over ``duration`` days."""
    if not duration > 0:
        raise DomainError("infusion duration must be positive")
    return concentration / duration


@dataclass(frozen=True)
class DoseWindow:
    start: float
    duration: float
    rate: float

    def __post_init__(self):
        if not (self.start >= 0 and self.duration > 0 and self.rate >= 0):
            raise DomainError(f"invalid dose window {self}")
        if not all(math.isfinite(v) for v in (self.start, self.duration, self.rate)):
            raise DomainError("dose window values must be finite")

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def amount(self) -> float:
        """Concentration delivered by the window (ug/mL)."""
        return self.rate * self.duration


@dataclass(frozen=True)
class DoseSchedule:
    """Sorted, non-overlapping infusion windows; each is half-open [start, end)."""

    windows: tuple = ()

    def __post_init__(self):
        windows = tuple(sorted(self.windows, key=lambda w: w.start))
        for prev, nxt in zip(windows, windows[1:]):
            if prev.end > nxt.start:
                raise DomainError(f"overlapping dose windows starting at {prev.start} and {nxt.start}")
        object.__setattr__(self, "windows", windows)

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def rate_at(self, t: float) -> float:
        return v_of_t(self, t)

    def breakpoints(self, t_start: float = 0.0, t_end: float = math.inf) -> list:
        """Window starts and ends strictly inside (t_start, t_end)."""
        pts = set()
        for w in self.windows:
            for x in (w.start, w.end):
                if t_start < x < t_end:
                    pts.add(x)
        return sorted(pts)

    def total_amount(self) -> float:
        return math.fsum(w.amount for w in self.windows)

    @classmethod
    def from_doses(cls, starts: Sequence[float], doses_mg_m2: Sequence[float],
                   bsa: float = BSA_M2, blood_volume: float = BLOOD_VOLUME_L,
                   infusion_hours: float = INFUSION_HOURS) -> "DoseSchedule":
        if len(starts) != len(doses_mg_m2):
            raise ValueError("starts and doses must have the same length")
        duration = infusion_hours / 24.0
        windows = [DoseWindow(float(s), duration,
                              infusion_rate(dose_to_concentration(d, bsa, blood_volume), duration))
                   for s, d in zip(starts, doses_mg_m2)]
        return cls(tuple(windows))


def v_of_t(schedule: DoseSchedule, t: float) -> float:
    """Infusion rate at time ``t`` (start-inclusive, end-exclusive windows)."""
    for w in schedule.windows:
        if w.start <= t < w.end:
            return w.rate
    return 0.0


PRESET_CASES = {
    # case id: (number of doses, interval in days, dose in mg/m^2)
    1: (4, 7.0, 375.0),
    2: (2, 7.0, 1000.0),
    3: (8, 7.0, 375.0),
    4: (4, 5.0, 122.549),
    5: (8, 7.0, 1000.0),
}

PRESET_DESCRIPTIONS = {
    1: "four weekly doses of 375 mg/m^2 (standard)",
    2: "two weekly doses of 1 g/m^2",
    3: "eight weekly doses of 375 mg/m^2",
    4: "four doses of 122.549 mg/m^2 every five days",
    5: "eight weekly doses of 1 g/m^2",
}


def preset_schedule(case_id: int, start: float = 0.0) -> DoseSchedule:
    """One of the five rituximab regimens, first infusion at ``start``."""
    if case_id not in PRESET_CASES:
        raise ValueError(f"unknown dosing case {case_id!r}; expected 1..5")
    n, interval, dose = PRESET_CASES[case_id]
    return DoseSchedule.from_doses([start + k * interval for k in range(n)], [dose] * n)


def standard_schedule(start: float = 0.0) -> DoseSchedule:
    return preset_schedule(1, start)


def parse_schedule(text: str) -> DoseSchedule:
    """Read a schedule file.

    Leading ``# key = value`` lines may set ``bsa``, ``blood_volume_L`` and
    ``infusion_hours``; the body is CSV with header ``start_days,dose_mg_per_m2``.
    """
    meta = {"bsa": BSA_M2, "blood_volume_L": BLOOD_VOLUME_L, "infusion_hours": INFUSION_HOURS}
    body = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            content = stripped[1:].strip()
            if "=" in content:
                key, _, val = (s.strip() for s in content.partition("="))
                if key not in meta:
                    raise KeyError(f"line {lineno}: unknown schedule field {key!r}")
                meta[key] = float(val)
            continue
        if stripped:
            body.append((lineno, stripped))
    if not body or [c.strip() for c in body[0][1].split(",")] != ["start_days", "dose_mg_per_m2"]:
        raise ValueError("schedule file needs a 'start_days,dose_mg_per_m2' header")
    starts, doses = [], []
    for lineno, row in body[1:]:
        parts = row.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 fields")
        try:
            starts.append(float(parts[0]))
            doses.append(float(parts[1]))
        except ValueError:
            raise ValueError(f"line {lineno}: bad number in {row!r}") from None
    return DoseSchedule.from_doses(starts, doses, meta["bsa"], meta["blood_volume_L"], meta["infusion_hours"])


def load_schedule(path) -> DoseSchedule:
    return parse_schedule(Path(path).read_text())


def format_schedule(starts, doses_mg_m2, bsa=BSA_M2, blood_volume=BLOOD_VOLUME_L,
                    infusion_hours=INFUSION_HOURS) -> str:
    buf = io.StringIO()
    buf.write(f"# bsa = {bsa!r}\n# blood_volume_L = {blood_volume!r}\n# infusion_hours = {infusion_hours!r}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["start_days", "dose_mg_per_m2"])
    for s, d in zip(starts, doses_mg_m2):
        writer.writerow([repr(float(s)), repr(float(d))])
    return buf.getvalue()
