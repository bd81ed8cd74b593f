"""Tumor size conversions and AJCC T-stage classification by cell count."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import DomainError

CELL_DIAMETER_UM = 15.15

# upper diameter (mm) of each fine category; T3 is open-ended
STAGE_DIAMETERS_MM = (("T1mi", 1.0), ("T1a", 5.0), ("T1b", 10.0), ("T1c", 20.0), ("T2", 50.0))
T1_LABELS = ("T1mi", "T1a", "T1b", "T1c")


def sphere_volume(diameter: float) -> float:
    """Volume of a sphere, in the cube of the diameter's unit."""
    if diameter < 0:
        raise DomainError("diameter must be >= 0")
    return math.pi / 6.0 * diameter ** 3


def cell_volume() -> float:
    """Volume of one spherical tumor cell in um^3."""
    return sphere_volume(CELL_DIAMETER_UM)


def cells_to_volume(cells: float) -> float:
    """Tumor volume in mm^3 occupied by ``cells`` cells."""
    if cells < 0:
        raise DomainError("cell count must be >= 0")
    return cells * cell_volume() * 1e-9


def volume_to_cells(volume_mm3: float) -> int:
    """Nearest whole number of cells in ``volume_mm3`` mm^3 of tumor."""
    if volume_mm3 < 0 or not math.isfinite(volume_mm3):
        raise DomainError("volume must be finite and >= 0")
    return int(round(volume_mm3 * 1e9 / cell_volume()))


def diameter_to_cells(diameter_mm: float) -> float:
    """Cells in a spherical tumor of the given diameter (mm)."""
    if diameter_mm < 0 or not math.isfinite(diameter_mm):
        raise DomainError("diameter must be finite and >= 0")
    return sphere_volume(diameter_mm) * 1e9 / cell_volume()


def cells_to_diameter(cells: float) -> float:
    """Diameter (mm) of the sphere holding ``cells`` tumor cells."""
    return (6.0 / math.pi * cells_to_volume(cells)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class StageCategory:
    label: str
    lo: float
    hi: float  # exclusive; inf for the last category

    def __contains__(self, cells) -> bool:
        return self.lo <= cells < self.hi

    @property
    def in_t1(self) -> bool:
        return self.label in T1_LABELS


def stage_table() -> tuple:
    """Fine categories T1mi..T3 as half-open cell-count ranges [lo, hi)."""
    cats = []
    lo = 0.0
    for label, d in STAGE_DIAMETERS_MM:
        hi = diameter_to_cells(d)
        cats.append(StageCategory(label, lo, hi))
        lo = hi
    cats.append(StageCategory("T3", lo, math.inf))
    return tuple(cats)


def classify_stage(cells: float) -> StageCategory:
    """Fine T-stage of a tumor with ``cells`` cells; a boundary value goes up."""
    if cells < 0 or math.isnan(cells):
        raise DomainError("cell count must be >= 0")
    for cat in stage_table():
        if cells in cat:
            return cat
    raise AssertionError("stage table does not cover the input")  # pragma: no cover


def stage_label(cells: float) -> str:
    """Fine label with the T1 group appended where it applies, e.g. ``"T1a (T1)"``."""
    cat = classify_stage(cells)
    return f"{cat.label} (T1)" if cat.in_t1 else cat.label
