"""Scenario presets: parameter set, initial condition, schedule and horizon.

Presets are JSON files under ``tbregsim/data/presets``; any other JSON file
with the same layout can be passed by path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .dosing import DoseSchedule, PRESET_CASES, load_schedule, preset_schedule
from .homeostasis import bundled_parameters, high_tumor_state, zero_tumor_state
from .model import PARAM_NAMES, STATE_NAMES, ModelParameters, ModelState, load_parameters
from .solver import SolverConfig, Trajectory, integrate
from .staging import stage_label

BASE_STATES = {"E0": zero_tumor_state, "E1": high_tumor_state}
_SOLVER_KEYS = ("rtol", "atol", "atol_X", "max_step", "sample_interval", "max_steps")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    base: str = "E1"
    ic_overrides: dict = field(default_factory=dict)
    param_overrides: dict = field(default_factory=dict)
    params_path: str | None = None  # None: bundled parameter file
    schedule: str | None = None  # None, "case<k>" or a schedule file path
    t_span: tuple = (0.0, 300.0)
    solver: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        if self.base not in BASE_STATES:
            raise ScenarioError(f"{self.name}: initial base must be one of {sorted(BASE_STATES)}")
        bad = set(self.ic_overrides) - set(STATE_NAMES)
        if bad:
            raise ScenarioError(f"{self.name}: unknown state component(s) {sorted(bad)}")
        bad = set(self.param_overrides) - set(PARAM_NAMES)
        if bad:
            raise ScenarioError(f"{self.name}: unknown parameter(s) {sorted(bad)}")
        bad = set(self.solver) - set(_SOLVER_KEYS)
        if bad:
            raise ScenarioError(f"{self.name}: unknown solver setting(s) {sorted(bad)}")
        if len(self.t_span) != 2 or not all(math.isfinite(float(t)) for t in self.t_span) \
                or float(self.t_span[1]) < float(self.t_span[0]):
            raise ScenarioError(f"{self.name}: t_span must be [t_start, t_end] with t_end >= t_start")
        if self.params_path is not None and not Path(self.params_path).is_file():
            raise ScenarioError(f"{self.name}: parameter file {self.params_path} not found")
        if self.schedule is not None and not _is_case(self.schedule) and not Path(self.schedule).is_file():
            raise ScenarioError(f"{self.name}: schedule {self.schedule!r} is neither case1..case5 nor a file")

    def with_overrides(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    def initial_state(self) -> ModelState:
        base = BASE_STATES[self.base]().to_model_state()
        return base.replace(**{k: float(v) for k, v in self.ic_overrides.items()})

    def parameters(self) -> ModelParameters:
        params = bundled_parameters() if self.params_path is None else load_parameters(self.params_path)
        if self.param_overrides:
            params = params.replace(**{k: float(v) for k, v in self.param_overrides.items()})
        return params

    def dose_schedule(self) -> DoseSchedule:
        if self.schedule is None:
            return DoseSchedule()
        if _is_case(self.schedule):
            return preset_schedule(int(self.schedule[4:]), float(self.t_span[0]))
        return load_schedule(self.schedule)

    def solver_config(self, **extra) -> SolverConfig:
        return SolverConfig(**{**self.solver, **extra})

    def run(self, **solver_extra) -> Trajectory:
        return integrate(self.initial_state(), self.parameters(), self.dose_schedule(),
                         tuple(float(t) for t in self.t_span), self.solver_config(**solver_extra))


def _is_case(text) -> bool:
    return isinstance(text, str) and text.startswith("case") and text[4:].isdigit() \
        and int(text[4:]) in PRESET_CASES


def spec_from_dict(data: dict, name: str | None = None) -> ScenarioSpec:
    known = {"name", "description", "initial", "parameters", "params_file", "schedule", "t_span", "solver"}
    extra = set(data) - known
    if extra:
        raise ScenarioError(f"unknown scenario field(s) {sorted(extra)}")
    initial = data.get("initial", {}) or {}
    return ScenarioSpec(
        name=name or data.get("name", "scenario"),
        base=initial.get("base", "E1"),
        ic_overrides=dict(initial.get("overrides", {}) or {}),
        param_overrides=dict(data.get("parameters", {}) or {}),
        params_path=data.get("params_file"),
        schedule=data.get("schedule"),
        t_span=tuple(float(t) for t in data.get("t_span", (0.0, 300.0))),
        solver=dict(data.get("solver", {}) or {}),
        description=data.get("description", ""),
    )


def _preset_dir():
    return resources.files("tbregsim").joinpath("data/presets")


def list_presets() -> list:
    """(name, description) of every bundled preset, sorted by name."""
    out = []
    for entry in _preset_dir().iterdir():
        if entry.name.endswith(".json"):
            data = json.loads(entry.read_text())
            out.append((entry.name[:-5], data.get("description", "")))
    return sorted(out)


def load_scenario(ref: str) -> ScenarioSpec:
    """A bundled preset by name, or a scenario JSON file by path."""
    path = Path(ref)
    if path.suffix == ".json" and path.is_file():
        return spec_from_dict(json.loads(path.read_text()), name=path.stem)
    entry = _preset_dir().joinpath(f"{ref}.json")
    if not entry.is_file():
        raise ScenarioError(f"no preset or scenario file named {ref!r} (see --list-presets)")
    return spec_from_dict(json.loads(entry.read_text()), name=ref)


def summary_text(spec: ScenarioSpec, traj: Trajectory) -> str:
    final = traj.final
    lines = [f"scenario = {spec.name}"]
    if spec.description:
        lines.append(f"description = {spec.description}")
    lines += [f"t_start = {float(traj.times[0])!r}",
              f"t_end = {float(traj.times[-1])!r}",
              f"schedule = {spec.schedule or 'none'}",
              f"samples = {len(traj)}",
              ""]
    lines += [f"final_{n} = {float(getattr(final, n))!r}" for n in STATE_NAMES]
    lines.append(f"final_stage = {stage_label(max(final.T, 0.0))}")
    lines.append(f"tumor_beaten = {str(bool(final.T < 1.0)).lower()}")
    lines.append("")
    for i, n in enumerate(STATE_NAMES):
        col = traj.states[:, i]
        k_min, k_max = int(np.argmin(col)), int(np.argmax(col))
        lines.append(f"min_{n} = {float(col[k_min])!r} at t = {float(traj.times[k_min])!r}")
        lines.append(f"max_{n} = {float(col[k_max])!r} at t = {float(traj.times[k_max])!r}")
    s = traj.stats
    lines += ["",
              f"solver_rtol = {s.rtol!r}",
              f"solver_accepted_steps = {s.accepted}",
              f"solver_rejected_steps = {s.rejected}",
              f"solver_stiff_segments = {s.stiff_segments}"]
    return "\n".join(lines) + "\n"
