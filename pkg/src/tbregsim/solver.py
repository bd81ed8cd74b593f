"""Adaptive Dormand-Prince 5(4) integration of the full model.

The stepping loop lives in :mod:`tbregsim._kernels` (compiled with numba).
This module splits the time span at every infusion-window boundary so that
each segment has a constant input rate, then stitches the dense-output
samples into a :class:`Trajectory`. Segments where the explicit steps stall
on stiffness (the drug-driven B-cell depletion) are finished by a compiled
linearly implicit extrapolation method.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .dosing import DoseSchedule, v_of_t
from .model import STATE_NAMES, DomainError, ModelParameters, ModelState


class IntegrationError(RuntimeError):
    """The integrator could not complete the requested span."""


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and output sampling.

    ``atol`` applies to the seven cell populations and ``atol_X`` to the
    rituximab concentration.
    """

    rtol: float = 1e-8
    atol: float = 1e-6
    atol_X: float = 1e-10
    max_step: float = math.inf
    sample_interval: float = 0.1
    max_steps: int = 2_000_000
    # hand a segment to the implicit solver once it is stiff and would need this many more steps
    stiff_fallback_steps: int = 2_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.atol_X > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")

    def atol_vector(self) -> np.ndarray:
        out = np.full(8, self.atol)
        out[7] = self.atol_X
        return out

    def halved(self) -> "SolverConfig":
        return replace(self, rtol=self.rtol / 2, atol=self.atol / 2, atol_X=self.atol_X / 2)


@dataclass
class SolverStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0
    segments: int = 0
    stiff_segments: int = 0  # segments finished by the implicit fallback
    rtol: float = 0.0
    atol: float = 0.0
    atol_X: float = 0.0
    worst_undershoot: float = 0.0  # most negative y/scale seen before clamping


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (n_times, 8), columns in STATE_NAMES order
    stats: SolverStats = field(default_factory=SolverStats)

    def __len__(self):
        return self.times.size

    @property
    def final(self) -> ModelState:
        return ModelState.from_array(self.states[-1])

    def state_at_index(self, i: int) -> ModelState:
        return ModelState.from_array(self.states[i])

    def component(self, name: str) -> np.ndarray:
        return self.states[:, STATE_NAMES.index(name)]

    def value_at(self, name: str, t: float) -> float:
        """Component value at sample time ``t`` (must be on the output grid)."""
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise KeyError(f"t={t} is not a sample time")
        return float(self.states[idx[0], STATE_NAMES.index(name)])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("t",) + STATE_NAMES)
        for t, row in zip(self.times, self.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _sample_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    n = int(math.floor((t1 - t0) / dt + 1e-9))
    grid = t0 + dt * np.arange(n + 1)
    return grid[grid < t1]


def integrate(ic: ModelState, params: ModelParameters, schedule: DoseSchedule | None = None,
              t_span=(0.0, 300.0), config: SolverConfig | None = None) -> Trajectory:
    """Integrate the model from ``ic`` over ``t_span``.

    Output rows are the regular grid ``t0 + k * sample_interval``, every
    infusion boundary inside the span and ``t_end``. The integrator restarts
    at each boundary so no step crosses a jump of v(t).

    Raises
    ------
    IntegrationError
        On step-size underflow or when the step budget runs out.
    DomainError
        When a component undershoots zero by more than the clamp tolerance.
    """
    config = config or SolverConfig()
    schedule = schedule or DoseSchedule()
    t0, t1 = (float(x) for x in t_span)
    if not (math.isfinite(t0) and math.isfinite(t1)) or t1 < t0:
        raise ValueError(f"invalid time span {t_span!r}")
    if not isinstance(ic, ModelState):
        ic = ModelState.from_array(ic)
    y = ic.as_array()
    stats = SolverStats(rtol=config.rtol, atol=config.atol, atol_X=config.atol_X)
    if t1 == t0:
        return Trajectory(np.array([t0]), y[None, :].copy(), stats)

    breaks = schedule.breakpoints(t0, t1)
    edges = [t0] + breaks + [t1]
    grid = np.union1d(_sample_grid(t0, t1, config.sample_interval), np.array(edges))

    p = params.as_array()
    atol = config.atol_vector()
    scale = np.maximum(np.abs(y), 1.0)
    times = [np.array([t0])]
    rows = [y[None, :].copy()]
    h = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        rate = v_of_t(schedule, a)
        seg_times = grid[(grid > a) & (grid <= b)]
        t_reached, y, samples, h_next, n_acc, n_rej, n_eval, status, worst = _kernels.integrate_segment(
            _kernels.SYSTEM_MODEL, a, b, y, p, rate, config.rtol, atol,
            config.max_step, h, seg_times, scale, config.max_steps, config.stiff_fallback_steps)
        stats.accepted += n_acc
        stats.rejected += n_rej
        stats.evaluations += n_eval
        stats.segments += 1
        stats.worst_undershoot = min(stats.worst_undershoot, worst)
        if status == _kernels.STATUS_STIFF:
            rest = seg_times[samples.shape[0]:]
            y, tail, n_acc, n_rej, n_eval, status, worst = _stiff_segment(
                t_reached, b, y, p, rate, config, atol, h_next, rest, scale)
            samples = np.vstack([samples, tail])
            stats.accepted += n_acc
            stats.rejected += n_rej
            stats.evaluations += n_eval
            stats.stiff_segments += 1
            stats.worst_undershoot = min(stats.worst_undershoot, worst)
            h_next = 0.0
        if status == _kernels.STATUS_DOMAIN:
            raise DomainError(f"state left the admissible domain near t={a}..{b} "
                              f"(undershoot {worst:.3g} of component scale)")
        if status == _kernels.STATUS_UNDERFLOW:
            raise IntegrationError(f"step size underflow in segment [{a}, {b}]")
        if status == _kernels.STATUS_MAXSTEPS:
            raise IntegrationError(f"step budget of {config.max_steps} exhausted in [{a}, {b}]")
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state in segment [{a}, {b}]")
        # restart with a fresh step estimate after an input jump
        h = h_next if rate == v_of_t(schedule, b) else 0.0
        times.append(seg_times)
        rows.append(samples)
    return Trajectory(np.concatenate(times), np.vstack(rows), stats)


def _stiff_segment(t0, t1, y0, p, rate, config, atol, h, sample_times, scale):
    """Finish a constant-rate segment implicitly once the explicit steps stall."""
    y, samples, n_acc, n_rej, n_eval, status, worst = _kernels.integrate_stiff(
        t0, t1, y0, p, rate, config.rtol, atol, config.max_step, h, sample_times, scale, config.max_steps)
    if status == _kernels.STATUS_MAXSTEPS:
        raise IntegrationError(f"step budget of {config.max_steps} exhausted in stiff segment [{t0}, {t1}]")
    if status == _kernels.STATUS_UNDERFLOW:
        raise IntegrationError(f"step size underflow in stiff segment [{t0}, {t1}]")
    return y, samples, n_acc, n_rej, n_eval, status, worst


def final_state(ic, params, schedule=None, t_span=(0.0, 300.0), config=None) -> np.ndarray:
    """Final state only; the output grid is reduced to the segment ends."""
    config = config or SolverConfig()
    span = float(t_span[1]) - float(t_span[0])
    cfg = replace(config, sample_interval=span if span > 0 else 1.0)
    return integrate(ic, params, schedule, t_span, cfg).states[-1]


def logistic_closed_form(p0, r, K, t):
    """Logistic solution ``K p0 e^{rt} / (K + p0 (e^{rt} - 1))``."""
    if np.any(np.asarray(p0) < 0) or np.any(np.asarray(K) <= 0):
        raise DomainError("logistic requires p0 >= 0 and K > 0")
    t = np.asarray(t, dtype=float)
    # written with e^{-rt} to stay finite for large r t
    em = np.exp(-r * t)
    out = K * p0 / (K * em + p0 * (1.0 - em))
    return float(out) if out.ndim == 0 else out


def gompertz_closed_form(p0, r, K, t):
    """Gompertz solution ``K (p0/K)^{exp(-rt)}``."""
    if np.any(np.asarray(p0) <= 0) or np.any(np.asarray(K) <= 0):
        raise DomainError("gompertz requires p0 > 0 and K > 0")
    t = np.asarray(t, dtype=float)
    out = K * np.exp(np.log(p0 / K) * np.exp(-r * t))
    return float(out) if out.ndim == 0 else out
