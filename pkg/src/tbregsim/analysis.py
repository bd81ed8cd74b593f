"""Zero-tumor equilibrium and its stability, threshold searches, sensitivity."""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dosing import DoseSchedule
from .model import CELL_NAMES, PARAM_NAMES, DomainError, ModelParameters, ModelState
from .solver import SolverConfig, final_state

EIGENVALUE_LABELS = ("A11", "-theta_B", "-theta_BT", "-theta_H", "-theta_R", "A33", "-Lambda/theta_H")


def _lambda(params: ModelParameters) -> float:
    R = params.sigma_R / params.theta_R
    return (-params.kappa * params.sigma_H + params.theta_H * params.theta_N
            + params.theta_H * params.gamma_N * R ** params.delta_N)


def _a33(params: ModelParameters) -> float:
    H = params.sigma_H / params.theta_H
    R = params.sigma_R / params.theta_R
    return -params.theta_C - params.gamma_C * R + params.eta_1 * H / (params.eta_2 + H)


def zero_tumor_equilibrium(params: ModelParameters) -> ModelState:
    """Closed-form equilibrium with T = B_T = X = 0.

    Raises
    ------
    DomainError
        If the NK or CD8+ denominators are not positive, i.e. immune
        activation outpaces turnover and no admissible equilibrium exists.
    """
    p = params
    if min(p.theta_R, p.theta_B, p.theta_H) <= 0:
        raise DomainError("theta_R, theta_B and theta_H must be positive for a zero-tumor equilibrium")
    R = p.sigma_R / p.theta_R
    B = p.sigma_B / p.theta_B
    H = p.sigma_H / p.theta_H
    lam = _lambda(p)
    if not lam > 0:
        raise DomainError(f"NK denominator Lambda = {lam:.6g} is not positive")
    den_c = -_a33(p)
    if not den_c > 0:
        raise DomainError(f"CD8+ denominator {den_c:.6g} is not positive")
    N = p.sigma_N * p.theta_H / lam
    C = p.sigma_C / den_c
    return ModelState(T=0.0, N=N, C=C, H=H, R=R, B=B, B_T=0.0, X=0.0)


def jacobian_zero_tumor(params: ModelParameters) -> np.ndarray:
    """7x7 Jacobian of the cell equations at the zero-tumor equilibrium.

    Rows and columns follow (T, N, C, H, R, B, B_T); X is left out because
    it decouples when no drug is present.
    """
    p = params
    e = zero_tumor_equilibrium(p)
    N, C, H, R, B = e.N, e.C, e.H, e.R, e.B
    J = np.zeros((7, 7))
    J[0, 0] = p.a - p.c * math.exp(-p.lambda_R * R) - p.d
    J[1, 0] = -p.p * N
    J[1, 1] = -_lambda(p) / p.theta_H
    J[1, 3] = p.kappa * N
    J[1, 4] = -p.gamma_N * p.delta_N * R ** (p.delta_N - 1.0) * N
    J[2, 0] = C * (p.j_C - p.q * p.k_C) / p.k_C + p.r * N
    J[2, 2] = _a33(p)
    J[2, 3] = p.eta_1 * p.eta_2 * C / (p.eta_2 + H) ** 2
    J[2, 4] = -p.gamma_C * C
    J[3, 0] = p.j_H * B * H / p.k_H
    J[3, 3] = -p.theta_H
    J[3, 6] = -p.c_1 * H
    J[4, 4] = -p.theta_R
    J[4, 6] = p.c_1 * H
    J[5, 0] = -p.c_2 * B
    J[5, 5] = -p.theta_B
    J[6, 0] = p.c_2 * B
    J[6, 6] = -p.theta_BT
    return J


def eigenvalues_zero_tumor(params: ModelParameters) -> np.ndarray:
    """Closed-form spectrum at the zero-tumor equilibrium, ordered as ``EIGENVALUE_LABELS``."""
    p = params
    zero_tumor_equilibrium(p)  # raises when no equilibrium exists
    R = p.sigma_R / p.theta_R
    return np.array([
        p.a - p.c * math.exp(-p.lambda_R * R) - p.d,
        -p.theta_B,
        -p.theta_BT,
        -p.theta_H,
        -p.theta_R,
        _a33(p),
        -_lambda(p) / p.theta_H,
    ])


def spectra_agree(closed: np.ndarray, numeric: np.ndarray, rtol: float = 1e-6) -> bool:
    """Multiset comparison of two real spectra after sorting."""
    a = np.sort(np.asarray(closed, dtype=float))
    b = np.sort(np.asarray(numeric, dtype=float))
    scale = np.maximum(np.abs(a), np.abs(b))
    return bool(np.all(np.abs(a - b) <= rtol * np.where(scale > 0, scale, 1.0)))


@dataclass
class StabilityReport:
    equilibrium: ModelState
    eigenvalues: np.ndarray  # closed form, EIGENVALUE_LABELS order
    numeric_eigenvalues: np.ndarray
    stable: bool
    destabilizing: list  # 1-based indices of eigenvalues >= 0
    spectra_match: bool | None  # None when the numeric spectrum is complex

    def summary(self) -> str:
        lines = ["zero-tumor equilibrium:"]
        lines += [f"  {name} = {float(getattr(self.equilibrium, name))!r}" for name in CELL_NAMES]
        lines.append("eigenvalues:")
        lines += [f"  lambda_{i + 1} ({lab}) = {float(v)!r}"
                  for i, (lab, v) in enumerate(zip(EIGENVALUE_LABELS, self.eigenvalues))]
        verdict = "locally asymptotically stable" if self.stable else \
            "unstable (eigenvalue(s) " + ", ".join(f"lambda_{i}" for i in self.destabilizing) + " >= 0)"
        lines.append(f"verdict: {verdict}")
        if self.spectra_match is not None:
            lines.append(f"closed form matches numeric spectrum: {str(self.spectra_match).lower()}")
        return "\n".join(lines) + "\n"


def stability_report(params: ModelParameters) -> StabilityReport:
    eq = zero_tumor_equilibrium(params)
    closed = eigenvalues_zero_tumor(params)
    numeric = np.linalg.eigvals(jacobian_zero_tumor(params))
    if np.any(np.abs(numeric.imag) > 1e-12 * np.maximum(np.abs(numeric.real), 1.0)):
        warnings.warn("Jacobian has complex eigenvalues; skipping the closed-form comparison",
                      RuntimeWarning, stacklevel=2)
        match = None
        real = numeric.real
        stable = bool(np.all(real < 0))
        bad = [i + 1 for i, v in enumerate(real) if v >= 0]
    else:
        numeric = numeric.real
        match = spectra_agree(closed, numeric)
        stable = bool(np.all(closed < 0))
        bad = [i + 1 for i, v in enumerate(closed) if v >= 0]
    return StabilityReport(eq, closed, np.sort(numeric), stable, bad, match)


# -- threshold search ------------------------------------------------------

class BracketError(ValueError):
    """The bracket endpoints do not show a beaten and a surviving tumor."""


@dataclass
class ThresholdResult:
    threshold: float  # largest initial T found to be beaten
    lowest_failure: float  # smallest initial T found not to be beaten
    evaluations: int
    history: list = field(default_factory=list)  # (T0, T(horizon), beaten)

    def summary(self) -> str:
        return (f"bracket: beaten at {float(self.threshold)!r}, not beaten at {float(self.lowest_failure)!r}\n"
                f"threshold: {float(self.threshold)!r}\n"
                f"simulations: {self.evaluations}\n")


EXTINCT = 1.0  # a tumor below one cell at the horizon counts as beaten


def tumor_beaten(T0: float, params: ModelParameters, base_ic: ModelState, schedule=None,
                 horizon: float = 300.0, config: SolverConfig | None = None) -> tuple:
    """(beaten, T(horizon)) for one initial tumor size."""
    y = final_state(base_ic.replace(T=T0), params, schedule, (0.0, horizon), config)
    return bool(y[0] < EXTINCT), float(y[0])


def max_beatable_tumor(params: ModelParameters, base_ic: ModelState, schedule: DoseSchedule | None = None,
                       horizon: float = 300.0, resolution: float = 1e4, bracket=(1e4, 1e11),
                       config: SolverConfig | None = None, jobs: int = 1) -> ThresholdResult:
    """Largest initial tumor that is beaten by ``horizon`` days, to ``resolution`` cells.

    ``base_ic`` supplies every component except T. The search assumes that
    the outcome switches once inside ``bracket``: the lower end must be
    beaten and the upper end must not. Probes are placed geometrically while
    the bracket spans more than a factor of two, then linearly; with
    ``jobs > 1`` several probes run per round.
    """
    lo, hi = (float(v) for v in bracket)
    if not 0 <= lo < hi:
        raise ValueError("bracket must satisfy 0 <= lo < hi")
    history = []

    def probe(points):
        def one(T0):
            return tumor_beaten(T0, params, base_ic, schedule, horizon, config)
        if jobs > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                out = list(pool.map(one, points))
        else:
            out = [one(x) for x in points]
        for x, (b, tf) in zip(points, out):
            history.append((x, tf, b))
        return [b for b, _ in out]

    ends = probe([lo, hi])
    if not ends[0] or ends[1]:
        raise BracketError(f"bracket [{lo:g}, {hi:g}] gives beaten={ends}; expected [True, False]")
    k = max(1, int(jobs))
    while hi - lo > resolution:
        if lo > 0 and hi / lo > 2.0:
            pts = list(np.geomspace(lo, hi, k + 2)[1:-1])
        else:
            pts = list(np.linspace(lo, hi, k + 2)[1:-1])
        outcome = probe(pts)
        # keep the tightest consistent bracket
        for x, beaten in zip(pts, outcome):
            if beaten:
                lo = max(lo, x)
        for x, beaten in zip(pts, outcome):
            if not beaten and x > lo:
                hi = min(hi, x)
        if any(b for x, b in zip(pts, outcome) if x > hi) or any(not b for x, b in zip(pts, outcome) if x < lo):
            raise BracketError("outcome is not monotone in the initial tumor size")
    return ThresholdResult(lo, hi, len(history), history)


# -- sensitivity -------------------------------------------------------------

class SensitivityError(RuntimeError):
    pass


@dataclass
class SensitivityReport:
    baseline: float  # T(horizon) with unperturbed parameters
    horizon: float
    perturbation: float
    rows: list  # (parameter, plus_pct, minus_pct) in parameter order

    def as_dict(self) -> dict:
        return {name: (plus, minus) for name, plus, minus in self.rows}

    def ranked(self) -> list:
        """Rows sorted by |plus_pct|, largest first (ties keep parameter order)."""
        return sorted(self.rows, key=lambda r: -abs(r[1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "plus_pct", "minus_pct"])
        for name, plus, minus in self.ranked():
            w.writerow([name, repr(float(plus)), repr(float(minus))])
        return buf.getvalue()


def sensitivity_scan(params: ModelParameters, ic: ModelState, horizon: float = 50.0,
                     perturbation: float = 0.01, schedule: DoseSchedule | None = None,
                     names=None, config: SolverConfig | None = None, jobs: int = 1) -> SensitivityReport:
    """Percent change of T(horizon) when each parameter moves by +/- ``perturbation``."""
    if not 0 < perturbation < 1:
        raise ValueError("perturbation must lie in (0, 1)")
    names = tuple(PARAM_NAMES if names is None else names)
    unknown = set(names) - set(PARAM_NAMES)
    if unknown:
        raise KeyError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
    base = final_state(ic, params, schedule, (0.0, horizon), config)[0]
    if not base > 0:
        raise SensitivityError("baseline tumor is extinct; percent changes are undefined")

    jobs_list = [(n, s) for n in names for s in (+1, -1)]

    def run(item):
        name, sign = item
        value = getattr(params, name) * (1.0 + sign * perturbation)
        try:
            y = final_state(ic, params.replace(**{name: value}), schedule, (0.0, horizon), config)
        except Exception as exc:
            raise SensitivityError(f"run with {name} {'+' if sign > 0 else '-'}"
                                   f"{100 * perturbation:g}% failed: {exc}") from exc
        return 100.0 * (y[0] - base) / base

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            changes = list(pool.map(run, jobs_list))
    else:
        changes = [run(item) for item in jobs_list]
    rows = [(n, changes[2 * i], changes[2 * i + 1]) for i, n in enumerate(names)]
    return SensitivityReport(float(base), float(horizon), float(perturbation), rows)
