"""Least-squares fits for tumor growth curves and the two co-culture assays.

The assays are two-species systems in which a predator population decays
exponentially while killing prey through a trophic function ``f``::

    tumor assay:  T' = -f(T, N) T,            N' = -theta_NE N
    NK assay:     N' = -theta_NE N - f(N, R) N, R' = -theta_RE R

with the predator starting at ``ratio * prey_initial``. Coefficients are fit
on a log scale with Levenberg-Marquardt from 16 Sobol starting points.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import qmc

from . import _kernels
from .homeostasis import in_vitro_death_rate
from .model import DomainError, TrophicForm
from .solver import IntegrationError, gompertz_closed_form, logistic_closed_form
from .staging import volume_to_cells

TUMOR_ASSAY = "nk-lyses-tumor"
NK_ASSAY = "treg-kills-nk"
FORMS = ("power", "rational-hill", "michaelis-menten")

# target cells seeded per well
CELL_LINES = {"MDA-MB-231": 2e5, "MDA-MB-453": 4e5}

THETA_NE = in_vitro_death_rate(16.0 / 24.0, 0.39)
THETA_RE = in_vitro_death_rate(1.0, 0.18)
NK_INITIAL = 5e9

# reference fits, used as generators for synthetic data and as defaults
LYSIS_FITS = {
    "MDA-MB-231": {"power": (1.462e-7, 1.2089),
                   "rational-hill": (11.2263, 1.33332, 39.222),
                   "michaelis-menten": (55.0679, 1.8547e7)},
    "MDA-MB-453": {"power": (2.07e-5, 0.7883),
                   "rational-hill": (19.6448, 0.8249, 3.85119),
                   "michaelis-menten": (22.858, 1.23545e6)},
}
APOPTOSIS_FITS = {"power": (2.92131e-6, 0.499502),
                  "rational-hill": (5.15405e10, 0.478213, 2.93734e11),
                  "michaelis-menten": (0.604742, 1.02378e10)}
GROWTH_FITS = {
    "CN34BrM": {"logistic": (0.16511, 7.58e8), "gompertz": (0.0513, 1.05e9)},
    "MDA-231": {"logistic": (0.16835, 1.03e9), "gompertz": (0.0328, 3.6e9)},
    "SUM1315": {"logistic": (0.06554, 3.39e9), "gompertz": (0.007, 4.92e11)},
}

# log10 ranges for the multistart grid, per assay and form
_START_RANGES = {
    TUMOR_ASSAY: {"power": ((-10.0, -2.0), (-0.5, 0.4)),
                  "rational-hill": ((-0.5, 2.5), (-0.5, 0.4), (-1.0, 2.5)),
                  "michaelis-menten": ((-0.5, 3.0), (3.0, 9.0))},
    NK_ASSAY: {"power": ((-9.0, -3.0), (-0.8, 0.2)),
               "rational-hill": ((6.0, 13.0), (-0.8, 0.2), (7.0, 14.0)),
               "michaelis-menten": ((-2.0, 1.5), (7.0, 12.0))},
}
_GROWTH_RANGES = {"logistic": (-2.5, 0.0), "gompertz": (-3.0, -0.5)}

N_STARTS = 16


class FitError(RuntimeError):
    """No multistart produced a converged fit."""


@dataclass(frozen=True)
class AssayConfig:
    """A co-culture experiment.

    ``normalization`` matters only when the prey also decays on its own:
    ``"attributable"`` reports the kill beyond natural decay,
    ``1 - prey(t_final) / (prey_initial * exp(-prey_decay * t_final))``,
    while ``"total"`` reports ``1 - prey(t_final) / prey_initial``.
    """

    target_kind: str
    prey_initial: float
    predator_decay: float
    prey_decay: float
    duration: float
    form: TrophicForm | None = None
    normalization: str = "attributable"
    rtol: float = 1e-10
    max_steps: int = 100_000

    def __post_init__(self):
        if self.target_kind not in (TUMOR_ASSAY, NK_ASSAY):
            raise ValueError(f"unknown assay kind {self.target_kind!r}")
        if not (self.duration > 0 and self.prey_initial > 0):
            raise DomainError("assay duration and prey_initial must be positive")
        if self.predator_decay < 0 or self.prey_decay < 0:
            raise DomainError("decay rates must be >= 0")
        if self.normalization not in ("attributable", "total"):
            raise ValueError("normalization must be 'attributable' or 'total'")

    @classmethod
    def tumor_assay(cls, cell_line: str = "MDA-MB-231", form: TrophicForm | None = None) -> "AssayConfig":
        """NK cells lysing tumor cells over 5 hours."""
        if cell_line not in CELL_LINES:
            raise ValueError(f"unknown cell line {cell_line!r}; choose from {sorted(CELL_LINES)}")
        return cls(TUMOR_ASSAY, CELL_LINES[cell_line], THETA_NE, 0.0, 5.0 / 24.0, form)

    @classmethod
    def nk_assay(cls, form: TrophicForm | None = None, normalization: str = "attributable") -> "AssayConfig":
        """Tregs inducing NK apoptosis over 16 hours."""
        return cls(NK_ASSAY, NK_INITIAL, THETA_RE, THETA_NE, 16.0 / 24.0, form, normalization)

    def with_form(self, kind: str, coefficients) -> "AssayConfig":
        return replace(self, form=TrophicForm(kind, tuple(coefficients)))

    def kernel_parameters(self) -> np.ndarray:
        if self.form is None:
            raise ValueError("assay has no trophic form")
        m, e, s = self.form.kernel_coefficients()
        return np.array([self.form.code, m, e, s, self.prey_decay, self.predator_decay], dtype=float)


def lysis_curve(config: AssayConfig, ratios) -> np.ndarray:
    """Lysis fraction at each ratio (vectorized :func:`percent_specific_lysis`)."""
    ratios = np.ascontiguousarray(ratios, dtype=float)
    if np.any(ratios < 0) or not np.all(np.isfinite(ratios)):
        raise DomainError("ratios must be finite and >= 0")
    final, status = _kernels.assay_batch(config.kernel_parameters(), config.prey_initial, ratios,
                                         config.duration, config.rtol, 1e-13, config.max_steps)
    if status != _kernels.STATUS_OK:
        raise IntegrationError(f"assay integration failed (status {status})")
    reference = config.prey_initial
    if config.normalization == "attributable":
        reference *= math.exp(-config.prey_decay * config.duration)
    out = 1.0 - final / reference
    # no predators: only background decay, known exactly
    background = 0.0 if config.normalization == "attributable" else -math.expm1(-config.prey_decay * config.duration)
    out[ratios == 0] = background
    return out


def percent_specific_lysis(config: AssayConfig, ratio: float) -> float:
    """Fraction of prey killed by predators at the end of the assay."""
    return float(lysis_curve(config, [ratio])[0])


@dataclass
class FitResult:
    kind: str  # "growth:<model>" or "<assay>:<form>"
    names: tuple
    parameters: np.ndarray
    rss: float
    residuals: np.ndarray
    x: np.ndarray
    observed: np.ndarray
    predicted: np.ndarray
    converged: bool
    degenerate: bool = False
    n_starts: int = 0
    n_converged: int = 0
    best_start: int = -1
    message: str = ""
    start_costs: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dict(zip(self.names, (float(v) for v in self.parameters)))

    def report(self) -> str:
        lines = [f"kind = {self.kind}"]
        lines += [f"{n} = {float(v)!r}" for n, v in zip(self.names, self.parameters)]
        lines += [f"rss = {self.rss!r}",
                  f"converged = {str(self.converged).lower()}",
                  f"degenerate = {str(self.degenerate).lower()}",
                  f"starts = {self.n_starts}",
                  f"converged_starts = {self.n_converged}",
                  f"best_start = {self.best_start}"]
        if self.message:
            lines.append(f"message = {self.message}")
        return "\n".join(lines) + "\n"

    def residual_csv(self, x_name: str = "x") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([x_name, "observed", "predicted", "residual"])
        for row in zip(self.x, self.observed, self.predicted, self.residuals):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write(self, directory, stem: str = "fit", x_name: str = "x") -> tuple:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        report = directory / f"{stem}_report.txt"
        resid = directory / f"{stem}_residuals.csv"
        report.write_text(self.report())
        resid.write_text(self.residual_csv(x_name))
        return report, resid


def _sobol_starts(lo, hi, n, seed):
    sampler = qmc.Sobol(d=len(lo), scramble=True, seed=seed)
    return qmc.scale(sampler.random(n), lo, hi)


def _identifiability(jac: np.ndarray) -> bool:
    """True when the Jacobian is numerically rank deficient."""
    if jac is None or not np.all(np.isfinite(jac)):
        return True
    sv = np.linalg.svd(jac, compute_uv=False)
    return bool(sv[0] == 0.0 or sv[-1] <= 1e-7 * sv[0])


def _multistart(fun, starts, jobs=1):
    """Coarse LM from every start, then a tight polish of the best one.

    Returns (best_index, polished_result, n_converged, coarse_costs).
    """

    def run(x0, tol, budget):
        try:
            res = least_squares(fun, x0, method="lm", xtol=tol, ftol=tol, gtol=tol,
                                max_nfev=budget * (len(x0) + 1))
        except (FloatingPointError, ValueError, IntegrationError):
            return None
        return res if np.isfinite(res.cost) else None

    def coarse(x0):
        return run(x0, 1e-10, 60)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(coarse, starts))
    else:
        results = [coarse(x0) for x0 in starts]
    costs = [r.cost if r is not None else math.inf for r in results]
    finite = [i for i, c in enumerate(costs) if math.isfinite(c)]
    if not finite:
        raise FitError("no start produced a finite residual")
    n_converged = sum(1 for r in results if r is not None and r.status > 0)
    best = min(finite, key=lambda i: (costs[i], i))
    polished = run(results[best].x, 1e-15, 400)
    if polished is None or polished.cost > results[best].cost:
        polished = results[best]
    if polished.status <= 0 and n_converged == 0:
        raise FitError("no start converged within the evaluation budget")
    return best, polished, n_converged, costs


_LOG_CLIP = 120.0
NO_PREDATION = 1e-6  # lysis fraction treated as zero


# Hill exponents are searched inside [1e-2, 10]; beyond that the response is a
# step function that only stalls the integrator.
_EXPONENT_LOG_BOUNDS = (math.log(1e-2), math.log(10.0))


def _assay_residual_fn(config: AssayConfig, kind: str, ratios, observed):
    lo = np.full(len(TrophicForm.COEFFICIENT_NAMES[kind]), -_LOG_CLIP)
    hi = -lo
    if kind != "michaelis-menten":
        lo[1], hi[1] = _EXPONENT_LOG_BOUNDS

    def to_coefficients(logp):
        return np.exp(np.clip(logp, lo, hi))

    def fun(logp):
        coeffs = to_coefficients(logp)
        try:
            pred = lysis_curve(config.with_form(kind, coeffs), ratios)
        except (IntegrationError, DomainError, OverflowError):
            return np.full(len(observed), 1e3)
        r = pred - observed
        return np.where(np.isfinite(r), r, 1e3)
    return fun, to_coefficients


def _fit_assay(ratios, fractions, config: AssayConfig, form: str, seed: int, jobs: int,
               starts=None) -> FitResult:
    if form not in FORMS:
        raise ValueError(f"unknown trophic form {form!r}")
    ratios = np.asarray(ratios, dtype=float)
    observed = np.asarray(fractions, dtype=float)
    n_coef = len(TrophicForm.COEFFICIENT_NAMES[form])
    if ratios.shape != observed.shape or ratios.ndim != 1:
        raise ValueError("ratios and lysis values must be 1-d and the same length")
    if ratios.size < n_coef:
        raise ValueError(f"{form} form needs at least {n_coef} data points")
    if np.any(ratios < 0) or np.any(observed < 0) or np.any(observed > 1):
        raise DomainError("ratios must be >= 0 and lysis fractions in [0, 1]")

    fun, to_coefficients = _assay_residual_fn(config, form, ratios, observed)
    if starts is None:
        rng = np.array(_START_RANGES[config.target_kind][form]) * math.log(10.0)
        starts = _sobol_starts(rng[:, 0], rng[:, 1], N_STARTS, seed)
    best, res, n_ok, costs = _multistart(fun, starts, jobs)
    coeffs = to_coefficients(res.x)
    fitted = config.with_form(form, coeffs)
    pred = lysis_curve(fitted, ratios)
    # the log parametrization can only creep toward a zero magnitude; below
    # any measurable lysis, pin it to the bound
    silent = float(np.max(np.abs(pred))) < NO_PREDATION
    degenerate = _identifiability(res.jac) or silent
    message = ""
    if silent:
        coeffs[0] = 0.0
        pred = lysis_curve(config.with_form(form, coeffs), ratios)
        message = "no measurable predation; magnitude pinned to 0"
    elif degenerate:
        message = "coefficients are not jointly identifiable from these data"
    resid = pred - observed
    return FitResult(f"{config.target_kind}:{form}", TrophicForm.COEFFICIENT_NAMES[form], coeffs,
                     float(resid @ resid), resid, ratios, observed, pred, True, degenerate,
                     len(starts), n_ok, best, message, costs)


def fit_lysis_curve(ratios: Sequence[float], fractions: Sequence[float], config: AssayConfig | None = None,
                    form: str = "rational-hill", seed: int = 0, jobs: int = 1) -> FitResult:
    """Fit a trophic form to tumor lysis fractions (values in [0, 1]).

    ``config`` defaults to the MDA-MB-231 tumor assay; its ``form`` field is
    ignored.
    """
    config = config or AssayConfig.tumor_assay()
    return _fit_assay(ratios, fractions, config, form, seed, jobs)


def fit_nk_apoptosis_curve(ratios: Sequence[float], fractions: Sequence[float],
                           config: AssayConfig | None = None, form: str = "power",
                           seed: int = 0, jobs: int = 1) -> FitResult:
    """Fit a trophic form to Treg-induced NK apoptosis fractions."""
    config = config or AssayConfig.nk_assay()
    if config.target_kind != NK_ASSAY:
        raise ValueError("fit_nk_apoptosis_curve needs an NK assay configuration")
    return _fit_assay(ratios, fractions, config, form, seed, jobs)


def growth_curve(kind: str, p0, r, K, t):
    if kind == "logistic":
        return logistic_closed_form(p0, r, K, t)
    if kind == "gompertz":
        return gompertz_closed_form(p0, r, K, t)
    raise ValueError(f"unknown growth model {kind!r}")


def fit_growth_model(t: Sequence[float], cells: Sequence[float], kind: str = "logistic",
                     fit_p0: bool = True, seed: int = 0, jobs: int = 1) -> FitResult:
    """Least-squares growth rate and carrying capacity of a tumor growth curve.

    With ``fit_p0=False`` the initial size is fixed to the first datum.
    Residuals are in cells; the objective is scaled by the largest datum,
    which does not move the minimizer.
    """
    if kind not in ("logistic", "gompertz"):
        raise ValueError(f"unknown growth model {kind!r}")
    t = np.asarray(t, dtype=float)
    y = np.asarray(cells, dtype=float)
    if t.shape != y.shape or t.ndim != 1 or t.size < 3:
        raise ValueError("growth fit needs at least 3 (t, cells) points")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DomainError("cell counts must be positive")
    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]
    if y[-1] < y[0]:
        raise DomainError("growth data are not increasing")

    ymax = float(np.max(y))
    p0_fixed = float(y[0])

    def unpack(logp):
        v = np.exp(np.clip(logp, -200.0, 200.0))
        return (v[0], v[1], v[2]) if fit_p0 else (v[0], v[1], p0_fixed)

    def fun(logp):
        r, K, p0 = unpack(logp)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            pred = growth_curve(kind, p0, r, K, t)
        res = (pred - y) / ymax
        return np.where(np.isfinite(res), res, 1e3)

    lo_r, hi_r = _GROWTH_RANGES[kind]
    lo = [lo_r * math.log(10), math.log(ymax) - math.log(2.0)]
    hi = [hi_r * math.log(10), math.log(ymax) + math.log(50.0)]
    if fit_p0:
        lo.append(math.log(max(y[0], 1.0)) - math.log(3.0))
        hi.append(math.log(max(y[0], 1.0)) + math.log(3.0))
    starts = _sobol_starts(np.array(lo), np.array(hi), N_STARTS, seed)
    best, res, n_ok, costs = _multistart(fun, starts, jobs)
    r, K, p0 = unpack(res.x)
    pred = growth_curve(kind, p0, r, K, t)
    resid = pred - y
    flat = bool(np.all(y == y[0]))
    degenerate = flat or _identifiability(res.jac)
    params = np.array([r, K, p0])
    return FitResult(f"growth:{kind}", ("r", "K", "p0"), params, float(resid @ resid), resid, t, y, pred,
                     True, degenerate, len(starts), n_ok, best,
                     "growth rate not identifiable from these data" if degenerate else "", costs)


# -- data files ------------------------------------------------------------

def _read_two_columns(text: str, allowed_headers: dict):
    rows = [(i, line) for i, line in enumerate(text.splitlines(), start=1)
            if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise ValueError("empty data file")
    header = tuple(c.strip() for c in rows[0][1].split(","))
    if header not in allowed_headers:
        expected = " or ".join(",".join(h) for h in allowed_headers)
        raise ValueError(f"line {rows[0][0]}: expected header {expected}, got {rows[0][1]!r}")
    xs, ys = [], []
    for lineno, line in rows[1:]:
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 fields, got {len(parts)}")
        try:
            x, v = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: bad number in {line.strip()!r}") from None
        if not (math.isfinite(x) and math.isfinite(v)) or x < 0 or v < 0:
            raise ValueError(f"line {lineno}: values must be finite and >= 0")
        xs.append(x)
        ys.append(v)
    return allowed_headers[header], np.array(xs), np.array(ys)


def parse_growth_csv(text: str):
    """Growth data as (t_days, cells); volumes in mm^3 are converted to cells."""
    unit, t, v = _read_two_columns(text, {("t_days", "cells"): "cells",
                                          ("t_days", "volume_mm3"): "volume"})
    if unit == "volume":
        v = np.array([float(volume_to_cells(x)) for x in v])
    return t, v


def parse_lysis_csv(text: str):
    """Lysis data as (ratio, fraction); the file stores percentages."""
    _, ratio, pct = _read_two_columns(text, {("ratio", "lysis_percent"): "percent"})
    if np.any(pct > 100):
        raise ValueError("lysis_percent values must lie in [0, 100]")
    return ratio, pct / 100.0


def load_growth_csv(path):
    return parse_growth_csv(Path(path).read_text())


def load_lysis_csv(path):
    return parse_lysis_csv(Path(path).read_text())


def format_growth_csv(t, cells) -> str:
    return "t_days,cells\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(t, cells))


def format_lysis_csv(ratios, fractions) -> str:
    return "ratio,lysis_percent\n" + "".join(f"{float(a)!r},{100.0 * float(b)!r}\n"
                                             for a, b in zip(ratios, fractions))


# -- synthetic data ----------------------------------------------------------

LYSIS_RATIOS = tuple(0.625 * 2.0 ** k for k in range(8))  # 0.625 .. 80
APOPTOSIS_RATIOS = tuple(0.125 * 2.0 ** k for k in range(6))  # 0.125 .. 4
GROWTH_TIMES = tuple(float(t) for t in range(0, 61, 3))
GROWTH_P0 = 5e6


def add_noise(values, level: float, seed: int = 0) -> np.ndarray:
    """Multiply each value by ``1 + level * z`` with standard normal ``z``."""
    rng = np.random.default_rng(seed)
    values = np.asarray(values, dtype=float)
    return values * (1.0 + level * rng.standard_normal(values.shape))


def synthetic_lysis(config: AssayConfig, kind: str, coefficients, ratios=None,
                    noise: float = 0.0, seed: int = 0, replicates: int = 1):
    """Lysis fractions generated by a known trophic form.

    Each ratio is repeated ``replicates`` times (wells are usually run in
    triplicate) and noisy values are clipped to [0, 1].
    """
    ratios = np.repeat(np.asarray(LYSIS_RATIOS if ratios is None else ratios, dtype=float), replicates)
    y = lysis_curve(config.with_form(kind, coefficients), ratios)
    if noise:
        y = np.clip(add_noise(y, noise, seed), 0.0, 1.0)
    return ratios, y


def synthetic_growth(kind: str, r: float, K: float, p0: float = GROWTH_P0, times=None,
                     noise: float = 0.0, seed: int = 0, replicates: int = 1):
    t = np.repeat(np.asarray(GROWTH_TIMES if times is None else times, dtype=float), replicates)
    y = np.asarray(growth_curve(kind, p0, r, K, t), dtype=float)
    if noise:
        y = add_noise(y, noise, seed)
    return t, y
