"""State, parameters and right-hand side of the tumor/immune/rituximab system.

Eight populations are tracked: tumor cells ``T``, NK cells ``N``, CD8+ T
cells ``C``, non-Treg CD4+ T cells ``H``, Tregs ``R``, non-tBreg B cells
``B``, tBregs ``B_T`` (all in cells) and the rituximab concentration ``X``
(ug/mL).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from ._kernels import PARAM_NAMES

STATE_NAMES = ("T", "N", "C", "H", "R", "B", "B_T", "X")
CELL_NAMES = STATE_NAMES[:7]

# exponents and the carrying-capacity inverse must be strictly positive
STRICTLY_POSITIVE = ("b", "delta", "l", "delta_N")

CLAMP_TOLERANCE = 1e-9


class DomainError(ValueError):
    """Raised when an input lies outside the model's admissible domain."""


@dataclass(frozen=True)
class ModelState:
    T: float = 0.0
    N: float = 0.0
    C: float = 0.0
    H: float = 0.0
    R: float = 0.0
    B: float = 0.0
    B_T: float = 0.0
    X: float = 0.0

    def __post_init__(self):
        for name in STATE_NAMES:
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0.0:
                raise DomainError(f"state component {name}={value!r} must be finite and >= 0")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values: Iterable[float], clamp: bool = False) -> "ModelState":
        arr = np.asarray(list(values), dtype=float)
        if arr.shape != (8,):
            raise ValueError(f"expected 8 components, got shape {arr.shape}")
        if clamp:
            arr = np.maximum(arr, 0.0)
        return cls(*arr)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_NAMES], dtype=float)

    def replace(self, **changes) -> "ModelState":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in STATE_NAMES}


@dataclass(frozen=True)
class ModelParameters:
    """Rate constants of the model, one field per symbol.

    Field names follow the ASCII spelling of the usual symbols (``lambda_R``,
    ``delta_N``, ``theta_BT``, ...). Instances are immutable; use
    :meth:`replace` to derive variants.
    """

    a: float
    b: float
    c: float
    delta: float
    s_N: float
    lambda_R: float
    d: float
    l: float  # noqa: E741
    s_C: float
    sigma_N: float
    theta_N: float
    p: float
    gamma_N: float
    delta_N: float
    kappa: float
    sigma_C: float
    theta_C: float
    q: float
    gamma_C: float
    r: float
    j_C: float
    k_C: float
    eta_1: float
    eta_2: float
    sigma_H: float
    theta_H: float
    j_H: float
    k_H: float
    c_1: float
    sigma_R: float
    theta_R: float
    sigma_B: float
    theta_B: float
    c_2: float
    gamma_B: float
    theta_BT: float
    theta_X: float

    def __post_init__(self):
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value) or value < 0.0:
                raise DomainError(f"parameter {f.name}={value!r} must be finite and >= 0")
            if f.name in STRICTLY_POSITIVE and value <= 0.0:
                raise DomainError(f"parameter {f.name} must be > 0")
            object.__setattr__(self, f.name, value)

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "ModelParameters":
        unknown = set(values) - set(PARAM_NAMES)
        if unknown:
            raise KeyError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        missing = [n for n in PARAM_NAMES if n not in values]
        if missing:
            raise KeyError(f"missing parameter(s): {', '.join(missing)}")
        return cls(**{n: float(values[n]) for n in PARAM_NAMES})

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    def replace(self, **changes) -> "ModelParameters":
        unknown = set(changes) - set(PARAM_NAMES)
        if unknown:
            raise KeyError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)


assert tuple(f.name for f in fields(ModelParameters)) == PARAM_NAMES


@dataclass(frozen=True)
class TrophicForm:
    """Functional response used in the co-culture assays.

    ``kind`` is ``"power"`` (magnitude * pred^e), ``"rational-hill"``
    (magnitude * pred^e / (s * prey^e + pred^e)) or ``"michaelis-menten"``
    (magnitude * pred / (k + pred)).
    """

    kind: str
    coefficients: tuple

    KINDS = {"power": _kernels.FORM_POWER,
             "rational-hill": _kernels.FORM_RATIONAL,
             "michaelis-menten": _kernels.FORM_MM}
    COEFFICIENT_NAMES = {"power": ("magnitude", "exponent"),
                         "rational-hill": ("magnitude", "exponent", "half_saturation"),
                         "michaelis-menten": ("magnitude", "half_saturation")}

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown trophic form {self.kind!r}")
        coeffs = tuple(float(c) for c in self.coefficients)
        expected = len(self.COEFFICIENT_NAMES[self.kind])
        if len(coeffs) != expected:
            raise ValueError(f"{self.kind} form takes {expected} coefficients, got {len(coeffs)}")
        if any(c < 0 or not math.isfinite(c) for c in coeffs):
            raise DomainError("trophic coefficients must be finite and >= 0")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def code(self) -> int:
        return self.KINDS[self.kind]

    def kernel_coefficients(self) -> tuple:
        """(magnitude, exponent-or-halfsat, halfsat) as laid out for the kernel."""
        c = self.coefficients
        if self.kind == "rational-hill":
            return c
        return (c[0], c[1], 0.0)

    def __call__(self, prey: float, predator: float) -> float:
        m, e, s = self.kernel_coefficients()
        return float(_kernels.trophic(self.code, float(prey), float(predator), m, e, s))


def _check_nonnegative(**values):
    for name, v in values.items():
        if v < 0 or not math.isfinite(v):
            raise DomainError(f"{name}={v!r} must be finite and >= 0")


def nk_lysis_fraction(T: float, N: float, R: float, params: ModelParameters) -> float:
    """Per-capita rate at which NK cells lyse tumor cells, with Treg inhibition.

    Returns ``c * exp(-lambda_R R) * N^delta / (s_N T^delta + N^delta)``; zero
    when ``N == 0`` (including ``T == N == 0``).
    """
    _check_nonnegative(T=T, N=N, R=R)
    hill = _kernels.hill_ratio(float(T), float(N), params.delta, params.s_N)
    return params.c * math.exp(-params.lambda_R * R) * hill


def cd8_lysis_fraction(T: float, C: float, params: ModelParameters) -> float:
    """Per-capita rate at which CD8+ T cells lyse tumor cells; zero when ``C == 0``."""
    _check_nonnegative(T=T, C=C)
    return params.d * _kernels.hill_ratio(float(T), float(C), params.l, params.s_C)


def clamp_state(y: np.ndarray, scale=1.0) -> np.ndarray:
    """Zero out small negative round-off, reject anything more negative.

    Components in ``(-1e-9 * scale, 0)`` are set to 0.
    """
    y = np.asarray(y, dtype=float)
    limit = -CLAMP_TOLERANCE * np.maximum(np.asarray(scale, dtype=float), 1.0)
    bad = y < limit
    if np.any(bad):
        names = [STATE_NAMES[i] for i in np.flatnonzero(bad)] if y.size == 8 else list(np.flatnonzero(bad))
        raise DomainError(f"negative state component(s) beyond clamp tolerance: {names}")
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite state component")
    return np.maximum(y, 0.0)


def rhs(state, params: ModelParameters, dose_rate: float = 0.0, scale=1.0) -> np.ndarray:
    """Time derivative of all eight components (per day).

    ``state`` may be a :class:`ModelState` or an array of 8 values in
    ``STATE_NAMES`` order; ``dose_rate`` is the instantaneous infusion rate
    v(t) in ug/mL/day.
    """
    if dose_rate < 0 or not math.isfinite(dose_rate):
        raise DomainError("dose_rate must be finite and >= 0")
    if isinstance(state, ModelState):
        y = state.as_array()
    else:
        y = clamp_state(np.asarray(state, dtype=float), scale)
        if y.shape != (8,):
            raise ValueError("state must have 8 components")
    out = np.empty(8)
    _kernels.model_rhs(y, params.as_array(), float(dose_rate), out)
    return out


# -- parameter files -------------------------------------------------------

def format_parameters(params: ModelParameters | Mapping[str, float]) -> str:
    values = params.as_dict() if isinstance(params, ModelParameters) else dict(params)
    names = [n for n in PARAM_NAMES if n in values]
    width = max(len(n) for n in names)
    return "".join(f"{n:<{width}} = {float(values[n])!r}\n" for n in names)


def parse_parameters(text: str, partial: bool = False):
    """Parse ``name = value`` lines; ``#`` starts a comment.

    Returns a :class:`ModelParameters`, or a plain dict when ``partial`` is
    set. Unknown or duplicated keys raise ``KeyError``.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'name = value', got {raw!r}")
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in PARAM_NAMES:
            raise KeyError(f"line {lineno}: unknown parameter {key!r}")
        if key in values:
            raise KeyError(f"line {lineno}: duplicate parameter {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ValueError(f"line {lineno}: bad number {val!r}") from None
    if partial:
        return values
    return ModelParameters.from_mapping(values)


def load_parameters(path, partial: bool = False):
    return parse_parameters(Path(path).read_text(), partial=partial)


def save_parameters(params, path) -> None:
    Path(path).write_text(format_parameters(params))
