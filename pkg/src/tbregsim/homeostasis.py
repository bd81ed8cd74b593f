"""Homeostasis states and the parameters back-solved from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

from .model import CELL_NAMES, DomainError, ModelParameters, ModelState, parse_parameters

DERIVED_NAMES = ("sigma_H", "sigma_R", "sigma_B", "kappa", "p", "r",
                 "eta_1", "j_H", "c_1", "c_2", "theta_BT")

# Values taken from the literature or from the fits; the NK lysis triple is the
# (c, s_N, delta) combination used for the reference simulations.
LITERATURE = {
    "a": 0.17,
    "b": 1e-10,
    "c": 15.0,
    "delta": 1.0,
    "s_N": 25.0,
    "lambda_R": 1e-8,
    "d": 1.7,
    "l": 1.7,
    "s_C": 3.5e-2,
    "sigma_N": 1.13e8,
    "theta_N": 0.06301,
    "gamma_N": 1e-6,
    "delta_N": 0.5,
    "sigma_C": 3e7,
    "theta_C": 0.009,
    "q": 3.422e-10,
    "gamma_C": 1e-6,
    "j_C": 1.245e-1,
    "k_C": 2.019e7,
    "eta_2": 2.5036e3,
    "theta_H": 0.00797,
    "k_H": 2.5036e3,
    "theta_R": 0.03851,
    "theta_B": 0.0395,
    "gamma_B": 20.0,
    "theta_X": 0.033,
}


@dataclass(frozen=True)
class HomeostasisState:
    label: str
    values: tuple  # (T, N, C, H, R, B, B_T) in cells

    def __post_init__(self):
        if len(self.values) != 7:
            raise ValueError("a homeostasis state has 7 cell components")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __getattr__(self, name):
        if name != "values" and name in CELL_NAMES:
            return self.values[CELL_NAMES.index(name)]
        raise AttributeError(name)

    def to_model_state(self, **overrides) -> ModelState:
        state = ModelState(*self.values, X=0.0)
        return state.replace(**overrides) if overrides else state


def half_life_to_rate(half_life: float) -> float:
    """Exponential decay rate (1/day) for a half-life in days."""
    if not half_life > 0:
        raise DomainError("half-life must be positive")
    return math.log(2.0) / half_life


def in_vitro_death_rate(t_final: float, reduction: float) -> float:
    """Natural death rate from the fraction of cells lost after ``t_final`` days.

    Solves ``K(t_final) = K_E (1 - reduction)`` for exponential decay.
    """
    if not t_final > 0:
        raise DomainError("t_final must be positive")
    if not 0.0 <= reduction < 1.0:
        raise DomainError("reduction must lie in [0, 1)")
    return math.log(1.0 / (1.0 - reduction)) / t_final


def zero_tumor_state() -> HomeostasisState:
    return HomeostasisState("E0", (0.0, 3.38e9, 1.263e5, 2.76e9, 2.4e8, 8e8, 0.0))


def high_tumor_state() -> HomeostasisState:
    return HomeostasisState("E1", (1e10, 1.25e9, 2.634e6, 2.55621e9, 5.0879e8, 7.67e8, 3.34e7))


def derive_parameters(E0: HomeostasisState, E1: HomeostasisState, literature=None) -> dict:
    """Back-solve the eleven homeostasis-derived rate constants.

    Each value zeroes one equation of the model at ``E0`` or ``E1``. The order
    follows the dependencies between them (sigma_R before c_1, c_2 before
    theta_BT, kappa before p, eta_1 before r, c_1 before j_H).

    Raises
    ------
    DomainError
        If a solved value is not positive, which means the homeostasis inputs
        are inconsistent with the literature constants.
    """
    lit = dict(LITERATURE if literature is None else literature)
    T0, N0, C0, H0, R0, B0, BT0 = E0.values
    T1, N1, C1, H1, R1, B1, BT1 = E1.values
    if T0 != 0.0 or BT0 != 0.0:
        raise DomainError("the zero-tumor state must have T = B_T = 0")
    if min(E1.values) <= 0.0:
        raise DomainError("the high-tumor state must be strictly positive")

    g = lit.__getitem__
    out = {}
    out["sigma_H"] = g("theta_H") * H0
    out["sigma_R"] = g("theta_R") * R0
    out["sigma_B"] = g("theta_B") * B0

    nk_loss0 = g("theta_N") + g("gamma_N") * R0 ** g("delta_N")
    out["kappa"] = (nk_loss0 * N0 - g("sigma_N")) / (H0 * N0)

    nk_net1 = (g("sigma_N") - g("theta_N") * N1 - g("gamma_N") * R1 ** g("delta_N") * N1
               + out["kappa"] * H1 * N1)
    out["p"] = nk_net1 / (T1 * N1)

    out["eta_1"] = ((g("theta_C") + g("gamma_C") * R0) * C0 - g("sigma_C")) * (g("eta_2") + H0) / (H0 * C0)

    cd8_net1 = (g("sigma_C") - g("theta_C") * C1 - g("q") * T1 * C1 - g("gamma_C") * R1 * C1
                + g("j_C") * T1 / (g("k_C") + T1) * C1
                + out["eta_1"] * H1 / (g("eta_2") + H1) * C1)
    out["r"] = -cd8_net1 / (N1 * T1)

    out["c_1"] = (g("theta_R") * R1 - out["sigma_R"]) / (H1 * BT1)
    out["j_H"] = ((g("theta_H") * H1 + out["c_1"] * H1 * BT1 - out["sigma_H"])
                  / (T1 / (g("k_H") + T1) * B1 * H1))

    out["c_2"] = (out["sigma_B"] - g("theta_B") * B1) / (T1 * B1)
    # tBreg balance at E1: -theta_BT * B_T1 + c_2 * T1 * B1 = 0
    out["theta_BT"] = out["c_2"] * T1 * B1 / BT1

    bad = [k for k, v in out.items() if not v > 0.0]
    if bad:
        raise DomainError(f"non-positive derived parameter(s): {', '.join(bad)}")
    return {k: out[k] for k in DERIVED_NAMES}


def reference_parameters(**overrides) -> ModelParameters:
    """Literature constants plus full-precision derived values.

    Keyword overrides replace individual entries after derivation, e.g.
    ``reference_parameters(c=19, s_N=4)``.
    """
    values = dict(LITERATURE)
    values.update(derive_parameters(zero_tumor_state(), high_tumor_state(), values))
    params = ModelParameters.from_mapping(values)
    return params.replace(**overrides) if overrides else params


def bundled_parameters() -> ModelParameters:
    """The parameter file shipped with the package (``data/reference.params``)."""
    text = resources.files("tbregsim").joinpath("data/reference.params").read_text()
    return parse_parameters(text)


def equilibrium_residuals(params: ModelParameters, state: HomeostasisState) -> dict:
    """Relative residual of each immune equation at a homeostasis state.

    Each entry is |dX/dt| divided by the largest absolute term in that
    equation, so 0 means exact balance.
    """
    T, N, C, H, R, B, BT = state.values
    p = params
    terms = {
        "N": [p.sigma_N, -p.theta_N * N, -p.p * T * N, -p.gamma_N * R ** p.delta_N * N, p.kappa * H * N],
        "C": [p.sigma_C, -p.theta_C * C, -p.q * T * C, -p.gamma_C * R * C, p.r * N * T,
              p.j_C * T / (p.k_C + T) * C, p.eta_1 * H / (p.eta_2 + H) * C],
        "H": [p.sigma_H, -p.theta_H * H, p.j_H * T / (p.k_H + T) * B * H, -p.c_1 * H * BT],
        "R": [p.sigma_R, -p.theta_R * R, p.c_1 * H * BT],
        "B": [p.sigma_B, -p.theta_B * B, -p.c_2 * T * B],
        "B_T": [-p.theta_BT * BT, p.c_2 * T * B],
    }
    out = {}
    for name, ts in terms.items():
        scale = max(abs(t) for t in ts)
        out[name] = abs(math.fsum(ts)) / scale if scale > 0 else 0.0
    return out
