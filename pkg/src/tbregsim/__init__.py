"""Tumor / immune / rituximab ODE model: simulation, fitting and analysis."""

from .model import (STATE_NAMES, DomainError, ModelParameters, ModelState, TrophicForm,
                    cd8_lysis_fraction, load_parameters, nk_lysis_fraction, rhs,
                    save_parameters)
from .homeostasis import (derive_parameters, half_life_to_rate, high_tumor_state,
                          in_vitro_death_rate, reference_parameters, zero_tumor_state)
from .dosing import DoseSchedule, DoseWindow, preset_schedule, v_of_t
from .solver import IntegrationError, SolverConfig, Trajectory, integrate

__version__ = "0.1.0"
