"""Largest tumor the compromised immune system still beats, with and without drug."""
from tbregsim import high_tumor_state, reference_parameters
from tbregsim.analysis import max_beatable_tumor
from tbregsim.dosing import standard_schedule

P = reference_parameters()
E1 = high_tumor_state().to_model_state()

plain = max_beatable_tumor(P, E1, resolution=1e5, bracket=(1e6, 1e8), jobs=2)
print("no drug  ", plain.summary().splitlines()[0])

drug = max_beatable_tumor(P, E1, standard_schedule(), resolution=1e5, bracket=(1e6, 1e8), jobs=2)
print("rituximab", drug.summary().splitlines()[0])
print(f"gain: {drug.threshold / plain.threshold:.3f}x")
