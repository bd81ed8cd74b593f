"""Untreated tumors against a compromised and a healthy immune background.

Both organisms share the bundled rate constants; they differ only in the
immune cell counts they start from. Run with
``python demos/untreated_growth.py``.
"""
from tbregsim import high_tumor_state, integrate, reference_parameters, zero_tumor_state
from tbregsim.staging import stage_label

P = reference_parameters()

# %% the high-tumor homeostasis stays put
traj = integrate(high_tumor_state().to_model_state(), P, t_span=(0.0, 300.0))
T = traj.component("T")
print(f"baseline     T(300) = {T[-1]:.4e}  {stage_label(T[-1])}")

# %% same tumor, two immune backgrounds
runs = [("compromised", high_tumor_state(), 9.1e6),
        ("compromised", high_tumor_state(), 9.3e6),
        ("healthy", zero_tumor_state(), 9.3e6),
        ("healthy", zero_tumor_state(), 1.0e9)]
for label, base, T0 in runs:
    tf = integrate(base.to_model_state(T=T0), P, t_span=(0.0, 300.0)).final.T
    verdict = "beaten" if tf < 1.0 else stage_label(tf)
    print(f"{label:<12} T0 = {T0:.2e}  T(300) = {tf:.4e}  {verdict}")
