"""Compare the five rituximab dosing cases on one tumor.

The tumor starts just inside the range the standard course can clear.
Each case changes the infusion timing, which shifts the depth and date of
the B-cell nadir and whether the tumor is beaten. Prints a small table.
"""
import numpy as np

from tbregsim import high_tumor_state, integrate, reference_parameters, preset_schedule

P = reference_parameters()
ic = high_tumor_state().to_model_state(T=9.5e6)

print(f"{'case':<6}{'T(350)':>12}{'min B':>12}{'day':>8}{'B(350)':>12}  beaten")
for k in range(1, 6):
    traj = integrate(ic, P, preset_schedule(k), t_span=(0.0, 350.0))
    B = traj.component("B")
    i = int(np.argmin(B))
    print(f"{k:<6}{traj.final.T:12.3e}{B[i]:12.3e}{traj.times[i]:8.1f}{B[-1]:12.3e}  {traj.final.T < 1.0}")
