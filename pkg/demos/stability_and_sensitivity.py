"""Zero-tumor stability and a short sensitivity ranking."""
from tbregsim import high_tumor_state, reference_parameters
from tbregsim.analysis import sensitivity_scan, stability_report

P = reference_parameters()
print(stability_report(P).summary())
print(stability_report(P.replace(c=0.1, d=0.1)).summary())

ic = high_tumor_state().to_model_state(T=9.5e6)
scan = sensitivity_scan(P, ic, names=["lambda_R", "a", "c", "delta", "s_N"], jobs=2)
for name, plus, minus in scan.ranked():
    print(f"{name:<10}{plus:+9.2f}%{minus:+9.2f}%")
