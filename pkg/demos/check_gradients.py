"""
Checking the hand-written gradients
===================================

Builds a reduced network (8x8 inputs, 4 LSTM units, 2 frames) so that every
parameter can be perturbed, and compares reverse-mode gradients of the whole
objective with central differences. Probes whose perturbation would cross a
ReLU, max-pool or hinge kink are reported as skipped.
"""
from lvquant.gradsuite import run_gradcheck

for boundary in ("cyclic", "skip_first"):
    report = run_gradcheck(seed=0, lambda1=0.1, lambda2=0.1, boundary=boundary)
    print(f"-- {boundary} --")
    print(report.to_text())
