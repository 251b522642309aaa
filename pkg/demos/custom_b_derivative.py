"""Piecewise-linear derivative of a flow through a corner of two curved surfaces.

The direction of the perturbation decides the order in which the perturbed
trajectory crosses the surfaces, and with it the linear piece that applies.
One-sided finite differences confirm each piece.
"""
import numpy as np

from ecrflow.custom import custom_nonlinear_model
from ecrflow.flow import IntegratorConfig, flow
from ecrflow.model import validate_transversality
from ecrflow.variational import b_derivative, word_label

cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)
model = custom_nonlinear_model()
print(f"worst transversality margin near the corner: {validate_transversality(model, 0.3, 256).worst:.3f}")

x0 = flow(model.reversed(), 0.1, model.rho, cfg)[0]
t = 0.2
base, traj = flow(model, t, x0, cfg, jacobian=True)
rng = np.random.default_rng(1)
for _ in range(6):
    w = rng.normal(size=2)
    w /= np.linalg.norm(w)
    r = b_derivative(model, t, x0, 0.0, w, cfg, details=True, trajectory=traj)
    fd = (flow(model, t, x0 + 1e-6 * w, cfg)[0] - base) / 1e-6
    print(f"w = {np.array2string(w, precision=3):>16}  word {word_label(r.words[0]):>8}  "
          f"D = {np.array2string(r.value, precision=5):>22}  fd gap {np.linalg.norm(fd - r.value):.1e}")
