"""
Second-order expansion of the expected loss
===========================================

For small noise amplitude eps the expected loss after k steps is the
unperturbed loss plus eps^2/2 (tr(C_k H) - grad . lambda_k).  On a quadratic
the residual of that prediction should shrink like eps^3, while dropping the
eps^2 term leaves an eps^2 residual.

Off the null space of the multiplicative channel the closed form misses a
cross term E[v1 phi] and the residual stays of order eps^2.  With the term
added back the leftover eps^2 coefficient is zero within noise; at 10^4
replicas the eps^3 remainder is then too small to fit a slope to.
"""

import numpy as np

from mpgd.implicit_reg import order_check
from mpgd.losses import QuadraticLoss
from mpgd.optimizers import MPGDConfig

A = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
loss = QuadraticLoss(A)
cfg = MPGDConfig(eta=0.01, mu=16.0, sigma=1.0, gamma1=0.6, gamma2=0.6, beta1=1.0, beta2=1.0,
                  variant="scalar_mult")
grid = [0.04, 0.02, 0.01, 0.005]


def show(label, rep):
    slope = "n/a" if rep.slope is None else f"{rep.slope:.2f}"
    print(f"{label:30s} slope {slope:>5s}  control {rep.control_slope:.2f}  ({rep.verdict})")
    # residual / eps^2 is the eps^2 coefficient the prediction failed to capture
    for e, r, s in zip(rep.eps, rep.residuals, rep.stderrs):
        print(f"    eps={e:<6} residual/eps^2 = {r / e**2:7.3f} +- {s / e**2:.3f}")


show("x0 = (0, 0, 1), closed form", order_check(loss, [0.0, 0.0, 1.0], cfg, grid, 50, 10_000))
x0 = [0.6, -0.2, 1.0]
show("x0 generic, closed form", order_check(loss, x0, cfg, grid, 50, 10_000))
show("x0 generic, with memory term",
     order_check(loss, x0, cfg, grid, 50, 10_000, include_memory=True))
