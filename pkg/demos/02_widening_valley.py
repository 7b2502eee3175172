"""
Widening valley: does the perturbation find flatter points?
===========================================================

L(u, v) = |u|^2 v^2 / 2 has a zero-loss valley at v = 0 whose Hessian trace
|u|^2 shrinks towards u = 0.  Plain GD started on the valley never moves.
We track min(trace)/initial trace for MPGD with one chaotic chain per
coordinate, MPGD with a single shared chain, and Gaussian noise at the same
scales.
"""

import numpy as np

from mpgd.losses import WideningValley
from mpgd.optimizers import MPGDConfig, run

loss = WideningValley(10)
steps = 30_000
schemes = {
    "mpgd, chain per coordinate": ("mpgd", {}),
    "mpgd, shared chain": ("mpgd", {"coordinate_chains": False}),
    "gaussian": ("gaussian", {}),
}
for name, (kind, extra) in schemes.items():
    cfg = MPGDConfig(eta=0.01, mu=0.02, sigma=0.05, gamma1=0.7, gamma2=0.7,
                     beta1=0.5, beta2=0.5, **extra)
    ratios = []
    for seed in range(3):
        x0 = np.r_[5.0 * np.random.default_rng(seed).random(10), 0.0]
        rec = run(kind, loss, x0, steps, cfg, seed=seed, record_every=100,
                  keep_iterates=False)
        tr = np.asarray(rec.hessian_trace)
        ratios.append(tr.min() / tr[0])
    print(f"{name:28s} min trace / initial: " + "  ".join(f"{r:.3f}" for r in ratios))
