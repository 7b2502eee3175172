"""Fast-slow Thaler systems against their stable-SDE limit.

The slow variable follows

    x_{k+1} = x_k + a(x_k) / m + m^(-1/alpha) b(x_k) v(y_k)

and at rescaled time T = k/m its law approaches that of dX = a(X) dt + b(X) dL
with L an alpha-stable Levy process, the SDE read in the Marcus sense.  Two
diffusion kinds are supported, both with exact Marcus jump maps: a constant
additive coefficient and the diagonal linear field b(x) = c diag(x).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import spearmanr

from .chaos import DEFAULT_BURN_IN, ThalerParams, chain_init, chain_next, make_rng, observable_constants
from .stable import StableLawSpec, ks_distance, sample_stable

KINDS = ("additive_constant", "diagonal_linear")
DEFAULT_DT = 1e-3


def ou_drift(x):
    return -x


def zero_drift(x):
    return np.zeros_like(x)


@dataclass(frozen=True)
class FastSlowSpec:
    drift: Callable
    kind: str
    coef: float
    params: ThalerParams
    T: float
    m: int
    x0: tuple = (0.0,)
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.m * self.T))

    @property
    def dim(self) -> int:
        return len(self.x0)


@dataclass(frozen=True)
class SDESpec:
    drift: Callable
    kind: str
    coef: float
    law: StableLawSpec
    dt: float = DEFAULT_DT
    T: float = 1.0
    x0: tuple = (0.0,)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def dim(self) -> int:
        return len(self.x0)


def _diffuse(x, kind, coef, increment):
    if kind == "additive_constant":
        return x + coef * increment
    # exact flow of dx = c x dL along a straight-line interpolation of the jump
    return x * np.exp(coef * increment)


def simulate_fast_slow(spec: FastSlowSpec, seed, n_samples: int = 1):
    """Time-T marginals of ``n_samples`` independent fast-slow runs.

    Returns ``(x, diverged)`` with ``x`` of shape (n_samples, d) and a boolean
    mask of samples that became non-finite.  Every sample and coordinate has
    its own chain.
    """
    d = spec.dim
    consts = observable_constants(spec.params)
    state = chain_init(seed, spec.params, spec.burn_in, n_samples * d)
    x = np.tile(np.asarray(spec.x0, dtype=float), (n_samples, 1))
    scale = spec.m ** (-spec.params.gamma)
    with np.errstate(all="ignore"):
        for _ in range(spec.n_steps):
            _, v = chain_next(state, consts)
            v = v.reshape(n_samples, d)
            drift = spec.drift(x) / spec.m
            if spec.kind == "additive_constant":
                x = x + drift + scale * spec.coef * v
            else:
                x = x + drift + scale * spec.coef * x * v
    return x, ~np.all(np.isfinite(x), axis=1)


def simulate_stable_sde(spec: SDESpec, seed, n_samples: int = 1):
    """Euler steps for the drift, exact Marcus maps for the stable increments.

    Each step draws dL = dt^(1/alpha) xi with xi from the unit stable law.
    Returns ``(x, diverged)`` as :func:`simulate_fast_slow` does.
    """
    d = spec.dim
    rng = make_rng(seed)
    unit = StableLawSpec(spec.law.alpha, spec.law.beta, spec.law.scale)
    x = np.tile(np.asarray(spec.x0, dtype=float), (n_samples, 1))
    h = spec.dt ** (1.0 / spec.law.alpha)
    with np.errstate(all="ignore"):
        for _ in range(spec.n_steps):
            dL = h * sample_stable(unit, rng, (n_samples, d))
            x = _diffuse(x + spec.drift(x) * spec.dt, spec.kind, spec.coef, dL)
    return x, ~np.all(np.isfinite(x), axis=1)


def ou_marginal_scale(alpha: float, coef: float = 1.0, T: float = 1.0) -> float:
    """Scale of X_T for dX = -X dt + c dL, X_0 = 0: c ((1 - e^(-alpha T)) / alpha)^(1/alpha)."""
    return coef * ((1.0 - math.exp(-alpha * T)) / alpha) ** (1.0 / alpha)


def ou_reference_sample(alpha: float, beta: float, coef: float, n: int, seed,
                        T: float = 1.0) -> np.ndarray:
    """Direct draws from the exact OU marginal law."""
    law = StableLawSpec(alpha, beta, ou_marginal_scale(alpha, coef, T))
    return sample_stable(law, make_rng(seed), n)


@dataclass
class WeakConvergenceReport:
    m: list
    ks: list
    n_effective: list
    divergence_count: list
    reference: str
    spearman: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def ks_largest(self) -> float:
        return self.ks[-1]

    @property
    def trend_nonincreasing(self) -> bool | None:
        if self.spearman is None:
            return None
        return self.spearman <= 0.0

    def to_dict(self) -> dict:
        out = {"m": self.m, "ks": self.ks, "n_effective": self.n_effective,
               "divergence_count": self.divergence_count, "reference": self.reference,
               "ks_largest_m": self.ks_largest, **self.extras}
        if self.spearman is not None:
            out["spearman"] = self.spearman
            out["trend_nonincreasing"] = self.trend_nonincreasing
        return out

    def write(self, stem) -> tuple[str, str]:
        csv_path, json_path = f"{stem}.csv", f"{stem}.json"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "ks", "n_effective", "divergence_count"])
            for row in zip(self.m, self.ks, self.n_effective, self.divergence_count):
                w.writerow([row[0], repr(row[1]), row[2], row[3]])
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        return csv_path, json_path


def weak_convergence_report(family: list, n_samples: int, seed=0, sde_ref: SDESpec | None = None,
                            reference_sample=None, coordinate: int = 0
                            ) -> WeakConvergenceReport:
    """KS distance of fast-slow marginals to a reference, for each m in ``family``.

    The reference is ``reference_sample`` when given (e.g. exact draws from an
    analytic law), otherwise ``n_samples`` runs of ``sde_ref``.  Diverged
    samples are dropped and counted.  Each m uses an independent child seed.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    ms = [spec.m for spec in family]
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ValueError("m values must be strictly increasing")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(len(family) + 1)
    if reference_sample is not None:
        ref = np.asarray(reference_sample, dtype=float)
        label = "analytic"
    elif sde_ref is not None:
        xr, bad = simulate_stable_sde(sde_ref, children[-1], n_samples)
        ref = xr[~bad, coordinate]
        label = "sde"
    else:
        raise ValueError("need sde_ref or reference_sample")

    ks, neff, ndiv = [], [], []
    for spec, child in zip(family, children):
        x, bad = simulate_fast_slow(spec, child, n_samples)
        good = x[~bad, coordinate]
        ks.append(ks_distance(good, ref) if good.size else float("nan"))
        neff.append(int(good.size))
        ndiv.append(int(bad.sum()))
    rho = None
    if len(family) > 1:
        rho = float(spearmanr(ms, ks).statistic)
    return WeakConvergenceReport(m=ms, ks=ks, n_effective=neff, divergence_count=ndiv,
                                 reference=label, spearman=rho,
                                 extras={"n_reference": int(ref.size)})
