"""Gradient descent with chaotic multiplicative and additive perturbations.

One MPGD iterate is

    x <- x - eta * grad R(x) - mu * eta^g1 * v1 (.) x + sigma * eta^g2 * v2

where v1 and v2 are emissions of Thaler chains.  The step size plays the role
of the time-scale separation, m = 1/eta, so eta^g = m^(-1/alpha).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .chaos import (DEFAULT_BURN_IN, ChainState, ThalerParams, chain_init, chain_next,
                    make_rng, observable_constants)
from .losses import LossModel

VARIANTS = ("hadamard", "scalar_mult", "symmetrized")
KINDS = ("gd", "gaussian", "mpgd", "mpgd_sym")


@dataclass(frozen=True)
class MPGDConfig:
    eta: float
    mu: float = 0.0
    sigma: float = 0.0
    gamma1: float = 0.7
    gamma2: float = 0.7
    beta1: float = 0.0
    beta2: float = 0.0
    variant: str = "hadamard"
    coordinate_chains: bool = True
    sign_rule: str = "product"
    burn_in: int = DEFAULT_BURN_IN
    stop_perturbation_at: int | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        # validates gamma/beta ranges
        self.channel_params(1), self.channel_params(2)

    @property
    def m(self) -> float:
        return 1.0 / self.eta

    @property
    def mult_scale(self) -> float:
        """mu * m^(-1/alpha1)."""
        return self.mu * self.eta**self.gamma1

    @property
    def add_scale(self) -> float:
        """sigma * m^(-1/alpha2)."""
        return self.sigma * self.eta**self.gamma2

    def channel_params(self, channel: int) -> ThalerParams:
        if channel == 1:
            return ThalerParams(self.gamma1, self.beta1, self.sign_rule)
        return ThalerParams(self.gamma2, self.beta2, self.sign_rule)

    def perturbing(self, step: int) -> bool:
        return self.stop_perturbation_at is None or step < self.stop_perturbation_at

    def to_dict(self) -> dict:
        return asdict(self)


class PerturbationBank:
    """Chain states feeding the two perturbation channels.

    Channel 1 carries one chain per coordinate (a single chain when the
    variant is ``scalar_mult`` or chains are shared); channel 2 likewise.
    The channels draw from disjoint child seeds of ``seed``.
    """

    def __init__(self, config: MPGDConfig, dim: int, seed):
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        self.dim = dim
        self.seed_entropy = seed.entropy
        s1, s2 = seed.spawn(2)
        n1 = 1 if (config.variant == "scalar_mult" or not config.coordinate_chains) else dim
        n2 = dim if config.coordinate_chains else 1
        p1, p2 = config.channel_params(1), config.channel_params(2)
        self.const1 = observable_constants(p1)
        self.const2 = observable_constants(p2)
        self.chain1: ChainState = chain_init(s1, p1, config.burn_in, n1)
        self.chain2: ChainState = chain_init(s2, p2, config.burn_in, n2)

    @property
    def step_index(self) -> int:
        return self.chain1.step_index

    def next(self):
        """Advance every chain once; return (v1, v2) broadcastable to ``dim``."""
        _, v1 = chain_next(self.chain1, self.const1)
        _, v2 = chain_next(self.chain2, self.const2)
        return v1, v2


def make_bank_pair(config: MPGDConfig, dim: int, seed):
    """Two independent banks for the symmetrised scheme."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    a, b = seed.spawn(2)
    return PerturbationBank(config, dim, a), PerturbationBank(config, dim, b)


def gd_step(x, loss: LossModel, eta: float):
    return x - eta * loss.gradient(x)


def _perturb(x_next, x, v1, v2, mult, add):
    # zero prefactors are skipped so the unperturbed step is reproduced bitwise
    if mult != 0.0:
        x_next = x_next - mult * v1 * x
    if add != 0.0:
        x_next = x_next + add * v2
    return x_next


def gaussian_pgd_step(x, loss: LossModel, eta: float, mu: float, sigma: float,
                      rng: np.random.Generator, gamma1: float = 0.7, gamma2: float = 0.7):
    """The MPGD step with standard normal draws in place of chaotic emissions."""
    x = np.asarray(x, dtype=float)
    g1 = rng.standard_normal(x.shape)
    g2 = rng.standard_normal(x.shape)
    return _perturb(gd_step(x, loss, eta), x, g1, g2, mu * eta**gamma1, sigma * eta**gamma2)


def _check_dim(x, bank: PerturbationBank):
    if x.shape[-1] != bank.dim:
        raise ValueError(f"iterate has dimension {x.shape[-1]}, bank expects {bank.dim}")


def mpgd_step(x, loss: LossModel, config: MPGDConfig, bank: PerturbationBank,
              perturb: bool = True):
    x = np.asarray(x, dtype=float)
    _check_dim(x, bank)
    v1, v2 = bank.next()
    out = gd_step(x, loss, config.eta)
    if perturb:
        out = _perturb(out, x, v1, v2, config.mult_scale, config.add_scale)
    return out, bank


def mpgd_sym_step(x, loss: LossModel, config: MPGDConfig, bank_pair, perturb: bool = True):
    """MPGD step driven by differences of two independent chain banks."""
    x = np.asarray(x, dtype=float)
    a, b = bank_pair
    _check_dim(x, a)
    _check_dim(x, b)
    a1, a2 = a.next()
    b1, b2 = b.next()
    out = gd_step(x, loss, config.eta)
    if perturb:
        out = _perturb(out, x, a1 - b1, a2 - b2, config.mult_scale, config.add_scale)
    return out, bank_pair


# ---------------------------------------------------------------- trajectories


@dataclass
class TrajectoryRecord:
    kind: str
    seed: int | None
    config: dict
    steps: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    hessian_trace: list = field(default_factory=list)
    diverged: bool = False
    divergence_step: int | None = None

    def append(self, step, x, loss_value, grad_norm, trace, keep_iterate=True):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("step indices must increase")
        self.steps.append(int(step))
        self.iterates.append(np.array(x, dtype=float) if keep_iterate else None)
        self.loss.append(float(loss_value))
        self.grad_norm.append(float(grad_norm))
        self.hessian_trace.append(float(trace))

    def __len__(self):
        return len(self.steps)

    @property
    def final_iterate(self):
        return self.iterates[-1]

    def summary(self) -> dict:
        """Headline numbers; all set to None when the run diverged."""
        out = {"kind": self.kind, "seed": self.seed, "valid": not self.diverged,
               "diverged": self.diverged, "divergence_step": self.divergence_step,
               "n_records": len(self)}
        if self.diverged:
            out.update(final_loss=None, initial_trace=None, final_trace=None,
                       trace_ratio=None)
        else:
            t0, t1 = self.hessian_trace[0], self.hessian_trace[-1]
            out.update(final_loss=self.loss[-1], initial_trace=t0, final_trace=t1,
                       trace_ratio=t1 / t0 if t0 not in (0.0,) and math.isfinite(t0) else None)
        return out

    def header(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "config": self.config,
                "diverged": self.diverged, "divergence_step": self.divergence_step}

    def write(self, stem) -> tuple[str, str]:
        """Write ``stem.csv`` (one row per record) and ``stem.json`` (header)."""
        csv_path, json_path = f"{stem}.csv", f"{stem}.json"
        dim = next((x.size for x in self.iterates if x is not None), 0)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "grad_norm", "hessian_trace"]
                       + [f"x{i}" for i in range(dim)])
            for s, x, l, g, t in zip(self.steps, self.iterates, self.loss,
                                     self.grad_norm, self.hessian_trace):
                xs = [repr(float(v)) for v in x] if x is not None else [""] * dim
                w.writerow([s, repr(l), repr(g), repr(t)] + xs)
        with open(json_path, "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)
        return csv_path, json_path

    @classmethod
    def read(cls, stem) -> "TrajectoryRecord":
        with open(f"{stem}.json") as fh:
            head = json.load(fh)
        rec = cls(kind=head["kind"], seed=head["seed"], config=head["config"],
                  diverged=head["diverged"], divergence_step=head["divergence_step"])
        with open(f"{stem}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            xs = row[4:]
            x = np.array([float(v) for v in xs]) if xs and xs[0] != "" else None
            rec.steps.append(int(row[0]))
            rec.iterates.append(x)
            rec.loss.append(float(row[1]))
            rec.grad_norm.append(float(row[2]))
            rec.hessian_trace.append(float(row[3]))
        return rec


def _trace(loss, x, capable):
    if not capable:
        return float("nan")
    return float(loss.hessian_trace(x))


def run(kind: str, loss: LossModel, x0, steps: int, config: MPGDConfig, seed=0,
        record_every: int = 1, keep_iterates: bool = True,
        stop_on_divergence: bool = True) -> TrajectoryRecord:
    """Iterate one optimiser and record its trajectory.

    ``kind`` is one of ``gd``, ``gaussian``, ``mpgd`` or ``mpgd_sym``; ``mpgd``
    with ``config.variant == "symmetrized"`` is the same as ``mpgd_sym``.  The
    initial and final iterates are always recorded.  A non-finite loss or
    iterate sets the divergence flag; by default the run stops there.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if kind == "mpgd" and config.variant == "symmetrized":
        kind = "mpgd_sym"
    x = np.array(x0, dtype=float)
    dim = x.size
    capable = loss.has_hessian

    if kind == "gaussian":
        rng = make_rng(seed)
    elif kind == "mpgd":
        bank = PerturbationBank(config, dim, seed)
    elif kind == "mpgd_sym":
        pair = make_bank_pair(config, dim, seed)

    rec = TrajectoryRecord(kind=kind, seed=seed if isinstance(seed, int) else None,
                           config=config.to_dict())

    def record(k, x):
        g = loss.gradient(x)
        rec.append(k, x, loss.value(x), np.linalg.norm(g), _trace(loss, x, capable),
                   keep_iterates)

    record(0, x)
    # overflow is caught by the explicit finiteness check below
    with np.errstate(all="ignore"):
        for k in range(steps):
            on = config.perturbing(k)
            if kind == "gd":
                x = gd_step(x, loss, config.eta)
            elif kind == "gaussian":
                mu, sigma = (config.mu, config.sigma) if on else (0.0, 0.0)
                x = gaussian_pgd_step(x, loss, config.eta, mu, sigma, rng,
                                      config.gamma1, config.gamma2)
            elif kind == "mpgd":
                x, bank = mpgd_step(x, loss, config, bank, perturb=on)
            else:
                x, pair = mpgd_sym_step(x, loss, config, pair, perturb=on)

            bad = not np.all(np.isfinite(x))
            if not bad:
                bad = not math.isfinite(loss.value(x))
            if bad and not rec.diverged:
                rec.diverged, rec.divergence_step = True, k + 1
            if bad and stop_on_divergence:
                record(k + 1, x)
                break
            if (k + 1) % record_every == 0 or k + 1 == steps:
                record(k + 1, x)
    return rec
