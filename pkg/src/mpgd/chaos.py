"""Deterministic heavy-tailed perturbations from the Thaler map.

The map ``T(y) = (y^(1-g) + (1+y)^(1-g) - 1)^(1/(1-g)) mod 1`` has a neutral
fixed point at 0.  Iterates linger near it for long laminar stretches, and the
piecewise-constant observable built here turns those stretches into jumps whose
rescaled Birkhoff sums converge to an alpha-stable law with ``alpha = 1/g``.

Chains are vectorised: a :class:`ChainState` holds ``n`` independent chains
that share one counter-based (Philox) stream for the sign draws.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

YSTAR_TOL = 1e-12
YSTAR_MAXITER = 200
UNDERFLOW_GUARD = 1e-300
DEFAULT_BURN_IN = 10_000
SIGN_RULES = ("product", "excursion")


@dataclass(frozen=True)
class ThalerParams:
    """Stability/skewness pair for one perturbation channel.

    ``gamma`` is the map exponent and equals ``1/alpha``.  ``sign_rule``
    selects how the sign accumulator reacts to a visit of (y*, 1]:
    ``"product"`` multiplies it by a fresh sign (chi <- chi * delta), while
    ``"excursion"`` replaces it (chi <- delta), giving each laminar stretch an
    independent sign.  Under ``"product"`` the signs of successive stretches
    form a symmetric Markov chain, so for |beta| < 1 the limit law is
    symmetric whatever beta is; ``"excursion"`` keeps the skewness beta.
    """

    gamma: float
    beta: float = 0.0
    sign_rule: str = "product"

    def __post_init__(self):
        if not 0.5 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (1/2, 1), got {self.gamma}")
        if not -1.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [-1, 1], got {self.beta}")
        if self.sign_rule not in SIGN_RULES:
            raise ValueError(f"sign_rule must be one of {SIGN_RULES}")

    @property
    def alpha(self) -> float:
        return 1.0 / self.gamma

    @classmethod
    def from_alpha(cls, alpha: float, beta: float = 0.0) -> "ThalerParams":
        return cls(gamma=1.0 / alpha, beta=beta)


@dataclass(frozen=True)
class ObservableConstants:
    y_star: float
    d_alpha: float
    v_low: float
    v_high: float
    gamma: float

    def value(self, y):
        """Raw (unsigned) observable v(y); the tie y == y* goes to the lower branch."""
        return np.where(np.asarray(y) <= self.y_star, self.v_low, self.v_high)

    @property
    def second_moment(self) -> float:
        """E[v^2] under the invariant measure."""
        p_low = 2.0 ** (self.gamma - 1.0)
        return p_low * self.v_low**2 + (1.0 - p_low) * self.v_high**2


@dataclass
class ChainState:
    """A batch of Thaler chains.

    ``y`` and ``chi`` are arrays of shape ``(n,)``.  ``rng`` draws the signs
    delta_k; it is a :class:`numpy.random.Generator` over Philox.
    """

    y: np.ndarray
    chi: np.ndarray
    step_index: int
    rng: np.random.Generator
    params: ThalerParams = field(repr=False)

    @property
    def n_chains(self) -> int:
        return self.y.shape[0]

    def copy(self) -> "ChainState":
        rng = np.random.Generator(np.random.Philox())
        rng.bit_generator.state = self.rng.bit_generator.state
        return replace(self, y=self.y.copy(), chi=self.chi.copy(), rng=rng)


def _check_gamma(gamma, lo_open=False):
    ok = (0.0 < gamma < 1.0) if lo_open else (0.0 <= gamma < 1.0)
    if not ok:
        raise ValueError(f"gamma outside its domain: {gamma}")


def thaler_step(y, gamma: float):
    """One iterate of the Thaler map.  Works on scalars and arrays."""
    _check_gamma(gamma)
    y = np.asarray(y, dtype=float)
    s = 1.0 - gamma
    # (1+y)^s - 1 via expm1/log1p keeps the laminar increments accurate
    z = y**s + np.expm1(s * np.log1p(y))
    out = np.mod(z ** (1.0 / s), 1.0)
    out = np.where(y < UNDERFLOW_GUARD, y, out)
    return out if out.ndim else float(out)


def solve_ystar(gamma: float) -> float:
    """Branch point y* solving y^(1-g) + (1+y)^(1-g) = 2 (bisection)."""
    _check_gamma(gamma)
    s = 1.0 - gamma

    def f(y):
        return y**s + (1.0 + y) ** s - 2.0

    lo, hi = 0.0, 1.0
    for _ in range(YSTAR_MAXITER):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < YSTAR_TOL * 1e-3:
            break
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


def invariant_density(y, gamma: float):
    """h(y) = (1-g)/2^(1-g) * (y^-g + (1+y)^-g); +inf at y = 0 when g > 0."""
    _check_gamma(gamma)
    y = np.asarray(y, dtype=float)
    s = 1.0 - gamma
    with np.errstate(divide="ignore"):
        out = s / 2.0**s * (y ** (-gamma) + (1.0 + y) ** (-gamma))
    return out if out.ndim else float(out)


def invariant_cdf(y, gamma: float):
    """nu([0, y]) from the closed-form antiderivative of h."""
    _check_gamma(gamma)
    y = np.asarray(y, dtype=float)
    s = 1.0 - gamma
    out = (y**s + (1.0 + y) ** s - 1.0) / 2.0**s
    return out if out.ndim else float(out)


def d_alpha(alpha: float) -> float:
    """Normalising constant of the observable.

    Gamma(1-alpha) has a negative argument; it is evaluated through the
    reflection formula so only Gamma on the positive axis is needed.
    """
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie strictly inside (1, 2), got {alpha}")
    gamma = 1.0 / alpha
    gamma_neg = math.pi / (math.sin(math.pi * (1.0 - alpha)) * math.gamma(alpha))
    num = alpha**alpha * (1.0 - gamma) * gamma_neg * math.cos(alpha * math.pi / 2.0)
    return num / (2.0 ** (1.0 - gamma) - 1.0)


def observable_constants(params: ThalerParams) -> ObservableConstants:
    g = params.gamma
    da = d_alpha(params.alpha)
    v_low = da ** (-g) * (1.0 - 2.0 ** (g - 1.0)) ** (-g)
    v_high = v_low / (1.0 - 2.0 ** (1.0 - g))
    return ObservableConstants(
        y_star=solve_ystar(g), d_alpha=da, v_low=v_low, v_high=v_high, gamma=g
    )


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; ``seed`` may be an int or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def burn(y, gamma: float, n_steps: int):
    for _ in range(n_steps):
        y = thaler_step(y, gamma)
    return y


def chain_init(seed, params: ThalerParams, burn_in: int = DEFAULT_BURN_IN,
               n_chains: int = 1) -> ChainState:
    """Uniform start pushed through ``burn_in`` map iterations.

    The sign accumulator starts at +1 (empty product) and burn-in does not
    touch it.
    """
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    rng = make_rng(seed)
    y0 = rng.random(n_chains)
    y = burn(y0, params.gamma, burn_in)
    return ChainState(
        y=np.asarray(y, dtype=float).reshape(n_chains),
        chi=np.ones(n_chains, dtype=np.int8),
        step_index=0,
        rng=rng,
        params=params,
    )


def chain_next(state: ChainState, constants: ObservableConstants):
    """Emit v^(k) = chi * v(y_k), then update chi, then advance y.

    Mutates and returns ``state`` together with the emitted values.
    """
    low = state.y <= constants.y_star
    emitted = state.chi * np.where(low, constants.v_low, constants.v_high)
    beta = state.params.beta
    if beta != 1.0:
        # one uniform per chain per step keeps the stream position data-independent
        u = state.rng.random(state.n_chains)
        delta = np.where(u < 0.5 * (1.0 + beta), 1, -1).astype(np.int8)
        flipped = delta if state.params.sign_rule == "excursion" else state.chi * delta
        state.chi = np.where(low, state.chi, flipped).astype(np.int8)
    state.y = thaler_step(state.y, constants.gamma)
    state.step_index += 1
    return state, emitted


def observable_stream(state: ChainState, constants: ObservableConstants, n_steps: int,
                      record_y: bool = False):
    """Advance ``n_steps`` and return emissions of shape ``(n_steps, n_chains)``.

    With ``record_y`` also returns the pre-step states and sign accumulators.
    """
    out = np.empty((n_steps, state.n_chains))
    ys = chis = None
    if record_y:
        ys = np.empty_like(out)
        chis = np.empty((n_steps, state.n_chains), dtype=np.int8)
    for k in range(n_steps):
        if record_y:
            ys[k] = state.y
            chis[k] = state.chi
        _, out[k] = chain_next(state, constants)
    if record_y:
        return out, ys, chis
    return out


def birkhoff_sums(seed, params: ThalerParams, k: int, n_replicas: int,
                  burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    """k^-g * sum_{j<k} v^(j) for ``n_replicas`` independent chains."""
    if k < 1:
        raise ValueError("k must be >= 1")
    consts = observable_constants(params)
    state = chain_init(seed, params, burn_in, n_chains=n_replicas)
    total = np.zeros(n_replicas)
    for _ in range(k):
        _, v = chain_next(state, consts)
        total += v
    return total * k ** (-params.gamma)


def birkhoff_sum(seed, params: ThalerParams, k: int,
                 burn_in: int = DEFAULT_BURN_IN) -> float:
    return float(birkhoff_sums(seed, params, k, 1, burn_in)[0])


def write_stream_csv(path, y: np.ndarray, chi: np.ndarray, v: np.ndarray,
                     chain: int = 0) -> None:
    """Write one chain as CSV columns step_index, y, chi, v_value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step_index", "y", "chi", "v_value"])
        for k in range(v.shape[0]):
            w.writerow([k, repr(float(y[k, chain])), int(chi[k, chain]),
                        repr(float(v[k, chain]))])


def read_stream_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows: Iterable[dict] = list(csv.DictReader(fh))
    return {
        "step_index": np.array([int(r["step_index"]) for r in rows]),
        "y": np.array([float(r["y"]) for r in rows]),
        "chi": np.array([int(r["chi"]) for r in rows]),
        "v_value": np.array([float(r["v_value"]) for r in rows]),
    }
