"""Small-noise expansion of the expected MPGD loss and its Monte-Carlo check.

With mu = mu0 * eps and sigma = sigma0 * eps the iterate expands as
x_k = xbar_k + eps * phi_k + eps^2 * varphi_k + O(eps^3) around plain GD, and

    E R(x_k) = R(xbar_k) + eps^2 / 2 * (tr(C_k H(xbar_k)) - grad R(xbar_k) . lambda_k)
               + O(eps^3)

where C_k = E[phi_k phi_k^T].  ``config.mu``/``config.sigma`` are read as the
unscaled levels mu0/sigma0 throughout this module.

The observable correlations E[v(y_i) v(y_j)] have no closed form and are
estimated over independent chains.  They are kept indexed by absolute step
(i, j): chains start with chi = +1, so the sign process is not stationary
unless beta = 1, and a lag-only summary would blur that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .chaos import DEFAULT_BURN_IN, ThalerParams, chain_init, chain_next, observable_constants
from .losses import LossModel
from .optimizers import MPGDConfig

DEFAULT_MAX_LAG = 200


# ---------------------------------------------------------------- correlations


@dataclass
class CorrelationEstimate:
    """E[v(y_i) v(y_j)] for 0 <= i, j < k, with entrywise standard errors.

    ``lag`` and ``lag_stderr`` are the diagonal averages (a stationary view)
    for lags 0..max_lag.
    """

    matrix: np.ndarray
    stderr: np.ndarray
    max_lag: int
    n_chains: int
    lag: np.ndarray = field(init=False)
    lag_stderr: np.ndarray = field(init=False)

    def __post_init__(self):
        k = self.matrix.shape[0]
        L = min(self.max_lag, k - 1)
        self.lag = np.array([np.diagonal(self.matrix, h).mean() for h in range(L + 1)])
        # diagonals are correlated, so the mean standard error is a conservative proxy
        self.lag_stderr = np.array([np.diagonal(self.stderr, h).mean() for h in range(L + 1)])

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def truncated(self, k: int | None = None) -> np.ndarray:
        """The (i, j) matrix up to step k with entries beyond max_lag set to zero."""
        k = self.k if k is None else k
        if k > self.k:
            raise ValueError(f"correlations available for {self.k} steps, {k} requested")
        M = self.matrix[:k, :k].copy()
        i, j = np.indices(M.shape)
        M[np.abs(i - j) > self.max_lag] = 0.0
        return M


def correlations_from_emissions(V, max_lag: int = DEFAULT_MAX_LAG) -> CorrelationEstimate:
    """Correlation estimate from emissions ``V`` of shape (k, n_chains).

    Extra trailing axes (independent coordinate chains) are pooled.
    """
    V = np.asarray(V, dtype=float)
    V = V.reshape(V.shape[0], -1)
    n = V.shape[1]
    M = V @ V.T / n
    sq = (V**2) @ (V**2).T / n
    se = np.sqrt(np.maximum(sq - M**2, 0.0) / max(n - 1, 1))
    return CorrelationEstimate(matrix=M, stderr=se, max_lag=max_lag, n_chains=n)


def sample_emissions(params: ThalerParams, k: int, n_chains: int, seed,
                     burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    """Emissions of ``n_chains`` independent chains for steps 0..k-1, shape (k, n)."""
    consts = observable_constants(params)
    state = chain_init(seed, params, burn_in, n_chains)
    out = np.empty((k, n_chains))
    for j in range(k):
        _, out[j] = chain_next(state, consts)
    return out


def estimate_observable_correlations(params: ThalerParams, max_lag: int = DEFAULT_MAX_LAG,
                                     n_chains: int = 1000, k: int | None = None,
                                     seed=0, burn_in: int = DEFAULT_BURN_IN
                                     ) -> CorrelationEstimate:
    """Monte-Carlo E[v^(i) v^(j)] over ``n_chains`` independent chains.

    ``k`` (default ``max_lag + 1``) is the number of steps covered.
    """
    if n_chains < 100:
        raise ValueError("n_chains must be at least 100")
    k = max_lag + 1 if k is None else k
    return correlations_from_emissions(sample_emissions(params, k, n_chains, seed, burn_in),
                                       max_lag)


# ---------------------------------------------------------------- expansion


def unperturbed_trajectory(loss: LossModel, x0, m: float, k: int) -> list:
    x = np.array(x0, dtype=float)
    out = [x]
    for _ in range(k):
        x = x - loss.gradient(x) / m
        out.append(x)
    return out


def jacobians(loss: LossModel, xbar, m: float) -> list:
    """J_j = I - H(xbar_j)/m for each iterate but the last."""
    d = np.asarray(xbar[0]).size
    return [np.eye(d) - loss.hessian(x) / m for x in xbar[:-1]]


def phi_product(jacobians, i: int, k: int) -> np.ndarray:
    """Phi_i = J_{k-1} J_{k-2} ... J_i, the identity when i == k."""
    if not 1 <= i <= k or k > len(jacobians):
        raise IndexError(f"need 1 <= i <= k <= {len(jacobians)}, got i={i}, k={k}")
    d = jacobians[0].shape[0]
    P = np.eye(d)
    for j in range(i, k):
        P = jacobians[j] @ P
    return P


def phi_products_all(jacobians, k: int) -> np.ndarray:
    """Array of shape (k, d, d) whose row i-1 is Phi_i at horizon k."""
    d = jacobians[0].shape[0] if jacobians else 0
    P = np.empty((k, d, d))
    if k == 0:
        return P
    P[k - 1] = np.eye(d)
    for i in range(k - 1, 0, -1):
        P[i - 1] = P[i] @ jacobians[i]
    return P


def _channel_weights(config: MPGDConfig, m: float):
    return config.mu * m ** (-config.gamma1), config.sigma * m ** (-config.gamma2)


def covariance_Ck(xbar, jac, k: int, corr1, corr2, config: MPGDConfig) -> np.ndarray:
    """C_k = E[phi_k phi_k^T] from the closed-form double sum.

    ``corr1``/``corr2`` are (i, j) correlation matrices (or estimates) of the
    emissions as they enter the recursion, covering at least k steps; for the
    symmetrised variant that is the correlation of the chain difference,
    twice the single-chain value.  Coordinate chains of a channel
    are independent copies, so the (r, s) coordinate correlation is diagonal;
    with shared chains it is the all-ones pattern.  A channel-2 array of shape
    (k, k, d, d) gives E[v2^r(y_i) v2^s(y_j)] in full instead.  The multiplicative weight
    uses xbar in place of the perturbed iterate, which is the same at this
    order.
    """
    d = np.asarray(xbar[0]).size
    if k == 0:
        return np.zeros((d, d))
    rho1 = _as_matrix(corr1, k)
    rho2 = _as_matrix(corr2, k)
    m = 1.0 / config.eta
    s1, s2 = _channel_weights(config, m)
    P = phi_products_all(jac, k)
    X = np.asarray(xbar[:k], dtype=float)
    C = np.zeros((d, d))
    if s1 != 0.0:
        if config.variant == "scalar_mult" or not config.coordinate_chains:
            a = np.einsum("ipr,ir->ip", P, X)
            C += s1**2 * a.T @ rho1 @ a
        else:
            W = P * X[:, None, :]
            C += s1**2 * np.einsum("ipr,ij,jqr->pq", W, rho1, W)
    if s2 != 0.0:
        if rho2.ndim == 4:
            C += s2**2 * np.einsum("ipr,ijrs,jqs->pq", P, rho2, P)
        elif config.coordinate_chains:
            C += s2**2 * np.einsum("ipr,ij,jqr->pq", P, rho2, P)
        else:
            b = P.sum(axis=2)
            C += s2**2 * b.T @ rho2 @ b
    return 0.5 * (C + C.T)


def _as_matrix(corr, k):
    if corr is None:
        return np.zeros((k, k))
    if isinstance(corr, CorrelationEstimate):
        return corr.truncated(k)
    M = np.asarray(corr, dtype=float)
    if M.shape[0] < k or M.shape[1] < k:
        raise ValueError(f"correlations cover {M.shape[0]} steps, need {k}")
    return M[:k, :k]


def coordinate_correlations(V, max_lag: int = DEFAULT_MAX_LAG) -> np.ndarray:
    """Full E[v^r(y_i) v^s(y_j)] from emissions of shape (k, n, d); shape (k, k, d, d)."""
    V = np.asarray(V, dtype=float)
    T = np.einsum("inr,jns->ijrs", V, V) / V.shape[1]
    i, j = np.indices(T.shape[:2])
    T[np.abs(i - j) > max_lag] = 0.0
    return T


def lambda_k(xbar, jac, C_list, loss: LossModel, m: float) -> np.ndarray:
    """[lambda_k]^l = (1/m) sum_i sum_j [Phi_i]^{lj} tr(C_{i-1} Hess(grad_j R)(xbar_{i-1}))."""
    k = len(C_list) - 1
    d = np.asarray(xbar[0]).size
    lam = np.zeros(d)
    if k == 0:
        return lam
    P = phi_products_all(jac, k)
    for i in range(1, k + 1):
        C = C_list[i - 1]
        t = np.array([np.sum(C * loss.hessian_of_gradient_component(xbar[i - 1], j))
                      for j in range(d)])
        lam += P[i - 1] @ t
    return lam / m


def memory_term(xbar, jac, k: int, corr1, config: MPGDConfig) -> np.ndarray:
    """E[varphi_k] contribution from the multiplicative channel's own memory.

    The derivative of the multiplicative perturbation is -s1 v1(y_{i-1}), and
    phi_{i-1} carries earlier emissions of the same chain; their correlation
    leaves -s1 * sum_i Phi_i E[v1_{i-1} phi_{i-1}] in E[varphi_k].  The
    closed-form expansion treats this product as mean zero.  Returned for the
    scalar multiplicative channel only.
    """
    d = np.asarray(xbar[0]).size
    if k == 0 or config.mu == 0.0:
        return np.zeros(d)
    if config.variant != "scalar_mult":
        raise NotImplementedError("memory term is implemented for scalar_mult only")
    m = 1.0 / config.eta
    s1, _ = _channel_weights(config, m)
    rho1 = _as_matrix(corr1, k)
    X = np.asarray(xbar[:k], dtype=float)
    out = np.zeros(d)
    Pk = phi_products_all(jac, k)
    for i in range(2, k + 1):
        Pi = phi_products_all(jac, i - 1)
        # E[v1_{i-1} phi_{i-1}] = -s1 * sum_{j<i} Phi_j^{(i-1)} xbar_{j-1} rho(i-1, j-1)
        e = -s1 * np.einsum("jpr,jr,j->p", Pi, X[: i - 1], rho1[i - 1, : i - 1])
        out += Pk[i - 1] @ e
    return -s1 * out


@dataclass
class ExpansionState:
    """Everything the expansion needs at horizon k, built once."""

    xbar: list
    jacobians: list
    phi_products: np.ndarray
    corr1: np.ndarray
    corr2: np.ndarray
    C: list
    lambda_k: np.ndarray
    m: float
    config: MPGDConfig
    memory: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.xbar) - 1

    @property
    def C_k(self) -> np.ndarray:
        return self.C[-1]


def build_expansion(loss: LossModel, x0, config: MPGDConfig, k: int, corr1, corr2,
                    with_memory: bool = False) -> ExpansionState:
    m = 1.0 / config.eta
    xbar = unperturbed_trajectory(loss, x0, m, k)
    jac = jacobians(loss, xbar, m)
    C = [covariance_Ck(xbar, jac[:n], n, corr1, corr2, config) for n in range(k + 1)]
    if not np.all(np.isfinite(C[-1])):
        raise FloatingPointError("non-finite covariance")
    lam = lambda_k(xbar, jac, C, loss, m)
    mem = memory_term(xbar, jac, k, corr1, config) if with_memory else None
    return ExpansionState(xbar=xbar, jacobians=jac, phi_products=phi_products_all(jac, k),
                          corr1=_as_matrix(corr1, k), corr2=_as_matrix(corr2, k), C=C,
                          lambda_k=lam, m=m, config=config, memory=mem)


def predicted_expected_loss(state: ExpansionState, loss: LossModel, eps: float,
                            include_memory: bool = False) -> float:
    """R(xbar_k) + eps^2/2 (tr(C_k H) - grad R . lambda_k).

    ``include_memory`` adds eps^2 grad R . memory_term, the piece the closed
    form omits (see :func:`memory_term`).
    """
    x = state.xbar[-1]
    base = float(loss.value(x))
    if eps == 0.0:
        return base
    g = loss.gradient(x)
    H = loss.hessian(x)
    second = float(np.sum(state.C_k * H)) - float(g @ state.lambda_k)
    out = base + 0.5 * eps**2 * second
    if include_memory:
        if state.memory is None:
            raise ValueError("state was built without the memory term")
        out += eps**2 * float(g @ state.memory)
    return out


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class Emissions:
    """Pre-drawn channel emissions shared across eps values.

    ``v1`` has shape (k, n_reps, r1) and ``v2`` (k, n_reps, r2), with r = 1
    for a shared or scalar channel and r = d for per-coordinate chains.  For
    the symmetrised variant each array already holds the chain difference.
    """

    v1: np.ndarray
    v2: np.ndarray

    @property
    def n_reps(self) -> int:
        return self.v1.shape[1]

    @property
    def k(self) -> int:
        return self.v1.shape[0]


def draw_emissions(config: MPGDConfig, dim: int, k: int, n_reps: int, seed=0) -> Emissions:
    """Channel emissions for ``n_reps`` independent replicas of the MPGD noise."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    r1 = 1 if (config.variant == "scalar_mult" or not config.coordinate_chains) else dim
    r2 = dim if config.coordinate_chains else 1
    copies = 2 if config.variant == "symmetrized" else 1
    seeds = ss.spawn(2 * copies)
    arrays = []
    for c, (r, p) in enumerate([(r1, config.channel_params(1)), (r2, config.channel_params(2))]):
        parts = [sample_emissions(p, k, n_reps * r, seeds[c * copies + j], config.burn_in)
                 for j in range(copies)]
        v = parts[0] - parts[1] if copies == 2 else parts[0]
        arrays.append(v.reshape(k, n_reps, r))
    return Emissions(*arrays)


def mpgd_batch(loss: LossModel, x0, config: MPGDConfig, eps: float, em: Emissions):
    """Run the MPGD recursion for every replica at once; returns (n_reps, d) iterates.

    Non-finite replicas are returned as NaN rows.
    """
    m = 1.0 / config.eta
    s1, s2 = _channel_weights(config, m)
    x = np.tile(np.asarray(x0, dtype=float), (em.n_reps, 1))
    with np.errstate(all="ignore"):
        for j in range(em.k):
            nxt = x - config.eta * loss.gradient(x)
            if eps != 0.0 and config.perturbing(j):
                if s1 != 0.0:
                    nxt = nxt - eps * s1 * em.v1[j] * x
                if s2 != 0.0:
                    nxt = nxt + eps * s2 * em.v2[j]
            x = nxt
    return x


def simulate_first_order(xbar, jac, config: MPGDConfig, em: Emissions) -> np.ndarray:
    """phi_k for every replica from phi_{j+1} = J_j phi_j + g_j (g at xbar_j)."""
    k = em.k
    m = 1.0 / config.eta
    s1, s2 = _channel_weights(config, m)
    d = np.asarray(xbar[0]).size
    phi = np.zeros((em.n_reps, d))
    for j in range(k):
        g = -s1 * em.v1[j] * xbar[j] + s2 * em.v2[j]
        phi = phi @ jac[j].T + g
    return phi


def monte_carlo_expected_loss(loss: LossModel, x0, config: MPGDConfig, eps: float, k: int,
                              n_reps: int, seed=0, emissions: Emissions | None = None):
    """Sample mean and standard error of R(x_k) over independent replicas.

    Returns ``(mean, stderr, n_diverged)``; diverged replicas are excluded
    from the statistics and counted.
    """
    if n_reps < 1000:
        raise ValueError("n_reps must be at least 1000")
    x0 = np.asarray(x0, dtype=float)
    em = emissions or draw_emissions(config, x0.size, k, n_reps, seed)
    if eps == 0.0:
        m = 1.0 / config.eta
        return float(loss.value(unperturbed_trajectory(loss, x0, m, k)[-1])), 0.0, 0
    vals = np.asarray(loss.value(mpgd_batch(loss, x0, config, eps, em)))
    ok = np.isfinite(vals)
    good = vals[ok]
    if good.size < 2:
        raise FloatingPointError("all replicas diverged")
    return float(good.mean()), float(good.std(ddof=1) / math.sqrt(good.size)), int((~ok).sum())


# ---------------------------------------------------------------- order check


@dataclass
class OrderReport:
    eps: list
    residuals: list
    stderrs: list
    used: list
    slope: float | None
    verdict: str
    control_residuals: list
    control_stderrs: list
    control_slope: float | None
    threshold: float
    n_reps: int
    k: int

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def fit_slope(eps, residuals, stderrs, noise_factor: float = 2.0):
    """Least-squares slope of log|residual| on log eps over signal-dominated points."""
    eps, r, se = (np.asarray(a, dtype=float) for a in (eps, residuals, stderrs))
    used = np.abs(r) >= noise_factor * se
    if used.sum() < 2:
        return None, used
    slope = np.polyfit(np.log(eps[used]), np.log(np.abs(r[used])), 1)[0]
    return float(slope), used


def order_check(loss: LossModel, x0, config: MPGDConfig, eps_grid, k: int, n_reps: int,
                seed=0, max_lag: int = DEFAULT_MAX_LAG, threshold: float = 2.5,
                include_memory: bool = False) -> OrderReport:
    """Check that MC mean minus the eps^2 prediction shrinks like eps^3.

    Common random numbers: the same chain emissions drive every eps, and the
    correlations inside the prediction are estimated from those same
    emissions.  The prediction is linear in the correlation estimate, so it
    splits into per-replica terms and the residual's standard error comes
    from the per-replica differences.  The zeroth-order prediction R(xbar_k)
    is reported alongside as a negative control.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_grid.size < 4:
        raise ValueError("eps_grid needs at least 4 points")
    if np.any(eps_grid <= 0):
        raise ValueError("eps values must be positive")
    ratios = eps_grid[1:] / eps_grid[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ValueError("eps_grid must be geometric")
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    m = 1.0 / config.eta
    em = draw_emissions(config, d, k, n_reps, seed)

    xbar = unperturbed_trajectory(loss, x0, m, k)
    jac = jacobians(loss, xbar, m)
    base = float(loss.value(xbar[-1]))

    # per-replica eps^2 coefficient: the prediction with that replica's own
    # emission outer products in place of the correlations
    q = _per_replica_second_order(loss, xbar, jac, config, em, max_lag, include_memory)

    res, ses, cres, cses = [], [], [], []
    for eps in eps_grid:
        vals = np.asarray(loss.value(mpgd_batch(loss, x0, config, eps, em)))
        ok = np.isfinite(vals)
        diff = vals[ok] - base - eps**2 * q[ok]
        res.append(float(diff.mean()))
        ses.append(float(diff.std(ddof=1) / math.sqrt(diff.size)))
        c = vals[ok] - base
        cres.append(float(c.mean()))
        cses.append(float(c.std(ddof=1) / math.sqrt(c.size)))
    slope, used = fit_slope(eps_grid, res, ses)
    cslope, _ = fit_slope(eps_grid, cres, cses)
    if slope is None:
        verdict = "inconclusive"
    else:
        verdict = "pass" if slope >= threshold else "fail"
    return OrderReport(eps=eps_grid.tolist(), residuals=res, stderrs=ses, used=used.tolist(),
                       slope=slope, verdict=verdict, control_residuals=cres,
                       control_stderrs=cses, control_slope=cslope, threshold=threshold,
                       n_reps=n_reps, k=k)


def _per_replica_second_order(loss, xbar, jac, config, em: Emissions, max_lag,
                              include_memory):
    """q_r with mean over r equal to (1/2)(tr(C_k H) - g.lambda_k) [+ g.memory].

    Uses the emission products of replica r as its correlation matrix; the
    full expression is linear in those matrices, so averaging q_r reproduces
    the prediction built from the ensemble correlation estimate.
    """
    k = em.k
    n = em.n_reps
    x = xbar[-1]
    g = loss.gradient(x)
    H = loss.hessian(x)
    need_lambda = (loss.has_third_derivatives and not loss.third_derivatives_vanish
                   and np.any(g != 0.0))
    memory = include_memory and np.any(g != 0.0)
    if memory and not need_lambda:
        # lambda_k = 0 and the memory term is linear in each replica's products
        base = _per_replica_second_order(loss, xbar, jac, config, em, max_lag, False)
        return base + _memory_per_replica(xbar, jac, config, em.v1, max_lag) @ g
    if need_lambda or memory:
        # general path: one expansion per replica
        q = np.empty(n)
        for r in range(n):
            c1 = _outer(em.v1[:, r, :], max_lag)
            c2 = _outer2(em.v2[:, r, :], max_lag)
            st = build_expansion(loss, xbar[0], config, k, c1, c2, with_memory=include_memory)
            q[r] = (predicted_expected_loss(st, loss, 1.0, include_memory) - loss.value(x))
        return q
    if max_lag < k - 1:
        q = np.empty(n)
        for r in range(n):
            C = covariance_Ck(xbar, jac, k, _outer(em.v1[:, r, :], max_lag),
                              _outer2(em.v2[:, r, :], max_lag), config)
            q[r] = 0.5 * float(np.sum(C * H))
        return q
    return _trace_form(xbar, jac, H, config, em)


def _memory_per_replica(xbar, jac, config, v1, max_lag):
    """:func:`memory_term` with each replica's own v1 products, shape (n, d)."""
    if config.variant != "scalar_mult":
        raise NotImplementedError("memory term is implemented for scalar_mult only")
    k, n, _ = v1.shape
    d = np.asarray(xbar[0]).size
    out = np.zeros((n, d))
    if k == 0 or config.mu == 0.0:
        return out
    s1, _ = _channel_weights(config, 1.0 / config.eta)
    V = v1[:, :, 0]
    X = np.asarray(xbar[:k], dtype=float)
    Pk = phi_products_all(jac, k)
    for i in range(2, k + 1):
        Pi = phi_products_all(jac, i - 1)
        j = np.arange(i - 1)
        keep = (i - 1 - j) <= max_lag
        a = np.einsum("jpr,jr->jp", Pi[keep], X[: i - 1][keep])
        inner = V[i - 1][:, None] * (V[: i - 1][keep].T @ a)
        out += inner @ Pk[i - 1].T
    return s1**2 * out


def _outer(v, max_lag):
    """(k, r) emissions of one replica -> pooled (k, k) product matrix."""
    M = v @ v.T / v.shape[1]
    i, j = np.indices(M.shape)
    M[np.abs(i - j) > max_lag] = 0.0
    return M


def _outer2(v, max_lag):
    """(k, d) channel-2 emissions of one replica -> (k, k, d, d) products."""
    if v.shape[1] == 1:
        return _outer(v, max_lag)
    return coordinate_correlations(v[:, None, :], max_lag)


def _trace_form(xbar, jac, H, config, em: Emissions):
    """Per-replica (1/2) tr(C_k^{(r)} H) for quadratic-form-only predictions.

    For a scalar or shared channel the replica's C is exactly f f^T.  The
    additive channel uses its full (r, s) coordinate correlation, so it too
    contributes f2 f2^T.  A per-coordinate multiplicative channel has a scalar
    correlation in the closed form, so only r == s chain pairs enter:
    sum_r f_(r) f_(r)^T with f_(r) the contribution of chain r alone.
    """
    k = em.k
    s1, s2 = _channel_weights(config, 1.0 / config.eta)
    P = phi_products_all(jac, k)
    X = np.asarray(xbar[:k], dtype=float)
    q = np.zeros(em.n_reps)
    scalar1 = config.variant == "scalar_mult" or not config.coordinate_chains
    if s1 != 0.0:
        if scalar1:
            f1 = -s1 * np.einsum("ipr,ir,in->np", P, X, em.v1[:, :, 0])
            q += np.einsum("np,pq,nq->n", f1, H, f1)
        else:
            g = -s1 * np.einsum("ipr,ir,inr->nrp", P, X, em.v1)  # per chain r
            q += np.einsum("nrp,pq,nrq->n", g, H, g)
    if s2 != 0.0:
        # full (r, s) coordinate correlation, as in the additive theta term
        if config.coordinate_chains:
            f2 = s2 * np.einsum("ipr,inr->np", P, em.v2)
        else:
            f2 = s2 * np.einsum("ip,in->np", P.sum(axis=2), em.v2[:, :, 0])
        q += np.einsum("np,pq,nq->n", f2, H, f2)
    return 0.5 * q
