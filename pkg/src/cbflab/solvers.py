"""Classical coordinated-beamforming solvers and the structured beamformer.

The central object is the leakage-regularized beamformer direction

    w_bar[n, k]  proportional to  (sum_{m,j} alpha[m, j] * h[n,m,j] h[n,m,j]^H
                                   + mu_n * I)^{-1} h[n, n, k],

which every BS can evaluate from local CSI alone once the leakage weights
``alpha`` (one per user in the network), the noise-control scalar ``mu`` and
a power split are known.  The iterative weighted-MMSE solver produces exactly
this shape at every step with alpha[m, j] = v[m, j] * |u[m, j]|^2, and the
classic max-SLNR and MRT beamformers are the special cases alpha == 1 with
mu equal to the noise power, and alpha == 0, respectively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .network import (
    POWER_SLACK,
    BeamformerSet,
    compute_metrics,
    sum_rate,
)

# Rank cutoff, relative to the largest eigenvalue, below which a leakage
# matrix eigenmode counts as null space in the pseudo-inverse branch.
_RANK_RCOND = 1e-12


@dataclass(frozen=True)
class StructuredParams:
    """Parameters that pin down one BS's beamformers through the structure.

    Attributes:
        alpha: (N, K) nonnegative leakage weights, one per user anywhere in
            the network.
        mu: positive noise-control regularizer.
        q: (K,) per-user power ratios in (0, 1], summing to 1.
        q_total: fraction of the power budget actually spent, in (0, 1].
    """

    alpha: np.ndarray
    mu: float
    q: np.ndarray
    q_total: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "q", q)
        if np.any(alpha < 0):
            raise ValueError("leakage weights must be nonnegative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if np.any(q <= 0) or np.any(q > 1):
            raise ValueError("power ratios must lie in (0, 1]")
        if abs(q.sum() - 1.0) > 1e-9:
            raise ValueError(f"power ratios sum to {q.sum()!r}, expected 1")
        if not 0 < self.q_total <= 1:
            raise ValueError("q_total must lie in (0, 1]")


@dataclass(frozen=True)
class WmmseState:
    """Converged solver state.

    ``u``, ``v`` and ``mu`` are the values that produced the returned
    beamformers, so alpha = v * |u|^2 recovers every direction through the
    structured form.  ``final_v`` re-evaluates the per-user weights at the
    returned beamformers; its log2-sum equals the achieved sum rate.

    ``objective_history`` records sum(v) after every weight refresh (the
    quantity the stop rule watches).  ``rate_history`` records sum(log2 v),
    the weighted sum rate: this is the quantity the block-coordinate updates
    provably never decrease (up to the bisection tolerance), whereas sum(v)
    itself can dip while the rate still climbs.
    """

    beams: BeamformerSet
    u: np.ndarray
    v: np.ndarray
    final_v: np.ndarray
    mu: np.ndarray
    iterations: int
    objective_history: np.ndarray
    rate_history: np.ndarray
    truncated: bool


def _leakage_matrix(local_h, alpha):
    """sum_{m,j} alpha[m, j] * h[m, j] h[m, j]^H for one BS's local CSI."""
    flat_h = local_h.reshape(-1, local_h.shape[-1])
    flat_a = np.asarray(alpha, dtype=float).reshape(-1)
    return np.einsum("x,xi,xl->il", flat_a, flat_h, flat_h.conj())


def solve_leakage_system(b0, targets, mu):
    """Solve (b0 + mu*I) x_k = c_k for each target row.

    Uses a Cholesky factorization of the Hermitian positive definite shifted
    system, falling back to an eigenvalue pseudo-inverse when the matrix is
    singular (only possible at mu == 0).
    """
    m = b0.shape[0]
    shifted = b0 + mu * np.eye(m)
    targets = np.atleast_2d(targets)
    try:
        factor = scipy.linalg.cho_factor(shifted, check_finite=False)
        return scipy.linalg.cho_solve(factor, targets.T, check_finite=False).T
    except scipy.linalg.LinAlgError:
        lam, q = np.linalg.eigh(shifted)
        cutoff = _RANK_RCOND * max(lam.max(), 0.0)
        keep = lam > cutoff
        if not np.any(keep):
            raise ArithmeticError(
                "leakage matrix is singular; use mu > 0 to regularize"
            ) from None
        proj = q.conj().T @ targets.T  # (M, K)
        proj[~keep] = 0.0
        proj[keep] /= lam[keep, None]
        return (q @ proj).T


def bisect_mu(b0, targets, p_max, power_tol=1e-8, max_iter=200):
    """Power-constraint multiplier for the shifted leakage system.

    Finds mu >= 0 such that sum_k ||(b0 + mu*I)^{-1} c_k||^2 meets the power
    budget: returns 0 when the unconstrained (pseudo-inverse) solution is
    already feasible, otherwise bisects on the strictly decreasing power
    profile until it lands within ``power_tol * p_max`` below the budget.
    """
    b0 = np.asarray(b0)
    if not np.allclose(b0, b0.conj().T, atol=1e-10 * max(1.0, np.abs(b0).max())):
        raise ValueError("leakage matrix must be Hermitian")
    targets = np.atleast_2d(targets)
    lam, q = np.linalg.eigh(b0)
    lam = np.clip(lam, 0.0, None)
    energy = (np.abs(q.conj().T @ targets.T) ** 2).sum(axis=1)  # per-mode

    if energy.sum() == 0.0:
        return 0.0

    cutoff = _RANK_RCOND * lam.max() if lam.max() > 0 else 0.0
    null = lam <= cutoff
    null_energy = energy[null].sum()
    if null_energy <= 1e-20 * energy.sum():
        # Targets live in the range space: the pseudo-inverse solution is the
        # mu -> 0 limit, so mu = 0 applies when it is feasible.
        power0 = float((energy[~null] / lam[~null] ** 2).sum()) if np.any(~null) else 0.0
        if power0 <= p_max:
            return 0.0

    def power(mu):
        return float((energy / (lam + mu) ** 2).sum())

    hi = 1.0
    for _ in range(200):
        if power(hi) <= p_max:
            break
        hi *= 2.0
    else:
        raise ArithmeticError("bisection bracket did not close")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    for _ in range(max_iter):
        if p_max - power(hi) <= power_tol * p_max:
            break
        mid = 0.5 * (lo + hi)
        if power(mid) > p_max:
            lo = mid
        else:
            hi = mid
    return hi


def structured_directions(local_h, own_cell, alpha, mu):
    """Unit-norm structured directions for one BS.

    Args:
        local_h: (N, K, M) channels from this BS to every user.
        own_cell: index of the cell this BS serves.
        alpha: (N, K) nonnegative leakage weights.
        mu: noise-control regularizer (>= 0; 0 only if the leakage matrix is
            invertible).

    Returns:
        (K, M) array of unit-norm beamforming directions.
    """
    b0 = _leakage_matrix(local_h, alpha)
    solutions = solve_leakage_system(b0, local_h[own_cell], mu)
    norms = np.linalg.norm(solutions, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ArithmeticError("structured direction collapsed to zero")
    return solutions / norms


def structured_beamformer(local_h, own_cell, params, p_max):
    """Beamformers of one BS from its local CSI and structured parameters.

    Powers follow p[k] = p_max * q_total * q[k], so the BS spends exactly
    ``p_max * q_total`` watts in total.
    """
    directions = structured_directions(local_h, own_cell, params.alpha, params.mu)
    powers = p_max * params.q_total * params.q
    return np.sqrt(powers)[:, None] * directions


def mslnr_beamformer(local_h, own_cell, noise_power, p_max, power_ratios):
    """Per-user max-SLNR beamformers for one BS.

    Maximizes, over unit-norm vectors, the ratio of desired signal power to
    the leakage inflicted on every other user in the network plus noise.
    Computed from scratch per user (explicit leakage sum excluding the served
    user) rather than through the structured path, so the two implementations
    can cross-check each other.
    """
    if not noise_power > 0:
        raise ValueError("noise_power must be positive")
    power_ratios = np.asarray(power_ratios, dtype=float)
    n, k, m = local_h.shape
    if power_ratios.sum() > 1.0 + POWER_SLACK:
        raise ValueError("power ratios exceed the power budget")
    flat = local_h.reshape(n * k, m)
    beams = np.empty((k, m), dtype=np.complex128)
    for user in range(k):
        own_flat = own_cell * k + user
        a = noise_power * np.eye(m, dtype=np.complex128)
        for x in range(n * k):
            if x != own_flat:
                a += np.outer(flat[x], flat[x].conj())
        direction = np.linalg.solve(a, local_h[own_cell, user])
        direction = direction / np.linalg.norm(direction)
        beams[user] = np.sqrt(p_max * power_ratios[user]) * direction
    return beams


def mrt_beamformer(h):
    """Maximum ratio transmission direction h / ||h||."""
    h = np.asarray(h)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("cannot form an MRT beamformer from a zero channel")
    return h / norm


def rayleigh_quotient(w, signal_h, alpha, mu, leakage_channels):
    """Generalized signal-to-weighted-leakage-plus-noise quotient.

    Evaluates |signal_h^H w|^2 / (sum_x alpha[x] |h_x^H w|^2 + mu ||w||^2)
    over the given leakage channels (rows of ``leakage_channels``).
    """
    w = np.asarray(w)
    if np.linalg.norm(w) == 0:
        raise ValueError("w must be nonzero")
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    leakage = np.asarray(leakage_channels).reshape(alpha.size, -1)
    num = abs(np.vdot(signal_h, w)) ** 2
    den = float(alpha @ (np.abs(leakage.conj() @ w) ** 2)) + mu * float(
        np.linalg.norm(w) ** 2
    )
    if den == 0.0:
        raise ArithmeticError("quotient denominator is zero (all alpha = 0, mu = 0)")
    return num / den


def _full_power_init(num_cells, users, antennas, p_max, rng):
    """Random directions, each BS transmitting the full budget split equally."""
    g = rng.standard_normal((num_cells, users, antennas)) + 1j * rng.standard_normal(
        (num_cells, users, antennas)
    )
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    return np.sqrt(p_max / users) * g


def wmmse(channel, net_cfg, stop_eps=1e-4, max_iter=500, init_seed=0):
    """Iterative weighted-MMSE solver for the sum-rate problem.

    Alternates closed-form updates of per-user receive scalars ``u``, MSE
    weights ``v`` and transmit beamformers (the structured solve, with its
    own per-BS multiplier found by bisection) until the weight sum changes by
    less than ``stop_eps``.  Needs global CSI: this is the centralized
    genie-aided baseline.

    Returns:
        (BeamformerSet, WmmseState).  If the iteration cap is hit first, the
        state is flagged ``truncated`` rather than raising.
    """
    h = channel.h
    num_cells, _, users, antennas = h.shape
    p_max = net_cfg.max_power
    noise = net_cfg.noise_power
    rng = np.random.default_rng(init_seed)

    w = _full_power_init(num_cells, users, antennas, p_max, rng)
    mu = np.zeros(num_cells)
    u_gen = None
    v_gen = None
    history = []
    rate_history = []
    iterations = 0
    truncated = False

    idx = np.arange(num_cells)
    while True:
        # Weight refresh for the current beamformers.
        cross = np.einsum("mnka,mja->mnkj", h.conj(), w)
        denom = (np.abs(cross) ** 2).sum(axis=(0, 3)) + noise  # (N, K)
        assert np.all(denom > 0), "receive denominator must stay positive"
        signal = cross[idx, idx][:, np.arange(users), np.arange(users)]
        u = signal / denom
        v = denom / (denom - np.abs(signal) ** 2)
        history.append(float(v.sum()))
        rate_history.append(float(np.log2(v).sum()))
        if len(history) >= 2 and abs(history[-1] - history[-2]) < stop_eps:
            break
        if iterations >= max_iter:
            truncated = True
            break

        # Beamformer update: per-BS structured solve at alpha = v|u|^2.
        alpha = v * np.abs(u) ** 2
        scale = u * v
        for bs in range(num_cells):
            b0 = _leakage_matrix(h[bs], alpha)
            targets = h[bs, bs] * scale[bs][:, None]
            mu[bs] = bisect_mu(b0, targets, p_max)
            w[bs] = solve_leakage_system(b0, targets, mu[bs])
        u_gen, v_gen = u, v
        iterations += 1

    if u_gen is None:  # stopped before any beamformer update
        u_gen, v_gen = u, v
    beams = BeamformerSet(w=w)
    state = WmmseState(
        beams=beams,
        u=u_gen,
        v=v_gen,
        final_v=v,
        mu=mu.copy(),
        iterations=iterations,
        objective_history=np.asarray(history),
        rate_history=np.asarray(rate_history),
        truncated=truncated,
    )
    return beams, state


def wmmse_multi_init(channel, net_cfg, stop_eps=1e-4, max_iter=500, num_inits=1, seed=0):
    """Best-of-R weighted-MMSE: keep the highest sum rate over R random inits.

    Initialization ``i`` uses seed ``seed + i``, so the single-init run with
    the same seed is always part of the pool.
    """
    if num_inits < 1:
        raise ValueError("num_inits must be >= 1")
    best_beams = None
    best_rate = -np.inf
    for i in range(num_inits):
        beams, _ = wmmse(channel, net_cfg, stop_eps, max_iter, init_seed=seed + i)
        rate = sum_rate(compute_metrics(channel, beams, net_cfg))
        if rate > best_rate:
            best_rate = rate
            best_beams = beams
    return best_beams
