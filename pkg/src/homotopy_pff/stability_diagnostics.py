"""Numerical witnesses for the flow's correctness and stability properties.

* :func:`cond1_residual` evaluates the necessary condition a drift must
  satisfy for the particle density to follow the homotopy.
* :func:`lyapunov_trace` / :func:`gronwall_check` follow
  ``V = x~' M x~`` for the difference of two flow solutions.
* :func:`check_A3` builds a uniform lower bound ``M(lambda) >= M0``.
* :func:`lemma_a3_sweep` and :func:`kappa_gradient_sweep` are randomized
  checks of the condition-number results used by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .gaussian_model import GaussianLogDensity, MomentPair
from .homotopy_optimizer import (
    HomotopyPath,
    NormChoice,
    condition_number,
    kappa_gradient,
    m_matrix,
)
from .particle_flow import FlowContext, drift, flow_jacobian, flow_terms

BOUND_ATOL = 1e-9
BOUND_RTOL = 1e-6


def _affine_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    # Unit-step central differences are exact (to round-off) for affine maps.
    n = x.size
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        jac[:, j] = 0.5 * (fun(x + e) - fun(x - e))
    return jac


def cond1_residual(ctx: FlowContext, lam: float, x, drift_fn: Optional[Callable] = None) -> float:
    """Infinity-norm residual of the density-consistency condition at ``(x, lam)``.

    Left side ``grad_x d(log p)/d lambda = beta' grad log h`` (alpha + beta = 1).
    Right side ``-grad div f - S f - F' grad log p + S Q grad log p``.

    ``drift_fn(x, lam, ctx)`` overrides the drift; it is assumed affine in
    ``x`` so ``grad div f = 0`` and its Jacobian is taken by unit differences.
    """
    x = np.asarray(x, dtype=float)
    t = flow_terms(lam, ctx)
    grad_h = ctx.lik.A @ x + ctx.lik.b
    grad_p = t.S @ x + ctx.prior.b + t.beta * ctx.lik.b
    lhs = t.beta_dot * grad_h

    if drift_fn is None:
        f = drift(x, lam, ctx)
        F = flow_jacobian(lam, ctx)
    else:
        f = np.asarray(drift_fn(x, lam, ctx), dtype=float)
        F = _affine_jacobian(lambda y: np.asarray(drift_fn(y, lam, ctx), dtype=float), x)
    rhs = -t.S @ f - F.T @ grad_p + t.S @ ctx.Q @ grad_p
    return float(np.max(np.abs(lhs - rhs)))


def perturbed_drift(scale: float = 0.1, coord: int = 0) -> Callable:
    """Drift plus ``scale * x[coord]`` in coordinate ``coord``; used to probe detector sensitivity."""

    def fn(x, lam, ctx):
        f = np.array(drift(x, lam, ctx), dtype=float)
        f[..., coord] += scale * np.asarray(x)[..., coord]
        return f

    return fn


@dataclass(frozen=True)
class LyapunovTrace:
    """``V(lambda)`` for the linearized difference flow, with the predicted rate and bound.

    ``c = V(0)``, ``r = lambda_min(Q) lambda_min(M0)`` (zero when ``Q`` is
    singular or (A3) fails), ``bound = c exp(-r lambda)``.
    """

    lambdas: np.ndarray
    V: np.ndarray
    dV_pred: np.ndarray
    bound: np.ndarray
    c: float
    r: float
    M0: Optional[np.ndarray] = None

    def dV_finite_difference(self) -> np.ndarray:
        return np.gradient(self.V, self.lambdas, edge_order=2)


def a3_candidate(prior: GaussianLogDensity, lik: GaussianLogDensity, path: HomotopyPath) -> Tuple[bool, np.ndarray]:
    """Scaled-identity lower bound ``M0 = c I``, ``c = (1 - 1e-6) min_grid lambda_min(M)``.

    Returns ``(holds, M0)``; ``holds`` is false when ``c <= 0`` or some
    ``M(lambda_i) - M0`` is not PSD.
    """
    n = prior.n
    lam_min = min(np.linalg.eigvalsh(m_matrix(prior, lik, b))[0] for b in path.betas)
    c = (1.0 - 1e-6) * lam_min
    M0 = c * np.eye(n)
    if c <= 0:
        return False, M0
    holds = all(np.linalg.eigvalsh(m_matrix(prior, lik, b) - M0)[0] >= 0.0 for b in path.betas)
    return holds, M0


def check_A3(ctx: FlowContext) -> Tuple[bool, np.ndarray]:
    """Uniform lower bound ``M(lambda) >= M0`` on the context's grid (see :func:`a3_candidate`)."""
    return a3_candidate(ctx.prior, ctx.lik, ctx.path)


def lyapunov_trace(x_tilde0, ctx: FlowContext, steps: int = 1000) -> LyapunovTrace:
    """Integrate ``dx~ = F x~ dlambda`` with RK4 and record ``V = x~' M x~``."""
    x = np.array(x_tilde0, dtype=float)
    dl = 1.0 / steps
    lambdas = np.linspace(0.0, 1.0, steps + 1)
    Q = ctx.Q

    def M_at(lam):
        return m_matrix(ctx.prior, ctx.lik, ctx.path.beta(lam))

    V = np.empty(steps + 1)
    dV = np.empty(steps + 1)
    for k, lam in enumerate(lambdas):
        if k > 0:
            l0 = lambdas[k - 1]
            k1 = flow_jacobian(l0, ctx) @ x
            k2 = flow_jacobian(l0 + 0.5 * dl, ctx) @ (x + 0.5 * dl * k1)
            k3 = flow_jacobian(l0 + 0.5 * dl, ctx) @ (x + 0.5 * dl * k2)
            k4 = flow_jacobian(l0 + dl, ctx) @ (x + dl * k3)
            x = x + dl / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        M = M_at(lam)
        V[k] = x @ M @ x
        dV[k] = -x @ M @ Q @ M @ x

    holds, M0 = check_A3(ctx)
    wq = np.linalg.eigvalsh(Q)
    # singular to round-off counts as singular
    q_min = float(wq[0]) if wq[0] > 1e-12 * max(abs(wq[-1]), 1.0) else 0.0
    r = q_min * float(np.linalg.eigvalsh(M0)[0]) if holds and q_min > 0 else 0.0
    c = float(V[0])
    return LyapunovTrace(lambdas, V, dV, c * np.exp(-r * lambdas), c, r, M0 if holds else None)


@dataclass(frozen=True)
class BoundReport:
    n_violations: int
    max_violation: float
    rate: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def gronwall_check(trace: LyapunovTrace, rate: Optional[float] = None,
                   atol: float = BOUND_ATOL, rtol: float = BOUND_RTOL) -> BoundReport:
    """Check ``V(lambda_i) <= V(0) exp(-rate lambda_i)`` at every node (default rate ``trace.r``)."""
    rate = trace.r if rate is None else rate
    bound = trace.V[0] * np.exp(-rate * trace.lambdas)
    excess = trace.V - bound - (atol + rtol * np.abs(bound))
    return BoundReport(int(np.sum(excess > 0)), float(max(excess.max(), 0.0)), rate)


def bounded_check(trace: LyapunovTrace, atol: float = BOUND_ATOL, rtol: float = BOUND_RTOL) -> BoundReport:
    """Check ``V(lambda_i) <= c`` (boundedness with any PSD ``Q``)."""
    return gronwall_check(trace, rate=0.0, atol=atol, rtol=rtol)


def kalman_update(mean, cov, H, R, z) -> MomentPair:
    """Covariance-form Bayes update; an oracle independent of the information form."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    H = np.atleast_2d(H)
    R = np.atleast_2d(R)
    Sy = H @ cov @ H.T + R
    K = np.linalg.solve(Sy, H @ cov).T
    I_KH = np.eye(mean.size) - K @ H
    P = I_KH @ cov @ I_KH.T + K @ R @ K.T
    return MomentPair(mean + K @ (np.atleast_1d(z) - H @ mean), 0.5 * (P + P.T))


def random_spd(rng: np.random.Generator, n: int, log_spread: float = 2.0) -> np.ndarray:
    """Random SPD matrix with log10 eigenvalues uniform in [-spread/2, spread/2]."""
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = 10.0 ** rng.uniform(-log_spread / 2, log_spread / 2, n)
    A = (Qm * w) @ Qm.T
    return 0.5 * (A + A.T)


def curved_path(amplitude: float, n_intervals: int = 200) -> HomotopyPath:
    """Smooth schedule ``beta = lambda + a sin(pi lambda)`` with exact rates at the nodes."""
    lam = np.linspace(0.0, 1.0, n_intervals + 1)
    beta = lam + amplitude * np.sin(np.pi * lam)
    beta[0], beta[-1] = 0.0, 1.0
    return HomotopyPath(lam, beta, 1.0 + amplitude * np.pi * np.cos(np.pi * lam))


def random_instance(rng: np.random.Generator, n: int, q_kind: str = "spd",
                    n_intervals: int = 200) -> FlowContext:
    """Random Gaussian flow problem for the randomized checks.

    Args:
        rng: generator.
        n: state dimension.
        q_kind: ``"spd"``, ``"singular"`` (rank n-1) or ``"zero"``.
        n_intervals: grid size of the (curved, non-negative) schedule.

    Returns:
        A :class:`FlowContext` with a random prior, a rank-deficient or full
        linear-Gaussian likelihood, and the chosen diffusion.
    """
    P = random_spd(rng, n, 2.0)
    prior = GaussianLogDensity(-P, rng.standard_normal(n))
    d = int(rng.integers(1, n + 1))
    G = rng.standard_normal((d, n))
    Ah = -G.T @ G
    lik = GaussianLogDensity(0.5 * (Ah + Ah.T), rng.standard_normal(n), role="likelihood")
    if q_kind == "spd":
        Q = random_spd(rng, n, 1.0)
    elif q_kind == "singular":
        B = rng.standard_normal((n, n - 1))
        Q = B @ B.T
    elif q_kind == "zero":
        Q = np.zeros((n, n))
    else:
        raise ValueError(f"unknown q_kind {q_kind!r}")
    # |a| < 1/pi keeps beta monotone and inside [0, 1]
    path = curved_path(float(rng.uniform(-0.3, 0.3)), n_intervals)
    return FlowContext(prior, lik, 0.5 * (Q + Q.T), path)


@dataclass(frozen=True)
class SweepReport:
    n_checked: int
    n_violations: int
    worst: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def lemma_a3_sweep(n_pairs: int = 1000, seed: int = 0, max_dim: int = 6, rtol: float = 1e-10) -> SweepReport:
    """Random check of ``kappa(A + d1 B) <= kappa(A - d2 B)`` for the spectral norm.

    Pairs are drawn until ``kappa(B) <= kappa(A)``; ``d2`` is drawn below the
    largest admissible value so that ``A - d2 B`` stays SPD.
    """
    rng = np.random.default_rng(seed)
    checked = violations = 0
    worst = -math.inf
    while checked < n_pairs:
        n = int(rng.integers(2, max_dim + 1))
        A = random_spd(rng, n, 3.0)
        B = random_spd(rng, n, 3.0)
        kA = condition_number(A, NormChoice.SPECTRAL)
        kB = condition_number(B, NormChoice.SPECTRAL)
        if kB > kA:
            A, B, kA, kB = B, A, kB, kA
        # A - d2 B > 0  iff  d2 < 1 / lambda_max(A^-1/2 B A^-1/2)
        L = np.linalg.cholesky(A)
        Linv = np.linalg.inv(L)
        d2_max = 1.0 / np.linalg.eigvalsh(Linv @ B @ Linv.T)[-1]
        d1 = float(rng.exponential(1.0)) * rng.choice([0.0, 1.0, 10.0])
        d2 = float(rng.uniform(0.0, 0.999)) * d2_max
        left = condition_number(A + d1 * B, NormChoice.SPECTRAL)
        right = condition_number(A - d2 * B, NormChoice.SPECTRAL)
        excess = (left - right) / right
        worst = max(worst, excess)
        if excess > rtol:
            violations += 1
        checked += 1
    return SweepReport(checked, violations, worst)


def kappa_gradient_sweep(norm, n_instances: int = 500, seed: int = 0, max_dim: int = 6,
                         rtol: float = 1e-5) -> SweepReport:
    """Analytic ``d kappa / d beta`` against a central difference of ``kappa`` on random SPD problems."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(2, max_dim + 1))
        P = random_spd(rng, n, 2.0)
        d = int(rng.integers(1, n + 1))
        G = rng.standard_normal((d, n))
        prior = GaussianLogDensity(-P, rng.standard_normal(n))
        Ah = -G.T @ G
        lik = GaussianLogDensity(0.5 * (Ah + Ah.T), rng.standard_normal(n), role="likelihood")
        beta = float(rng.uniform(0.0, 1.0))
        g = kappa_gradient(prior, lik, beta, norm)
        h = 1e-5 * max(1.0, abs(beta))
        fd = (condition_number(m_matrix(prior, lik, beta + h), norm)
              - condition_number(m_matrix(prior, lik, beta - h), norm)) / (2 * h)
        scale = max(abs(fd), abs(g), 1.0)
        err = abs(g - fd) / scale
        worst = max(worst, err)
        if err > rtol:
            violations += 1
    return SweepReport(n_instances, violations, worst)
