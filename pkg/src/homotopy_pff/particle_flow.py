"""Stochastic particle flow under a general linear log-homotopy.

With ``alpha = 1 - beta`` and ``S = A0 + beta A_h`` the exact drift is

    f(x) = K1 grad log p(x, lambda) + K2 grad log h(x)
    K1   = Q/2 + (beta'/2) S^-1 A_h S^-1
    K2   = -beta' S^-1

and particles follow ``dx = f dlambda + q dw`` with ``q q' = Q``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import AssumptionViolation, ContractError, FlowError
from .gaussian_model import GaussianLogDensity, MomentPair, check_symmetric, is_spd, posterior_moments, psd_sqrt
from .homotopy_optimizer import HomotopyPath, m_matrix


@dataclass(frozen=True)
class FlowContext:
    """Everything the drift needs: prior, likelihood, diffusion ``Q`` and schedule."""

    prior: GaussianLogDensity
    lik: GaussianLogDensity
    Q: np.ndarray
    path: HomotopyPath
    q: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.prior.n != self.lik.n:
            raise ContractError("prior and likelihood dimensions differ")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (self.prior.n, self.prior.n):
            raise ContractError(f"Q has shape {Q.shape}, expected {(self.prior.n,) * 2}")
        check_symmetric(Q, "Q")
        w = np.linalg.eigvalsh(Q)
        if w[0] < -1e-12 * max(np.abs(w).max(), 1.0):
            raise ContractError("Q must be positive semi-definite")
        for lam, b in zip(self.path.lambdas, self.path.betas):
            if not is_spd(m_matrix(self.prior, self.lik, b)):
                raise AssumptionViolation(
                    f"A0 + beta*A_h not negative definite at lambda={lam!r}", beta=b, lam=lam
                )
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", psd_sqrt(Q))

    @property
    def n(self) -> int:
        return self.prior.n

    def with_likelihood(self, lik: GaussianLogDensity) -> "FlowContext":
        return FlowContext(self.prior, lik, self.Q, self.path)

    def with_path(self, path: HomotopyPath) -> "FlowContext":
        return FlowContext(self.prior, self.lik, self.Q, path)


@dataclass(frozen=True)
class FlowTerms:
    beta: float
    beta_dot: float
    S: np.ndarray
    S_inv: np.ndarray
    K1: np.ndarray
    K2: np.ndarray


def flow_terms(lam: float, ctx: FlowContext) -> FlowTerms:
    beta, beta_dot = ctx.path(lam)
    S = ctx.prior.A + beta * ctx.lik.A
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise AssumptionViolation(f"singular Hessian at lambda={lam!r}", beta=beta, lam=lam) from None
    S_inv = 0.5 * (S_inv + S_inv.T)
    K1 = 0.5 * ctx.Q + 0.5 * beta_dot * S_inv @ ctx.lik.A @ S_inv
    K2 = -beta_dot * S_inv
    return FlowTerms(beta, beta_dot, S, S_inv, K1, K2)


def drift(x, lam: float, ctx: FlowContext) -> np.ndarray:
    """Drift at state(s) ``x``; ``x`` may be (n,) or (N, n)."""
    t = flow_terms(lam, ctx)
    x = np.asarray(x, dtype=float)
    offset = ctx.prior.b + t.beta * ctx.lik.b
    if x.ndim == 1:
        grad_p = t.S @ x + offset
        grad_h = ctx.lik.A @ x + ctx.lik.b
        return t.K1 @ grad_p + t.K2 @ grad_h
    grad_p = x @ t.S.T + offset
    grad_h = x @ ctx.lik.A.T + ctx.lik.b
    return grad_p @ t.K1.T + grad_h @ t.K2.T


def flow_jacobian(lam: float, ctx: FlowContext) -> np.ndarray:
    """``F = Q S / 2 - (beta'/2) S^-1 A_h``."""
    t = flow_terms(lam, ctx)
    return 0.5 * ctx.Q @ t.S - 0.5 * t.beta_dot * t.S_inv @ ctx.lik.A


def flow_offset(lam: float, ctx: FlowContext) -> np.ndarray:
    """Constant part ``b(lambda) = f(0)`` of the affine drift."""
    t = flow_terms(lam, ctx)
    return t.K1 @ (ctx.prior.b + t.beta * ctx.lik.b) + t.K2 @ ctx.lik.b


def stiffness_ratio(F) -> float:
    """``max |Re ev| / min |Re ev|`` of ``F``.

    Returns ``nan`` (undefined) unless every eigenvalue has a negative real
    part, and ``inf`` when the smallest magnitude is negligible.
    """
    re = np.real(np.linalg.eigvals(np.atleast_2d(F)))
    if np.any(re >= 0.0):
        return math.nan
    mags = np.abs(re)
    if mags.min() < 1e-14 * mags.max():
        return math.inf
    return float(mags.max() / mags.min())


@dataclass(frozen=True)
class ParticleEnsemble:
    """Particle states plus the pre-drawn Brownian increments.

    ``noise_tape[i, k]`` is the standard-normal draw used by particle ``i``
    at Euler step ``k``; reusing one ensemble across schedules gives common
    random numbers.
    """

    states: np.ndarray
    noise_tape: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        tape = np.asarray(self.noise_tape, dtype=float)
        if tape.ndim != 3 or tape.shape[0] != states.shape[0]:
            raise ContractError("noise_tape must have shape (N, steps, m)")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "noise_tape", tape)

    @classmethod
    def from_prior(cls, mean, cov, n_particles: int, steps: int, seed: int, m: Optional[int] = None) -> "ParticleEnsemble":
        """Sample initial states and the noise tape from independent child streams of ``seed``."""
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if n_particles < 1 or steps < 1:
            raise ContractError("need at least one particle and one step")
        m = mean.size if m is None else m
        state_ss, tape_ss = np.random.SeedSequence(seed).spawn(2)
        L = np.linalg.cholesky(cov)
        states = mean + np.random.default_rng(state_ss).standard_normal((n_particles, mean.size)) @ L.T
        tape = np.random.default_rng(tape_ss).standard_normal((n_particles, steps, m))
        return cls(states, tape, seed)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.noise_tape.shape[1]

    def mean(self) -> np.ndarray:
        return self.states.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.states, rowvar=False))

    def tape_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.noise_tape).tobytes()).hexdigest()


def integrate_ensemble(
    ens: ParticleEnsemble,
    ctx: FlowContext,
    steps: Optional[int] = None,
    relinearize: Optional[Callable[[np.ndarray], GaussianLogDensity]] = None,
) -> ParticleEnsemble:
    """Euler-Maruyama over lambda in [0, 1] using the ensemble's noise tape.

    ``x_{k+1} = x_k + f(x_k, lambda_k) dl + q sqrt(dl) xi_k``.

    If ``relinearize`` is given it maps the current ensemble mean to a fresh
    likelihood before every step.
    """
    steps = ens.steps if steps is None else steps
    if steps < 1 or steps != ens.steps:
        raise ContractError(f"steps={steps} does not match noise tape with {ens.steps} steps")
    q = ctx.q
    if ens.noise_tape.shape[2] != q.shape[1]:
        raise ContractError("noise tape dimension does not match Q")
    dl = 1.0 / steps
    sq = math.sqrt(dl)
    x = ens.states.copy()
    # step-major copy so each step reads a contiguous block
    tape = np.ascontiguousarray(np.swapaxes(ens.noise_tape, 0, 1))
    for k in range(steps):
        lam = k * dl
        if relinearize is not None:
            ctx = ctx.with_likelihood(relinearize(x.mean(axis=0)))
        try:
            f = drift(x, lam, ctx)
        except AssumptionViolation as exc:
            raise FlowError(f"drift failed at lambda={lam!r}: {exc}", lam=lam) from exc
        x = x + f * dl + sq * tape[k] @ q.T
        if not math.isfinite(float(x.sum())):
            bad = ~np.all(np.isfinite(x), axis=1)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise FlowError(f"particle {i} diverged at lambda={lam + dl!r}", lam=lam + dl, particle=i)
    return ParticleEnsemble(x, ens.noise_tape, ens.seed)


def moment_ode_oracle(ctx: FlowContext, steps: int = 1000, max_h_rho: float = 0.004) -> List[MomentPair]:
    """RK4 integration of ``m' = F m + b``, ``P' = F P + P F' + Q`` from the prior.

    Returns moments on the uniform grid ``linspace(0, 1, steps + 1)``.  Each
    output interval is split into equal RK4 substeps so that
    ``h * spectral_radius(F) <= max_h_rho`` at both of its ends; this keeps
    the oracle accurate through the stiff start of the flow.
    """
    if steps < 1:
        raise ContractError("steps must be positive")
    start = posterior_moments(ctx.prior, ctx.lik, 0.0)
    m, P = start.mean.copy(), start.cov.copy()
    Q = ctx.Q
    dl = 1.0 / steps

    def rates(lam, m, P):
        F = flow_jacobian(lam, ctx)
        return F @ m + flow_offset(lam, ctx), F @ P + P @ F.T + Q

    def rho(lam):
        return float(np.max(np.abs(np.linalg.eigvals(flow_jacobian(lam, ctx)))))

    out = [MomentPair(m, P)]
    for k in range(steps):
        lam0 = k * dl
        sub = max(1, math.ceil(dl * max(rho(lam0), rho(lam0 + dl)) / max_h_rho))
        h = dl / sub
        for j in range(sub):
            lam = lam0 + j * h
            k1m, k1P = rates(lam, m, P)
            k2m, k2P = rates(lam + 0.5 * h, m + 0.5 * h * k1m, P + 0.5 * h * k1P)
            k3m, k3P = rates(lam + 0.5 * h, m + 0.5 * h * k2m, P + 0.5 * h * k2P)
            k4m, k4P = rates(lam + h, m + h * k3m, P + h * k3P)
            m = m + h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
            P = P + h / 6.0 * (k1P + 2 * k2P + 2 * k3P + k4P)
            P = 0.5 * (P + P.T)
        out.append(MomentPair(m, P))
    return out


def euler_maruyama_moments(ctx: FlowContext, steps: int, start: Optional[MomentPair] = None) -> MomentPair:
    """Exact mean and covariance of the Euler-Maruyama scheme after ``steps`` steps.

    The drift is affine, so ``m <- (I + F dl) m + b dl`` and
    ``P <- (I + F dl) P (I + F dl)' + Q dl`` hold without sampling error.
    Comparing with the closed-form posterior isolates the discretization bias.
    """
    if steps < 1:
        raise ContractError("steps must be positive")
    start = posterior_moments(ctx.prior, ctx.lik, 0.0) if start is None else start
    m, P = start.mean.copy(), start.cov.copy()
    eye = np.eye(ctx.n)
    dl = 1.0 / steps
    for k in range(steps):
        lam = k * dl
        G = eye + dl * flow_jacobian(lam, ctx)
        m = G @ m + dl * flow_offset(lam, ctx)
        P = G @ P @ G.T + dl * ctx.Q
        P = 0.5 * (P + P.T)
    return MomentPair(m, P)
