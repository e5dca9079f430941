"""Quadratic log-density algebra.

Every density handled by the flow is represented through its log:

    log q(x) = 0.5 x^T A x + b^T x + c

so gradients are affine in ``x`` and Hessians are constant.  The prior
(``A`` negative definite) and a linearized measurement likelihood (``A``
negative semi-definite) are both stored this way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AssumptionViolation, ContractError, MeasurementError

_SYM_RTOL = 1e-12
_PSD_RTOL = 1e-12

ROLES = ("prior", "likelihood", "posterior")


def _as_vector(x, n: Optional[int] = None, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ContractError(f"{name} must be a vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ContractError(f"{name} has length {v.shape[0]}, expected {n}")
    return v


def _as_square(a, name: str = "A") -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"{name} must be square, got shape {m.shape}")
    return m


def check_symmetric(a: np.ndarray, name: str = "A", rtol: float = _SYM_RTOL) -> None:
    scale = max(np.linalg.norm(a), 1.0)
    if np.linalg.norm(a - a.T) > rtol * scale:
        raise ContractError(f"{name} is not symmetric")


def is_spd(a: np.ndarray) -> bool:
    """Cholesky-based positive definiteness test."""
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; tolerates singular input."""
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True)
class GaussianLogDensity:
    """Quadratic log-density ``0.5 x'Ax + b'x + c``.

    Attributes:
        A: symmetric Hessian.
        b: linear coefficient.
        c: additive constant, carried along but never normalized.
        role: ``"prior"`` / ``"posterior"`` (A must be negative definite) or
            ``"likelihood"`` (A negative semi-definite).
    """

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0
    role: str = "prior"

    def __post_init__(self):
        A = _as_square(self.A, "A")
        b = _as_vector(self.b, A.shape[0], "b")
        check_symmetric(A)
        if self.role not in ROLES:
            raise ContractError(f"unknown role {self.role!r}")
        if self.role == "likelihood":
            w = np.linalg.eigvalsh(A)
            if w.max(initial=0.0) > _PSD_RTOL * max(np.abs(w).max(initial=0.0), 1.0):
                raise ContractError("likelihood Hessian must be negative semi-definite")
        elif not is_spd(-A):
            raise ContractError(f"{self.role} Hessian must be negative definite")
        A = A.copy()
        b = b.copy()
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def hessian(self) -> np.ndarray:
        return self.A

    @classmethod
    def from_moments(cls, mean, cov, role: str = "prior") -> "GaussianLogDensity":
        """Log of a normalized N(mean, cov) density."""
        cov = _as_square(cov, "cov")
        mean = _as_vector(mean, cov.shape[0], "mean")
        if not is_spd(cov):
            raise ContractError("cov must be symmetric positive definite")
        prec = np.linalg.inv(cov)
        prec = 0.5 * (prec + prec.T)
        _, logdet = np.linalg.slogdet(2.0 * np.pi * cov)
        c = -0.5 * mean @ prec @ mean - 0.5 * logdet
        return cls(-prec, prec @ mean, c, role)

    def __call__(self, x):
        return eval_log_density(self, x)


@dataclass(frozen=True)
class MomentPair:
    """Mean and (SPD) covariance of a Gaussian."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = _as_square(self.cov, "cov")
        mean = _as_vector(self.mean, cov.shape[0], "mean")
        check_symmetric(cov, "cov", rtol=1e-10)
        if not is_spd(cov):
            raise ContractError("cov must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def eval_log_density(q: GaussianLogDensity, x) -> float:
    x = _as_vector(x, q.n)
    return float(0.5 * x @ q.A @ x + q.b @ x + q.c)


def grad_log_density(q: GaussianLogDensity, x) -> np.ndarray:
    """Gradient ``Ax + b``.  Accepts a single state or an (N, n) stack."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != q.n:
            raise ContractError(f"states have dimension {x.shape[1]}, expected {q.n}")
        return x @ q.A.T + q.b
    x = _as_vector(x, q.n)
    return q.A @ x + q.b


def hessian_log_density(q: GaussianLogDensity) -> np.ndarray:
    return q.A


def combine(prior: GaussianLogDensity, lik: GaussianLogDensity) -> GaussianLogDensity:
    """Unnormalized posterior: log p1 = log p0 + log h (up to a constant)."""
    if prior.n != lik.n:
        raise ContractError("prior and likelihood dimensions differ")
    return GaussianLogDensity(prior.A + lik.A, prior.b + lik.b, prior.c + lik.c, "posterior")


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def finite_difference_jacobian(fun: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        jac[:, j] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class MeasurementModel:
    """Measurement function ``h(x)`` with optional analytic Jacobian.

    ``angular`` marks components whose residuals are wrapped to (-pi, pi].
    """

    h: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    angular: Sequence[bool] = field(default_factory=tuple)

    def jac(self, x: np.ndarray) -> np.ndarray:
        if self.jacobian is not None:
            return np.atleast_2d(np.asarray(self.jacobian(x), dtype=float))
        return finite_difference_jacobian(self.h, x)


def linearize_likelihood(model: MeasurementModel, z, R, x_lin) -> GaussianLogDensity:
    """Quadratic approximation of ``-0.5 (z - h(x))' R^-1 (z - h(x))`` about ``x_lin``.

    Returns the likelihood with ``A_h = -H' R^-1 H`` and
    ``b_h = H' R^-1 (z - h(x_lin) + H x_lin)``, where angular residual
    components are wrapped.
    """
    R = _as_square(R, "R")
    z = _as_vector(z, R.shape[0], "z")
    x_lin = _as_vector(x_lin, name="x_lin")
    check_symmetric(R, "R")
    if not is_spd(R):
        raise ContractError("R must be symmetric positive definite")
    try:
        hx = np.atleast_1d(np.asarray(model.h(x_lin), dtype=float))
        H = model.jac(x_lin)
    except (ZeroDivisionError, FloatingPointError, ValueError) as exc:
        raise MeasurementError(f"measurement model failed at {x_lin}: {exc}") from exc
    if not (np.all(np.isfinite(hx)) and np.all(np.isfinite(H))):
        raise MeasurementError(f"measurement model not finite at {x_lin}")
    if H.shape != (z.size, x_lin.size):
        raise ContractError(f"Jacobian has shape {H.shape}, expected {(z.size, x_lin.size)}")

    resid = z - hx
    if len(model.angular):
        mask = np.asarray(model.angular, dtype=bool)
        resid = np.where(mask, wrap_angle(resid), resid)

    Rinv = np.linalg.inv(R)
    Rinv = 0.5 * (Rinv + Rinv.T)
    HtRinv = H.T @ Rinv
    A_h = -HtRinv @ H
    A_h = 0.5 * (A_h + A_h.T)
    b_h = HtRinv @ (resid + H @ x_lin)
    return GaussianLogDensity(A_h, b_h, 0.0, "likelihood")


def posterior_moments(prior: GaussianLogDensity, lik: GaussianLogDensity, beta: float) -> MomentPair:
    """Moments of the homotopy density at blend weight ``beta`` (alpha = 1 - beta).

    Mean ``-(A0 + beta A_h)^-1 (b0 + beta b_h)``, covariance ``-(A0 + beta A_h)^-1``.
    """
    if prior.n != lik.n:
        raise ContractError("prior and likelihood dimensions differ")
    M = -(prior.A + beta * lik.A)
    M = 0.5 * (M + M.T)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise AssumptionViolation(
            f"A0 + beta*A_h is not negative definite at beta={beta!r} (A2 violated)", beta=beta
        ) from None
    eye = np.eye(prior.n)
    Linv = np.linalg.solve(L, eye)
    cov = Linv.T @ Linv
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prior.b + beta * lik.b)
    return MomentPair(mean, cov)
