"""Condition-number optimal homotopy.

The blend weight ``beta(lambda)`` (with ``alpha = 1 - beta``) is chosen to
minimize

    J = int_0^1 [ 0.5 * u^2 + mu * kappa(M(beta)) ] dlambda,   beta' = u,

with ``M(beta) = -A0 - beta * A_h`` and ``beta(0) = 0``, ``beta(1) = 1``.
The stationarity condition is the second-order boundary value problem
``beta'' = mu * d kappa / d beta``, solved here by shooting on ``beta'(0)``
with bisection.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import quad, simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import AssumptionViolation, BracketError, ContractError
from .gaussian_model import GaussianLogDensity, is_spd


class NormChoice(str, enum.Enum):
    NUCLEAR = "nuclear"
    SPECTRAL = "spectral"


def _norm(norm) -> NormChoice:
    try:
        return NormChoice(norm)
    except ValueError:
        raise ContractError(f"unknown norm {norm!r}; expected 'nuclear' or 'spectral'") from None


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`solve_optimal_homotopy`.

    Attributes:
        mu: weight on the condition-number term.
        norm: ``"nuclear"`` or ``"spectral"``.
        n_intervals: K, the number of uniform grid intervals on [0, 1].
        bracket: initial shooting bracket for ``beta'(0)``.
        max_bracket: half-width at which bracket expansion gives up.
        tol: accepted ``|beta(1) - 1|``.
        rtol, atol: adaptive Runge-Kutta tolerances.
        max_iter: bisection iteration cap.
    """

    mu: float = 0.2
    norm: NormChoice = NormChoice.NUCLEAR
    n_intervals: int = 200
    bracket: Tuple[float, float] = (-5.0, 5.0)
    max_bracket: float = 100.0
    tol: float = 1e-9
    rtol: float = 1e-8
    atol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, "norm", _norm(self.norm))
        if not self.mu >= 0:
            raise ContractError("mu must be non-negative")
        if self.n_intervals < 2:
            raise ContractError("need at least 2 grid intervals")
        if self.tol <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ContractError("tolerances must be positive")
        lo, hi = self.bracket
        if not lo < hi:
            raise ContractError("bracket must be increasing")

    @property
    def lambdas(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_intervals + 1)


@dataclass(frozen=True)
class HomotopyPath:
    """Sampled schedule ``lambda -> (beta, beta')``.

    Queries between nodes use the cubic Hermite spline through
    ``(betas, beta_dots)``; the returned rate is that spline's derivative,
    so the pair stays consistent everywhere on [0, 1].
    """

    lambdas: np.ndarray
    betas: np.ndarray
    beta_dots: np.ndarray
    _spline: CubicHermiteSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        beta = np.array(self.betas, dtype=float)
        bdot = np.array(self.beta_dots, dtype=float)
        if lam.ndim != 1 or lam.size < 2 or beta.shape != lam.shape or bdot.shape != lam.shape:
            raise ContractError("lambdas, betas and beta_dots must be 1-D arrays of equal length >= 2")
        if lam[0] != 0.0 or lam[-1] != 1.0 or np.any(np.diff(lam) <= 0):
            raise ContractError("lambdas must increase strictly from 0 to 1")
        if beta[0] != 0.0 or beta[-1] != 1.0:
            raise ContractError("betas must satisfy beta(0) = 0 and beta(1) = 1 exactly")
        for a in (lam, beta, bdot):
            a.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "betas", beta)
        object.__setattr__(self, "beta_dots", bdot)
        object.__setattr__(self, "_spline", CubicHermiteSpline(lam, beta, bdot))

    @classmethod
    def linear(cls, n_intervals: int = 200) -> "HomotopyPath":
        """The straight-line baseline beta = lambda."""
        lam = np.linspace(0.0, 1.0, n_intervals + 1)
        return cls(lam, lam.copy(), np.ones_like(lam))

    def __call__(self, lam):
        """Return ``(beta, beta_dot)`` at ``lam`` (scalar or array)."""
        scalar = np.ndim(lam) == 0
        lam_arr = np.clip(np.asarray(lam, dtype=float), 0.0, 1.0)
        beta = self._spline(lam_arr)
        bdot = self._spline(lam_arr, 1)
        if scalar:
            return float(beta), float(bdot)
        return beta, bdot

    def beta(self, lam):
        return self(lam)[0]

    def beta_dot(self, lam):
        return self(lam)[1]


def m_matrix(prior: GaussianLogDensity, lik: GaussianLogDensity, beta: float) -> np.ndarray:
    """``M(beta) = -A0 - beta * A_h``, the negated Hessian of the blended log density."""
    M = -prior.A - beta * lik.A
    return 0.5 * (M + M.T)


def _spd_eigvals(M: np.ndarray) -> Optional[np.ndarray]:
    w = np.linalg.eigvalsh(M)
    if w[0] <= 0.0 or w[0] <= 1e-15 * w[-1] or not is_spd(M):
        return None
    return w


def condition_number(M: np.ndarray, norm=NormChoice.NUCLEAR) -> float:
    """Condition number of a symmetric matrix; ``inf`` when singular or not SPD.

    nuclear: ``tr(M) tr(M^-1)``; spectral: ``lambda_max / lambda_min``.
    """
    norm = _norm(norm)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    M = 0.5 * (M + M.T)
    w = _spd_eigvals(M)
    if w is None:
        return math.inf
    if norm is NormChoice.NUCLEAR:
        return float(w.sum() * (1.0 / w).sum())
    return float(w[-1] / w[0])


def matrix_condition_number(F: np.ndarray, norm=NormChoice.NUCLEAR) -> float:
    """Condition number of a general square matrix from its singular values.

    Agrees with :func:`condition_number` on SPD input.  Used for the flow
    Jacobian, which is not symmetric.
    """
    norm = _norm(norm)
    s = np.linalg.svd(np.atleast_2d(F), compute_uv=False)
    if s[-1] <= 1e-15 * s[0] or s[-1] == 0.0:
        return math.inf
    if norm is NormChoice.NUCLEAR:
        return float(s.sum() * (1.0 / s).sum())
    return float(s[0] / s[-1])


def _kappa_fd(prior, lik, beta, norm) -> float:
    h = 1e-6 * max(1.0, abs(beta))
    kp = condition_number(m_matrix(prior, lik, beta + h), norm)
    km = condition_number(m_matrix(prior, lik, beta - h), norm)
    if not (math.isfinite(kp) and math.isfinite(km)):
        raise AssumptionViolation(f"M(beta) not SPD near beta={beta!r}", beta=beta)
    return (kp - km) / (2.0 * h)


def kappa_gradient(prior: GaussianLogDensity, lik: GaussianLogDensity, beta: float, norm=NormChoice.NUCLEAR) -> float:
    """Analytic ``d kappa(M(beta)) / d beta`` using ``dM/dbeta = -A_h``.

    nuclear:  tr(-A_h) tr(M^-1) + tr(M) tr(M^-2 A_h)
    spectral: -v_max' A_h v_max / l_min + l_max v_min' A_h v_min / l_min^2

    The spectral formula needs simple extreme eigenvalues; when either is
    within 1e-8 (relative) of its neighbour a central difference is used.
    """
    norm = _norm(norm)
    M = m_matrix(prior, lik, beta)
    if not is_spd(M):
        raise AssumptionViolation(f"M(beta) is not SPD at beta={beta!r}", beta=beta)
    A_h = lik.A
    if norm is NormChoice.NUCLEAR:
        Minv = np.linalg.inv(M)
        return float(np.trace(-A_h) * np.trace(Minv) + np.trace(M) * np.trace(Minv @ Minv @ A_h))

    w, V = np.linalg.eigh(M)
    n = w.size
    if n > 1:
        gap_top = (w[-1] - w[-2]) / w[-1]
        gap_bot = (w[1] - w[0]) / w[-1]
        if gap_top < 1e-8 or gap_bot < 1e-8:
            return _kappa_fd(prior, lik, beta, norm)
    l_min, l_max = w[0], w[-1]
    v_min, v_max = V[:, 0], V[:, -1]
    return float(-(v_max @ A_h @ v_max) / l_min + l_max * (v_min @ A_h @ v_min) / l_min**2)


def bvp_rhs(lam: float, beta: float, config: OptimizerConfig, prior, lik) -> float:
    """Second derivative of the optimal schedule: ``mu * d kappa / d beta``."""
    if config.mu == 0.0:
        return 0.0
    try:
        return config.mu * kappa_gradient(prior, lik, beta, config.norm)
    except AssumptionViolation as exc:
        raise AssumptionViolation(f"{exc} (lambda={lam!r})", beta=beta, lam=lam) from exc


class _LostSPD(Exception):
    def __init__(self, lam, beta):
        super().__init__(lam, beta)
        self.lam = lam
        self.beta = beta


def _shoot(slope: float, prior, lik, config: OptimizerConfig, t_eval=None):
    def rhs(lam, y):
        try:
            acc = bvp_rhs(lam, y[0], config, prior, lik)
        except AssumptionViolation:
            raise _LostSPD(lam, y[0]) from None
        return [y[1], acc]

    return solve_ivp(
        rhs, (0.0, 1.0), [0.0, slope], method="RK45",
        rtol=config.rtol, atol=config.atol, t_eval=t_eval,
    )


def _terminal_miss(slope, prior, lik, config) -> Tuple[float, str]:
    """Signed miss ``beta(1) - 1`` for one trial slope, plus a status tag."""
    try:
        sol = _shoot(slope, prior, lik, config)
    except _LostSPD as lost:
        return lost.beta - 1.0, "lost_spd"
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        # Blow-up is scored by the last finite value.
        finite = np.isfinite(sol.y[0])
        last = sol.y[0][finite][-1] if finite.any() else -np.inf
        return float(last) - 1.0, "integration_failed"
    return float(sol.y[0, -1]) - 1.0, "ok"


def solve_optimal_homotopy(prior: GaussianLogDensity, lik: GaussianLogDensity, config: OptimizerConfig = OptimizerConfig()) -> HomotopyPath:
    """Shoot on ``beta'(0)`` until ``beta(1) = 1``; return the sampled path."""
    lo, hi = config.bracket
    f_lo, _ = _terminal_miss(lo, prior, lik, config)
    f_hi, _ = _terminal_miss(hi, prior, lik, config)
    tried = [(lo, f_lo), (hi, f_hi)]
    while f_lo * f_hi > 0:
        if max(abs(lo), abs(hi)) >= config.max_bracket:
            raise BracketError(
                f"bracket [{lo}, {hi}] never straddled beta(1)=1",
                diagnostics={"trials": tried},
            )
        lo = max(2.0 * lo, -config.max_bracket)
        hi = min(2.0 * hi, config.max_bracket)
        f_lo, _ = _terminal_miss(lo, prior, lik, config)
        f_hi, _ = _terminal_miss(hi, prior, lik, config)
        tried += [(lo, f_lo), (hi, f_hi)]

    if abs(f_lo) <= config.tol:
        slope = lo
    elif abs(f_hi) <= config.tol:
        slope = hi
    else:
        slope = 0.5 * (lo + hi)
        for _ in range(config.max_iter):
            slope = 0.5 * (lo + hi)
            f_mid, _ = _terminal_miss(slope, prior, lik, config)
            if abs(f_mid) <= config.tol or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(slope)):
                break
            if (f_mid < 0) == (f_lo < 0):
                lo, f_lo = slope, f_mid
            else:
                hi = slope

    lam = config.lambdas
    try:
        sol = _shoot(slope, prior, lik, config, t_eval=lam)
    except _LostSPD as lost:
        raise AssumptionViolation(
            f"accepted trajectory loses SPD at lambda={lost.lam!r}", beta=lost.beta, lam=lost.lam
        ) from None
    if not sol.success or sol.y.shape[1] != lam.size:
        raise AssumptionViolation("accepted trajectory failed to integrate to lambda=1")
    betas = sol.y[0].copy()
    miss = betas[-1] - 1.0
    if abs(miss) > config.tol:
        raise BracketError(
            f"shooting converged to |beta(1)-1|={abs(miss):.3e} > tol={config.tol:.1e}",
            diagnostics={"slope": slope, "miss": miss},
        )
    betas[0], betas[-1] = 0.0, 1.0
    for b in betas:
        if not is_spd(m_matrix(prior, lik, b)):
            raise AssumptionViolation("accepted trajectory is not SPD on the grid", beta=b)
    return HomotopyPath(lam, betas, sol.y[1].copy())


def objective(path: HomotopyPath, prior, lik, config: OptimizerConfig = OptimizerConfig(),
              method: str = "adaptive") -> float:
    """``J = int 0.5 u^2 + mu kappa(M(beta))`` over the interpolated path.

    ``method="adaptive"`` (default) applies Gauss-Kronrod quadrature on each
    grid interval, which resolves the boundary layer that a sharply
    conditioned prior puts near lambda = 0.  ``method="simpson"`` uses
    composite Simpson on the nodes only.
    """
    kap = np.array([condition_number(m_matrix(prior, lik, b), config.norm) for b in path.betas])
    if not np.all(np.isfinite(kap)):
        return math.inf
    if method == "simpson":
        integrand = 0.5 * path.beta_dots**2 + config.mu * kap
        return float(simpson(integrand, x=path.lambdas))
    if method != "adaptive":
        raise ContractError(f"unknown quadrature method {method!r}")

    def integrand(lam):
        beta, bdot = path(lam)
        return 0.5 * bdot * bdot + config.mu * condition_number(m_matrix(prior, lik, beta), config.norm)

    total = 0.0
    for a, b in zip(path.lambdas[:-1], path.lambdas[1:]):
        val, _ = quad(integrand, a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        if not math.isfinite(val):
            return math.inf
        total += val
    return float(total)


def flow_jacobian_at(prior, lik, Q, beta: float, beta_dot: float) -> np.ndarray:
    """Flow Jacobian ``F = 0.5 Q S - 0.5 beta' S^-1 A_h`` with ``S = A0 + beta A_h``."""
    S = prior.A + beta * lik.A
    try:
        SinvAh = np.linalg.solve(S, lik.A)
    except np.linalg.LinAlgError:
        raise AssumptionViolation(f"singular blended Hessian at beta={beta!r}", beta=beta) from None
    return 0.5 * Q @ S - 0.5 * beta_dot * SinvAh


def guard_modified_beta(optimal: HomotopyPath, baseline: HomotopyPath, prior, lik, Q, norm=NormChoice.NUCLEAR) -> HomotopyPath:
    """Fall back to the baseline at any node where it gives a better-conditioned flow Jacobian."""
    norm = _norm(norm)
    if optimal.lambdas.shape != baseline.lambdas.shape or not np.array_equal(optimal.lambdas, baseline.lambdas):
        raise ContractError("paths must share the same lambda grid")
    Q = np.asarray(Q, dtype=float)
    betas = optimal.betas.copy()
    bdots = optimal.beta_dots.copy()
    for i in range(betas.size):
        k_opt = matrix_condition_number(flow_jacobian_at(prior, lik, Q, optimal.betas[i], optimal.beta_dots[i]), norm)
        k_base = matrix_condition_number(flow_jacobian_at(prior, lik, Q, baseline.betas[i], baseline.beta_dots[i]), norm)
        if k_opt > k_base:
            betas[i] = baseline.betas[i]
            bdots[i] = baseline.beta_dots[i]
    return HomotopyPath(optimal.lambdas, betas, bdots)


@dataclass(frozen=True)
class NonNegativityReport:
    applicable: bool
    hypotheses_hold: bool
    min_beta: float
    conclusion_holds: bool
    solver_bug: bool
    reason: str = ""


def check_theorem_3_2(prior, lik, path: HomotopyPath, norm=NormChoice.SPECTRAL) -> NonNegativityReport:
    """Check the non-negativity guarantee for the optimal schedule.

    Hypotheses: monotone norm (spectral), ``-A0`` and ``-A_h`` both positive
    definite, and ``kappa(-A_h) <= kappa(-A0)``.  Conclusion: ``beta >= 0``.
    """
    norm = _norm(norm)
    min_beta = float(np.min(path.betas))
    conclusion = min_beta >= -1e-8
    if norm is not NormChoice.SPECTRAL:
        return NonNegativityReport(False, False, min_beta, conclusion, False, "nuclear norm is not monotone")
    if not is_spd(-lik.A) or condition_number(-lik.A, norm) == math.inf:
        return NonNegativityReport(False, False, min_beta, conclusion, False, "likelihood Hessian is singular")
    if not is_spd(-prior.A):
        return NonNegativityReport(False, False, min_beta, conclusion, False, "prior Hessian is not negative definite")
    holds = condition_number(-lik.A, norm) <= condition_number(-prior.A, norm)
    if not holds:
        return NonNegativityReport(True, False, min_beta, conclusion, False, "kappa(-A_h) > kappa(-A0)")
    return NonNegativityReport(True, True, min_beta, conclusion, not conclusion,
                           "" if conclusion else "hypotheses hold but beta < 0: solver bug")


__all__ = [
    "NormChoice", "OptimizerConfig", "HomotopyPath", "m_matrix", "condition_number",
    "matrix_condition_number", "kappa_gradient", "bvp_rhs", "solve_optimal_homotopy",
    "objective", "flow_jacobian_at", "guard_modified_beta", "NonNegativityReport", "check_theorem_3_2",
]
