"""Closed-form calibration of a new sensor from range differences.

Squaring ``beta_ij - r_p = -||u_j - p||`` (with ``beta_ij = r_ij - ||u_j - s_i||``)
and subtracting the equation of a reference emitter gives, for every sensor
``i`` and non-reference emitter ``j``, the linear relation

    0.5 * (beta_ij**2 - beta_iref**2 - |u_j|**2 + |u_ref|**2)
        = (u_ref - u_j) . p + (beta_ij - beta_iref) * r_p

which is solved for ``gamma = [p, r_p]`` by least squares, then refined by
weighted least squares whose weight is the first-order covariance ``Psi`` of
the equation error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
import scipy.linalg

from .geometry import RANK_TOL, SPEED_OF_SOUND, Scenario
from .measurement import CovarianceSet, MeasurementSet, distances

COINCIDENT_TOL = 1e-9
# Psi is rejected when its Cholesky diagonal spans more than this ratio squared
PSI_COND_LIMIT = 1e15


class RankDeficientError(np.linalg.LinAlgError):
    """The design matrix does not have full column rank."""

    def __init__(self, singular_values):
        self.singular_values = np.asarray(singular_values)
        super().__init__(
            f"design matrix is rank deficient: smallest singular value "
            f"{self.singular_values[-1]:.3e} vs largest {self.singular_values[0]:.3e} "
            f"(degenerate emitter geometry?)"
        )


class SingularPsiError(np.linalg.LinAlgError):
    """The equation-error covariance cannot be factorized."""


class CoincidentPointsError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    """``reference_emitter`` is a 0-based index; negative values count from the end."""

    wls_iterations: int = 1
    regularization_eps: float = 0.0
    reference_emitter: int = -1

    def __post_init__(self):
        if self.wls_iterations < 0:
            raise ValueError("wls_iterations must be >= 0")
        if self.regularization_eps < 0:
            raise ValueError("regularization_eps must be >= 0")


@dataclass(frozen=True, eq=False)
class LinearSystem:
    h: np.ndarray
    G: np.ndarray
    reference: int

    @property
    def D(self) -> int:
        return self.G.shape[1] - 1


@dataclass(frozen=True, eq=False)
class WeightMatrices:
    W_r: np.ndarray
    W_u: np.ndarray
    W_s: np.ndarray
    W_kappa: np.ndarray


@dataclass(frozen=True, eq=False)
class CalibrationEstimate:
    p_hat: np.ndarray
    r_p_hat: float
    c: float = SPEED_OF_SOUND
    method: str = "LS"
    iterations_used: int = 0
    psi_condition: float = np.nan
    status: str = "ok"

    @property
    def tau_p_hat(self) -> float:
        return self.r_p_hat / self.c

    @property
    def gamma(self) -> np.ndarray:
        return np.append(self.p_hat, self.r_p_hat)

    @property
    def degraded(self) -> bool:
        return self.status != "ok"


def _reference_index(reference: int, N: int) -> int:
    if not -N <= reference < N:
        raise IndexError(f"reference emitter {reference} out of range for N={N}")
    return reference % N


def compute_beta(r_tilde, u_tilde, s_tilde) -> np.ndarray:
    """``beta_ij = r_ij - ||u_j - s_i||``, (M, N)."""
    return np.asarray(r_tilde, dtype=float) - distances(np.asarray(s_tilde, float), np.asarray(u_tilde, float))


def build_linear_system(beta, u_tilde, options: SolverOptions | None = None) -> LinearSystem:
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    u = np.asarray(u_tilde, dtype=float)
    M, N = beta.shape
    D = u.shape[1]
    if N < D + 2:
        raise ValueError(f"need N >= D + 2 = {D + 2} emitters, got N={N}")
    if M < 1:
        raise ValueError("need at least one sensor")
    ref = _reference_index((options or SolverOptions()).reference_emitter, N)
    keep = np.delete(np.arange(N), ref)

    uu = np.einsum("jd,jd->j", u, u)
    h = 0.5 * (beta[:, keep] ** 2 - beta[:, [ref]] ** 2 - uu[keep] + uu[ref])
    dbeta = beta[:, keep] - beta[:, [ref]]
    du = u[ref] - u[keep]
    G = np.concatenate([np.broadcast_to(du, (M, N - 1, D)), dbeta[:, :, None]], axis=2)
    return LinearSystem(h.reshape(-1), G.reshape(M * (N - 1), D + 1), ref)


def _lstsq(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    U, sv, Vt = np.linalg.svd(G, full_matrices=False)
    if sv[0] == 0 or sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficientError(sv)
    return Vt.T @ ((U.T @ h) / sv)


def _estimate(gamma, c, **kw) -> CalibrationEstimate:
    return CalibrationEstimate(p_hat=np.array(gamma[:-1]), r_p_hat=float(gamma[-1]), c=c, **kw)


def ls_solve(sys: LinearSystem, c: float = SPEED_OF_SOUND) -> CalibrationEstimate:
    """Ordinary least squares through an SVD of ``G``."""
    return _estimate(_lstsq(sys.G, sys.h), c, method="LS")


def build_weight_matrices(u_ref, s_ref, p_ref, reference: int = -1) -> WeightMatrices:
    """First-order noise weights of the equation error at the given positions."""
    u = np.asarray(u_ref, dtype=float)
    s = np.asarray(s_ref, dtype=float)
    p = np.asarray(p_ref, dtype=float)
    N, D = u.shape
    M = s.shape[0]
    ref = _reference_index(reference, N)
    keep = np.delete(np.arange(N), ref)
    K = N - 1
    rows = np.arange(M * K).reshape(M, K)

    d_up = np.linalg.norm(u - p, axis=1)  # (N,)
    diff_us = u[None, :, :] - s[:, None, :]  # (M, N, D)
    d_us = np.linalg.norm(diff_us, axis=-1)
    if np.any(d_us < COINCIDENT_TOL):
        i, j = np.argwhere(d_us < COINCIDENT_TOL)[0]
        raise CoincidentPointsError(f"emitter {j} coincides with sensor {i}")
    unit_us = diff_us / d_us[:, :, None]

    a = -d_up
    W_r = np.zeros((M * K, M * N))
    W_kappa = np.zeros((M * K, M * N))
    col_j = np.arange(M)[:, None] * N + keep[None, :]
    col_ref = np.broadcast_to(np.arange(M)[:, None] * N + ref, (M, K))
    W_r[rows, col_j] = a[keep]
    W_r[rows, col_ref] = -a[ref]
    W_kappa[rows, col_j] = 0.5
    W_kappa[rows, col_ref] = -0.5

    # weights of du_j: ||u_j - p|| (u_j - s_i)/||u_j - s_i|| - (u_j - p)
    a_u = d_up[None, :, None] * unit_us - (u - p)[None, :, :]  # (M, N, D)
    W_u = np.zeros((M, K, N, D))
    W_u[:, np.arange(K), keep, :] = a_u[:, keep, :]
    W_u[:, :, ref, :] = -a_u[:, ref, :][:, None, :]
    W_u = W_u.reshape(M * K, N * D)

    # weights of ds_i: -||u_j - p|| (u_j - s_i)/||u_j - s_i||, differenced against the reference
    a_s = -d_up[None, :, None] * unit_us
    blocks = a_s[:, keep, :] - a_s[:, [ref], :]  # (M, K, D)
    W_s = np.zeros((M, K, M, D))
    W_s[np.arange(M), :, np.arange(M), :] = blocks
    W_s = W_s.reshape(M * K, M * D)
    return WeightMatrices(W_r, W_u, W_s, W_kappa)


def assemble_psi(w: WeightMatrices, q: CovarianceSet) -> np.ndarray:
    """First-order covariance of the equation error (second-order terms dropped)."""
    psi = w.W_r @ q.Q_r @ w.W_r.T + w.W_u @ q.Q_u @ w.W_u.T + w.W_s @ q.Q_s @ w.W_s.T
    cross = w.W_r @ q.Q_ru @ w.W_u.T + w.W_r @ q.Q_rs @ w.W_s.T + w.W_u @ q.Q_us @ w.W_s.T
    psi = psi + cross + cross.T
    return 0.5 * (psi + psi.T)


def _whitener(psi: np.ndarray, eps: float = 0.0) -> tuple[np.ndarray, float]:
    psi = np.asarray(psi, dtype=float)
    n = len(psi)
    if eps > 0:
        psi = psi + eps * np.trace(psi) / n * np.eye(n)
    try:
        L = scipy.linalg.cholesky(psi, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise SingularPsiError(f"Psi is not positive definite: {err}") from None
    d = np.abs(np.diag(L))
    cond = float((d.max() / d.min()) ** 2) if d.min() > 0 else np.inf
    if not cond < PSI_COND_LIMIT:
        raise SingularPsiError(f"Psi is ill-conditioned (condition estimate {cond:.3e})")
    return L, cond


def wls_solve(
    sys: LinearSystem, psi: np.ndarray, c: float = SPEED_OF_SOUND, regularization_eps: float = 0.0
) -> CalibrationEstimate:
    """Weighted least squares ``argmin (h - G g)^T Psi^-1 (h - G g)``.

    Solved by whitening with the Cholesky factor of ``Psi`` and an SVD least
    squares on the whitened system.
    """
    L, cond = _whitener(psi, regularization_eps)
    Gw = scipy.linalg.solve_triangular(L, sys.G, lower=True)
    hw = scipy.linalg.solve_triangular(L, sys.h, lower=True)
    return _estimate(_lstsq(Gw, hw), c, method="WLS", psi_condition=cond)


def iterate_estimates(
    meas: MeasurementSet,
    q: CovarianceSet,
    options: SolverOptions | None = None,
    c: float = SPEED_OF_SOUND,
    truth: Scenario | None = None,
) -> Iterator[CalibrationEstimate]:
    """Yield the LS estimate followed by each WLS iterate.

    Errors from the LS step propagate; a failing WLS step raises as well, so
    callers can decide how to treat partial sequences. With ``truth`` the
    weights are built at the true positions (for bound comparisons only).
    """
    options = options or SolverOptions()
    sys = build_linear_system(compute_beta(meas.r_tilde, meas.u_tilde, meas.s_tilde), meas.u_tilde, options)
    est = ls_solve(sys, c)
    yield est
    for k in range(1, options.wls_iterations + 1):
        if truth is None:
            w = build_weight_matrices(meas.u_tilde, meas.s_tilde, est.p_hat, sys.reference)
        else:
            w = build_weight_matrices(truth.emitters, truth.sensors, truth.new_sensor, sys.reference)
        psi = assemble_psi(w, q)
        est = replace(
            wls_solve(sys, psi, c, options.regularization_eps), method=f"WLS-{k}", iterations_used=k
        )
        yield est


def calibrate(
    meas: MeasurementSet,
    q: CovarianceSet,
    options: SolverOptions | None = None,
    c: float = SPEED_OF_SOUND,
    truth: Scenario | None = None,
) -> CalibrationEstimate:
    """LS initialization followed by ``options.wls_iterations`` WLS refinements.

    If a WLS step fails to factorize ``Psi`` the last good estimate is
    returned with ``status="degraded"``.
    """
    it = iterate_estimates(meas, q, options, c, truth)
    est = next(it)
    try:
        for est in it:
            pass
    except SingularPsiError:
        return replace(est, status="degraded")
    return est
