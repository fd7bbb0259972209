"""Theoretical performance of the calibration estimator.

Covers the first-order estimator covariance ``(G^T Psi^-1 G)^-1`` (WLS-T),
the Fisher information / CRLB over ``theta = [gamma; u; s]`` under
independent Gaussian noise, and the linearization of the sensor-emitter
distance error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .estimator import (
    COINCIDENT_TOL,
    SingularPsiError,
    SolverOptions,
    _whitener,
    assemble_psi,
    build_linear_system,
    build_weight_matrices,
    compute_beta,
)
from .geometry import Scenario
from .measurement import CovarianceSet, true_range_diffs

FISHER_COND_LIMIT = 1e12


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


class SingularFisherError(np.linalg.LinAlgError):
    pass


def _unit_rows(diff: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    if np.any(norm < COINCIDENT_TOL):
        raise ValueError("coincident points: Jacobian undefined")
    return diff / norm


def partial_r_wrt_gamma(u, p, M: int) -> np.ndarray:
    """d r / d [p, r_p], (N*M, D+1); rows ``[(u_j - p)^T / ||u_j - p||, 1]``."""
    u = np.asarray(u, dtype=float)
    block = np.hstack([_unit_rows(u - np.asarray(p, dtype=float)), np.ones((len(u), 1))])
    return np.tile(block, (M, 1))


def partial_r_wrt_u(u, s, p) -> np.ndarray:
    """d r / d u, (N*M, D*N). Row (i, j) is nonzero only in emitter block j."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    N, D = u.shape
    M = s.shape[0]
    a = _unit_rows(u[None, :, :] - s[:, None, :]) - _unit_rows(u - np.asarray(p, dtype=float))[None]
    J = np.zeros((M, N, N, D))
    J[:, np.arange(N), np.arange(N), :] = a
    return J.reshape(M * N, N * D)


def partial_r_wrt_s(u, s) -> np.ndarray:
    """d r / d s, (N*M, D*M). Row (i, j) is nonzero only in sensor block i."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    N, D = u.shape
    M = s.shape[0]
    J = np.zeros((M, N, M, D))
    J[np.arange(M), :, np.arange(M), :] = -_unit_rows(u[None, :, :] - s[:, None, :])
    return J.reshape(M * N, M * D)


def _chol(Q: np.ndarray, name: str):
    try:
        return scipy.linalg.cho_factor(Q, lower=True)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(f"{name} is not positive definite") from None


def fisher_information(scenario: Scenario, q: CovarianceSet) -> np.ndarray:
    """Fisher information over ``theta = [p, r_p, u, s]``.

    Assumes independent ``r``, ``u`` and ``s`` noise; cross-covariance blocks
    in ``q`` are ignored.
    """
    u, s, p = scenario.emitters, scenario.sensors, scenario.new_sensor
    J = np.hstack([partial_r_wrt_gamma(u, p, scenario.M), partial_r_wrt_u(u, s, p), partial_r_wrt_s(u, s)])
    fr = _chol(q.Q_r, "Q_r")
    fu = _chol(q.Q_u, "Q_u")
    fs = _chol(q.Q_s, "Q_s")
    F = J.T @ scipy.linalg.cho_solve(fr, J)
    g = scenario.D + 1
    nu = u.size
    F[g : g + nu, g : g + nu] += scipy.linalg.cho_solve(fu, np.eye(nu))
    F[g + nu :, g + nu :] += scipy.linalg.cho_solve(fs, np.eye(s.size))
    return 0.5 * (F + F.T)


@dataclass(frozen=True, eq=False)
class CrlbReport:
    fisher: np.ndarray
    crlb: np.ndarray
    gamma_bounds: np.ndarray
    rmse_loc_bound: float
    rmse_syn_bound: float
    condition: float
    c: float

    @property
    def reliable(self) -> bool:
        return self.condition <= FISHER_COND_LIMIT

    @property
    def gamma_cov(self) -> np.ndarray:
        g = len(self.gamma_bounds)
        return self.crlb[:g, :g]


def theoretical_rmse(cov: np.ndarray, c: float) -> tuple[float, float]:
    """Localization (m) and synchronization (s) RMSE implied by a covariance of gamma."""
    D = cov.shape[0] - 1
    d = np.diag(cov)
    return float(np.sqrt(np.sum(d[:D]))), float(np.sqrt(d[D]) / c)


def crlb(scenario: Scenario, q: CovarianceSet) -> CrlbReport:
    F = fisher_information(scenario, q)
    # Jacobi scaling keeps the condition estimate independent of unit choice
    scale = 1.0 / np.sqrt(np.diag(F))
    Fs = F * scale[:, None] * scale[None, :]
    eig = np.linalg.eigvalsh(Fs)
    if eig[0] <= 0:
        raise SingularFisherError(f"Fisher information is singular (min eigenvalue {eig[0]:.3e})")
    try:
        fac = scipy.linalg.cho_factor(Fs, lower=True)
    except np.linalg.LinAlgError:
        raise SingularFisherError("Fisher information is not positive definite") from None
    inv = scipy.linalg.cho_solve(fac, np.eye(len(F))) * scale[:, None] * scale[None, :]
    inv = 0.5 * (inv + inv.T)
    g = scenario.D + 1
    loc, syn = theoretical_rmse(inv[:g, :g], scenario.c)
    return CrlbReport(
        fisher=F,
        crlb=inv,
        gamma_bounds=np.diag(inv)[:g].copy(),
        rmse_loc_bound=loc,
        rmse_syn_bound=syn,
        condition=float(eig[-1] / eig[0]),
        c=scenario.c,
    )


def estimator_covariance(G, psi) -> np.ndarray:
    """``(G^T Psi^-1 G)^-1`` computed through a whitened QR factorization."""
    G = np.asarray(G, dtype=float)
    L, _ = _whitener(psi)
    Gw = scipy.linalg.solve_triangular(L, G, lower=True)
    R = np.linalg.qr(Gw, mode="r")
    if np.min(np.abs(np.diag(R))) <= 1e-12 * np.max(np.abs(np.diag(R))):
        raise SingularPsiError("G^T Psi^-1 G is singular")
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    cov = Rinv @ Rinv.T
    return 0.5 * (cov + cov.T)


def wls_theoretical_covariance(scenario: Scenario, q: CovarianceSet, reference: int = -1) -> np.ndarray:
    """WLS-T covariance for a scenario, with ``G`` and ``Psi`` at the truth."""
    beta = compute_beta(true_range_diffs(scenario), scenario.emitters, scenario.sensors)
    sys = build_linear_system(beta, scenario.emitters, SolverOptions(reference_emitter=reference))
    w = build_weight_matrices(scenario.emitters, scenario.sensors, scenario.new_sensor, sys.reference)
    return estimator_covariance(sys.G, assemble_psi(w, q))


def linearized_eta_delta(u, s, du, ds) -> float:
    """First-order change of ``||u - s||`` when u and s move by du and ds."""
    diff = np.asarray(u, dtype=float) - np.asarray(s, dtype=float)
    eta = np.linalg.norm(diff)
    if eta < COINCIDENT_TOL:
        raise ValueError("u and s coincide")
    return float(diff @ (np.asarray(du, dtype=float) - np.asarray(ds, dtype=float)) / eta)
