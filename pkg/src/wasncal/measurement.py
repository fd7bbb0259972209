"""Noise-free and noisy measurements, plus their covariance blocks.

Stacking convention, used by every matrix in the package:

* range differences are stacked sensor-major, ``r[i * N + j]`` for sensor
  ``i`` and emitter ``j`` (i.e. ``r_matrix.ravel()``);
* emitter and sensor positions are stacked coordinate-contiguously,
  ``u[j * D + d]`` (i.e. ``u_matrix.ravel()``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Scenario


def db_to_sigma(db: float) -> float:
    """Invert ``10 * log10(sigma)``; ``-inf`` maps to zero."""
    return float(10.0 ** (db / 10.0))


def sigma_to_db(sigma: float) -> float:
    return float(10.0 * np.log10(sigma)) if sigma > 0 else -np.inf


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviations in meters. ``sigma_r_first`` overrides sensor 1's TDOAs."""

    sigma_r: float = 1e-3
    sigma_u: float = 1e-3
    sigma_s: float = 1e-3
    sigma_r_first: float | None = None

    def __post_init__(self):
        vals = [self.sigma_r, self.sigma_u, self.sigma_s]
        if self.sigma_r_first is not None:
            vals.append(self.sigma_r_first)
        if any(v < 0 for v in vals):
            raise ValueError("noise standard deviations must be non-negative")

    @classmethod
    def from_db(cls, sigma_r=-30.0, sigma_u=-30.0, sigma_s=-30.0, sigma_r_first=None) -> "NoiseSpec":
        first = None if sigma_r_first is None else db_to_sigma(sigma_r_first)
        return cls(db_to_sigma(sigma_r), db_to_sigma(sigma_u), db_to_sigma(sigma_s), first)

    @property
    def is_zero(self) -> bool:
        first = self.sigma_r if self.sigma_r_first is None else self.sigma_r_first
        return self.sigma_r == 0 and self.sigma_u == 0 and self.sigma_s == 0 and first == 0


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Noisy observations: ``r_tilde`` (M, N), ``u_tilde`` (N, D), ``s_tilde`` (M, D)."""

    r_tilde: np.ndarray
    u_tilde: np.ndarray
    s_tilde: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.r_tilde, dtype=float))
        u = np.atleast_2d(np.asarray(self.u_tilde, dtype=float))
        s = np.atleast_2d(np.asarray(self.s_tilde, dtype=float))
        if r.shape != (s.shape[0], u.shape[0]) or u.shape[1] != s.shape[1]:
            raise ValueError(
                f"inconsistent shapes: r {r.shape}, u {u.shape}, s {s.shape}"
            )
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(u)) and np.all(np.isfinite(s))):
            raise ValueError("measurements must be finite")
        object.__setattr__(self, "r_tilde", r)
        object.__setattr__(self, "u_tilde", u)
        object.__setattr__(self, "s_tilde", s)

    @property
    def M(self) -> int:
        return self.s_tilde.shape[0]

    @property
    def N(self) -> int:
        return self.u_tilde.shape[0]

    @property
    def D(self) -> int:
        return self.u_tilde.shape[1]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.r_tilde.ravel(), self.u_tilde.ravel(), self.s_tilde.ravel()

    @classmethod
    def from_stacked(cls, r, u, s, M: int, N: int, D: int) -> "MeasurementSet":
        return cls(np.reshape(r, (M, N)), np.reshape(u, (N, D)), np.reshape(s, (M, D)))


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    Q_r: np.ndarray
    Q_u: np.ndarray
    Q_s: np.ndarray
    Q_ru: np.ndarray | None = None
    Q_rs: np.ndarray | None = None
    Q_us: np.ndarray | None = None

    def __post_init__(self):
        nr, nu, ns = len(self.Q_r), len(self.Q_u), len(self.Q_s)
        for name, shape in (("Q_ru", (nr, nu)), ("Q_rs", (nr, ns)), ("Q_us", (nu, ns))):
            val = getattr(self, name)
            val = np.zeros(shape) if val is None else np.asarray(val, dtype=float)
            if val.shape != shape:
                raise ValueError(f"{name} has shape {val.shape}, expected {shape}")
            object.__setattr__(self, name, val)
        for name in ("Q_r", "Q_u", "Q_s"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def joint(self) -> np.ndarray:
        """Full covariance of the stacked vector ``[dr; du; ds]``."""
        return np.block(
            [
                [self.Q_r, self.Q_ru, self.Q_rs],
                [self.Q_ru.T, self.Q_u, self.Q_us],
                [self.Q_rs.T, self.Q_us.T, self.Q_s],
            ]
        )

    def scaled(self, factor: float) -> "CovarianceSet":
        return CovarianceSet(*(factor * getattr(self, k) for k in ("Q_r", "Q_u", "Q_s", "Q_ru", "Q_rs", "Q_us")))

    @property
    def is_zero(self) -> bool:
        return not any(np.any(getattr(self, k)) for k in ("Q_r", "Q_u", "Q_s", "Q_ru", "Q_rs", "Q_us"))


def distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances, ``out[i, j] = ||b[j] - a[i]||``."""
    return np.linalg.norm(b[None, :, :] - a[:, None, :], axis=-1)


def true_tdoas(scenario: Scenario) -> np.ndarray:
    """Noise-free TDOAs in seconds, (M, N)."""
    d_us = distances(scenario.sensors, scenario.emitters)
    d_up = np.linalg.norm(scenario.emitters - scenario.new_sensor, axis=1)
    return (d_us - d_up[None, :]) / scenario.c + scenario.tau_p


def true_range_diffs(scenario: Scenario) -> np.ndarray:
    """Noise-free range differences ``||u_j - s_i|| - ||u_j - p|| + r_p`` in meters, (M, N)."""
    d_us = distances(scenario.sensors, scenario.emitters)
    d_up = np.linalg.norm(scenario.emitters - scenario.new_sensor, axis=1)
    return d_us - d_up[None, :] + scenario.r_p


def corrupt(scenario: Scenario, noise: NoiseSpec, rng: np.random.Generator) -> MeasurementSet:
    """Add independent zero-mean Gaussian noise to the true measurements.

    Standard normals are drawn in a fixed order (r, then u, then s) and then
    scaled, so the same generator state gives common random numbers across
    different noise levels.
    """
    M, N, D = scenario.M, scenario.N, scenario.D
    z_r = rng.standard_normal((M, N))
    z_u = rng.standard_normal((N, D))
    z_s = rng.standard_normal((M, D))
    sig_r = np.full((M, 1), noise.sigma_r)
    if noise.sigma_r_first is not None:
        sig_r[0] = noise.sigma_r_first
    return MeasurementSet(
        true_range_diffs(scenario) + sig_r * z_r,
        scenario.emitters + noise.sigma_u * z_u,
        scenario.sensors + noise.sigma_s * z_s,
    )


def corrupt_with_covariance(scenario: Scenario, q: CovarianceSet, rng: np.random.Generator) -> MeasurementSet:
    """Draw ``[dr; du; ds]`` jointly from the full (possibly correlated) covariance."""
    M, N, D = scenario.M, scenario.N, scenario.D
    cov = q.joint()
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    delta = root @ rng.standard_normal(len(cov))
    nr, nu = M * N, N * D
    return MeasurementSet(
        true_range_diffs(scenario) + delta[:nr].reshape(M, N),
        scenario.emitters + delta[nr : nr + nu].reshape(N, D),
        scenario.sensors + delta[nr + nu :].reshape(M, D),
    )


def build_covariances(noise: NoiseSpec, M: int, N: int, D: int) -> CovarianceSet:
    var_r = np.full(N * M, noise.sigma_r**2)
    if noise.sigma_r_first is not None:
        var_r[:N] = noise.sigma_r_first**2
    return CovarianceSet(
        np.diag(var_r),
        noise.sigma_u**2 * np.eye(N * D),
        noise.sigma_s**2 * np.eye(M * D),
    )
