"""Randomized calibration scenarios.

A scenario holds the true positions of the M calibrated sensors, the N
emitters and the new (uncalibrated) sensor, together with the clock offset
of the new sensor and the propagation speed.

Element placement follows the experimental protocol: the distance from the
origin is uniform on ``[0, A]`` (``[0, R]`` for the new sensor), azimuth is
uniform on ``[0, 2pi)`` and, in 3D, elevation is uniform on ``[-pi/2, pi/2]``.
Minimum separation is enforced by redrawing the whole scenario.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

SPEED_OF_SOUND = 343.0
MAX_PLACEMENT_ATTEMPTS = 10_000
ELEMENT_REDRAWS = 1_024
_BATCH = 32
RANK_TOL = 1e-9


class PlacementError(RuntimeError):
    """Raised when the separation constraint cannot be met."""


@dataclass(frozen=True)
class ScenarioSpec:
    M: int = 10
    N: int = 10
    D: int = 3
    aperture: float = 1.0
    new_sensor_range: float = 1.0
    min_separation: float = 0.05
    offset_interval: tuple[float, float] = (0.0, 1.0)
    c: float = SPEED_OF_SOUND
    seed: int | None = None

    def __post_init__(self):
        if self.D not in (2, 3):
            raise ValueError(f"D must be 2 or 3, got {self.D}")
        if self.M < 1:
            raise ValueError(f"need at least one calibrated sensor, got M={self.M}")
        if self.N < self.D + 2:
            raise ValueError(f"need N >= D + 2 = {self.D + 2} emitters, got N={self.N}")
        if self.aperture <= 0 or self.new_sensor_range <= 0:
            raise ValueError("aperture and new_sensor_range must be positive")
        if self.min_separation < 0:
            raise ValueError("min_separation must be non-negative")
        lo, hi = self.offset_interval
        if hi < lo:
            raise ValueError(f"empty offset interval {self.offset_interval}")
        if self.c <= 0:
            raise ValueError("propagation speed must be positive")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Ground truth for one geometric setup.

    ``sensors`` is (M, D), ``emitters`` is (N, D), ``new_sensor`` is (D,).
    """

    sensors: np.ndarray
    emitters: np.ndarray
    new_sensor: np.ndarray
    tau_p: float
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sensors, dtype=float))
        u = np.atleast_2d(np.asarray(self.emitters, dtype=float))
        p = np.asarray(self.new_sensor, dtype=float).reshape(-1)
        if s.shape[1] != u.shape[1] or p.shape[0] != u.shape[1]:
            raise ValueError("sensors, emitters and new_sensor must share a dimension")
        for arr in (s, u, p):
            if not np.all(np.isfinite(arr)):
                raise ValueError("positions must be finite")
        object.__setattr__(self, "sensors", s)
        object.__setattr__(self, "emitters", u)
        object.__setattr__(self, "new_sensor", p)
        object.__setattr__(self, "tau_p", float(self.tau_p))
        object.__setattr__(self, "c", float(self.c))

    @property
    def M(self) -> int:
        return self.sensors.shape[0]

    @property
    def N(self) -> int:
        return self.emitters.shape[0]

    @property
    def D(self) -> int:
        return self.emitters.shape[1]

    @property
    def r_p(self) -> float:
        """Clock offset expressed in meters."""
        return self.c * self.tau_p

    @property
    def gamma(self) -> np.ndarray:
        return np.append(self.new_sensor, self.r_p)

    def all_positions(self) -> np.ndarray:
        return np.vstack([self.sensors, self.emitters, self.new_sensor[None, :]])

    def translated(self, t) -> "Scenario":
        t = np.asarray(t, dtype=float)
        return Scenario(self.sensors + t, self.emitters + t, self.new_sensor + t, self.tau_p, self.c)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            np.array_equal(self.sensors, other.sensors)
            and np.array_equal(self.emitters, other.emitters)
            and np.array_equal(self.new_sensor, other.new_sensor)
            and self.tau_p == other.tau_p
            and self.c == other.c
        )


def _random_points(rng: np.random.Generator, n: int, radius: float, D: int) -> np.ndarray:
    r = rng.uniform(0.0, radius, size=n)
    az = rng.uniform(0.0, 2 * np.pi, size=n)
    if D == 2:
        return np.column_stack([r * np.cos(az), r * np.sin(az)])
    el = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
    return np.column_stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)])


def _place_sequentially(rng, radii, D: int, min_sep: float) -> np.ndarray | None:
    """One placement attempt: each element is redrawn until it clears those already placed.

    Candidates are drawn in batches; the first one that clears is kept. Returns
    ``None`` when an element exhausts ``ELEMENT_REDRAWS`` candidates.
    """
    pts = np.empty((len(radii), D))
    for k, radius in enumerate(radii):
        for _ in range(ELEMENT_REDRAWS // _BATCH):
            cand = _random_points(rng, _BATCH, radius, D)
            if min_sep == 0 or k == 0:
                pts[k] = cand[0]
                break
            clear = np.min(np.linalg.norm(cand[:, None, :] - pts[None, :k, :], axis=2), axis=1) >= min_sep
            if clear.any():
                pts[k] = cand[np.argmax(clear)]
                break
        else:
            return None
    return pts


def generate_scenario(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> Scenario:
    """Draw a scenario satisfying the spec's placement constraints.

    ``rng`` defaults to a generator seeded with ``spec.seed``. Raises
    :class:`PlacementError` when no valid scenario is found within
    ``MAX_PLACEMENT_ATTEMPTS`` full attempts. Elements are placed in the
    order sensors, emitters, new sensor; within an attempt an element that
    lands closer than ``min_separation`` to an earlier one is redrawn.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    # two elements can be at most 2 * max radius apart
    if spec.min_separation > 2 * max(spec.aperture, spec.new_sensor_range):
        raise PlacementError(
            f"min_separation={spec.min_separation} m cannot fit in aperture {spec.aperture} m"
        )
    lo, hi = spec.offset_interval
    radii = [spec.aperture] * (spec.M + spec.N) + [spec.new_sensor_range]
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        pts = _place_sequentially(rng, radii, spec.D, spec.min_separation)
        if pts is None:
            continue
        tau_p = rng.uniform(lo, hi)
        return Scenario(pts[: spec.M], pts[spec.M : spec.M + spec.N], pts[-1], tau_p, spec.c)
    raise PlacementError(
        f"no scenario with min_separation={spec.min_separation} m after "
        f"{MAX_PLACEMENT_ATTEMPTS} attempts (aperture {spec.aperture} m)"
    )


@dataclass
class GeometryReport:
    M: int
    N: int
    D: int
    min_separation: float
    emitter_singular_values: np.ndarray
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    @property
    def emitter_rank(self) -> int:
        sv = self.emitter_singular_values
        if sv.size == 0 or sv[0] == 0:
            return 0
        return int(np.sum(sv > RANK_TOL * sv[0]))


def emitter_differences(u: np.ndarray, reference: int = -1) -> np.ndarray:
    """Rows ``(u_ref - u_j)`` for every non-reference emitter."""
    u = np.asarray(u, dtype=float)
    ref = reference % len(u)
    return np.delete(u[ref] - u, ref, axis=0)


def validate_geometry(
    scenario: Scenario, D: int | None = None, min_separation: float | None = None
) -> GeometryReport:
    """Check estimability of a scenario. Never raises; problems are listed."""
    D = scenario.D if D is None else D
    pts = scenario.all_positions()
    sep = float(pdist(pts).min()) if len(pts) > 1 else np.inf
    if scenario.N >= 2:
        sv = np.linalg.svd(emitter_differences(scenario.emitters), compute_uv=False)
    else:
        sv = np.zeros(0)
    report = GeometryReport(scenario.M, scenario.N, D, sep, sv)
    if scenario.M < 1:
        report.problems.append(f"M={scenario.M} < 1")
    if scenario.N < D + 2:
        report.problems.append(f"N={scenario.N} < D + 2 = {D + 2}")
    if report.emitter_rank < D:
        report.problems.append(
            f"emitter differences have rank {report.emitter_rank} < D={D} (degenerate emitter geometry)"
        )
    if min_separation is not None and sep < min_separation:
        report.problems.append(f"min pairwise separation {sep:.3g} m < {min_separation} m")
    elif sep == 0.0:
        report.problems.append("coincident elements")
    return report
