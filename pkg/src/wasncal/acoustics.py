"""Anechoic signal-level front end: synthesis and GCC-PHAT TDOA estimation.

Emitters fire one after another. Each emission occupies a slot of
``signal_length + 2 * guard`` samples, where the guard covers the largest
propagation delay plus the largest clock offset, so that the copies of one
emission never overlap those of another. Channels ``0 .. M-1`` are the
calibrated sensors (network clock); channel ``M`` is the new sensor, whose
clock runs ``tau_p`` behind, i.e. it time-stamps every arrival ``tau_p``
earlier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.signal

from .geometry import Scenario
from .measurement import MeasurementSet, distances

PHAT_FLOOR = 1e-12
FLAT_PEAK_TOL = 1e-12
GUARD_PAD = 16  # samples added to every guard interval


class DurationTooShortError(ValueError):
    pass


class FlatPeakError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RecordingSet:
    """Multichannel recording of a sequential emission schedule.

    ``channels`` is (M + 1, n_samples); ``slot_starts[j]`` is the first sample
    of emitter j's slot and the emission itself begins ``guard`` samples later
    on the network clock.
    """

    sample_rate: float
    channels: np.ndarray
    slot_starts: np.ndarray
    slot_length: int
    guard: int
    signal_length: int
    attenuation_model: str = "none"

    @property
    def duration(self) -> float:
        return self.channels.shape[1] / self.sample_rate

    @property
    def M(self) -> int:
        return self.channels.shape[0] - 1

    @property
    def N(self) -> int:
        return len(self.slot_starts)

    def slot(self, j: int) -> np.ndarray:
        a = self.slot_starts[j]
        return self.channels[:, a : a + self.slot_length]


@dataclass(frozen=True)
class TdoaEstimate:
    value: float
    peak_quality: float
    search_window: float
    flagged: bool = False


@dataclass(frozen=True)
class TdoaOptions:
    """Search parameters for :func:`estimate_tdoas`.

    ``max_distance`` bounds ``||s_i - p||``; by default twice the largest
    distance of any known element from the origin.
    """

    max_offset: float = 1.0
    max_distance: float | None = None
    min_peak_quality: float = 2.0


@dataclass(frozen=True, eq=False)
class TdoaMatrix:
    values: np.ndarray  # (M, N) seconds
    peak_quality: np.ndarray
    flagged: np.ndarray
    search_window: float

    def __getitem__(self, idx) -> TdoaEstimate:
        i, j = idx
        return TdoaEstimate(
            float(self.values[i, j]), float(self.peak_quality[i, j]), self.search_window, bool(self.flagged[i, j])
        )

    def to_measurements(self, u_tilde, s_tilde, c: float) -> MeasurementSet:
        return MeasurementSet(c * self.values, u_tilde, s_tilde)


def white_noise(duration: float, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(int(round(duration * sample_rate)))


def fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    """Circularly delay ``x`` by ``delay`` samples through a linear phase shift."""
    n = len(x)
    X = scipy.fft.rfft(x)
    k = np.arange(len(X))
    return scipy.fft.irfft(X * np.exp(-2j * np.pi * k * delay / n), n)


def _guard_samples(scenario: Scenario, sample_rate: float, max_offset: float) -> int:
    pts = scenario.all_positions()
    span = np.max(distances(pts, pts))
    return int(math.ceil((span / scenario.c + max_offset) * sample_rate)) + GUARD_PAD


def synthesize_anechoic(
    scenario: Scenario,
    signal,
    sample_rate: float,
    rng: np.random.Generator | None = None,
    *,
    max_offset: float | None = None,
    slot_duration: float | None = None,
    attenuation: str = "none",
    snr_db: float | None = None,
) -> RecordingSet:
    """Free-field recordings of ``signal`` emitted from every emitter in turn.

    Sensor i hears emitter j after ``||u_j - s_i|| / c``; the new sensor
    after ``||u_j - p|| / c - tau_p`` on its own clock. ``max_offset``
    (default ``|tau_p|``) sizes the guard interval; pass the largest offset
    the estimator will search. ``snr_db`` adds white sensor noise drawn from
    ``rng``. ``attenuation="inverse-distance"`` scales each copy by ``1/d``.
    """
    if attenuation not in ("none", "inverse-distance"):
        raise ValueError(f"unknown attenuation model {attenuation!r}")
    signal = np.asarray(signal, dtype=float)
    n_sig = len(signal)
    offset = abs(scenario.tau_p) if max_offset is None else max(max_offset, abs(scenario.tau_p))
    guard = _guard_samples(scenario, sample_rate, offset)
    slot_len = n_sig + 2 * guard
    if slot_duration is not None:
        needed = slot_len / sample_rate
        if slot_duration * sample_rate < slot_len:
            raise DurationTooShortError(
                f"slot of {slot_duration} s cannot hold a {n_sig / sample_rate} s signal plus "
                f"propagation and offset margins ({needed:.4f} s needed)"
            )
        slot_len = int(round(slot_duration * sample_rate))
    M, N = scenario.M, scenario.N
    d_sensor = distances(scenario.sensors, scenario.emitters)  # (M, N)
    d_new = np.linalg.norm(scenario.emitters - scenario.new_sensor, axis=1)

    base = np.zeros(slot_len)
    base[:n_sig] = signal
    spec = scipy.fft.rfft(base)
    phase_step = -2j * np.pi * np.arange(len(spec)) / slot_len
    channels = np.zeros((M + 1, N * slot_len))
    for j in range(N):
        dist = np.append(d_sensor[:, j], d_new[j])
        delay = guard + dist / scenario.c * sample_rate
        delay[M] -= scenario.tau_p * sample_rate
        gain = 1.0 / np.maximum(dist, 1e-3) if attenuation == "inverse-distance" else np.ones(M + 1)
        block = scipy.fft.irfft(spec[None, :] * np.exp(phase_step[None, :] * delay[:, None]), slot_len, axis=1)
        channels[:, j * slot_len : (j + 1) * slot_len] = gain[:, None] * block
    if snr_db is not None:
        if rng is None:
            raise ValueError("sensor noise requires an rng")
        noise_sd = np.sqrt(np.mean(signal**2)) * 10 ** (-snr_db / 20)
        channels += noise_sd * rng.standard_normal(channels.shape)
    return RecordingSet(
        sample_rate=float(sample_rate),
        channels=channels,
        slot_starts=np.arange(N) * slot_len,
        slot_length=slot_len,
        guard=guard,
        signal_length=n_sig,
        attenuation_model=attenuation,
    )


def gcc_phat(x, y, max_lag: int) -> np.ndarray:
    """PHAT-weighted cross-correlation ``R[l] ~ sum_n x[n] y[n + l]``.

    Returns lags ``-max_lag .. max_lag`` (index ``max_lag`` is lag 0), so a
    copy of x delayed by k samples peaks at lag +k.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("gcc_phat needs two 1-D sequences of equal length")
    if len(x) < 2 * max_lag or max_lag < 0:
        raise ValueError(f"sequences of length {len(x)} too short for max_lag={max_lag}")
    nfft = scipy.fft.next_fast_len(len(x) + max_lag + 1, real=True)
    cross = np.conj(scipy.fft.rfft(x, nfft)) * scipy.fft.rfft(y, nfft)
    mag = np.abs(cross)
    keep = mag >= PHAT_FLOOR * mag.max() if mag.max() > 0 else np.zeros(mag.shape, bool)
    weighted = np.zeros_like(cross)
    weighted[keep] = cross[keep] / mag[keep]
    cc = scipy.fft.irfft(weighted, nfft)
    return np.concatenate([cc[nfft - max_lag :], cc[: max_lag + 1]])


def peak_quality(corr: np.ndarray, exclude: int = 2) -> float:
    """Ratio of the main peak to the largest value outside ``+-exclude`` samples of it."""
    a = np.abs(corr)
    k = int(np.argmax(a))
    rest = np.concatenate([a[: max(k - exclude, 0)], a[k + exclude + 1 :]])
    if rest.size == 0 or rest.max() == 0:
        return np.inf
    return float(a[k] / rest.max())


def quadratic_interp(c_minus: float, c_0: float, c_plus: float) -> float:
    """Vertex offset of the parabola through three equally spaced samples."""
    if c_0 < max(c_minus, c_plus):
        raise ValueError("centre sample is not a local maximum")
    denom = c_minus - 2.0 * c_0 + c_plus
    if abs(denom) < FLAT_PEAK_TOL * abs(c_0) or denom == 0:
        raise FlatPeakError("peak too flat for parabolic refinement")
    return (c_minus - c_plus) / (2.0 * denom)


def refine_peak(corr: np.ndarray) -> float:
    """Sub-sample position of the maximum of ``corr``, in samples from index 0."""
    k = int(np.argmax(corr))
    if 0 < k < len(corr) - 1:
        try:
            return k + quadratic_interp(corr[k - 1], corr[k], corr[k + 1])
        except FlatPeakError:
            pass
    return float(k)


def estimate_tdoas(
    rec: RecordingSet,
    s_tilde,
    u_tilde,
    c: float,
    options: TdoaOptions | None = None,
) -> TdoaMatrix:
    """GCC-PHAT TDOA between each calibrated sensor and the new sensor, per emitter.

    The returned value for (i, j) is arrival time at sensor i minus arrival
    time at the new sensor (on its own clock), matching ``r_ij / c``.
    """
    options = options or TdoaOptions()
    s_tilde = np.asarray(s_tilde, dtype=float)
    u_tilde = np.asarray(u_tilde, dtype=float)
    M, N = rec.M, rec.N
    if s_tilde.shape[0] != M or u_tilde.shape[0] != N:
        raise ValueError("position estimates do not match the recording layout")
    max_dist = options.max_distance
    if max_dist is None:
        max_dist = 2.0 * np.max(np.linalg.norm(np.vstack([s_tilde, u_tilde]), axis=1))
    window = max_dist / c + options.max_offset
    max_lag = int(math.ceil(window * rec.sample_rate)) + 1
    if 2 * max_lag > rec.slot_length:
        raise DurationTooShortError(
            f"slot of {rec.slot_length} samples cannot be searched over +-{max_lag} lags"
        )
    values = np.zeros((M, N))
    quality = np.zeros((M, N))
    for j in range(N):
        seg = rec.slot(j)
        for i in range(M):
            corr = gcc_phat(seg[M], seg[i], max_lag)
            values[i, j] = (refine_peak(corr) - max_lag) / rec.sample_rate
            quality[i, j] = peak_quality(corr)
    flagged = (quality < options.min_peak_quality) | (np.abs(values) > window)
    return TdoaMatrix(values, quality, flagged, window)


def write_wav(path, rec: RecordingSet) -> None:
    """Write all channels as 32-bit float RIFF WAVE."""
    from scipy.io import wavfile

    wavfile.write(str(path), int(round(rec.sample_rate)), rec.channels.T.astype(np.float32))


def read_wav(path) -> tuple[float, np.ndarray]:
    """Return ``(sample_rate, channels)`` with channels as (n_channels, n_samples)."""
    from scipy.io import wavfile

    rate, data = wavfile.read(str(path))
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    return float(rate), data.T


def rir_filename(emitter: int, sensor: int | None) -> str:
    """Impulse-response file for (emitter j, sensor i); ``sensor=None`` is the new sensor.

    Indices are 0-based: ``rir_e03_s07.wav``, ``rir_e03_new.wav``.
    """
    tag = "new" if sensor is None else f"s{sensor:02d}"
    return f"rir_e{emitter:02d}_{tag}.wav"


def load_impulse_responses(directory, M: int, N: int) -> np.ndarray:
    """Load RIRs as (N, M + 1, L); shorter responses are zero padded."""
    directory = Path(directory)
    rirs: list[list[np.ndarray]] = []
    for j in range(N):
        row = []
        for i in list(range(M)) + [None]:
            _, data = read_wav(directory / rir_filename(j, i))
            row.append(data[0])
        rirs.append(row)
    L = max(len(h) for row in rirs for h in row)
    out = np.zeros((N, M + 1, L))
    for j, row in enumerate(rirs):
        for i, h in enumerate(row):
            out[j, i, : len(h)] = h
    return out


def synthesize_with_rirs(
    scenario: Scenario,
    signal,
    sample_rate: float,
    rirs: np.ndarray,
    *,
    max_offset: float | None = None,
) -> RecordingSet:
    """Like :func:`synthesize_anechoic`, but each path is an externally supplied RIR.

    ``rirs[j, i]`` is the response from emitter j to sensor i (``i = M`` is
    the new sensor) and already contains the propagation delay; only the
    clock offset is applied here.
    """
    signal = np.asarray(signal, dtype=float)
    M, N = scenario.M, scenario.N
    if rirs.shape[:2] != (N, M + 1):
        raise ValueError(f"expected RIRs of shape ({N}, {M + 1}, L), got {rirs.shape}")
    offset = abs(scenario.tau_p) if max_offset is None else max(max_offset, abs(scenario.tau_p))
    guard = max(_guard_samples(scenario, sample_rate, offset), rirs.shape[2] + GUARD_PAD)
    slot_len = len(signal) + 2 * guard
    channels = np.zeros((M + 1, N * slot_len))
    for j in range(N):
        for i in range(M + 1):
            wet = scipy.signal.fftconvolve(signal, rirs[j, i])
            buf = np.zeros(slot_len)
            n = min(len(wet), slot_len - guard)
            buf[guard : guard + n] = wet[:n]
            if i == M:
                buf = fractional_delay(buf, -scenario.tau_p * sample_rate)
            channels[i, j * slot_len : (j + 1) * slot_len] = buf
    return RecordingSet(float(sample_rate), channels, np.arange(N) * slot_len, slot_len, guard, len(signal), "rir")
