"""Power-law technical noise synthesis and injection into the simulation chain.

Levels are one-sided PSD values at 1 Hz, ``S(f) = amp * f**(-alpha)``
(units of the channel squared per Hz). A white series of standard deviation
``sigma`` sampled at ``dt`` has ``amp = 2 sigma^2 dt``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError, LengthError, UnsupportedExponentError

DELAY_OFFSET = "delay_offset"
FRINGE_OFFSET = "fringe_offset"
CHANNELS = (DELAY_OFFSET, FRINGE_OFFSET)
OVERSAMPLE = 4


@dataclass(frozen=True)
class TimeSeries:
    samples: np.ndarray
    dt: float
    start_index: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 2:
            raise InvalidArgumentError("a time series needs at least 2 samples")
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be > 0")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def times(self):
        return (self.start_index + np.arange(self.samples.size)) * self.dt

    @property
    def sample_rate(self):
        return 1.0 / self.dt

    def __add__(self, other):
        if isinstance(other, TimeSeries):
            if other.samples.size != self.samples.size:
                raise LengthError("series lengths differ")
            other = other.samples
        return TimeSeries(self.samples + other, self.dt, self.start_index)

    def scaled(self, c):
        return TimeSeries(self.samples * c, self.dt, self.start_index)


def white_amp(sigma, dt):
    """PSD level giving a white series with standard deviation ``sigma``."""
    return 2.0 * sigma**2 * dt


def gen_powerlaw(alpha, length, amp, dt, rng):
    """Gaussian series with one-sided PSD ``amp * f**(-alpha)``.

    White Gaussian noise is transformed to the frequency domain, bin ``k``
    is scaled by ``sqrt(amp f_k**(-alpha) / (2 dt))`` and the result is
    transformed back. Shaping is done on a record ``OVERSAMPLE`` times
    longer than requested and the first ``length`` samples are kept: a
    record shaped at its own length is periodic, which starves a random
    walk of its slowest wander and pulls the long-T Allan slope below +1.
    The kept segment has its mean removed (its DC bin is zero); for
    ``alpha = 2`` this pins the random walk's mean rather than its start.

    Parameters
    ----------
    alpha : float
        Spectral exponent in [0, 2]: 0 white, 1 flicker, 2 random walk.
    length : int
        Number of samples (>= 64; powers of two are fastest).
    amp : float
        PSD level at 1 Hz.
    dt : float
        Sampling period in seconds.
    rng : numpy.random.Generator
    """
    if not 0 <= alpha <= 2:
        raise UnsupportedExponentError(f"alpha must be in [0, 2], got {alpha}")
    if length < 64:
        raise InvalidArgumentError("length must be >= 64")
    if amp < 0:
        raise InvalidArgumentError("amp must be >= 0")
    if amp == 0:
        return TimeSeries(np.zeros(length), dt)
    n = OVERSAMPLE * length
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, dt)
    gain = np.zeros_like(freqs)
    gain[1:] = np.sqrt(amp * freqs[1:] ** (-alpha) / (2.0 * dt))
    x = np.fft.irfft(spectrum * gain, n=n)[:length]
    return TimeSeries(x - x.mean(), dt)


@dataclass(frozen=True)
class NoiseBudget:
    """Phenomenological technical noise on one channel.

    ``white_sigma`` is a standard deviation; ``flicker_amp`` and ``rw_amp``
    are PSD levels at 1 Hz.
    """

    white_sigma: float = 0.0
    flicker_amp: float = 0.0
    rw_amp: float = 0.0
    channel: str = DELAY_OFFSET

    def __post_init__(self):
        if min(self.white_sigma, self.flicker_amp, self.rw_amp) < 0:
            raise InvalidArgumentError("noise amplitudes must be >= 0")
        if self.channel not in CHANNELS:
            raise InvalidArgumentError(f"channel must be one of {CHANNELS}")

    @property
    def is_silent(self):
        return self.white_sigma == 0 and self.flicker_amp == 0 and self.rw_amp == 0

    def realize(self, length, dt, rng):
        """Sum of the three components, each from its own child stream."""
        total = np.zeros(length)
        if self.is_silent:
            return TimeSeries(total, dt)
        gens = rng.spawn(3)
        n = max(length, 64)
        for alpha, amp, g in (
            (0, white_amp(self.white_sigma, dt), gens[0]),
            (1, self.flicker_amp, gens[1]),
            (2, self.rw_amp, gens[2]),
        ):
            if amp > 0:
                total += gen_powerlaw(alpha, n, amp, dt, g).samples[:length]
        return TimeSeries(total, dt)


@dataclass(frozen=True)
class Injection:
    """Per-frame effective parameters after noise injection."""

    tau_eff: np.ndarray
    fringe_offset: np.ndarray


def inject(base_tau, drift, channel=DELAY_OFFSET, n_frames=None):
    """Map a drift series onto the measurement chain.

    ``delay_offset``: ``tau_eff_i = base_tau + drift_i`` (drift in seconds).
    ``fringe_offset``: ``tau_eff_i = base_tau`` and ``drift_i`` pixels are
    added to each registered shift.
    """
    samples = drift.samples if hasattr(drift, "samples") else np.asarray(drift, dtype=float)
    if n_frames is not None and samples.size != n_frames:
        raise LengthError(f"drift has {samples.size} samples for {n_frames} frames")
    if channel == DELAY_OFFSET:
        return Injection(base_tau + samples, np.zeros_like(samples))
    if channel == FRINGE_OFFSET:
        return Injection(np.full_like(samples, base_tau), samples.copy())
    raise InvalidArgumentError(f"channel must be one of {CHANNELS}")


def write_series_csv(series, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["t_seconds", "value"])
        for t, v in zip(series.times, series.samples):
            w.writerow([repr(float(t)), repr(float(v))])


def read_series_csv(path, rel_tol=1e-6):
    """Two-column ``(t_seconds, value)`` CSV; comment lines start with ``#``.

    A non-numeric first data row is treated as a header.

    Raises
    ------
    FormatError
        On ragged rows, non-numeric fields, fewer than two samples, or a
        sampling period that varies by more than ``rel_tol``.
    """
    times, values = [], []
    seen_data = False
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise FormatError(f"expected 2 columns, found {len(row)}", line=lineno)
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                if not seen_data and not times:
                    seen_data = True
                    continue
                raise FormatError(f"non-numeric field in {row!r}", line=lineno) from None
            seen_data = True
            times.append(t)
            values.append(v)
            if len(times) >= 3:
                step0 = times[1] - times[0]
                step = times[-1] - times[-2]
                if abs(step - step0) > rel_tol * abs(step0):
                    raise FormatError(
                        f"non-uniform sampling: step {step!r} vs {step0!r}", line=lineno
                    )
    if len(times) < 2:
        raise FormatError("need at least two samples")
    dt = times[1] - times[0]
    if not dt > 0:
        raise FormatError("time column must increase", line=None)
    return TimeSeries(np.array(values), dt, start_index=int(round(times[0] / dt)))
