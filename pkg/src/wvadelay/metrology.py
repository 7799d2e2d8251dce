"""Calibration, delay estimation, Allan variance, PSD and Fisher information.

Delays inside this module are in attoseconds and shifts in pixels, so the
calibration slope is pixels/as and the Cramer-Rao bound is in as^2.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import (
    DegenerateCalibrationError,
    EmptyBandError,
    InsufficientDataError,
    InvalidArgumentError,
    NormalizationError,
    UnderdeterminedFitError,
)

PROB_FLOOR = 1e-12


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationLine:
    slope: float
    intercept: float
    residual_rms: float
    tau_points: tuple = ()

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual_rms": self.residual_rms,
            "points": [list(p) for p in self.tau_points],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["slope"], d["intercept"], d["residual_rms"], tuple(map(tuple, d["points"])))


def calibrate(measurements):
    """Ordinary least-squares line through ``(tau_as, mean_shift_px)`` pairs."""
    pts = [(float(t), float(s)) for t, s in measurements]
    taus = np.array([p[0] for p in pts])
    shifts = np.array([p[1] for p in pts])
    if np.unique(taus).size < 2:
        raise UnderdeterminedFitError("calibration needs at least two distinct delays")
    slope, intercept = np.polyfit(taus, shifts, 1)
    resid = shifts - (slope * taus + intercept)
    return CalibrationLine(
        float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), tuple(pts)
    )


def estimate_tau(shift, line):
    """``(shift - intercept) / slope``; vectorized over ``shift``."""
    if line.slope == 0 or not np.isfinite(line.slope):
        raise DegenerateCalibrationError("calibration slope is zero")
    out = (np.asarray(shift, dtype=float) - line.intercept) / line.slope
    return out if out.ndim else float(out)


# -- Allan variance ------------------------------------------------------------


@dataclass(frozen=True)
class AllanPoint:
    T: float
    sigma2: float
    n: int
    windows_used: int


@dataclass(frozen=True)
class AllanCurve:
    points: tuple

    @property
    def T(self):
        return np.array([p.T for p in self.points])

    @property
    def sigma2(self):
        return np.array([p.sigma2 for p in self.points])

    @property
    def n(self):
        return np.array([p.n for p in self.points])

    def xy(self):
        return self.T, self.sigma2


def _samples(series):
    if hasattr(series, "samples"):
        return series.samples
    return np.asarray(series, dtype=float)


def allan_variance(series, n, adjacent=False):
    """Overlapping Allan variance at window length ``n``.

    ``mean_k`` is the average of samples ``k .. k+n-1``; the estimator is
    ``sum_k (mean_{k+n} - mean_k)^2 / (2 (M - 2n + 1))`` over all
    ``M - 2n + 1`` start positions. With ``adjacent=True`` the difference
    is taken between windows one sample apart (``mean_{k+1} - mean_k``) over
    the same number of terms.

    Returns
    -------
    (sigma2, windows_used)
    """
    x = _samples(series)
    m = x.size
    n = int(n)
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if m < 2 * n:
        raise InsufficientDataError(f"{m} samples cannot support n = {n} (needs M >= 2n)")
    c = np.concatenate(([0.0], np.cumsum(x - x.mean())))
    means = (c[n:] - c[:-n]) / n  # M - n + 1 window means
    used = m - 2 * n + 1
    lag = 1 if adjacent else n
    d = means[lag : lag + used] - means[:used]
    return float(np.dot(d, d) / (2.0 * used)), used


def default_n_grid(m, per_decade=10):
    top = m // 2
    if top < 1:
        raise InsufficientDataError("need at least 2 samples")
    count = int(per_decade * np.log10(max(top, 10))) + 1
    grid = np.unique(np.round(np.logspace(0, np.log10(top), count)))
    return [int(v) for v in grid if 1 <= v <= top]


def allan_curve(series, n_grid=None, dt=None, adjacent=False):
    """Allan variance over a grid of window lengths (default ~10 per decade)."""
    x = _samples(series)
    dt = dt if dt is not None else getattr(series, "dt", 1.0)
    grid = default_n_grid(x.size) if n_grid is None else [int(v) for v in n_grid]
    if list(grid) != sorted(grid):
        raise InvalidArgumentError("n_grid must be sorted")
    pts = []
    for n in grid:
        s2, used = allan_variance(x, n, adjacent=adjacent)
        pts.append(AllanPoint(T=n * dt, sigma2=s2, n=n, windows_used=used))
    return AllanCurve(tuple(pts))


# -- power spectral density -----------------------------------------------------------


@dataclass(frozen=True)
class PsdCurve:
    f: np.ndarray
    S: np.ndarray
    method: str
    segment_length: int
    window: str

    def xy(self):
        return self.f, self.S

    def integrated_power(self, band=None):
        df = self.f[1] - self.f[0] if self.f.size > 1 else 0.0
        sel = np.ones(self.f.size, bool) if band is None else (self.f >= band[0]) & (self.f <= band[1])
        return float(np.sum(self.S[sel]) * df)


def psd(series, method="welch", segment_length=None, window="hann", segments=8, dt=None):
    """One-sided PSD normalized so ``sum(S) * df`` approximates the variance.

    ``method="welch"`` averages 50%-overlapped windowed segments
    (default: enough length for ``segments`` segments); ``"periodogram"``
    uses the whole record with the given window. The DC bin is dropped.
    """
    x = _samples(series)
    dt = dt if dt is not None else getattr(series, "dt", 1.0)
    fs = 1.0 / dt
    if method == "welch":
        if segment_length is None:
            segment_length = int(2 * x.size // (segments + 1))
        if segment_length < 4 or x.size < 2 * segment_length:
            raise InsufficientDataError(
                f"{x.size} samples too short for segments of {segment_length}"
            )
        f, S = signal.welch(
            x,
            fs=fs,
            window=window,
            nperseg=segment_length,
            noverlap=segment_length // 2,
            detrend="constant",
            scaling="density",
        )
    elif method == "periodogram":
        if x.size < 4:
            raise InsufficientDataError("periodogram needs at least 4 samples")
        segment_length = x.size
        f, S = signal.periodogram(x, fs=fs, window=window, detrend="constant", scaling="density")
    else:
        raise InvalidArgumentError(f"method must be 'welch' or 'periodogram', got {method!r}")
    return PsdCurve(f[1:], S[1:], method, int(segment_length), str(window))


# -- power-law fits ---------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    exponent: float
    stderr: float
    intercept: float
    n_points: int

    def __iter__(self):
        return iter((self.exponent, self.stderr))


def loglog_fit(x, y, band=None, min_points=4):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (x > 0) & (y > 0) & np.isfinite(y)
    if band is not None:
        sel &= (x >= band[0]) & (x <= band[1])
    if sel.sum() < min_points:
        raise EmptyBandError(f"{int(sel.sum())} usable points in band {band}; need {min_points}")
    lx, ly = np.log10(x[sel]), np.log10(y[sel])
    coef, cov = np.polyfit(lx, ly, 1, cov="unscaled")
    resid = ly - np.polyval(coef, lx)
    dof = max(lx.size - 2, 1)
    stderr = float(np.sqrt(cov[0, 0] * np.dot(resid, resid) / dof))
    return SlopeFit(float(coef[0]), stderr, float(coef[1]), int(lx.size))


def slope_fit(curve, band=None):
    """Least-squares slope of ``log10 y`` against ``log10 x`` within ``band``.

    ``curve`` is an :class:`AllanCurve` (x = T), a :class:`PsdCurve`
    (x = f) or an ``(x, y)`` pair.
    """
    x, y = curve.xy() if hasattr(curve, "xy") else curve
    return loglog_fit(x, y, band)


def scaling_fit(points):
    """Log-log exponent of variance against detected photon number."""
    pts = sorted((float(n), float(v)) for n, v in points)
    if len(pts) < 3:
        raise InsufficientDataError("scaling fit needs at least 3 points")
    n = np.array([p[0] for p in pts])
    if n.max() / n.min() < 10:
        raise InsufficientDataError("photon numbers must span at least one decade")
    return loglog_fit(n, [p[1] for p in pts], min_points=3)


# -- Fisher information -----------------------------------------------------------


@dataclass(frozen=True)
class FisherResult:
    cfi: float
    crb: float
    n_r: float
    delta_tau: float
    fd_change: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def infinite_crb(self):
        return not np.isfinite(self.crb)


def _normalized(profile, tau, tol):
    p = np.asarray(profile(tau), dtype=float)
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise NormalizationError(f"profile at tau={tau} sums to {s!r}, not 1")
    return p


def _cfi_per_photon(profile, tau0, delta_tau, tol):
    p0 = _normalized(profile, tau0, tol)
    dp = (_normalized(profile, tau0 + delta_tau, tol) - _normalized(profile, tau0 - delta_tau, tol)) / (
        2.0 * delta_tau
    )
    keep = p0 > PROB_FLOOR
    return float(np.sum(dp[keep] ** 2 / p0[keep]))


def fisher_information(profile, tau0, delta_tau, n_r, tol=1e-9, check_convergence=True):
    """Classical Fisher information ``N_r sum_m (dp_m/dtau)^2 / p_m``.

    Parameters
    ----------
    profile : callable
        ``tau -> p`` with ``p`` the normalized row distribution (sums to 1).
    tau0, delta_tau : float
        Operating point and central-difference step, same units.
    n_r : float
        Detected photons per frame.
    check_convergence : bool
        Also evaluate at ``delta_tau / 2`` and record the relative change
        in ``fd_change``.

    Bins with ``p < 1e-12`` are dropped. A zero result is returned with
    ``crb = inf`` rather than raised.
    """
    if not delta_tau > 0:
        raise InvalidArgumentError("delta_tau must be > 0")
    per_photon = _cfi_per_photon(profile, tau0, delta_tau, tol)
    change = float("nan")
    if check_convergence and per_photon > 0:
        half = _cfi_per_photon(profile, tau0, delta_tau / 2, tol)
        change = abs(half - per_photon) / per_photon
    cfi = n_r * per_photon
    crb = 1.0 / cfi if cfi > 0 else float("inf")
    return FisherResult(cfi=cfi, crb=crb, n_r=n_r, delta_tau=delta_tau, fd_change=change)
