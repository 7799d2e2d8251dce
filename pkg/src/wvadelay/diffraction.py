"""Far-field propagation of the slit-split Gaussian pointer and fringe formation.

Coordinates: arrays are indexed ``[row, col] = [y, x]``. The slit split and
the fringe displacement are both along ``y``; ``x`` is the transverse axis
that row marginals sum out. Grids are centred on the optical axis with node
``i`` at ``(i - (n - 1)/2) * pitch``.

Two routes give the detector-plane arm fields:

* :func:`propagate_numeric` evaluates the Fourier-kernel integral of the
  lens-plane field by direct (matrix-multiply) quadrature.
* :func:`propagate_closed_form` uses the analytic transform of a half-plane
  masked Gaussian (no central gap). With ``s = y / sigma'``::

      U_u,d = (i/2)(sigma/sigma') exp(-x^2/sigma'^2)
              * exp(-s^2) [1 +/- i erfi(s)]

  so the amplitude carries ``sqrt(1 + erfi(s)^2)`` and the phases are
  ``pi/2 +/- arctan(erfi(s))``, with ``erfi(s) = (2/sqrt(pi)) s 1F1(1/2, 3/2, s^2)``.
  ``kernel="erf"`` selects the frequently quoted variant written with
  ``1F1(1/2, 3/2, -s^2)`` (i.e. ``erf``) and the lens-plane waist in the
  envelope. It agrees with the transform only to first order in ``s`` and is
  kept for comparison.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (
    ApproximationDomainError,
    InvalidArgumentError,
    ResolutionError,
)
from .polarization import SPEED_OF_LIGHT

UPPER = "upper"
LOWER = "lower"
_ARM_SIGN = {UPPER: 1.0, LOWER: -1.0}


@dataclass(frozen=True)
class OpticalGeometry:
    """Pointer-side optics. Lengths in metres."""

    wavelength: float = 632.992e-9
    sigma_xy: float = 0.325e-3
    d1: float = 0.425e-3
    f_d: float = 1.0

    def __post_init__(self):
        for name in ("wavelength", "sigma_xy", "f_d"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be > 0")
        if self.d1 < 0:
            raise InvalidArgumentError("d1 must be >= 0")

    @property
    def sigma_prime(self):
        """Detector-plane waist ``lambda f_d / (pi sigma_xy)``."""
        return self.wavelength * self.f_d / (np.pi * self.sigma_xy)

    @property
    def narrow_slit_valid(self):
        return self.d1 < np.sqrt(self.wavelength * self.f_d)

    @property
    def omega(self):
        return 2.0 * np.pi * SPEED_OF_LIGHT / self.wavelength


@dataclass(frozen=True)
class Grid:
    """Centred square-pixel sampling grid."""

    rows: int
    cols: int
    pitch: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or not self.pitch > 0:
            raise InvalidArgumentError("grid needs rows, cols >= 1 and pitch > 0")

    @property
    def y(self):
        return (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.pitch

    @property
    def x(self):
        return (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.pitch

    @property
    def half_extent(self):
        """Largest |coordinate| covered, per axis ``(y, x)``."""
        return ((self.rows - 1) / 2.0 * self.pitch, (self.cols - 1) / 2.0 * self.pitch)

    @property
    def shape(self):
        return (self.rows, self.cols)


@dataclass(frozen=True)
class ComplexFieldGrid:
    values: np.ndarray
    pitch: float

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def grid(self):
        return Grid(self.rows, self.cols, self.pitch)

    @property
    def amplitude(self):
        return np.abs(self.values)

    @property
    def phase(self):
        return np.angle(self.values)

    def scaled(self, c):
        return ComplexFieldGrid(self.values * c, self.pitch)


@dataclass(frozen=True)
class IntensityMap:
    """Non-negative detector-plane intensity, arbitrary (photon-rate) units."""

    values: np.ndarray
    pitch: float

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def total(self):
        return float(self.values.sum())

    def row_profile(self):
        return self.values.sum(axis=1)

    def to_csv(self, path):
        np.savetxt(path, self.values, delimiter=",", fmt="%.10e")

    def to_pgm(self, path):
        """16-bit binary PGM, scaled so the maximum maps to 65535."""
        peak = self.values.max()
        scaled = np.zeros(self.values.shape) if peak <= 0 else self.values / peak
        data = np.round(scaled * 65535).astype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{self.cols} {self.rows}\n65535\n".encode("ascii"))
            fh.write(data.tobytes())


# -- special functions ------------------------------------------------------


def hyp1f1_half(z):
    """``1F1(1/2, 3/2, -z^2)`` via ``sqrt(pi) erf(z) / (2 z)``; 1 at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.sqrt(np.pi) * special.erf(z[nz]) / (2.0 * z[nz])
    return out if out.ndim else float(out)


def hyp1f1_half_scaled(z):
    """``exp(-z^2) 1F1(1/2, 3/2, z^2)``, overflow-free.

    Kummer's transformation turns this into ``1F1(1, 3/2, -z^2)``, which is
    ``D(z)/z`` with ``D`` the Dawson integral.
    """
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = special.dawsn(z[nz]) / z[nz]
    return out if out.ndim else float(out)


# -- lens plane ---------------------------------------------------------------


def slit_field_values(geometry, x, y, arm):
    """Lens-plane field of one arm at coordinates ``(x, y)`` (broadcast).

    Gaussian ``exp[-(x^2+y^2)/sigma^2]`` masked by ``H(y - d1/2)`` (upper) or
    ``H(-d1/2 - y)`` (lower).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    env = np.exp(-(x**2 + y**2) / geometry.sigma_xy**2)
    half_gap = geometry.d1 / 2.0
    if arm == UPPER:
        mask = np.heaviside(y - half_gap, 0.5)
    elif arm == LOWER:
        mask = np.heaviside(-half_gap - y, 0.5)
    else:
        raise InvalidArgumentError(f"arm must be 'upper' or 'lower', got {arm!r}")
    return env * mask


def slit_fields(geometry, grid):
    """Upper and lower lens-plane fields sampled on ``grid``."""
    if grid.pitch > geometry.sigma_xy / 8:
        raise ResolutionError(
            f"pitch {grid.pitch:.3e} m exceeds sigma_xy/8 = {geometry.sigma_xy / 8:.3e} m"
        )
    if min(grid.half_extent) < 4 * geometry.sigma_xy:
        raise ResolutionError("grid must cover at least 4 sigma_xy from the axis")
    yy = grid.y[:, None]
    xx = grid.x[None, :]
    return (
        ComplexFieldGrid(slit_field_values(geometry, xx, yy, UPPER).astype(complex), grid.pitch),
        ComplexFieldGrid(slit_field_values(geometry, xx, yy, LOWER).astype(complex), grid.pitch),
    )


def default_lens_grid(geometry, nodes=512, extent_sigmas=8.0):
    """A lens-plane grid wide enough for :func:`slit_fields`."""
    pitch = 2 * extent_sigmas * geometry.sigma_xy / (nodes - 1)
    return Grid(nodes, nodes, pitch)


# -- propagation ----------------------------------------------------------------


def propagate_numeric(field, geometry, out_grid):
    """Direct quadrature of the far-field Fourier integral.

    ``U(x2, y2) = (i / (lambda f)) sum exp[i 2 pi (x1 x2 + y1 y2)/(lambda f)] U(x1, y1) dA``

    The kernel is separable, so the sum is two matrix products.
    """
    lam_f = geometry.wavelength * geometry.f_d
    window = max(out_grid.half_extent)
    if window > 0 and field.pitch > lam_f / (2.0 * window):
        raise ResolutionError(
            f"input pitch {field.pitch:.3e} m aliases an output window of {window:.3e} m "
            f"(needs <= {lam_f / (2 * window):.3e} m)"
        )
    in_grid = field.grid
    k = 2.0 * np.pi / lam_f
    ky = np.exp(1j * k * np.outer(out_grid.y, in_grid.y))
    kx = np.exp(1j * k * np.outer(out_grid.x, in_grid.x))
    out = ky @ field.values @ kx.T
    out *= 1j / lam_f * field.pitch**2
    return ComplexFieldGrid(out, out_grid.pitch)


def _arm_sign(arm):
    try:
        return _ARM_SIGN[arm]
    except KeyError:
        raise InvalidArgumentError(f"arm must be 'upper' or 'lower', got {arm!r}") from None


def closed_form_split_factor(geometry, arm, y, kernel="erfi"):
    """Complex ``y``-dependent factor of the closed-form arm field.

    The full field is this factor times :func:`closed_form_envelope` of ``x``.
    """
    sign = _arm_sign(arm)
    s = np.asarray(y, dtype=float) / geometry.sigma_prime
    if kernel == "erfi":
        odd = (2.0 / np.sqrt(np.pi)) * s * hyp1f1_half_scaled(s)
        return 1j * (np.exp(-(s**2)) + 1j * sign * odd)
    if kernel == "erf":
        odd = (2.0 / np.sqrt(np.pi)) * s * hyp1f1_half(s)
        y_env = np.exp(-np.asarray(y, dtype=float) ** 2 / geometry.sigma_xy**2)
        return 1j * y_env * (1.0 + 1j * sign * odd)
    raise InvalidArgumentError(f"kernel must be 'erfi' or 'erf', got {kernel!r}")


def closed_form_envelope(geometry, x, kernel="erfi"):
    """Real ``x`` envelope of the closed-form field, including the prefactor."""
    width = geometry.sigma_prime if kernel == "erfi" else geometry.sigma_xy
    x = np.asarray(x, dtype=float)
    return 0.5 * geometry.sigma_xy / geometry.sigma_prime * np.exp(-(x**2) / width**2)


def propagate_closed_form(geometry, arm, out_grid, kernel="erfi"):
    """Analytic detector-plane field of one arm (half-plane split, no gap).

    Raises
    ------
    ApproximationDomainError
        If ``d1 >= sqrt(lambda f_d)``.
    """
    if not geometry.narrow_slit_valid:
        raise ApproximationDomainError(
            f"d1 = {geometry.d1:.3e} m is not below sqrt(lambda f_d) = "
            f"{np.sqrt(geometry.wavelength * geometry.f_d):.3e} m"
        )
    fy = closed_form_split_factor(geometry, arm, out_grid.y, kernel)
    ex = closed_form_envelope(geometry, out_grid.x, kernel)
    return ComplexFieldGrid(np.outer(fy, ex), out_grid.pitch)


def closed_form_phase(geometry, arm, y, kernel="erfi"):
    """``pi/2 +/- arctan(erfi(s))`` (or ``erf`` for ``kernel="erf"``), unwrapped."""
    sign = _arm_sign(arm)
    s = np.asarray(y, dtype=float) / geometry.sigma_prime
    if kernel == "erfi":
        odd = (2.0 / np.sqrt(np.pi)) * s * hyp1f1_half_scaled(s)
        return np.pi / 2 + sign * np.arctan2(odd, np.exp(-(s**2)))
    return np.pi / 2 + sign * np.arctan((2.0 / np.sqrt(np.pi)) * s * hyp1f1_half(s))


# -- interference -------------------------------------------------------------


def _arm_weights(selection, tau, omega):
    aw = selection.weak_values()
    wu = np.exp(1j * omega * aw.a_w_u * tau) / abs(aw.a_w_u)
    wd = np.exp(1j * omega * aw.a_w_d * tau) / abs(aw.a_w_d)
    return wu, wd


def fringe_profile(geometry, selection, tau, y, kernel="erfi"):
    """Interference intensity along ``y`` for the separable closed-form fields.

    The closed-form arms share the ``x`` envelope, so the 2-D map is this
    profile times ``envelope(x)**2``.
    """
    wu, wd = _arm_weights(selection, tau, geometry.omega)
    fu = closed_form_split_factor(geometry, UPPER, y, kernel)
    fd = closed_form_split_factor(geometry, LOWER, y, kernel)
    return np.abs(wu * fu + wd * fd) ** 2


def interference_intensity(
    geometry,
    selection,
    tau,
    out_grid,
    propagation="closed_form",
    kernel="erfi",
    lens_grid=None,
):
    """Weak-value-weighted two-arm intensity on the detector grid.

    ``I = |U_u exp(i omega A_u tau)/|A_u| + U_d exp(i omega A_d tau)/|A_d||^2``

    Parameters
    ----------
    propagation : {"closed_form", "numeric"}
        ``numeric`` propagates the gapped slit fields by quadrature on
        ``lens_grid`` (default :func:`default_lens_grid`).
    """
    if propagation == "closed_form":
        if not geometry.narrow_slit_valid:
            raise ApproximationDomainError("closed form needs d1 < sqrt(lambda f_d)")
        prof = fringe_profile(geometry, selection, tau, out_grid.y, kernel)
        env = closed_form_envelope(geometry, out_grid.x, kernel) ** 2
        return IntensityMap(np.outer(prof, env), out_grid.pitch)
    if propagation == "numeric":
        up, lo = numeric_arm_fields(geometry, out_grid, lens_grid)
        return combine_arms(up, lo, selection, tau, geometry.omega)
    raise InvalidArgumentError(f"unknown propagation {propagation!r}")


def numeric_arm_fields(geometry, out_grid, lens_grid=None):
    """Both detector-plane arm fields by quadrature (cache these across taus)."""
    lens_grid = lens_grid or default_lens_grid(geometry)
    up, lo = slit_fields(geometry, lens_grid)
    return (
        propagate_numeric(up, geometry, out_grid),
        propagate_numeric(lo, geometry, out_grid),
    )


def combine_arms(upper, lower, selection, tau, omega):
    """Intensity from precomputed arm fields."""
    wu, wd = _arm_weights(selection, tau, omega)
    return IntensityMap(np.abs(wu * upper.values + wd * lower.values) ** 2, upper.pitch)
