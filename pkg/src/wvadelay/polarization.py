"""Two-level polarization algebra: pre/post-selection, weak values and delays.

Conventions
-----------
States are 2-vectors in the (H, V) basis. The observable is
``A = |H><H| - |V><V|``, so the birefringent delay ``tau`` acts as
``exp(-i A omega tau / 2)`` and produces the opposite ``exp(-/+ i omega tau/2)``
phases on the two polarization components of the post-selected state.

The pre-selected state is fixed at ``sin(pi/4)|H> + cos(pi/4)|V>`` and each
arm post-selects ``sin(3pi/4 + beta)|H> + cos(3pi/4 + beta)|V>`` (with the
delay phases). With these choices the real weak value is ``-cot(beta)``.
All angles are radians; degree conversion happens at the config/CLI boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentWeakValueError, InvalidArgumentError

SPEED_OF_LIGHT = 299_792_458.0
PRESELECT_ANGLE = np.pi / 4

OBSERVABLE = np.diag([1.0, -1.0]).astype(complex)


def angular_frequency(wavelength):
    """Optical angular frequency ``2 pi c / lambda`` in rad/s."""
    if wavelength <= 0:
        raise InvalidArgumentError(f"wavelength must be > 0, got {wavelength}")
    return 2.0 * np.pi * SPEED_OF_LIGHT / wavelength


def _check_beta(beta):
    if not np.isfinite(beta) or abs(beta) > np.pi / 2 + 1e-12:
        raise InvalidArgumentError(f"|beta| must be <= pi/2, got {beta}")
    if beta == 0:
        raise DivergentWeakValueError(
            "beta = 0: post-selection is orthogonal to the pre-selection"
        )


def preselected_state(angle=PRESELECT_ANGLE):
    return np.array([np.sin(angle), np.cos(angle)], dtype=complex)


def postselected_state(beta, omega_tau=0.0):
    """Post-selection vector for one arm, including the delay phases."""
    phase = 0.5 * omega_tau
    return np.array(
        [
            np.exp(-1j * phase) * np.sin(3 * np.pi / 4 + beta),
            np.exp(+1j * phase) * np.cos(3 * np.pi / 4 + beta),
        ]
    )


def weak_value(beta):
    """Real weak value ``-cot(beta)`` of the polarization observable.

    This is the ``tau -> 0`` limit of ``<f|A|i>/<f|i>``.

    Raises
    ------
    DivergentWeakValueError
        If ``beta == 0``.
    InvalidArgumentError
        If ``|beta| > pi/2``.
    """
    _check_beta(beta)
    # half-angle forms: doubling is exact in floating point, so +-45 degrees
    # gives exactly -+1, and neither branch cancels
    c, s = np.cos(2 * beta), np.sin(2 * beta)
    if abs(beta) <= np.pi / 4:
        return -(1 + c) / s
    return -s / (1 - c)


def weak_value_complex(beta, omega_tau=0.0):
    """``<f|A|i>/<f|i>`` by direct 2-vector arithmetic (independent of cot)."""
    f = postselected_state(beta, omega_tau)
    i = preselected_state()
    den = np.vdot(f, i)
    if abs(den) == 0:
        raise DivergentWeakValueError("post-selection orthogonal to pre-selection")
    return np.vdot(f, OBSERVABLE @ i) / den


def postselection_probability(beta, tau=0.0, omega=None):
    """Survival probability ``|<f(beta, tau)|i>|^2`` of one post-selection.

    Equals ``sin(beta)**2`` at ``tau = 0``. ``omega`` is only needed when
    ``tau != 0``.
    """
    omega_tau = 0.0 if tau == 0 else tau * omega
    return float(abs(np.vdot(postselected_state(beta, omega_tau), preselected_state())) ** 2)


def tilt_to_delay(theta, n0, wavelength):
    """Birefringent delay (s) from tilting a half-wave plate by ``theta`` rad.

    ``tau = pi theta^2 / (2 n0^2 omega)`` with ``omega = 2 pi c / lambda``.
    """
    if theta < 0:
        raise InvalidArgumentError(f"theta must be >= 0, got {theta}")
    if n0 <= 1:
        raise InvalidArgumentError(f"n0 must be > 1, got {n0}")
    omega = angular_frequency(wavelength)
    return np.pi * theta**2 / (2.0 * n0**2 * omega)


@dataclass(frozen=True)
class WeakValuePair:
    a_w_u: float
    a_w_d: float

    @property
    def difference(self):
        return self.a_w_u - self.a_w_d


@dataclass(frozen=True)
class SelectionConfig:
    """Post-selection angles of the upper and lower arms (radians).

    ``offset`` is an additive systematic error applied to both angles, a
    stand-in for wave-plate misalignment.
    """

    beta_u: float
    beta_d: float
    preselect_angle: float = PRESELECT_ANGLE
    offset: float = 0.0

    def __post_init__(self):
        _check_beta(self.beta_u + self.offset)
        _check_beta(self.beta_d + self.offset)

    @classmethod
    def symmetric(cls, beta, offset=0.0):
        """``beta_u = beta``, ``beta_d = -beta``."""
        return cls(beta_u=beta, beta_d=-beta, offset=offset)

    @classmethod
    def from_degrees(cls, beta_u_deg, beta_d_deg, offset_deg=0.0):
        return cls(
            beta_u=np.deg2rad(beta_u_deg),
            beta_d=np.deg2rad(beta_d_deg),
            offset=np.deg2rad(offset_deg),
        )

    def weak_values(self):
        return WeakValuePair(
            weak_value(self.beta_u + self.offset), weak_value(self.beta_d + self.offset)
        )

    def swapped(self):
        return SelectionConfig(self.beta_d, self.beta_u, self.preselect_angle, self.offset)


@dataclass(frozen=True)
class DelaySetting:
    theta: float
    n0: float
    omega: float
    tau: float = field(init=False)

    def __post_init__(self):
        if self.theta < 0:
            raise InvalidArgumentError(f"theta must be >= 0, got {self.theta}")
        if self.n0 <= 1:
            raise InvalidArgumentError(f"n0 must be > 1, got {self.n0}")
        object.__setattr__(
            self, "tau", np.pi * self.theta**2 / (2.0 * self.n0**2 * self.omega)
        )

    @classmethod
    def from_wavelength(cls, theta, n0, wavelength):
        return cls(theta=theta, n0=n0, omega=angular_frequency(wavelength))
