"""Static Raman beam crossings seen by an ion moving along the trap axis."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument

#: default optical wavenumber, 313 nm Raman light
DEFAULT_WAVENUMBER = 2 * np.pi / 313e-9


@dataclass(frozen=True)
class BeamGeometry:
    """One beam crossing of the trap axis.

    ``waist`` is the 1/e^2 intensity radius.  ``profile_exponent`` selects
    whether the Rabi frequency follows the field amplitude (1) or the
    intensity (2) of the Gaussian profile.  ``misalignment`` is the angle
    between the two Raman beams, giving a residual wavevector
    ``wavenumber * misalignment`` along the axis.
    """

    center: float = 0.0  # m
    angle: float = np.pi / 4  # rad, to the trap axis
    waist: float = 36.5e-6  # m
    peak_rabi: float = 2 * np.pi * 47.9e3  # rad/s
    profile_exponent: int = 2
    stark_offset: float = 0.0  # rad/s
    misalignment: float = 0.0  # rad
    wavenumber: float = DEFAULT_WAVENUMBER  # rad/m
    name: str = ""

    def __post_init__(self):
        if not self.waist > 0:
            raise InvalidArgument("beam waist must be positive")
        if not 0 < self.angle <= np.pi:
            raise InvalidArgument("crossing angle must lie in (0, pi]")
        if self.peak_rabi < 0:
            raise InvalidArgument("peak Rabi frequency must be non-negative")
        if self.profile_exponent not in (1, 2):
            raise InvalidArgument("profile exponent must be 1 or 2")

    @property
    def residual_wavevector(self) -> float:
        return self.wavenumber * self.misalignment

    @property
    def axial_decay(self) -> float:
        """``chi / v``: Gaussian decay rate of the profile per metre of axial travel."""
        return np.sqrt(self.profile_exponent) * abs(np.sin(self.angle)) / self.waist


def rabi_at_position(beam: BeamGeometry, z):
    """``Omega(z) = Omega_pk exp(-p ((z - z_c) sin(theta))^2 / w0^2)``."""
    r = (np.asarray(z, dtype=float) - beam.center) * np.sin(beam.angle)
    return beam.peak_rabi * np.exp(-beam.profile_exponent * r**2 / beam.waist**2)


def make_retro_zone(primary: BeamGeometry, center: float, waist_scale: float = 1.0,
                    power_transmission: float = 1.0, **overrides) -> BeamGeometry:
    """The retro-reflected pass of ``primary`` focused at ``center``.

    Peak intensity scales as ``transmission / waist_scale**2``; the Rabi
    frequency follows it with the beam's profile exponent (linearly for an
    intensity-proportional coupling, as a square root for field-proportional).
    """
    if waist_scale < 1:
        raise InvalidArgument("retro-reflected waist cannot shrink (waist_scale >= 1)")
    if not 0 <= power_transmission <= 1:
        raise InvalidArgument("power transmission must lie in [0, 1]")
    intensity = power_transmission / waist_scale**2
    rabi = primary.peak_rabi * intensity ** (primary.profile_exponent / 2)
    beam = replace(primary, center=center, waist=primary.waist * waist_scale, peak_rabi=rabi)
    return replace(beam, **overrides) if overrides else beam


def doppler_shift(beam: BeamGeometry, v):
    """First-order Doppler detuning ``k * alpha * v`` (rad/s)."""
    return beam.residual_wavevector * np.asarray(v, dtype=float)


def total_detuning(beam: BeamGeometry, v, base=0.0):
    return base + beam.stark_offset + doppler_shift(beam, v)


# measured zone parameters for the two-zone experiment
B1 = BeamGeometry(center=600e-6, waist=73e-6 / 2, peak_rabi=2 * np.pi * 47.9e3,
                  stark_offset=2 * np.pi * 1.3e3, name="B1")
B2 = BeamGeometry(center=-600e-6, waist=160e-6 / 2, peak_rabi=2 * np.pi * 16.1e3, name="B2")
