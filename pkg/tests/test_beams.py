import numpy as np
import pytest

from transport_gates.beams import (B1, B2, BeamGeometry, doppler_shift, make_retro_zone,
                                   rabi_at_position, total_detuning)
from transport_gates.errors import InvalidArgument


def test_profile_peak_and_waist():
    b = BeamGeometry(center=10e-6, angle=np.pi / 2, waist=20e-6, peak_rabi=1.0)
    assert rabi_at_position(b, 10e-6) == 1.0
    # intensity-proportional coupling drops to 1/e^2 at one waist
    assert rabi_at_position(b, 30e-6) == pytest.approx(np.exp(-2))
    b1 = BeamGeometry(angle=np.pi / 2, waist=20e-6, peak_rabi=1.0, profile_exponent=1)
    assert rabi_at_position(b1, 20e-6) == pytest.approx(np.exp(-1))


def test_oblique_crossing_stretches_profile():
    b = BeamGeometry(angle=np.pi / 6, waist=20e-6, peak_rabi=1.0)
    # sin(30 deg) = 1/2: the axial 1/e^2 point moves out to 2 w0
    assert rabi_at_position(b, 40e-6) == pytest.approx(np.exp(-2))
    assert b.axial_decay == pytest.approx(np.sqrt(2) * 0.5 / 20e-6)


def test_profile_symmetric():
    z = np.linspace(0, 200e-6, 11)
    np.testing.assert_allclose(rabi_at_position(B1, B1.center + z), rabi_at_position(B1, B1.center - z))


def test_doppler_shift_odd_in_velocity():
    b = BeamGeometry(misalignment=np.deg2rad(1e-3))
    assert doppler_shift(b, 10.0) == pytest.approx(-doppler_shift(b, -10.0))
    # k alpha v / 2 pi = 557.6 Hz for 313 nm, 1 mdeg, 10 m/s
    assert doppler_shift(b, 10.0) / (2 * np.pi) == pytest.approx(557.6, abs=0.1)
    assert total_detuning(b, 0.0, base=3.0) == 3.0


def test_retro_zone_scaling():
    r = make_retro_zone(B1, -600e-6, waist_scale=2.0, power_transmission=0.8)
    assert r.waist == pytest.approx(2 * B1.waist)
    assert r.peak_rabi == pytest.approx(B1.peak_rabi * 0.8 / 4)
    assert r.center == -600e-6
    with pytest.raises(InvalidArgument):
        make_retro_zone(B1, 0.0, waist_scale=0.5)


def test_measured_zones():
    assert 2 * B1.waist == pytest.approx(73e-6)
    assert 2 * B2.waist == pytest.approx(160e-6)
    assert B1.stark_offset / (2 * np.pi) == pytest.approx(1.3e3)


@pytest.mark.parametrize("kw", [dict(waist=0.0), dict(angle=0.0), dict(peak_rabi=-1.0),
                                dict(profile_exponent=3)])
def test_invalid_geometry(kw):
    with pytest.raises(InvalidArgument):
        BeamGeometry(**kw)
