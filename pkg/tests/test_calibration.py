import json
from dataclasses import replace

import numpy as np
import pytest

from transport_gates.beams import B1, B2, BeamGeometry
from transport_gates.calibration import (deduce_velocity, doppler_null, pulse_area, pulse_area_analytic,
                                         solve_velocity, stark_fidelity, stark_report, verify_rotation)
from transport_gates.errors import BracketError, InvalidArgument

WIDE = BeamGeometry(waist=1e-3, peak_rabi=2 * np.pi * 1.6e3)
DOPPLER_GRID = np.linspace(-6.4e3, 6.4e3, 61)


def test_area_zero_without_drive():
    assert pulse_area(replace(B2, peak_rabi=0.0), 3.0) == 0.0


def test_area_matches_gaussian_integral():
    for beam in (B1, B2, replace(B2, profile_exponent=1, angle=np.pi / 3)):
        assert pulse_area(beam, 4.0) == pytest.approx(pulse_area_analytic(beam, 4.0), rel=1e-10)


def test_area_scales_inversely_with_speed():
    assert pulse_area(B2, 2.0) == pytest.approx(2 * pulse_area(B2, 4.0), rel=1e-12)
    assert pulse_area(B2, -4.0) == pytest.approx(pulse_area(B2, 4.0), rel=1e-12)
    with pytest.raises(InvalidArgument):
        pulse_area(B2, 0.0)


def test_partial_area_is_half_at_centre():
    full = pulse_area(B1, 5.0)
    assert pulse_area(B1, 5.0, (B1.center - 1e-3, B1.center)) == pytest.approx(full / 2, rel=1e-10)


def test_solved_velocity_matches_closed_form():
    rep = solve_velocity(B2, np.pi)
    v_exact = B2.peak_rabi * B2.waist * np.sqrt(np.pi / 2) / (np.pi * np.sin(B2.angle))
    assert rep.value == pytest.approx(v_exact, rel=1e-8)
    assert rep.value == pytest.approx(4.5658, abs=1e-4)
    assert rep.converged and rep.details["verified_fidelity"] > 0.9999
    assert abs(rep.residual) < 1e-8


def test_half_rotation_needs_twice_the_speed():
    v_pi = solve_velocity(B1, np.pi, verify=False).value
    v_half = solve_velocity(B1, np.pi / 2, verify=False).value
    assert v_half == pytest.approx(2 * v_pi, rel=1e-8)


def test_verified_rotation():
    v = solve_velocity(B1, np.pi / 2, verify=False).value
    assert verify_rotation(B1, v, np.pi / 2) > 1 - 1e-6
    assert verify_rotation(B1, 1.1 * v, np.pi / 2) < 0.999


def test_bracket_error_reports_areas():
    with pytest.raises(BracketError, match="not enclosing"):
        solve_velocity(B2, np.pi, bracket=(10.0, 100.0))
    with pytest.raises(InvalidArgument):
        solve_velocity(B2, -1.0)


def test_deduced_velocity():
    assert deduce_velocity(7753, 56.6e-6) == pytest.approx(0.6206, abs=1e-4)
    with pytest.raises(InvalidArgument):
        deduce_velocity(-1.0, 1e-6)


def test_report_json():
    d = json.loads(solve_velocity(B2, np.pi / 2).to_json())
    assert d["quantity"] == "velocity" and d["unit"] == "m/s" and d["method"] == "brentq"


def test_stark_fidelity_even_and_quadratic():
    v = solve_velocity(B1, np.pi / 2, verify=False).value
    d = 2 * np.pi * 1.3e3
    f = lambda x: stark_fidelity(B1, x, np.pi / 2, v)
    assert f(0.0) == pytest.approx(1.0, abs=1e-10)
    assert f(d) == pytest.approx(f(-d), abs=1e-12)
    assert (1 - f(d)) / (1 - f(d / 2)) == pytest.approx(4.0, rel=1e-2)
    assert 0.9995 <= f(d) <= 0.9999


def test_stark_shapes():
    rep = stark_report(B1, B1.stark_offset, np.pi / 2, "constant")
    assert 0.999 < rep.value <= 1.0
    with pytest.raises(InvalidArgument):
        stark_fidelity(B1, 0.0, np.pi / 2, 10.0, shape="square")


def test_doppler_null_recovers_and_flips():
    alpha = np.deg2rad(1e-3)
    pos = doppler_null(replace(WIDE, misalignment=alpha), 10.0, DOPPLER_GRID, np.pi, seed=1)
    neg = doppler_null(replace(WIDE, misalignment=-alpha), 10.0, DOPPLER_GRID, np.pi, seed=1)
    assert pos.alpha == pytest.approx(alpha, rel=0.1)
    assert neg.alpha == pytest.approx(-alpha, rel=0.1)
    # the forward line sits at +k alpha v / 2 pi
    assert pos.f_forward == pytest.approx(557.6, abs=5 * pos.sigma * 10 * WIDE.wavenumber / np.pi)
    assert pos.f_forward > 0 > pos.f_reverse


def test_doppler_null_without_misalignment():
    res = doppler_null(WIDE, 10.0, DOPPLER_GRID, np.pi, seed=2)
    assert abs(res.alpha) < 3 * res.sigma
    rep = res.report()
    assert rep.unit == "rad" and rep.converged
    with pytest.raises(InvalidArgument):
        doppler_null(WIDE, 0.0, DOPPLER_GRID)
