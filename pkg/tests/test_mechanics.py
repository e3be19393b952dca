import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import ParameterError
from core.geometry import PolygonSpec, generate_polygon, principal_axes, rectangle, section_properties
from core.mechanics import (
    ALL_LABELS,
    FREQUENCY_LABELS,
    BeamSpec,
    BendingAxis,
    beta_roots,
    characteristic,
    eigenfrequencies,
    label_vector,
    oracle_labels,
    tip_deflection,
    validate_label_set,
)


def square_section():
    return principal_axes(section_properties(rectangle(50.0, 50.0)))


def test_characteristic_roots():
    roots = beta_roots(3).beta
    assert roots == pytest.approx((1.8751041, 4.6940911, 7.8547574), abs=1e-7)
    for beta in roots:
        assert abs(characteristic(beta)) < 1e-8


def test_higher_roots_approach_odd_half_pi():
    roots = beta_roots(6).beta
    assert roots[5] == pytest.approx(5.5 * math.pi, abs=1e-6)
    assert all(b > a for a, b in zip(roots, roots[1:]))


def test_beta_roots_rejects_zero():
    with pytest.raises(ParameterError):
        beta_roots(0)


def test_square_beam_tip_deflection():
    result = tip_deflection(BeamSpec(), square_section())
    assert result.magnitude == pytest.approx(0.016, rel=1e-6)


def test_square_beam_label_vector():
    labels = dict(zip(ALL_LABELS, label_vector(rectangle(50.0, 50.0), BeamSpec())))
    assert labels["area_mm2"] == pytest.approx(2500.0)
    assert labels["volume_mm3"] == pytest.approx(2.5e6)
    assert labels["max_deflection_mm"] == pytest.approx(16.0, rel=1e-6)
    assert labels["f1_hz"] == pytest.approx(41.13, rel=1e-3)
    assert labels["f2_hz"] == pytest.approx(41.13, rel=1e-3)
    assert labels["f3_hz"] == pytest.approx(257.7, rel=1e-3)


def test_zero_load_gives_zero_deflection():
    beam = BeamSpec(tip_load=(0.0, 0.0))
    assert tip_deflection(beam, square_section()).magnitude == 0.0


def test_load_direction_selects_stiffness():
    sec = principal_axes(section_properties(rectangle(60.0, 30.0)))
    along_x = tip_deflection(BeamSpec(tip_load=(1750.0, 0.0)), sec).magnitude
    along_y = tip_deflection(BeamSpec(tip_load=(0.0, 1750.0)), sec).magnitude
    assert along_x == pytest.approx(1750.0 / (3 * 70e9 * 540000e-12), rel=1e-9)
    assert along_y == pytest.approx(1750.0 / (3 * 70e9 * 135000e-12), rel=1e-9)


def test_deflection_scales_with_length_cubed():
    sec = square_section()
    short = tip_deflection(BeamSpec(length=1.0), sec).magnitude
    long = tip_deflection(BeamSpec(length=2.0), sec).magnitude
    assert long / short == pytest.approx(8.0, rel=1e-12)


def test_rectangle_modes_start_on_the_weak_axis():
    sec = principal_axes(section_properties(rectangle(60.0, 30.0)))
    area = 1800.0
    modal = eigenfrequencies(BeamSpec(), sec, area)
    assert modal.axis_tags[0] is BendingAxis.Y_P
    assert modal.frequencies[1] / modal.frequencies[0] == pytest.approx(2.0, rel=1e-9)
    assert list(modal.frequencies) == sorted(modal.frequencies)


@pytest.mark.parametrize("seed", range(5))
def test_frequencies_invariant_under_rotation(seed):
    poly = generate_polygon(PolygonSpec(n_vertices=11, avg_radius=40.0, irregularity=0.4, spikiness=0.15, seed=seed))
    a = label_vector(poly, BeamSpec(), FREQUENCY_LABELS)
    b = label_vector(poly.rotate(1.1), BeamSpec(), FREQUENCY_LABELS)
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_frequencies_scale_with_stiffness_and_length():
    poly = generate_polygon(PolygonSpec(n_vertices=9, avg_radius=35.0, irregularity=0.3, spikiness=0.1, seed=2))
    base = label_vector(poly, BeamSpec(), FREQUENCY_LABELS)
    stiffer = label_vector(poly, BeamSpec(material={"youngs_modulus": 280e9}), FREQUENCY_LABELS)
    longer = label_vector(poly, BeamSpec(length=2.0), FREQUENCY_LABELS)
    np.testing.assert_allclose(stiffer / base, 2.0, rtol=1e-12)
    np.testing.assert_allclose(longer / base, 0.25, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_deflection_follows_section_and_load_rotated_together(seed):
    poly = generate_polygon(PolygonSpec(n_vertices=13, avg_radius=40.0, irregularity=0.4, spikiness=0.15, seed=seed))
    phi = 0.3 + 0.7 * seed
    c, s = math.cos(phi), math.sin(phi)
    fx, fy = 1200.0, -900.0
    before = tip_deflection(BeamSpec(tip_load=(fx, fy)), principal_axes(section_properties(poly)))
    after = tip_deflection(BeamSpec(tip_load=(c * fx - s * fy, s * fx + c * fy)),
                           principal_axes(section_properties(poly.rotate(phi))))
    assert after.magnitude == pytest.approx(before.magnitude, rel=1e-9)


def test_label_set_is_canonicalized():
    assert validate_label_set(["f3_hz", "area_mm2"]) == ("area_mm2", "f3_hz")
    values = label_vector(rectangle(50.0, 50.0), BeamSpec(), ["f3_hz", "area_mm2"])
    assert values[0] == pytest.approx(2500.0)


@pytest.mark.parametrize("labels", [[], ["area_mm2", "area_mm2"], ["mass_kg"]])
def test_invalid_label_sets(labels):
    with pytest.raises(ParameterError):
        validate_label_set(labels)


def test_oracle_labels_batch():
    polys = [rectangle(50.0, 50.0), rectangle(60.0, 30.0)]
    batch = oracle_labels(polys, BeamSpec(), FREQUENCY_LABELS)
    assert batch.shape == (2, 3)
    np.testing.assert_array_equal(batch[1], label_vector(polys[1], BeamSpec(), FREQUENCY_LABELS))
    assert oracle_labels([], BeamSpec(), FREQUENCY_LABELS).shape == (0, 3)


@pytest.mark.parametrize("kwargs", [dict(length=0.0), dict(tip_load=(math.inf, 0.0)), dict(material={"density": -1})])
def test_invalid_beam(kwargs):
    with pytest.raises(ValidationError):
        BeamSpec(**kwargs)
