"""Warp stage checks: exact identities, spline interpolation, shift oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefbo.errors import ContractError
from prefbo.warp import (
    CENTER_CONTROL_INDEX,
    NUM_CONTROL_POINTS,
    THETA_DIM,
    UNIT_LATTICE,
    Field2D,
    WarpParams,
    affine_apply,
    control_lattice,
    theta_bounds,
    tps_apply,
    tps_displacement,
    tps_eval,
    tps_fit,
    warp_compose,
    _radial_basis,
)


def _random_field(rng, h=24, w=32):
    return Field2D(values=rng.uniform(0.0, 1.0, size=(h, w)))


def test_identity_is_bit_exact(rng):
    field = _random_field(rng)
    out = warp_compose(np.zeros(THETA_DIM), field)
    assert out.values.tobytes() == field.values.tobytes()
    out_affine = affine_apply(np.zeros(6), field)
    assert out_affine.values.tobytes() == field.values.tobytes()
    out_tps = tps_apply(np.zeros((NUM_CONTROL_POINTS, 2)), field)
    assert out_tps.values.tobytes() == field.values.tobytes()


def test_radial_basis_zeros():
    vals = _radial_basis(np.array([0.0, 1.0, math.e]))
    assert vals[0] == 0.0
    assert vals[1] == 0.0  # U(1) = 1 * ln(1)
    assert vals[2] == pytest.approx(math.e, rel=1e-15)


def test_tps_interpolates_control_points(rng):
    controls = UNIT_LATTICE * np.array([31.0, 23.0])
    targets = rng.uniform(-3.0, 3.0, size=NUM_CONTROL_POINTS)
    weights, affine = tps_fit(controls, targets)
    reproduced = tps_eval(controls, weights, affine, controls)
    assert np.abs(reproduced - targets).max() <= 1e-8


def test_tps_affine_side_conditions(rng):
    # a constant target field needs no radial bending at all
    controls = UNIT_LATTICE * np.array([31.0, 23.0])
    weights, affine = tps_fit(controls, np.full(NUM_CONTROL_POINTS, 1.25))
    assert np.abs(weights).max() <= 1e-9
    queries = rng.uniform(0, 23, size=(40, 2))
    out = tps_eval(controls, weights, affine, queries)
    assert np.allclose(out, 1.25, atol=1e-9)


def test_integer_translation_is_exact_on_interior(rng):
    field = _random_field(rng, h=48, w=48)
    # 1/16 and 1/8 are exact binary fractions: 3 and 6 whole pixels
    out = affine_apply(np.array([1.0 / 16.0, 1.0 / 8.0, 0, 0, 0, 0]), field)
    interior = out.values[6:, 3:]
    expected = field.values[:-6, :-3]
    assert interior.tobytes() == expected.tobytes()


def test_translation_only_moves_content(rng):
    field = _random_field(rng)
    out = affine_apply(np.array([0.25, 0.0, 0, 0, 0, 0]), field)
    assert out.values.shape == field.values.shape
    assert out.values.min() >= field.values.min() - 1e-12
    assert out.values.max() <= field.values.max() + 1e-12


def test_rotation_preserves_center_value(rng):
    field = _random_field(rng, h=33, w=33)
    out = affine_apply(np.array([0, 0, 0, 0, math.pi / 5, 0]), field)
    center = field.values[16, 16]
    assert out.values[16, 16] == pytest.approx(center, abs=1e-12)


def test_compose_is_affine_then_spline(rng):
    field = _random_field(rng)
    theta = np.zeros(THETA_DIM)
    theta[:6] = [0.1, -0.05, 0.2, -0.1, 0.3, 0.1]
    offsets = rng.uniform(-0.2, 0.2, size=(NUM_CONTROL_POINTS, 2))
    theta[6:] = offsets.reshape(-1)
    combined = warp_compose(theta, field)
    two_step = tps_apply(offsets, affine_apply(theta[:6], field))
    assert combined.values.tobytes() == two_step.values.tobytes()


def test_tps_offsets_bounds_enforced(rng):
    field = _random_field(rng)
    bad = np.zeros((NUM_CONTROL_POINTS, 2))
    bad[3, 1] = 0.3
    with pytest.raises(ContractError):
        tps_apply(bad, field)


def test_theta_bounds_box():
    box = theta_bounds()
    assert box.lower.shape == (THETA_DIM,)
    assert np.allclose(box.upper, -box.lower)
    assert box.upper[0] == 0.75 and box.upper[1] == 0.75
    assert box.upper[2] == pytest.approx(math.log(4.0))
    assert box.upper[4] == pytest.approx(math.pi / 3.0)
    assert np.all(box.upper[6:] == 0.25)


def test_warp_params_roundtrip_and_bounds(rng):
    box = theta_bounds()
    theta = rng.uniform(box.lower, box.upper)
    params = WarpParams.from_vector(theta)
    assert np.allclose(params.to_vector(), theta)
    with pytest.raises(ContractError):
        WarpParams(tx=0.8)
    with pytest.raises(ContractError):
        WarpParams.from_vector(np.zeros(23))


def test_control_lattice_pixel_coordinates(rng):
    field = _random_field(rng, h=17, w=25)
    lattice = control_lattice(field)
    assert lattice.shape == (NUM_CONTROL_POINTS, 2)
    assert np.allclose(lattice, UNIT_LATTICE * np.array([24.0, 16.0]))
    assert np.allclose(lattice[CENTER_CONTROL_INDEX], [12.0, 8.0])


def test_center_offset_displaces_center(rng):
    field = _random_field(rng, h=48, w=48)
    offsets = np.zeros((NUM_CONTROL_POINTS, 2))
    offsets[CENTER_CONTROL_INDEX] = (0.1, -0.05)
    queries = control_lattice(field)
    disp = tps_displacement(offsets, field, queries)
    assert np.allclose(disp[CENTER_CONTROL_INDEX], [0.1 * 48, -0.05 * 48], atol=1e-8)
    others = np.delete(disp, CENTER_CONTROL_INDEX, axis=0)
    assert np.abs(others).max() <= 1e-8


def test_pgm_roundtrip_and_header(rng):
    field = _random_field(rng, h=5, w=7)
    data = field.to_pgm()
    assert data.startswith(b"P5\n7 5\n255\n")
    assert len(data) == len(b"P5\n7 5\n255\n") + 35
    again = Field2D.from_pgm(data)
    assert again.values.shape == (5, 7)
    assert again.to_pgm() == data


def test_pgm_constant_field_is_mid_gray():
    field = Field2D(values=np.full((4, 4), 0.37))
    data = field.to_pgm()
    pixels = np.frombuffer(data, dtype=np.uint8)[-16:]
    assert np.all(pixels == 128)


def test_pgm_parser_rejects_garbage():
    with pytest.raises(ContractError):
        Field2D.from_pgm(b"P6\n2 2\n255\n aaaa")
    with pytest.raises(ContractError):
        Field2D.from_pgm(b"P5\n2 2\n255\nab")


def test_pgm_parser_accepts_comments(rng):
    field = _random_field(rng, h=3, w=4)
    data = field.to_pgm()
    body = data.split(b"\n", 1)[1]
    commented = b"P5\n# made for a parser check\n" + body
    again = Field2D.from_pgm(commented)
    assert again.values.shape == (3, 4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_warp_output_stays_in_input_range(seed):
    rng = np.random.default_rng(seed)
    field = _random_field(rng, h=16, w=16)
    box = theta_bounds()
    theta = rng.uniform(box.lower, box.upper)
    out = warp_compose(theta, field)
    assert out.values.shape == field.values.shape
    assert out.values.min() >= field.values.min() - 1e-12
    assert out.values.max() <= field.values.max() + 1e-12
