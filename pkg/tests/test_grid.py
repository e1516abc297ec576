"""
Tests for warping, flow composition and homographies
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tools.fields import FlowField, Homography, ImageField, ProbMap, ScalarField, ValidityMask
from tools.grid import (
    compose_flow,
    homography_to_flow,
    image_corners,
    invert_homography,
    project_points,
    sample_homography,
    warp,
    warp_mask,
)
from utils.helper import ContractViolation, DegenerateHomographyError


def test_zero_flow_is_exact_identity(rng):
    image = ImageField(rng.uniform(size=(5, 7, 3)))
    out, valid = warp(image, FlowField.zeros(5, 7))
    assert np.array_equal(out.data, image.data)
    assert valid.data.all()


def test_integer_translation_shifts_and_invalidates_border(rng):
    values = rng.uniform(size=(4, 6))
    out, valid = warp(ScalarField(values), FlowField.constant(4, 6, 1.0, 0.0))
    assert np.array_equal(out.data[:, :-1], ScalarField(values).data[:, 1:])
    assert valid.data[:, :-1].all()
    assert not valid.data[:, -1].any()
    assert np.all(out.data[:, -1] == 0.0)


def test_sample_on_last_pixel_is_valid_and_beyond_is_not():
    values = np.arange(12, dtype=np.float64).reshape(3, 4)
    flow = np.zeros((3, 4, 2))
    flow[0, 0] = [3.0, 0.0]
    flow[1, 0] = [3.0 + 1e-3, 0.0]
    out, valid = warp(values, FlowField(flow))
    assert valid.data[0, 0] and out[0, 0] == 3.0
    assert not valid.data[1, 0] and out[1, 0] == 0.0


def test_half_pixel_shift_averages_neighbours():
    values = np.array([[0.0, 2.0, 4.0, 8.0]])
    out, _ = warp(values, FlowField.constant(1, 4, 0.5, 0.0))
    assert np.allclose(out[0, :3], [1.0, 3.0, 6.0])


def test_warp_is_linear_in_the_field(rng):
    a = rng.integers(-8, 8, size=(6, 6, 2)).astype(np.float64)
    b = rng.integers(-8, 8, size=(6, 6, 2)).astype(np.float64)
    flow = FlowField(rng.integers(-4, 4, size=(6, 6, 2)) * 0.25)
    left, _ = warp(3.0 * a - 2.0 * b, flow)
    wa, _ = warp(a, flow)
    wb, _ = warp(b, flow)
    assert np.array_equal(left, 3.0 * wa - 2.0 * wb)


def test_warp_keeps_kind_and_rejects_mismatch(rng, make_probs):
    q = ProbMap(make_probs(rng, 4, 4, 3))
    out, _ = warp(q, FlowField.constant(4, 4, 0.25, -0.25))
    assert isinstance(out, ProbMap)
    with pytest.raises(ContractViolation):
        warp(q, FlowField.zeros(5, 4))
    with pytest.raises(ContractViolation):
        warp("not a field", FlowField.zeros(4, 4))


def test_prob_map_warp_stays_on_the_simplex_where_valid(rng, make_probs):
    q = ProbMap(make_probs(rng, 6, 6, 4))
    out, valid = warp(q, FlowField(rng.uniform(-1.5, 1.5, size=(6, 6, 2))))
    sums = out.data.astype(np.float64).sum(axis=2)
    assert np.allclose(sums[valid.data], 1.0, atol=1e-5)
    assert np.all(sums[~valid.data] == 0.0)


@settings(max_examples=50, deadline=None)
@given(value=st.floats(-100, 100), seed=st.integers(0, 2 ** 16))
def test_constant_field_survives_any_in_bounds_warp(value, seed):
    rng = np.random.default_rng(seed)
    field = np.full((5, 5), value)
    out, valid = warp(field, FlowField(rng.uniform(-2.0, 2.0, size=(5, 5, 2))))
    assert np.allclose(out[valid.data], value, rtol=1e-12, atol=1e-12)


def test_warp_mask_spreads_invalid_neighbours():
    mask = np.ones((3, 4), dtype=bool)
    mask[1, 2] = False
    out = warp_mask(ValidityMask(mask), FlowField.constant(3, 4, 0.5, 0.0))
    assert not out.data[1, 1]  # samples between columns 1 and 2
    assert not out.data[1, 2]
    assert out.data[0, 1]
    assert not out.data[0, 3]  # out of bounds


def test_compose_with_zero_second_leg_returns_first(rng):
    first = FlowField(rng.uniform(-1, 1, size=(5, 5, 2)))
    composed, _ = compose_flow(first, FlowField.zeros(5, 5))
    assert np.array_equal(composed.data, first.data)


def test_compose_translations_add_in_the_interior():
    composed, valid = compose_flow(FlowField.constant(6, 6, 1.0, 0.0), FlowField.constant(6, 6, 0.0, 2.0))
    assert np.all(composed.data[:, :-1] == [1.0, 2.0])
    assert not valid.data[:, -1].any()


def test_homography_to_flow_of_identity_and_translation():
    assert np.all(homography_to_flow(Homography.identity(), 4, 5).data == 0.0)
    flow = homography_to_flow(Homography.translation(2.0, -3.0), 4, 5)
    assert np.allclose(flow.data, [2.0, -3.0])


def test_homography_normalization_and_degeneracy():
    h = Homography(2.0 * np.eye(3))
    assert np.array_equal(h.matrix, np.eye(3))
    with pytest.raises(DegenerateHomographyError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(DegenerateHomographyError):
        Homography(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]))


def test_projection_to_infinity_raises():
    h = Homography(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]))
    with pytest.raises(DegenerateHomographyError):
        project_points(h, np.array([[1.0, 0.0]]))
    with pytest.raises(DegenerateHomographyError):
        homography_to_flow(h, 3, 3)


def test_inverse_homography_round_trips_points(rng):
    h = sample_homography(7, 0.3, 32, 32)
    points = rng.uniform(0, 31, size=(50, 2))
    back = project_points(invert_homography(h), project_points(h, points))
    assert np.allclose(back, points, atol=1e-9)


# the residual is bilinear interpolation error of the second leg; it shrinks on larger grids
@pytest.mark.parametrize("size, strength", [(64, 0.05), (64, 0.1), (48, 0.05)])
@pytest.mark.parametrize("seed", range(10))
def test_forward_and_inverse_flows_chain_to_zero(size, strength, seed):
    h = sample_homography(seed, strength, size, size)
    forward = homography_to_flow(h, size, size)
    backward = homography_to_flow(invert_homography(h), size, size)
    chained, valid = compose_flow(forward, backward)
    assert valid.data.sum() > 0
    assert np.max(np.linalg.norm(chained.data[valid.data], axis=1)) < 1e-3


def test_sample_homography_is_deterministic_and_bounded():
    a = sample_homography(11, 0.2, 40, 30)
    b = sample_homography(11, 0.2, 40, 30)
    assert np.array_equal(a.matrix, b.matrix)
    corners = image_corners(40, 30)
    moved = project_points(a, corners)
    assert np.all(np.abs(moved - corners) <= 0.5 * 0.2 * 30 + 1e-9)


@pytest.mark.parametrize("strength", [0.0, -0.1, 0.6])
def test_sample_homography_rejects_bad_strength(strength):
    with pytest.raises(ContractViolation):
        sample_homography(0, strength, 16, 16)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 16), scale=st.floats(1.0, 4.0))
def test_scaling_a_flow_up_never_revalidates_a_pixel(seed, scale):
    rng = np.random.default_rng(seed)
    flow = FlowField(rng.normal(scale=3.0, size=(6, 7, 2)))
    _, valid = warp(np.zeros((6, 7)), flow)
    _, scaled_valid = warp(np.zeros((6, 7)), FlowField(flow.data * scale))
    assert not np.any(scaled_valid.data & ~valid.data)


def test_homography_flow_matches_per_pixel_projection():
    h, w = 24, 32
    hom = sample_homography(8, 0.3, h, w)
    flow = homography_to_flow(hom, h, w)
    expected = np.zeros((h, w, 2))
    for y in range(h):
        for x in range(w):
            px, py, pz = hom.matrix @ np.array([x, y, 1.0])
            expected[y, x] = (px / pz - x, py / pz - y)
    assert np.max(np.abs(flow.data - expected)) < 1e-4
