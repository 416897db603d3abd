"""Geometry tests: closed-form area oracles, a shapely rasterization oracle
for containment, grid oracles for dilation and contact queries."""

import math

import numpy as np
import pytest
import shapely
import shapely.affinity
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon as ShapelyPolygon

from pegbench import geom
from pegbench.geom import (
    ContactQuery,
    DegenerateGeometry,
    Polygon2,
    ShapeId,
    build_shape,
    contact_query,
    dilate,
    point_in,
    points_in,
    shape_catalog,
    transform,
)

ALL_SHAPES = list(ShapeId)


def shapely_of(poly: Polygon2) -> ShapelyPolygon:
    return ShapelyPolygon(poly.vertices)


# ---------------------------------------------------------------- validation


def test_polygon_rejects_clockwise():
    with pytest.raises(DegenerateGeometry):
        Polygon2(np.array([(0, 0), (0, 10), (10, 10), (10, 0)], dtype=float))


def test_polygon_rejects_self_intersection():
    bowtie = np.array([(0, 0), (10, 10), (10, 0), (0, 10)], dtype=float)
    with pytest.raises(DegenerateGeometry):
        Polygon2(bowtie)


def test_polygon_rejects_too_few_vertices():
    with pytest.raises(DegenerateGeometry):
        Polygon2(np.array([(0, 0), (1, 1)], dtype=float))


def test_polygon_rejects_nonfinite():
    with pytest.raises(DegenerateGeometry):
        Polygon2(np.array([(0, 0), (np.nan, 1), (1, 0)], dtype=float))


def test_polygon_rejects_huge_coordinates():
    with pytest.raises(DegenerateGeometry):
        Polygon2(np.array([(0, 0), (2e4, 0), (0, 2e4)], dtype=float))


# --------------------------------------------------------------- build_shape


def test_shape_id_has_exactly_nine_members():
    assert len(ALL_SHAPES) == 9
    assert {s.value for s in ALL_SHAPES} == {
        "arrow", "circle", "cross", "diamond", "hexagon",
        "key", "line", "pentagon", "u",
    }


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_shapes_fit_40mm_box_and_are_ccw(shape):
    poly = build_shape(shape)
    minx, miny, maxx, maxy = poly.bounds()
    assert -20.0 <= minx and maxx <= 20.0
    assert -20.0 <= miny and maxy <= 20.0
    assert poly.area > 0


def test_hexagon_area_matches_closed_form():
    # Regular hexagon with side s: area = 3*sqrt(3)/2 * s^2.
    poly = build_shape(ShapeId.HEXAGON)
    side = 20.0
    expected = 1.5 * math.sqrt(3.0) * side * side
    assert abs(poly.area - expected) / expected < 1e-9


def test_circle_area_within_one_percent_of_disc():
    poly = build_shape(ShapeId.CIRCLE)
    assert len(poly.vertices) == 32
    disc = math.pi * 20.0 * 20.0
    assert abs(poly.area - disc) / disc < 0.01


def test_diamond_symmetric_under_180_rotation():
    poly = build_shape(ShapeId.DIAMOND)
    rotated = transform(poly, 180.0, (0.0, 0.0))
    got = {tuple(np.round(v, 9)) for v in rotated.vertices}
    want = {tuple(np.round(v, 9)) for v in poly.vertices}
    assert got == want


def test_build_shape_scale_scales_area():
    base = build_shape(ShapeId.CROSS, 1.0)
    half = build_shape(ShapeId.CROSS, 0.5)
    assert abs(half.area - 0.25 * base.area) < 1e-9


def test_build_shape_deterministic():
    a = build_shape(ShapeId.KEY)
    b = build_shape(ShapeId.KEY)
    assert np.array_equal(a.vertices, b.vertices)


def test_build_shape_rejects_bad_scale():
    with pytest.raises(DegenerateGeometry):
        build_shape(ShapeId.KEY, 0.0)
    with pytest.raises(DegenerateGeometry):
        build_shape(ShapeId.KEY, 2.5)


# -------------------------------------------------------------------- dilate


def test_dilate_square_miter_gives_bigger_square():
    square = Polygon2(np.array([(10, -10), (10, 10), (-10, 10), (-10, -10)], dtype=float))
    grown = dilate(square, 5.0)
    got = {tuple(np.round(v, 9)) for v in grown.vertices}
    assert got == {(15.0, 15.0), (-15.0, 15.0), (-15.0, -15.0), (15.0, -15.0)}


def test_dilate_zero_is_identity():
    poly = build_shape(ShapeId.ARROW)
    same = dilate(poly, 0.0)
    assert np.array_equal(same.vertices, poly.vertices)


def test_dilate_rejects_negative_offset():
    with pytest.raises(DegenerateGeometry):
        dilate(build_shape(ShapeId.KEY), -1.0)


def _grid_samples(poly: Polygon2, pitch: float) -> np.ndarray:
    minx, miny, maxx, maxy = poly.bounds()
    xs = np.arange(minx, maxx + pitch, pitch)
    ys = np.arange(miny, maxy + pitch, pitch)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts[points_in(poly, pts)]


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_dilate_contains_original_grid_samples(shape):
    poly = build_shape(shape)
    grown = dilate(poly, 5.0)
    samples = _grid_samples(poly, 0.25)
    assert len(samples) > 100
    assert np.all(points_in(grown, samples))


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_dilate_minimum_clearance(shape):
    # Every point of the original must sit >= offset from the grown boundary.
    poly = build_shape(shape)
    grown = shapely_of(dilate(poly, 5.0))
    samples = _grid_samples(poly, 0.5)
    boundary = grown.exterior
    dists = [boundary.distance(shapely.Point(p)) for p in samples[::7]]
    assert min(dists) >= 5.0 - 1e-6


@pytest.mark.parametrize(
    "shape", [ShapeId.DIAMOND, ShapeId.HEXAGON, ShapeId.CIRCLE, ShapeId.PENTAGON, ShapeId.LINE]
)
def test_dilate_composes_for_convex_shapes(shape):
    # dilate(dilate(p,a),b) must cover every grid sample of dilate(p,a+b).
    poly = build_shape(shape)
    twice = dilate(dilate(poly, 2.0), 3.0)
    once = dilate(poly, 5.0)
    samples = _grid_samples(once, 0.25)
    assert np.all(points_in(twice, samples))


# ------------------------------------------------------------------ point_in


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_point_in_agrees_with_rasterization_oracle(shape):
    poly = build_shape(shape)
    spoly = shapely_of(poly)
    rng = np.random.default_rng(1234)
    pts = rng.uniform(-22, 22, size=(10_000, 2))
    # Oracle: snap each point to a 0.25 mm raster cell center, exact test there.
    snapped = np.round(pts / 0.25) * 0.25
    oracle = shapely.contains_xy(spoly, snapped[:, 0], snapped[:, 1])
    mine = points_in(poly, pts)
    dist = shapely.distance(spoly.exterior, shapely.points(pts))
    far = dist >= 0.3
    agreement = np.mean(mine[far] == oracle[far])
    assert agreement >= 0.999


def test_point_in_centroid_of_convex_true():
    for shape in (ShapeId.DIAMOND, ShapeId.HEXAGON, ShapeId.CIRCLE, ShapeId.PENTAGON):
        poly = build_shape(shape)
        assert point_in(poly, poly.centroid())


def test_point_in_outside_bbox_false():
    poly = build_shape(ShapeId.KEY)
    assert not point_in(poly, (50.0, 0.0))
    assert not point_in(poly, (0.0, -50.0))


def test_point_on_edge_counts_inside():
    square = Polygon2(np.array([(10, -10), (10, 10), (-10, 10), (-10, -10)], dtype=float))
    assert point_in(square, (10.0, 0.0))
    assert point_in(square, (0.0, 10.0))
    assert point_in(square, (10.0, 10.0))


# ----------------------------------------------------------------- transform


def test_transform_identity():
    poly = build_shape(ShapeId.U)
    same = transform(poly, 0.0, (0.0, 0.0))
    assert np.allclose(same.vertices, poly.vertices, atol=1e-12)


def test_transform_full_turn():
    poly = build_shape(ShapeId.KEY)
    turned = transform(poly, 360.0, (0.0, 0.0))
    assert np.allclose(turned.vertices, poly.vertices, atol=1e-9)


def test_transform_square_quarter_turn_vertex_set():
    square = Polygon2(np.array([(10, -10), (10, 10), (-10, 10), (-10, -10)], dtype=float))
    turned = transform(square, 90.0, (0.0, 0.0))
    got = {tuple(np.round(v, 9)) for v in turned.vertices}
    want = {tuple(np.round(v, 9)) for v in square.vertices}
    assert got == want


def test_transform_translates():
    poly = build_shape(ShapeId.LINE)
    moved = transform(poly, 0.0, (3.0, -4.0))
    assert np.allclose(moved.vertices, poly.vertices + np.array([3.0, -4.0]), atol=1e-12)


@given(
    rot=st.floats(-360, 360, allow_nan=False),
    tx=st.floats(-50, 50, allow_nan=False),
    ty=st.floats(-50, 50, allow_nan=False),
)
@settings(max_examples=40, deadline=None)
def test_transform_preserves_winding_and_area(rot, tx, ty):
    poly = build_shape(ShapeId.ARROW)
    moved = transform(poly, rot, (tx, ty))
    assert abs(moved.area - poly.area) < 1e-6


# ------------------------------------------------------------- contact_query


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_insertable_at_zero_offset(shape):
    peg = build_shape(shape)
    cavity = dilate(peg, 5.0)
    q = contact_query(peg, cavity, (0.0, 0.0), 0.5)
    assert q.insertable
    assert q.blocked_fraction == 0.0
    assert q.blocked_centroid is None


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_blocked_at_large_offset(shape):
    peg = build_shape(shape)
    cavity = dilate(peg, 5.0)
    q = contact_query(peg, cavity, (40.0, 0.0), 0.5)
    assert not q.insertable
    assert q.blocked_fraction > 0.5


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_insertable_within_one_mm(shape):
    peg = build_shape(shape)
    cavity = dilate(peg, 5.0)
    rng = np.random.default_rng(7)
    for _ in range(8):
        v = rng.normal(size=2)
        off = v / np.linalg.norm(v) * rng.uniform(0, 1.0)
        assert contact_query(peg, cavity, off, 0.5).insertable


def test_key_blocked_at_20mm_matches_fine_oracle():
    peg = build_shape(ShapeId.KEY)
    cavity = dilate(peg, 5.0)
    coarse = contact_query(peg, cavity, (20.0, 0.0), 0.5)
    fine = contact_query(peg, cavity, (20.0, 0.0), 0.1)
    assert not coarse.insertable and not fine.insertable
    assert coarse.blocked_centroid[0] > 0
    assert fine.blocked_centroid[0] > 0


def test_key_blocked_fraction_monotone_in_offset():
    peg = build_shape(ShapeId.KEY)
    cavity = dilate(peg, 5.0)
    f6 = contact_query(peg, cavity, (6.0, 0.0), 0.1).blocked_fraction
    f20 = contact_query(peg, cavity, (20.0, 0.0), 0.1).blocked_fraction
    assert f6 < f20


def test_contact_query_deterministic():
    peg = build_shape(ShapeId.CROSS)
    cavity = dilate(peg, 5.0)
    a = contact_query(peg, cavity, (7.3, -2.1), 0.5)
    b = contact_query(peg, cavity, (7.3, -2.1), 0.5)
    assert a == b


def test_contact_query_rejects_bad_pitch():
    peg = build_shape(ShapeId.KEY)
    cavity = dilate(peg, 5.0)
    with pytest.raises(DegenerateGeometry):
        contact_query(peg, cavity, (0.0, 0.0), 0.05)
    with pytest.raises(DegenerateGeometry):
        contact_query(peg, cavity, (0.0, 0.0), 1.5)


@given(
    shape=st.sampled_from(ALL_SHAPES),
    ox=st.floats(-35, 35, allow_nan=False),
    oy=st.floats(-35, 35, allow_nan=False),
)
@settings(max_examples=60, deadline=None)
def test_contact_query_invariants(shape, ox, oy):
    peg = build_shape(shape)
    cavity = dilate(peg, 5.0)
    q = contact_query(peg, cavity, (ox, oy), 0.5)
    assert q.insertable == (q.blocked_fraction == 0.0)
    assert 0.0 <= q.blocked_fraction <= 1.0
    if q.blocked_centroid is not None:
        minx, miny, maxx, maxy = peg.bounds()
        cx, cy = q.blocked_centroid
        assert minx + ox - 1e-9 <= cx <= maxx + ox + 1e-9
        assert miny + oy - 1e-9 <= cy <= maxy + oy + 1e-9


def test_contact_query_agrees_with_shapely_on_clear_cases():
    # Independent oracle: peg covered by cavity via exact polygon predicates,
    # restricted to offsets with >= 0.3 mm margin either way.
    rng = np.random.default_rng(99)
    for shape in ALL_SHAPES:
        peg = build_shape(shape)
        cavity = dilate(peg, 5.0)
        speg = shapely_of(peg)
        scav = shapely_of(cavity)
        checked = 0
        for _ in range(60):
            off = rng.uniform(-10, 10, size=2)
            moved = shapely.affinity.translate(speg, off[0], off[1])
            if moved.within(scav):
                margin = moved.exterior.distance(scav.exterior)
                if margin < 0.3:
                    continue
                oracle = True
            else:
                overhang = moved.difference(scav)
                if overhang.is_empty or overhang.area < 0.3:
                    continue
                oracle = False
            got = contact_query(peg, cavity, off, 0.5).insertable
            assert got == oracle, (shape, off)
            checked += 1
        assert checked > 10


# ------------------------------------------------------------------- catalog


def test_shape_catalog_covers_all_shapes():
    cat = shape_catalog()
    assert len(cat) == 9
    for entry in cat:
        assert set(entry) == {"shape", "vertices_mm", "area_mm2"}
        assert len(entry["vertices_mm"]) >= 3


# ---------------------------------------------------- exact containment


@pytest.mark.parametrize("shape", ALL_SHAPES)
def test_insertable_exact_zero_offset_and_far_offset(shape):
    peg = build_shape(shape)
    cavity = dilate(peg, 5.0)
    assert geom.insertable_exact(peg, cavity, (0.0, 0.0))
    assert not geom.insertable_exact(peg, cavity, (80.0, 0.0))


def test_insertable_exact_matches_shapely_within_oracle():
    rng = np.random.default_rng(4)
    peg = build_shape(ShapeId.KEY)
    cavity = dilate(peg, 5.0)
    speg = ShapelyPolygon(peg.vertices)
    scav = ShapelyPolygon(cavity.vertices)
    for _ in range(200):
        off = rng.uniform(-9, 9, size=2)
        moved = shapely.affinity.translate(speg, off[0], off[1])
        assert geom.insertable_exact(peg, cavity, off) == scav.covers(moved)
