import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from celleta.errors import BadConfig, DegenerateSegment, NonPositiveDuration, OutOfBounds, ValidationError
from celleta.geo import (
    EARTH_RADIUS, CellIndex, CompassDirection, GpsPoint, GridSpec, absolute_interval, bearing, cell_of,
    direction_of, haversine_array, haversine_distance, midpoint, subdivide_segment, time_interval_of,
)


def cosine_law_distance(p1, p2):
    """Spherical law of cosines: an independent great-circle oracle."""
    a1, b1, a2, b2 = map(math.radians, (p1.lat, p1.lon, p2.lat, p2.lon))
    c = math.sin(a1) * math.sin(a2) + math.cos(a1) * math.cos(a2) * math.cos(b2 - b1)
    return EARTH_RADIUS * math.acos(max(-1.0, min(1.0, c)))


def unit_vector(p):
    lat, lon = math.radians(p.lat), math.radians(p.lon)
    return np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])


def vector_bearing(p1, p2):
    """Bearing from tangent-plane projection of the chord: north and east unit vectors at p1."""
    lat, lon = math.radians(p1.lat), math.radians(p1.lon)
    north = np.array([-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)])
    east = np.array([-math.sin(lon), math.cos(lon), 0.0])
    n = np.cross(unit_vector(p1), unit_vector(p2))  # great-circle normal
    direction = np.cross(n, unit_vector(p1))         # initial heading along the circle
    return math.degrees(math.atan2(direction @ east, direction @ north)) % 360


G = GridSpec(39.0, -85.0, 0.001, 400, 1000)


def random_pairs(n, seed, spread=5.0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        lat = rng.uniform(-min(60, 89 - spread), min(60, 89 - spread))
        lon = rng.uniform(-179 + spread, 179 - spread)
        out.append((GpsPoint(lat, lon), GpsPoint(lat + rng.uniform(-spread, spread), lon + rng.uniform(-spread, spread))))
    return out


class TestCellOf:
    def test_origin_corner(self):
        assert cell_of(GpsPoint(39.0, -85.0), G) == CellIndex(1, 1)

    def test_boundary_goes_to_next_row(self):
        assert cell_of(GpsPoint(39.0 + 0.001, -85.0), G) == CellIndex(2, 1)

    def test_worked_example(self):
        h = math.floor((39.1031 - 39.0) / 0.001 + 1e-9) + 1
        w = math.floor((-84.5120 + 85.0) / 0.001 + 1e-9) + 1
        assert (h, w) == (104, 489)
        assert cell_of(GpsPoint(39.1031, -84.5120), G) == CellIndex(104, 489)

    @pytest.mark.parametrize("lat,lon", [(38.9999, -84.9), (39.5, -85.0001), (39.4, -84.0), (39.0 + 0.4, -84.5)])
    def test_outside_box(self, lat, lon):
        with pytest.raises(OutOfBounds):
            cell_of(GpsPoint(lat, lon), G)

    def test_invalid_coordinates(self):
        with pytest.raises(ValidationError):
            GpsPoint(91.0, 0.0)
        with pytest.raises(ValidationError):
            GpsPoint(0.0, 181.0)

    def test_bad_intervals(self):
        with pytest.raises(BadConfig):
            GridSpec(0, 0, 0.001, 1, 1, intervals=7)
        with pytest.raises(BadConfig):
            GridSpec(0, 0, 0.0, 1, 1)


class TestHaversine:
    def test_coincident(self):
        p = GpsPoint(39.1, -84.5)
        assert haversine_distance(p, p) == 0.0

    def test_equatorial_degree(self):
        d = haversine_distance(GpsPoint(0, 0), GpsPoint(0, 1))
        assert abs(d - EARTH_RADIUS * math.pi / 180) < 1e-6
        assert abs(d - 111_195) < 1.0

    def test_against_cosine_law_oracle(self):
        for p1, p2 in random_pairs(100, seed=1):
            ref = cosine_law_distance(p1, p2)
            assert abs(haversine_distance(p1, p2) - ref) <= 1e-4 * ref

    def test_vectorised_matches_scalar(self):
        pairs = random_pairs(50, seed=2)
        arr = haversine_array([a.lat for a, _ in pairs], [a.lon for a, _ in pairs],
                              [b.lat for _, b in pairs], [b.lon for _, b in pairs])
        assert np.allclose(arr, [haversine_distance(a, b) for a, b in pairs], rtol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-80, 80), st.floats(-170, 170), st.floats(-80, 80), st.floats(-170, 170),
           st.floats(-80, 80), st.floats(-170, 170))
    def test_symmetry_and_triangle(self, a1, b1, a2, b2, a3, b3):
        p, q, r = GpsPoint(a1, b1), GpsPoint(a2, b2), GpsPoint(a3, b3)
        dpq = haversine_distance(p, q)
        assert dpq == pytest.approx(haversine_distance(q, p), rel=1e-12, abs=1e-9)
        assert dpq <= haversine_distance(p, r) + haversine_distance(r, q) + 1e-9 * max(dpq, 1.0)


class TestMidpoint:
    def test_equator(self):
        m = midpoint(GpsPoint(0, 0, 10), GpsPoint(0, 10, 20))
        assert m.lat == pytest.approx(0, abs=1e-12)
        assert m.lon == pytest.approx(5, abs=1e-12)
        assert m.t == 15

    def test_identity(self):
        p = GpsPoint(12.5, 44.0, 3)
        m = midpoint(p, p)
        assert (m.lat, m.lon) == (p.lat, p.lon)

    def test_worked_equidistance(self):
        p1, p2 = GpsPoint(10, 20), GpsPoint(30, 40)
        m = midpoint(p1, p2)
        d = haversine_distance(p1, p2)
        assert abs(haversine_distance(p1, m) - haversine_distance(m, p2)) / d < 1e-6
        # on the great circle: the two halves add up to the whole
        assert haversine_distance(p1, m) + haversine_distance(m, p2) == pytest.approx(d, rel=1e-9)

    def test_random_equidistance(self):
        for p1, p2 in random_pairs(200, seed=3, spread=40):
            m = midpoint(p1, p2)
            d = haversine_distance(p1, p2)
            assert abs(haversine_distance(p1, m) - haversine_distance(m, p2)) / d < 1e-6

    def test_antipodal(self):
        with pytest.raises(DegenerateSegment):
            midpoint(GpsPoint(0, 0), GpsPoint(0, 180))


class TestBearing:
    def test_cardinal(self):
        assert bearing(GpsPoint(0, 5), GpsPoint(1, 5)) == pytest.approx(0.0, abs=1e-12)
        assert bearing(GpsPoint(0, 0), GpsPoint(0, 1)) == pytest.approx(90.0, abs=1e-12)
        assert bearing(GpsPoint(1, 5), GpsPoint(0, 5)) == pytest.approx(180.0, abs=1e-12)

    def test_worked_oracle(self):
        p1, p2 = GpsPoint(39.0, -84.0), GpsPoint(39.5, -83.5)
        assert bearing(p1, p2) == pytest.approx(vector_bearing(p1, p2), abs=0.01)

    def test_random_oracle(self):
        for p1, p2 in random_pairs(100, seed=4):
            b, ref = bearing(p1, p2), vector_bearing(p1, p2)
            assert min(abs(b - ref), 360 - abs(b - ref)) < 1e-6
            assert 0 <= b < 360

    def test_coincident(self):
        with pytest.raises(DegenerateSegment):
            bearing(GpsPoint(1, 1), GpsPoint(1, 1))


class TestDirection:
    @pytest.mark.parametrize("deg,expected", [(0, "N"), (22.5, "NE"), (359, "N"), (337.5, "N"), (90, "E"),
                                              (180, "S"), (247.4, "SW"), (292.5, "NW")])
    def test_examples(self, deg, expected):
        assert direction_of(deg) is CompassDirection[expected]

    def test_exhaustive_partition(self):
        """Every 0.1 degree step lands in exactly the sector whose centre is nearest."""
        for k in range(3600):
            deg = k / 10
            sector = direction_of(deg)
            centre = 45 * int(sector)
            gap = min(abs(deg - centre), 360 - abs(deg - centre))
            assert gap <= 22.5
            if gap == 22.5:  # lower boundary belongs to the clockwise sector
                assert (deg - centre) % 360 == 337.5


class TestSubdivide:
    def test_same_cell(self):
        a, b = GpsPoint(39.0002, -84.9998, 0), GpsPoint(39.0008, -84.9992, 10)
        subs = subdivide_segment(a, b, G)
        assert len(subs) == 1 and subs[0].a == a and subs[0].b == b

    def test_one_boundary(self):
        a, b = GpsPoint(39.0005, -84.9995, 0), GpsPoint(39.0015, -84.9995, 10)
        subs = subdivide_segment(a, b, G)
        assert len(subs) >= 2
        assert {s.cell for s in subs} == {CellIndex(1, 1), CellIndex(2, 1)}
        cells = [s.cell for s in subs]
        assert cells == sorted(cells)  # ordered from p1 to p2

    def test_inherits_parent_speed_and_direction(self):
        a, b = GpsPoint(39.0005, -84.9995, 0), GpsPoint(39.0031, -84.9962, 40)
        subs = subdivide_segment(a, b, G)
        speed = haversine_distance(a, b) / 40
        assert all(s.speed == speed for s in subs)
        assert all(s.bearing_dir is direction_of(bearing(a, b)) for s in subs)

    def test_chain(self):
        a, b = GpsPoint(39.0005, -84.9995, 0), GpsPoint(39.0031, -84.9962, 40)
        subs = subdivide_segment(a, b, G)
        assert subs[0].a == a and subs[-1].b == b
        for s, nxt in zip(subs, subs[1:]):
            assert s.b == nxt.a

    def test_bad_duration(self):
        with pytest.raises(NonPositiveDuration):
            subdivide_segment(GpsPoint(39.1, -84.9, 5), GpsPoint(39.1, -84.8, 5), G)

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            subdivide_segment(GpsPoint(39.1, -84.9, 0), GpsPoint(38.0, -84.8, 5), G)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 0.35), st.floats(0.05, 0.95), st.floats(0, 2 * math.pi), st.floats(1.0, 600.0))
    def test_property_random_segments(self, lat_off, lon_off, angle, length):
        a = GpsPoint(39.0 + lat_off, -85.0 + lon_off, 0)
        dlat = length * math.cos(angle) / 111_195
        dlon = length * math.sin(angle) / (111_195 * math.cos(math.radians(a.lat)))
        b = GpsPoint(a.lat + dlat, a.lon + dlon, 30)
        subs = subdivide_segment(a, b, G)
        total = sum(s.length for s in subs)
        assert total == pytest.approx(haversine_distance(a, b), rel=5e-3)


class TestIntervals:
    def test_examples(self):
        g = GridSpec(0, 0, 0.001, 1, 1, 96)
        assert time_interval_of(0, g) == 0
        assert time_interval_of(15 * 60, g) == 1
        assert time_interval_of(86_399, g) == 95
        assert (time_interval_of(86_399, g) + 1) % 96 == time_interval_of(86_400, g)

    def test_timezone(self):
        g = GridSpec(0, 0, 0.001, 1, 1, 96, tz_offset=-5 * 3600)
        assert time_interval_of(5 * 3600, g) == 0
        assert time_interval_of(5 * 3600, g, tz_offset=0) == 20

    def test_absolute_interval_counts_days(self):
        g = GridSpec(0, 0, 0.001, 1, 1, 96)
        assert absolute_interval(86_400 + 900, g) == 97
