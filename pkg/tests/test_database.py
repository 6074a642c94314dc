"""Geo-indexed image store: distances, manifest ingest, candidate queries,
and best-pair selection."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safedrive.database import (
    EARTH_RADIUS_M,
    GeoImageRecord,
    GeoIndex,
    haversine_m,
    ingest,
    select_best_pair,
)
from safedrive.errors import (
    DuplicateId,
    InsufficientCandidates,
    ManifestParseError,
    MissingImage,
    WeakOverlap,
)
from safedrive.image_io import save_color
from safedrive.lane_detection import to_gray
from safedrive.synthetic import SceneSpec, generate_scene

LAT0, LON0 = 44.979238, -93.266568


def brute_haversine(lat1, lon1, lat2, lon2):
    """Chord-length oracle on unit-sphere vectors (stable for tiny angles)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    l1, l2 = math.radians(lon1), math.radians(lon2)
    x1 = (math.cos(p1) * math.cos(l1), math.cos(p1) * math.sin(l1), math.sin(p1))
    x2 = (math.cos(p2) * math.cos(l2), math.cos(p2) * math.sin(l2), math.sin(p2))
    chord = math.sqrt(sum((a - b) ** 2 for a, b in zip(x1, x2)))
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, chord / 2.0))


class TestHaversine:
    def test_zero_distance(self):
        assert haversine_m(LAT0, LON0, LAT0, LON0) == 0.0

    def test_one_degree_latitude(self):
        # One degree of latitude is ~111.2 km on a spherical Earth.
        d = haversine_m(0.0, 0.0, 1.0, 0.0)
        assert abs(d - EARTH_RADIUS_M * math.pi / 180.0) < 1.0

    @settings(max_examples=50, deadline=None)
    @given(
        lat1=st.floats(-80, 80), lon1=st.floats(-179, 179),
        lat2=st.floats(-80, 80), lon2=st.floats(-179, 179),
    )
    def test_matches_chord_oracle(self, lat1, lon1, lat2, lon2):
        d = haversine_m(lat1, lon1, lat2, lon2)
        ref = brute_haversine(lat1, lon1, lat2, lon2)
        assert abs(d - ref) <= 1e-6 * max(1.0, ref)

    def test_symmetry(self):
        a = haversine_m(LAT0, LON0, LAT0 + 0.01, LON0 + 0.02)
        b = haversine_m(LAT0 + 0.01, LON0 + 0.02, LAT0, LON0)
        assert a == pytest.approx(b, abs=1e-9)


def _offset(lat, lon, north_m, east_m):
    lat2 = lat + north_m / 111_320.0
    lon2 = lon + east_m / (111_320.0 * math.cos(math.radians(lat)))
    return lat2, lon2


def make_index(offsets_m):
    """Index with records at given (north, east) meter offsets from the anchor."""
    index = GeoIndex()
    for i, (n, e) in enumerate(offsets_m):
        lat, lon = _offset(LAT0, LON0, n, e)
        index.add(GeoImageRecord(f"r{i:02d}", lat, lon, f"/img/{i}.png"))
    return index


class TestGeoIndex:
    def test_duplicate_id_rejected(self):
        index = make_index([(0, 0)])
        with pytest.raises(DuplicateId):
            index.add(GeoImageRecord("r00", LAT0, LON0, "/x.png"))

    def test_candidates_match_brute_force(self):
        rng = np.random.default_rng(0)
        offsets = rng.uniform(-400, 400, size=(60, 2))
        index = make_index(offsets)
        for radius in (30.0, 120.0, 500.0):
            got = [r.id for r in index.candidates_near(LAT0, LON0, radius)]
            expect = sorted(
                (
                    (haversine_m(LAT0, LON0, r.latitude, r.longitude), r.id)
                    for r in index.records.values()
                    if haversine_m(LAT0, LON0, r.latitude, r.longitude) <= radius
                ),
            )
            assert got == [rid for _, rid in expect]

    def test_nearest_first(self):
        index = make_index([(90, 0), (10, 0), (50, 0)])
        ids = [r.id for r in index.candidates_near(LAT0, LON0, 200.0)]
        assert ids == ["r01", "r02", "r00"]

    def test_nonpositive_radius(self):
        index = make_index([(0, 0)])
        with pytest.raises(ValueError):
            index.candidates_near(LAT0, LON0, 0.0)

    def test_empty_result_outside_radius(self):
        index = make_index([(500, 500)])
        assert index.candidates_near(LAT0, LON0, 50.0) == []


@pytest.fixture()
def manifest_dir(tmp_path):
    img = np.zeros((8, 8, 3))
    for name in ("a.png", "b.png"):
        save_color(tmp_path / name, img)
    return tmp_path


def write_manifest(tmp_path, lines):
    path = tmp_path / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestIngest:
    def test_valid_manifest_with_comments(self, manifest_dir):
        path = write_manifest(manifest_dir, [
            "# id\tlat\tlon\tpath",
            "",
            f"a\t{LAT0}\t{LON0}\ta.png",
            f"b\t{LAT0 + 1e-4}\t{LON0}\tb.png\tdawn capture",
        ])
        index = ingest(path)
        assert set(index.records) == {"a", "b"}
        assert index.records["b"].capture_meta == "dawn capture"

    def test_relative_paths_resolve_against_manifest(self, manifest_dir):
        path = write_manifest(manifest_dir, [f"a\t{LAT0}\t{LON0}\ta.png"])
        index = ingest(path)
        assert index.records["a"].image_path == str(manifest_dir / "a.png")

    def test_short_row_reports_line_number(self, manifest_dir):
        path = write_manifest(manifest_dir, [
            f"a\t{LAT0}\t{LON0}\ta.png",
            f"b\t{LAT0}\t{LON0}",
        ])
        with pytest.raises(ManifestParseError) as exc:
            ingest(path)
        assert exc.value.line_number == 2

    def test_non_numeric_coordinates(self, manifest_dir):
        path = write_manifest(manifest_dir, [f"a\tnorth\t{LON0}\ta.png"])
        with pytest.raises(ManifestParseError):
            ingest(path)

    def test_out_of_range_latitude(self, manifest_dir):
        path = write_manifest(manifest_dir, [f"a\t95.0\t{LON0}\ta.png"])
        with pytest.raises(ManifestParseError):
            ingest(path)

    def test_duplicate_id(self, manifest_dir):
        path = write_manifest(manifest_dir, [
            f"a\t{LAT0}\t{LON0}\ta.png",
            f"a\t{LAT0}\t{LON0}\tb.png",
        ])
        with pytest.raises(DuplicateId):
            ingest(path)

    def test_missing_image(self, manifest_dir):
        path = write_manifest(manifest_dir, [f"a\t{LAT0}\t{LON0}\tnope.png"])
        with pytest.raises(MissingImage):
            ingest(path)


@pytest.fixture(scope="module")
def pair_corpus(tmp_path_factory, small_scene):
    """On-disk records: two views of the query scene plus an unrelated scene."""
    out = tmp_path_factory.mktemp("corpus")
    images, truth = small_scene
    other_images, _ = generate_scene(SceneSpec(seed=99))
    records = []
    for name, img, (n, e) in (
        ("same_a", images[0], (0.0, 0.0)),
        ("same_b", images[1], (1.5, 0.0)),
        ("other", other_images[0], (3.0, 0.0)),
    ):
        save_color(out / f"{name}.png", img)
        lat, lon = _offset(LAT0, LON0, n, e)
        records.append(GeoImageRecord(name, lat, lon, str(out / f"{name}.png")))
    return records, to_gray(images[2])


class TestSelectBestPair:
    def test_ranks_same_scene_views_first(self, pair_corpus):
        records, current_gray = pair_corpus
        rec_a, rec_b, ranking = select_best_pair(
            current_gray, records, query_latlon=(LAT0, LON0)
        )
        assert {rec_a.id, rec_b.id} == {"same_a", "same_b"}
        assert ranking.records[2].id == "other"
        assert ranking.match_counts == sorted(ranking.match_counts, reverse=True)

    def test_too_few_candidates(self, pair_corpus):
        records, current_gray = pair_corpus
        with pytest.raises(InsufficientCandidates):
            select_best_pair(current_gray, records[:1])

    def test_weak_overlap(self, pair_corpus):
        records, current_gray = pair_corpus
        # Only one related view available: the runner-up is the unrelated
        # scene, which shares far fewer matches than a true second view.
        with pytest.raises(WeakOverlap):
            select_best_pair(current_gray, [records[0], records[2]],
                             query_latlon=(LAT0, LON0), min_overlap=100)
