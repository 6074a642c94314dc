"""Location-indexed store of road imagery with proximity queries and
best-pair selection by matched-feature count."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features
from .errors import (
    DuplicateId,
    InsufficientCandidates,
    ManifestParseError,
    MissingImage,
    WeakOverlap,
)
from .image_io import load_color
from .lane_detection import to_gray

EARTH_RADIUS_M = 6371008.8
_CELL_M = 50.0  # spatial-grid bucket size


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    """Great-circle distance in meters."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True)
class GeoImageRecord:
    id: str
    latitude: float
    longitude: float
    image_path: str
    capture_meta: str = ""


@dataclass
class GeoIndex:
    records: dict = field(default_factory=dict)  # id -> GeoImageRecord
    _grid: dict = field(default_factory=dict)  # (i, j) -> [id]

    def _cell(self, lat: float, lon: float):
        # Longitude cells are bucketed in raw degrees so that the cell id never
        # depends on latitude; the query widens its longitude span by 1/cos
        # instead. (Scaling lon by cos(lat) here would put nearby points at
        # slightly different latitudes into distant cells.)
        i = int(math.floor(lat * 111_320.0 / _CELL_M))
        j = int(math.floor(lon * 111_320.0 / _CELL_M))
        return i, j

    def add(self, rec: GeoImageRecord):
        if rec.id in self.records:
            raise DuplicateId(rec.id)
        self.records[rec.id] = rec
        self._grid.setdefault(self._cell(rec.latitude, rec.longitude), []).append(rec.id)

    def candidates_near(self, lat: float, lon: float, radius: float) -> list[GeoImageRecord]:
        """Records within `radius` meters, nearest first."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        span = int(math.ceil(radius / _CELL_M)) + 1
        # A degree of longitude covers cos(lat) fewer meters than a degree of
        # latitude, so the longitude sweep needs proportionally more cells.
        span_j = int(math.ceil(span / max(0.01, math.cos(math.radians(lat))))) + 1
        ci, cj = self._cell(lat, lon)
        hits = []
        for i in range(ci - span, ci + span + 1):
            for j in range(cj - span_j, cj + span_j + 1):
                for rid in self._grid.get((i, j), ()):
                    rec = self.records[rid]
                    d = haversine_m(lat, lon, rec.latitude, rec.longitude)
                    if d <= radius:
                        hits.append((d, rec))
        hits.sort(key=lambda x: (x[0], x[1].id))
        return [rec for _, rec in hits]


def ingest(manifest_path) -> GeoIndex:
    """Build a spatial index from a tab-separated manifest.

    Each line: `id<TAB>lat<TAB>lon<TAB>image_path`; `#` lines are comments.
    Relative image paths resolve against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    index = GeoIndex()
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise ManifestParseError(lineno, f"expected 4 tab-separated fields, got {len(parts)}")
            rid, lat_s, lon_s, path = parts[0], parts[1], parts[2], parts[3]
            meta = parts[4] if len(parts) > 4 else ""
            try:
                lat, lon = float(lat_s), float(lon_s)
            except ValueError:
                raise ManifestParseError(lineno, "latitude/longitude not numeric") from None
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ManifestParseError(lineno, f"coordinates out of range: {lat}, {lon}")
            resolved = Path(path)
            if not resolved.is_absolute():
                resolved = base / resolved
            if not resolved.exists():
                raise MissingImage(str(resolved))
            index.add(GeoImageRecord(rid, lat, lon, str(resolved), meta))
    return index


@dataclass(frozen=True)
class CandidateSet:
    """Candidates ranked by descending feature-match count vs the current image."""

    records: list
    match_counts: list


def select_best_pair(current_gray: np.ndarray, candidates: list[GeoImageRecord],
                     query_latlon=None, max_features: int = 2000,
                     min_spacing: float = 8.0, max_distance: int = 64,
                     min_overlap: int = 30):
    """Rank candidates by matched-feature count; return the top two.

    Ties break by haversine distance to the query location (when given), then
    by lexicographic id. Raises WeakOverlap when the runner-up has fewer than
    `min_overlap` matches.
    """
    if len(candidates) < 2:
        raise InsufficientCandidates(f"need >= 2 candidates, got {len(candidates)}")
    cur_feats = features.detect_corners(current_gray, max_features, min_spacing)
    cur_descs, _, _ = features.describe(current_gray, cur_feats)

    scored = []
    for rec in candidates:
        img = to_gray(load_color(rec.image_path))
        feats = features.detect_corners(img, max_features, min_spacing)
        descs, _, _ = features.describe(img, feats)
        n = len(features.match_bidirectional(cur_descs, descs, max_distance))
        dist = (
            haversine_m(query_latlon[0], query_latlon[1], rec.latitude, rec.longitude)
            if query_latlon is not None
            else 0.0
        )
        scored.append((-n, dist, rec.id, n, rec))
    scored.sort(key=lambda x: (x[0], x[1], x[2]))
    ranking = CandidateSet(
        records=[s[4] for s in scored], match_counts=[s[3] for s in scored]
    )
    if ranking.match_counts[1] < min_overlap:
        raise WeakOverlap(
            f"second-best candidate has {ranking.match_counts[1]} matches "
            f"(minimum {min_overlap})"
        )
    return ranking.records[0], ranking.records[1], ranking
