"""Seed-deterministic synthetic world backing the sandbox tools.

Everything observable is a pure function of (seed, size parameters):
points of interest come from per-entity splitmix64 streams, and weather,
flight, and train lookups derive their values from (seed, request keys) on
demand. Two worlds built from the same inputs are byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

from .._hashing import SplitMix
from ..errors import StforgeError
from .geo import LatLon


class InvalidBBox(StforgeError):
    pass


@dataclass(frozen=True)
class BBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (-90.0 <= self.lat_min < self.lat_max <= 90.0):
            raise InvalidBBox(f"bad latitude bounds [{self.lat_min}, {self.lat_max}]")
        if not (-180.0 <= self.lon_min < self.lon_max <= 180.0):
            raise InvalidBBox(f"bad longitude bounds [{self.lon_min}, {self.lon_max}]")

    def contains(self, point: LatLon) -> bool:
        return (
            self.lat_min <= point[0] <= self.lat_max
            and self.lon_min <= point[1] <= self.lon_max
        )


DEFAULT_BBOX = BBox(lat_min=19.90, lat_max=20.15, lon_min=110.10, lon_max=110.55)

DEFAULT_ROUTE_SPEEDS: dict[str, float] = {
    "driving": 40.0,  # urban average
    "walking": 5.0,
    "cycling": 15.0,
    "transit": 30.0,
    "motorcycle": 45.0,
    "truck": 35.0,
}

POI_CATEGORIES = (
    "restaurant",
    "cafe",
    "gas_station",
    "charging_station",
    "hotel",
    "museum",
    "park",
    "cinema",
    "supermarket",
    "bar",
)

REGIONS = (
    "north_district",
    "south_district",
    "east_district",
    "west_district",
    "central_district",
)

_NAME_FIRST = (
    "Golden", "Silver", "Harbor", "Lakeside", "Sunrise", "Old Town", "River",
    "Palm", "Jade", "Coral", "Summit", "Garden", "Lotus", "Breeze", "Starlight",
)
_NAME_SECOND = (
    "Court", "Corner", "House", "Pavilion", "Plaza", "Point", "Terrace",
    "Grove", "Crossing", "Gate",
)

_CONDITIONS = ("clear", "cloudy", "overcast", "light rain", "heavy rain", "thunderstorm", "fog")
_WIND_DIRS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
_AIRLINES = ("CA", "MU", "CZ", "HU", "3U")
_AIRCRAFT = ("A320", "A321", "A330", "B737", "B787")

_DOC_TOPICS = (
    "visa free transit policy",
    "public holiday traffic restrictions",
    "electric vehicle charging subsidies",
    "airport rail link opening hours",
    "city marathon road closures",
    "ferry timetable changes",
    "museum free admission days",
    "typhoon season travel advisories",
)


@dataclass(frozen=True)
class Poi:
    id: str
    name: str
    category: str
    region: str
    lat: float
    lon: float
    rating: float
    price: int
    open_hours: str

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "category": self.category,
            "region": self.region,
            "lat": self.lat,
            "lon": self.lon,
            "rating": self.rating,
            "price": self.price,
            "open_hours": self.open_hours,
        }

    def open_at(self, minute_of_day: int) -> bool:
        start, end = self.open_hours.split("-")
        sm = int(start[:2]) * 60 + int(start[3:])
        em = int(end[:2]) * 60 + int(end[3:])
        return sm <= minute_of_day <= em


_GRID_CELLS = 16  # per axis


class SyntheticWorld:
    """Immutable after construction; safe to share across threads."""

    def __init__(
        self,
        seed: int,
        bbox: BBox,
        pois: tuple[Poi, ...],
        route_speeds: Mapping[str, float],
        documents: tuple[dict, ...],
    ):
        self.seed = seed
        self.bbox = bbox
        self.pois = pois
        self.route_speeds = dict(route_speeds)
        self.documents = documents
        self._grid: dict[tuple[int, int], list[int]] = {}
        for i, poi in enumerate(pois):
            self._grid.setdefault(self._cell(poi.lat, poi.lon), []).append(i)

    def _cell(self, lat: float, lon: float) -> tuple[int, int]:
        bb = self.bbox
        r = int((lat - bb.lat_min) / (bb.lat_max - bb.lat_min) * _GRID_CELLS)
        c = int((lon - bb.lon_min) / (bb.lon_max - bb.lon_min) * _GRID_CELLS)
        return (min(max(r, 0), _GRID_CELLS - 1), min(max(c, 0), _GRID_CELLS - 1))

    def grid_candidates(self, center: LatLon, radius_km: float) -> list[int]:
        """POI indices from grid cells overlapping the radius (superset of
        the true result; callers re-check the exact distance)."""
        bb = self.bbox
        lat_pad = radius_km / 111.0
        lon_pad = radius_km / (111.0 * max(0.1, math.cos(math.radians(center[0]))))
        r0, c0 = self._cell(center[0] - lat_pad, center[1] - lon_pad)
        r1, c1 = self._cell(center[0] + lat_pad, center[1] + lon_pad)
        out: list[int] = []
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                out.extend(self._grid.get((r, c), ()))
        return sorted(out)

    # -- deterministic lookup tables -------------------------------------

    def current_weather(self, location: str) -> dict:
        s = SplitMix(self.seed, "weather-now", location)
        temp = round(s.uniform(-5.0, 38.0), 1)
        return {
            "location": location,
            "temp_c": temp,
            "feels_like_c": round(temp + s.uniform(-3.0, 3.0), 1),
            "condition": s.choice(_CONDITIONS),
            "wind_dir": s.choice(_WIND_DIRS),
            "wind_speed_kmh": round(s.uniform(0.0, 40.0), 1),
            "aqi": s.randint(15, 280),
        }

    def forecast_day(self, location: str, key: str) -> dict:
        s = SplitMix(self.seed, "forecast", location, key)
        low = round(s.uniform(-8.0, 24.0), 1)
        return {
            "date": key,
            "low_c": low,
            "high_c": round(low + s.uniform(3.0, 14.0), 1),
            "condition": s.choice(_CONDITIONS),
            "aqi": s.randint(15, 280),
        }

    def flights(self, origin: str, destination: str, date: str) -> list[dict]:
        s = SplitMix(self.seed, "flights", origin, destination, date)
        out = []
        for i in range(s.randint(2, 5)):
            airline = s.choice(_AIRLINES)
            dep_minute = s.randint(6 * 60, 22 * 60)
            duration = s.randint(80, 300)
            out.append({
                "flight_no": f"{airline}{s.randint(1000, 9999)}",
                "airline": airline,
                "date": date,
                "depart": _hhmm(dep_minute),
                "arrive": _hhmm((dep_minute + duration) % (24 * 60)),
                "aircraft": s.choice(_AIRCRAFT),
                "price_cny": s.randint(320, 2980),
            })
        out.sort(key=lambda f: (f["depart"], f["flight_no"]))
        return out

    def trains(self, origin: str, destination: str, date: str) -> list[dict]:
        s = SplitMix(self.seed, "trains", origin, destination, date)
        out = []
        for i in range(s.randint(2, 6)):
            prefix = s.choice(("G", "D", "K"))
            dep_minute = s.randint(5 * 60, 21 * 60)
            duration = s.randint(90, 600)
            second = s.randint(80, 900)
            out.append({
                "train_no": f"{prefix}{s.randint(100, 999)}",
                "date": date,
                "depart": _hhmm(dep_minute),
                "arrive": _hhmm((dep_minute + duration) % (24 * 60)),
                "duration_min": duration,
                "from_station": f"{origin} Station",
                "to_station": f"{destination} Station",
                "price_second_cny": second,
                "price_first_cny": second + s.randint(40, 400),
            })
        out.sort(key=lambda t: (t["depart"], t["train_no"]))
        return out

    def toll_estimate(self, distance_km: float, route_key: str) -> int:
        s = SplitMix(self.seed, "toll", route_key)
        jitter = 1.0 + s.uniform(-0.1, 0.1)
        return max(0, round(0.5 * distance_km * jitter))

    def traffic_light_estimate(self, distance_km: float, route_key: str) -> int:
        s = SplitMix(self.seed, "lights", route_key)
        jitter = 1.0 + s.uniform(-0.2, 0.2)
        return max(0, round(1.8 * distance_km * jitter))

    # -- snapshots --------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "seed": self.seed,
            "bbox": {
                "lat_min": self.bbox.lat_min,
                "lat_max": self.bbox.lat_max,
                "lon_min": self.bbox.lon_min,
                "lon_max": self.bbox.lon_max,
            },
            "route_speeds": dict(sorted(self.route_speeds.items())),
            "pois": [p.as_dict() for p in self.pois],
            "documents": list(self.documents),
        }

    def snapshot_bytes(self) -> bytes:
        return json.dumps(
            self.snapshot(), sort_keys=True, separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")


def _hhmm(minute_of_day: int) -> str:
    return f"{minute_of_day // 60:02d}:{minute_of_day % 60:02d}"


def generate_world(
    seed: int,
    n_pois: int = 500,
    bbox: BBox = DEFAULT_BBOX,
    route_speeds: Mapping[str, float] | None = None,
) -> SyntheticWorld:
    """Build a world deterministically from (seed, n_pois, bbox)."""
    if n_pois < 0:
        raise ValueError("n_pois must be >= 0")
    pois = []
    for i in range(n_pois):
        s = SplitMix(seed, "poi", str(i))
        category = s.choice(POI_CATEGORIES)
        name = f"{s.choice(_NAME_FIRST)} {s.choice(_NAME_SECOND)} {category.replace('_', ' ')} {i}"
        open_start = s.randint(6, 11)
        open_end = s.randint(18, 23)
        pois.append(Poi(
            id=f"poi_{i:06d}",
            name=name,
            category=category,
            region=s.choice(REGIONS),
            lat=round(s.uniform(bbox.lat_min, bbox.lat_max), 6),
            lon=round(s.uniform(bbox.lon_min, bbox.lon_max), 6),
            rating=round(s.uniform(0.0, 5.0), 1),
            price=s.randint(10, 500),
            open_hours=f"{open_start:02d}:00-{open_end:02d}:00",
        ))

    documents = []
    for i, topic in enumerate(_DOC_TOPICS):
        s = SplitMix(seed, "doc", str(i))
        poi_ref = pois[s.next_u64() % len(pois)].name if pois else "the city center"
        documents.append({
            "id": f"doc_{i:03d}",
            "title": topic.title(),
            "snippet": f"Latest update on {topic}: see guidance near {poi_ref}. "
                       f"Reference code {s.randint(1000, 9999)}.",
        })

    return SyntheticWorld(
        seed=seed,
        bbox=bbox,
        pois=tuple(pois),
        route_speeds=route_speeds or DEFAULT_ROUTE_SPEEDS,
        documents=tuple(documents),
    )
