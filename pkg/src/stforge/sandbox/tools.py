"""Tool execution against the synthetic world, behind a single-flight LRU cache.

Dispatch normalizes arguments, consults the cache, and on a miss executes the
tool exactly once even under concurrent identical requests. Payloads are pure
functions of (world seed, normalized request), so a cache hit is
indistinguishable from fresh execution.
"""

from __future__ import annotations

import datetime as _dt
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from ..errors import StforgeError
from .cache import LruCache
from .geo import haversine_km, point_polyline_km, polyline_length_km
from .normalize import cache_key, canonical_bytes, normalized_arguments
from .schemas import ToolRegistry, ToolSchema, default_registry
from .world import SyntheticWorld

REFERENCE_MINUTE = 12 * 60  # fixed "now" used by open_now filtering
MAX_FORECAST_DAYS = 5
TEXT_TEMPLATE_VERSION = "1"


class ToolExecutionError(StforgeError):
    pass


class ForecastHorizonExceeded(ToolExecutionError):
    pass


class NoRouteFound(ToolExecutionError):
    pass


@dataclass(frozen=True)
class ToolResponse:
    tool: str
    text: str
    data: dict
    cache_hit: bool
    latency_ms: int


def _tokens(value: str) -> set[str]:
    return set(value.replace("_", " ").split())


def _poi_matches(poi, query: str) -> bool:
    q = _tokens(query)
    hay = _tokens(poi.name.lower()) | _tokens(poi.category)
    return bool(q & hay) or query in poi.name.lower() or query == poi.category


def _region_ok(poi, region: str) -> bool:
    return not region or poi.region == region


def _poi_payload(poi, **extra) -> dict:
    data = poi.as_dict()
    data.update(extra)
    return data


# ---------------------------------------------------------------------------
# Executors: (normalized arguments, world) -> (text, data)
# ---------------------------------------------------------------------------

def _exec_search_places(args: Mapping[str, Any], world: SyntheticWorld):
    center = args["center"]
    if center is not None:
        candidates = [world.pois[i] for i in world.grid_candidates(tuple(center), args["radius"])]
    else:
        candidates = list(world.pois)

    results = []
    for poi in candidates:
        if not _poi_matches(poi, args["query"]) or not _region_ok(poi, args["region"]):
            continue
        if args["open_now"] and not poi.open_at(REFERENCE_MINUTE):
            continue
        extra = {}
        if center is not None:
            dist = haversine_km(tuple(center), (poi.lat, poi.lon))
            if dist > args["radius"]:
                continue
            extra["distance_km"] = round(dist, 3)
        results.append(_poi_payload(poi, **extra))

    sort_by = args["sort_by"]
    if sort_by == "distance":
        if center is None:
            raise ToolExecutionError("sort_by=distance requires a center")
        results.sort(key=lambda p: (p["distance_km"], p["id"]))
    elif sort_by == "price":
        results.sort(key=lambda p: (p["price"], p["id"]))
    else:
        results.sort(key=lambda p: (-p["rating"], p["id"]))

    total = len(results)
    results = results[: args["limit"]]
    if results:
        names = ", ".join(p["name"] for p in results[:3])
        text = f"Found {total} places matching '{args['query']}'. Top results: {names}."
    else:
        text = f"No places matching '{args['query']}' were found."
    return text, {"query": args["query"], "count": total, "places": results}


def _route_points(args: Mapping[str, Any], world: SyntheticWorld) -> list[tuple[float, float]]:
    points = [tuple(args["origin"])]
    points += [tuple(p) for p in args.get("intermediates") or ()]
    points.append(tuple(args["destination"]))
    outside = [p for p in points if not world.bbox.contains(p)]
    if outside:
        raise NoRouteFound(f"waypoint {outside[0]} lies outside the routable area")
    return points


def _exec_compute_routes(args: Mapping[str, Any], world: SyntheticWorld):
    points = _route_points(args, world)
    mode = args["mode"]
    distance = polyline_length_km(points)
    duration_min = distance / world.route_speeds[mode] * 60.0
    data: dict[str, Any] = {
        "mode": mode,
        "polyline": [[round(lat, 6), round(lon, 6)] for lat, lon in points],
        "distance_km": round(distance, 3),
        "duration_min": round(duration_min, 1),
    }
    if mode == "driving":
        route_key = canonical_bytes(data["polyline"]).decode()
        if args["avoid_tolls"]:
            # toll-free variant: longer surface route, no toll booths
            data["distance_km"] = round(distance * 1.08, 3)
            data["duration_min"] = round(duration_min * 1.15, 1)
            data["toll_cny"] = 0
        else:
            data["toll_cny"] = world.toll_estimate(distance, route_key)
        data["traffic_lights"] = world.traffic_light_estimate(distance, route_key)
    text = (
        f"Route ({mode}): {data['distance_km']} km, about {data['duration_min']} min"
        + (f", tolls {data['toll_cny']} CNY, {data['traffic_lights']} traffic lights"
           if mode == "driving" else "")
        + "."
    )
    return text, data


def _exec_search_along_route(args: Mapping[str, Any], world: SyntheticWorld):
    points = _route_points(args, world)
    distance = polyline_length_km(points)
    results = []
    for poi in world.pois:
        if not _poi_matches(poi, args["query"]):
            continue
        offset = point_polyline_km((poi.lat, poi.lon), points)
        if offset <= args["corridor"]:
            results.append(_poi_payload(poi, corridor_km=round(offset, 3)))
    results.sort(key=lambda p: (p["corridor_km"], p["id"]))
    total = len(results)
    results = results[: args["limit"]]
    text = (
        f"Found {total} places matching '{args['query']}' within {args['corridor']} km "
        f"of the {round(distance, 1)} km route."
        if total
        else f"No places matching '{args['query']}' along the route."
    )
    data = {
        "query": args["query"],
        "route": {"distance_km": round(distance, 3), "mode": args["mode"]},
        "count": total,
        "places": results,
    }
    return text, data


def _exec_central_places(args: Mapping[str, Any], world: SyntheticWorld):
    origins = [tuple(o) for o in args["origins"]]
    if not origins:
        raise ToolExecutionError("origins must contain at least one [lat, lon] pair")
    strategy = args["strategy"]
    scored = []
    for poi in world.pois:
        if args["category"] and poi.category != args["category"]:
            continue
        dists = [haversine_km(o, (poi.lat, poi.lon)) for o in origins]
        max_km, total_km = max(dists), sum(dists)
        if strategy == "minimize_max_distance":
            score = max_km
        elif strategy == "minimize_total_distance":
            score = total_km
        else:  # balanced: even compromise between fairness and efficiency
            score = 0.5 * max_km + 0.5 * (total_km / len(dists))
        scored.append(_poi_payload(
            poi,
            max_km=round(max_km, 3),
            total_km=round(total_km, 3),
            score=round(score, 6),
        ))
    scored.sort(key=lambda p: (p["score"], p["id"]))
    total = len(scored)
    scored = scored[: args["limit"]]
    text = (
        f"Ranked {total} candidate places for {len(origins)} origins under "
        f"strategy '{strategy}'."
        if total
        else "No candidate places match the category filter."
    )
    return text, {"strategy": strategy, "count": total, "places": scored}


def _exec_ranking_list(args: Mapping[str, Any], world: SyntheticWorld):
    entries = [
        poi for poi in world.pois
        if poi.category == args["category"] and _region_ok(poi, args["region"])
    ]
    entries.sort(key=lambda p: (-p.rating, p.id))
    total = len(entries)
    ranked = []
    for rank, poi in enumerate(entries[: args["limit"]], start=1):
        ranked.append(_poi_payload(
            poi,
            rank=rank,
            reason=f"Ranked #{rank} for {args['category']} by rating {poi.rating}",
        ))
    where = f" in {args['region']}" if args["region"] else ""
    text = (
        f"Top {len(ranked)} of {total} {args['category']} places{where}."
        if ranked
        else f"No {args['category']} places{where} to rank."
    )
    return text, {"category": args["category"], "region": args["region"],
                  "count": total, "entries": ranked}


def _dates_from(start: str, days: int) -> list[str]:
    try:
        first = _dt.date.fromisoformat(start)
    except ValueError as exc:
        raise ToolExecutionError(f"invalid date {start!r}; expected YYYY-MM-DD") from exc
    return [(first + _dt.timedelta(days=d)).isoformat() for d in range(days)]


def _exec_flights(args: Mapping[str, Any], world: SyntheticWorld):
    if args["days"] < 1:
        raise ToolExecutionError("days must be >= 1")
    days = []
    for date in _dates_from(args["date"], args["days"]):
        flights = world.flights(args["origin"], args["destination"], date)
        days.append({"date": date, "flights": flights})
    n = sum(len(d["flights"]) for d in days)
    cheapest = min(f["price_cny"] for d in days for f in d["flights"])
    text = (
        f"{n} flights from {args['origin']} to {args['destination']} across "
        f"{len(days)} day(s); prices from {cheapest} CNY."
    )
    return text, {"origin": args["origin"], "destination": args["destination"], "days": days}


def _exec_trains(args: Mapping[str, Any], world: SyntheticWorld):
    if args["days"] < 1:
        raise ToolExecutionError("days must be >= 1")
    days = []
    for date in _dates_from(args["date"], args["days"]):
        trains = world.trains(args["origin"], args["destination"], date)
        days.append({"date": date, "trains": trains})
    n = sum(len(d["trains"]) for d in days)
    text = (
        f"{n} trains from {args['origin']} to {args['destination']} across "
        f"{len(days)} day(s)."
    )
    return text, {"origin": args["origin"], "destination": args["destination"], "days": days}


def _exec_weather_now(args: Mapping[str, Any], world: SyntheticWorld):
    data = world.current_weather(args["location"])
    text = (
        f"Current weather in {data['location']}: {data['condition']}, "
        f"{data['temp_c']} C (feels like {data['feels_like_c']} C), "
        f"wind {data['wind_dir']} {data['wind_speed_kmh']} km/h, AQI {data['aqi']}."
    )
    return text, data


def _exec_forecast(args: Mapping[str, Any], world: SyntheticWorld):
    if args["date"]:
        days = [world.forecast_day(args["location"], args["date"])]
    else:
        horizon = args["days"]
        if horizon < 1:
            raise ToolExecutionError("days must be >= 1")
        if horizon > MAX_FORECAST_DAYS:
            raise ForecastHorizonExceeded(
                f"forecast horizon {horizon} exceeds the {MAX_FORECAST_DAYS}-day maximum"
            )
        days = [world.forecast_day(args["location"], f"day_{d + 1}") for d in range(horizon)]
    text = f"Forecast for {args['location']}: " + "; ".join(
        f"{d['date']}: {d['condition']}, {d['low_c']} to {d['high_c']} C" for d in days
    ) + "."
    return text, {"location": args["location"], "days": days}


def _exec_web_search(args: Mapping[str, Any], world: SyntheticWorld):
    q = _tokens(args["query"])
    scored = []
    for doc in world.documents:
        hay = _tokens(doc["title"].lower()) | _tokens(doc["snippet"].lower())
        overlap = len(q & hay)
        if overlap:
            scored.append({**doc, "score": overlap})
    scored.sort(key=lambda d: (-d["score"], d["id"]))
    results = scored[: args["limit"]]
    text = (
        f"{len(scored)} documents match '{args['query']}'. Best: {results[0]['title']}."
        if results
        else f"No documents match '{args['query']}'."
    )
    return text, {"query": args["query"], "count": len(scored), "results": results}


_EXECUTORS: dict[str, Callable[[Mapping[str, Any], SyntheticWorld], tuple[str, dict]]] = {
    "map_search_places": _exec_search_places,
    "map_compute_routes": _exec_compute_routes,
    "map_search_along_route": _exec_search_along_route,
    "map_search_central_places": _exec_central_places,
    "map_search_ranking_list": _exec_ranking_list,
    "travel_search_flights": _exec_flights,
    "travel_search_trains": _exec_trains,
    "weather_current_conditions": _exec_weather_now,
    "weather_forecast_days": _exec_forecast,
    "web_search": _exec_web_search,
}


class SandboxExecutor:
    """Thread-safe dispatcher: normalization, caching, and single-flight.

    Concurrent identical requests coalesce into one world execution; the
    losers wait on the owner's event and then read the cached value.
    """

    def __init__(
        self,
        world: SyntheticWorld,
        registry: ToolRegistry | None = None,
        cache_capacity: int = 65_536,
    ):
        self.world = world
        self.registry = registry or default_registry()
        self.cache = LruCache(cache_capacity)
        self._inflight: dict[bytes, threading.Event] = {}
        self._lock = threading.Lock()
        self.executions = 0
        self.hit_responses = 0

    def stats(self) -> dict:
        with self._lock:
            return {
                "executions": self.executions,
                "cache_hits": self.hit_responses,
                "cache_size": len(self.cache),
            }

    def dispatch(self, tool: str, params: Mapping[str, Any]) -> ToolResponse:
        started = time.perf_counter()
        schema = self.registry.get(tool)
        args = normalized_arguments(schema, params)
        key = cache_key(tool, canonical_bytes(args)).digest

        while True:
            cached = self.cache.get(key)
            if cached is not None:
                with self._lock:
                    self.hit_responses += 1
                return self._response(tool, cached, True, started)

            with self._lock:
                event = self._inflight.get(key)
                if event is None:
                    event = threading.Event()
                    self._inflight[key] = event
                    owner = True
                else:
                    owner = False

            if not owner:
                event.wait()
                continue  # value is cached now, or the owner failed and we retry

            try:
                executor = _EXECUTORS[schema.name]
                text, data = executor(args, self.world)
                with self._lock:
                    self.executions += 1
                self.cache.put(key, (text, data))
                return self._response(tool, (text, data), False, started)
            finally:
                with self._lock:
                    self._inflight.pop(key, None)
                event.set()

    @staticmethod
    def _response(tool: str, value: tuple[str, dict], hit: bool, started: float) -> ToolResponse:
        text, data = value
        return ToolResponse(
            tool=tool,
            text=text,
            data=data,
            cache_hit=hit,
            latency_ms=int((time.perf_counter() - started) * 1000),
        )
