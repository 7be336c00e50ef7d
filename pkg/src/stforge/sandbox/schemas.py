"""Tool contracts: parameter schemas for the ten sandbox tools.

The registry is the single source of truth for parameter names, types,
defaults, enum values, and case folding, which the normalizer turns into
canonical cache-key bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from ..errors import StforgeError


class UnknownTool(StforgeError):
    pass


class ToolCategory(str, Enum):
    MAP_NAVIGATION = "MapNavigation"
    TRAVEL = "Travel"
    WEATHER = "Weather"
    INFORMATION = "Information"


@dataclass(frozen=True)
class ParamSpec:
    """One declared tool parameter.

    kind is one of string, number, integer, boolean, enum, list. For lists,
    item_kind says what the elements are ("number", "string", or "coord" for
    a [lat, lon] pair) and fixed_len pins the length when the parameter is
    itself a coordinate pair.
    """

    name: str
    kind: str
    required: bool = False
    default: Any = None
    enum_values: tuple[str, ...] | None = None
    case_insensitive: bool = False
    item_kind: str = "string"
    fixed_len: int | None = None
    description: str = ""


@dataclass(frozen=True)
class ToolSchema:
    name: str
    category: ToolCategory
    params: tuple[ParamSpec, ...]
    description: str = ""

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def to_wire(self) -> dict:
        """Schema document served by the listing endpoint."""
        return {
            "name": self.name,
            "category": self.category.value,
            "description": self.description,
            "params": [
                {
                    k: v
                    for k, v in (
                        ("name", p.name),
                        ("kind", p.kind),
                        ("required", p.required),
                        ("default", p.default),
                        ("enum_values", list(p.enum_values) if p.enum_values else None),
                        ("case_insensitive", p.case_insensitive),
                        ("description", p.description),
                    )
                    if not (k in ("default", "enum_values") and v is None)
                }
                for p in self.params
            ],
        }


class ToolRegistry:
    def __init__(self):
        self._tools: dict[str, ToolSchema] = {}

    def register(self, schema: ToolSchema) -> None:
        if schema.name in self._tools:
            raise ValueError(f"tool {schema.name!r} already registered")
        self._tools[schema.name] = schema

    def get(self, name: str) -> ToolSchema:
        schema = self._tools.get(name)
        if schema is None:
            raise UnknownTool(f"no tool named {name!r}")
        return schema

    def __len__(self) -> int:
        return len(self._tools)

    def __iter__(self):
        return iter(self._tools.values())

    @property
    def categories(self) -> set[ToolCategory]:
        return {t.category for t in self._tools.values()}


TRANSPORT_MODES = ("driving", "walking", "cycling", "transit", "motorcycle", "truck")
CENTRALITY_STRATEGIES = ("balanced", "minimize_max_distance", "minimize_total_distance")
SORT_OPTIONS = ("rating", "distance", "price")

_COORD = dict(kind="list", item_kind="number", fixed_len=2)


def default_registry() -> ToolRegistry:
    """The standard registry: ten tools across four categories."""
    reg = ToolRegistry()
    nav = ToolCategory.MAP_NAVIGATION

    reg.register(ToolSchema(
        name="map_search_places",
        category=nav,
        description="Search points of interest by keyword, with optional region filter, "
                    "nearby search around a center, and sorting.",
        params=(
            ParamSpec("query", "string", required=True, case_insensitive=True,
                      description="Keyword or category to search for."),
            ParamSpec("region", "string", default="", case_insensitive=True,
                      description="Administrative region filter; empty means everywhere."),
            ParamSpec("center", "list", default=None, item_kind="number", fixed_len=2,
                      description="[lat, lon] center for nearby search."),
            ParamSpec("radius", "number", default=5.0,
                      description="Search radius in km around the center."),
            ParamSpec("sort_by", "enum", default="rating", enum_values=SORT_OPTIONS,
                      case_insensitive=True,
                      description="Result ordering: rating, distance, or price."),
            ParamSpec("open_now", "boolean", default=False,
                      description="Keep only places open at the reference time."),
            ParamSpec("limit", "integer", default=5, description="Maximum results."),
        ),
    ))
    reg.register(ToolSchema(
        name="map_compute_routes",
        category=nav,
        description="Route from origin to destination with optional intermediate stops, "
                    "across six transport modes; driving reports tolls and traffic lights.",
        params=(
            ParamSpec("origin", required=True, **_COORD, description="[lat, lon] start."),
            ParamSpec("destination", required=True, **_COORD, description="[lat, lon] end."),
            ParamSpec("mode", "enum", default="driving", enum_values=TRANSPORT_MODES,
                      case_insensitive=True, description="Transport mode."),
            ParamSpec("intermediates", "list", default=(), item_kind="list",
                      description="Ordered [lat, lon] waypoints visited along the way."),
            ParamSpec("avoid_tolls", "boolean", default=False,
                      description="Prefer a toll-free variant of the route."),
        ),
    ))
    reg.register(ToolSchema(
        name="map_search_along_route",
        category=nav,
        description="Plan the base route, then return points of interest inside a "
                    "corridor around it.",
        params=(
            ParamSpec("origin", required=True, **_COORD, description="[lat, lon] start."),
            ParamSpec("destination", required=True, **_COORD, description="[lat, lon] end."),
            ParamSpec("query", "string", required=True, case_insensitive=True,
                      description="Keyword or category to search for."),
            ParamSpec("mode", "enum", default="driving", enum_values=TRANSPORT_MODES,
                      case_insensitive=True, description="Transport mode for the base route."),
            ParamSpec("corridor", "number", default=2.0,
                      description="Corridor half-width in km around the route."),
            ParamSpec("limit", "integer", default=5, description="Maximum results."),
        ),
    ))
    reg.register(ToolSchema(
        name="map_search_central_places",
        category=nav,
        description="Find places convenient for several origins under a centrality "
                    "strategy: balanced, minimize the maximum distance, or minimize "
                    "the total distance.",
        params=(
            ParamSpec("origins", "list", required=True, item_kind="list",
                      description="Two or more [lat, lon] origins."),
            ParamSpec("strategy", "enum", default="balanced",
                      enum_values=CENTRALITY_STRATEGIES, case_insensitive=True,
                      description="Centrality objective."),
            ParamSpec("category", "string", default="", case_insensitive=True,
                      description="Restrict candidates to a category; empty means all."),
            ParamSpec("limit", "integer", default=5, description="Maximum results."),
        ),
    ))
    reg.register(ToolSchema(
        name="map_search_ranking_list",
        category=nav,
        description="Curated ranking list: top places of a category in a region, "
                    "ordered by rating with deterministic tie-breaks.",
        params=(
            ParamSpec("category", "string", required=True, case_insensitive=True,
                      description="Category of the ranking list."),
            ParamSpec("region", "string", default="", case_insensitive=True,
                      description="Region filter; empty means everywhere."),
            ParamSpec("limit", "integer", default=10, description="List length."),
        ),
    ))
    reg.register(ToolSchema(
        name="travel_search_flights",
        category=ToolCategory.TRAVEL,
        description="Flights between two cities, with multi-day price comparison over "
                    "consecutive dates.",
        params=(
            ParamSpec("origin", "string", required=True, case_insensitive=True,
                      description="Departure city."),
            ParamSpec("destination", "string", required=True, case_insensitive=True,
                      description="Arrival city."),
            ParamSpec("date", "string", required=True,
                      description="First travel date, YYYY-MM-DD."),
            ParamSpec("days", "integer", default=1,
                      description="Number of consecutive dates to compare."),
        ),
    ))
    reg.register(ToolSchema(
        name="travel_search_trains",
        category=ToolCategory.TRAVEL,
        description="Train and high-speed rail schedules between two cities, with "
                    "multi-day availability comparison.",
        params=(
            ParamSpec("origin", "string", required=True, case_insensitive=True,
                      description="Departure city."),
            ParamSpec("destination", "string", required=True, case_insensitive=True,
                      description="Arrival city."),
            ParamSpec("date", "string", required=True,
                      description="First travel date, YYYY-MM-DD."),
            ParamSpec("days", "integer", default=1,
                      description="Number of consecutive dates to compare."),
        ),
    ))
    reg.register(ToolSchema(
        name="weather_current_conditions",
        category=ToolCategory.WEATHER,
        description="Current weather for a location: temperature, feels-like, "
                    "conditions, wind, and air quality index.",
        params=(
            ParamSpec("location", "string", required=True, case_insensitive=True,
                      description="City or district name."),
        ),
    ))
    reg.register(ToolSchema(
        name="weather_forecast_days",
        category=ToolCategory.WEATHER,
        description="Forecast for up to 5 days ahead, or for one specific date.",
        params=(
            ParamSpec("location", "string", required=True, case_insensitive=True,
                      description="City or district name."),
            ParamSpec("days", "integer", default=1,
                      description="Forecast horizon in days, at most 5."),
            ParamSpec("date", "string", default="",
                      description="Specific date YYYY-MM-DD; overrides days when set."),
        ),
    ))
    reg.register(ToolSchema(
        name="web_search",
        category=ToolCategory.INFORMATION,
        description="Open-domain web search over the world's document fixtures.",
        params=(
            ParamSpec("query", "string", required=True, case_insensitive=True,
                      description="Search keywords."),
            ParamSpec("limit", "integer", default=5, description="Maximum results."),
        ),
    ))
    return reg
