"""Deterministic tool sandbox: registry, normalization, cache, world, service."""

from .cache import LruCache
from .normalize import (
    CacheKey,
    EnumViolation,
    MissingRequiredParam,
    TypeMismatch,
    cache_key,
    normalize_params,
    normalized_arguments,
)
from .schemas import ToolCategory, ToolRegistry, ToolSchema, UnknownTool, default_registry
from .service import ServeConfig, build_executor, create_app, serve
from .tools import (
    ForecastHorizonExceeded,
    NoRouteFound,
    SandboxExecutor,
    ToolExecutionError,
    ToolResponse,
)
from .world import BBox, InvalidBBox, Poi, SyntheticWorld, generate_world

__all__ = [
    "BBox",
    "CacheKey",
    "EnumViolation",
    "ForecastHorizonExceeded",
    "InvalidBBox",
    "LruCache",
    "MissingRequiredParam",
    "NoRouteFound",
    "Poi",
    "SandboxExecutor",
    "ServeConfig",
    "SyntheticWorld",
    "ToolCategory",
    "ToolExecutionError",
    "ToolRegistry",
    "ToolResponse",
    "ToolSchema",
    "TypeMismatch",
    "UnknownTool",
    "build_executor",
    "cache_key",
    "create_app",
    "default_registry",
    "generate_world",
    "normalize_params",
    "normalized_arguments",
    "serve",
]
