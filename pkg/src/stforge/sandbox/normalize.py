"""Canonical tool-argument normalization.

Semantically identical requests must produce identical bytes: unknown keys
are dropped, defaults are filled in, strings are NFC-normalized with
whitespace collapsed (and ASCII-lowercased where the parameter is declared
case-insensitive), numbers are rendered in shortest round-trip form, and the
map is serialized with byte-sorted keys and no insignificant whitespace.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from dataclasses import dataclass
from typing import Any, Mapping

from ..errors import StforgeError
from .schemas import ParamSpec, ToolSchema

_ASCII_LOWER = str.maketrans(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz"
)


class MissingRequiredParam(StforgeError):
    pass


class TypeMismatch(StforgeError):
    pass


class EnumViolation(StforgeError):
    pass


@dataclass(frozen=True)
class CacheKey:
    """sha256(tool_name || 0x00 || canonical_params_bytes)."""

    digest: bytes


def _norm_string(value: Any, spec: ParamSpec) -> str:
    if not isinstance(value, str):
        raise TypeMismatch(f"{spec.name}: expected string, got {type(value).__name__}")
    out = unicodedata.normalize("NFC", value)
    out = " ".join(out.split())
    if spec.case_insensitive:
        out = out.translate(_ASCII_LOWER)
    return out


def _norm_number(value: Any, spec: ParamSpec) -> int | float:
    # bool is an int subclass but is not a number here
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeMismatch(f"{spec.name}: expected number, got {type(value).__name__}")
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise TypeMismatch(f"{spec.name}: non-finite number")
        if value.is_integer():
            return int(value)
    return value


def _norm_integer(value: Any, spec: ParamSpec) -> int:
    number = _norm_number(value, spec)
    if isinstance(number, float):
        raise TypeMismatch(f"{spec.name}: expected integer, got fractional {value}")
    return number


def _norm_boolean(value: Any, spec: ParamSpec) -> bool:
    if not isinstance(value, bool):
        raise TypeMismatch(f"{spec.name}: expected boolean, got {type(value).__name__}")
    return value


def _norm_enum(value: Any, spec: ParamSpec) -> str:
    out = _norm_string(value, spec)
    if spec.enum_values is None or out not in spec.enum_values:
        raise EnumViolation(
            f"{spec.name}: {out!r} not one of {list(spec.enum_values or ())}"
        )
    return out


def _norm_coord(value: Any, spec: ParamSpec) -> list:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise TypeMismatch(f"{spec.name}: expected a [lat, lon] pair")
    return [_norm_number(v, spec) for v in value]


def _norm_list(value: Any, spec: ParamSpec) -> list:
    if not isinstance(value, (list, tuple)):
        raise TypeMismatch(f"{spec.name}: expected list, got {type(value).__name__}")
    if spec.fixed_len is not None and len(value) != spec.fixed_len:
        raise TypeMismatch(
            f"{spec.name}: expected exactly {spec.fixed_len} elements, got {len(value)}"
        )
    if spec.item_kind == "number":
        return [_norm_number(v, spec) for v in value]
    if spec.item_kind == "list":
        return [_norm_coord(v, spec) for v in value]
    return [_norm_string(v, spec) for v in value]


_NORMALIZERS = {
    "string": _norm_string,
    "number": _norm_number,
    "integer": _norm_integer,
    "boolean": _norm_boolean,
    "enum": _norm_enum,
    "list": _norm_list,
}


def normalized_arguments(schema: ToolSchema, raw: Mapping[str, Any]) -> dict[str, Any]:
    """Validated, canonical-valued argument map (unknown keys dropped,
    defaults applied). The normalizer is idempotent."""
    out: dict[str, Any] = {}
    for spec in schema.params:
        value = raw.get(spec.name)  # explicit null counts as absent
        if value is None:
            if spec.required:
                raise MissingRequiredParam(
                    f"{schema.name}: missing required param {spec.name!r}"
                )
            value = spec.default
            if isinstance(value, tuple):
                value = list(value)
            if value is None:
                out[spec.name] = None
                continue
        out[spec.name] = _NORMALIZERS[spec.kind](value, spec)
    return out


def canonical_bytes(arguments: Mapping[str, Any]) -> bytes:
    return json.dumps(
        arguments, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def normalize_params(schema: ToolSchema, raw: Mapping[str, Any]) -> bytes:
    """Canonical byte serialization of the normalized arguments."""
    return canonical_bytes(normalized_arguments(schema, raw))


def cache_key(tool_name: str, params_bytes: bytes) -> CacheKey:
    digest = hashlib.sha256(tool_name.encode("utf-8") + b"\x00" + params_bytes).digest()
    return CacheKey(digest=digest)
