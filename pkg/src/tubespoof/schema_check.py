from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any


class SchemaError(ValueError):
    pass


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict[str, Any]:
    """Load a shipped JSON schema by stem, e.g. ``load_schema("attack_result")``."""

    resource = resources.files("tubespoof") / "schemas" / f"{name}.json"
    if not resource.is_file():
        raise KeyError(f"Unknown schema: {name}")
    return json.loads(resource.read_text(encoding="utf-8"))


def validate(schema: dict[str, Any], value: Any, path: str = "$") -> list[str]:
    """Check ``value`` against the subset of draft-07 the shipped schemas use."""

    errors: list[str] = []
    expected = schema.get("type")
    if expected is not None and not _matches_type(value, expected):
        return [f"{path} must be of type {expected}"]

    if "enum" in schema and value not in schema["enum"]:
        errors.append(f"{path} must be one of {schema['enum']}")
    if _is_number(value):
        if "minimum" in schema and value < schema["minimum"]:
            errors.append(f"{path} must be >= {schema['minimum']}")
        if "maximum" in schema and value > schema["maximum"]:
            errors.append(f"{path} must be <= {schema['maximum']}")

    if isinstance(value, dict):
        for key in schema.get("required", []):
            if key not in value:
                errors.append(f"{path}: missing required field {key}")
        properties = schema.get("properties", {})
        additional = schema.get("additionalProperties", True)
        for key, item in value.items():
            if key in properties:
                errors.extend(validate(properties[key], item, f"{path}.{key}"))
            elif additional is False:
                errors.append(f"{path}: unexpected field {key}")
            elif isinstance(additional, dict):
                errors.extend(validate(additional, item, f"{path}.{key}"))

    if isinstance(value, list):
        if "minItems" in schema and len(value) < schema["minItems"]:
            errors.append(f"{path} must hold at least {schema['minItems']} items")
        items = schema.get("items")
        if isinstance(items, dict):
            for index, item in enumerate(value):
                errors.extend(validate(items, item, f"{path}[{index}]"))
    return errors


def validate_or_raise(value: Any, schema: dict[str, Any], what: str) -> None:
    errors = validate(schema, value)
    if errors:
        raise SchemaError(f"Invalid {what}: " + "; ".join(errors[:5]))


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _matches_type(value: Any, expected: Any) -> bool:
    if isinstance(expected, list):
        return any(_matches_type(value, item) for item in expected)
    if expected == "string":
        return isinstance(value, str)
    if expected == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if expected == "boolean":
        return isinstance(value, bool)
    if expected == "number":
        return _is_number(value)
    if expected == "object":
        return isinstance(value, dict)
    if expected == "array":
        return isinstance(value, list)
    if expected == "null":
        return value is None
    return True
