"""JSON Schema subset: type, properties, required, items, enum, minimum, maximum.

Other keywords (``description``, ``title``, ``$schema``, ...) are ignored, as
JSON Schema itself ignores unknown keywords.
"""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import SchemaError

TYPES = ("string", "number", "integer", "boolean", "object", "array", "null")


def _is_type(value: Any, name: str) -> bool:
    if name == "null":
        return value is None
    if name == "boolean":
        return isinstance(value, bool)
    if name == "string":
        return isinstance(value, str)
    if name == "object":
        return isinstance(value, dict)
    if name == "array":
        return isinstance(value, list)
    if isinstance(value, bool):
        return False
    if name == "number":
        return isinstance(value, (int, float))
    if name == "integer":
        return isinstance(value, int) or (isinstance(value, float) and math.isfinite(value) and value.is_integer())
    return False


def _equal(a: Any, b: Any) -> bool:
    # JSON equality: 1 == 1.0 but True != 1
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_equal(a[k], b[k]) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_equal(x, y) for x, y in zip(a, b))
    return a == b


def check_schema(schema: Any, where: str = "#") -> None:
    """Raise SchemaError if ``schema`` is not a well-formed document of the subset."""
    if isinstance(schema, bool):
        return
    if not isinstance(schema, dict):
        raise SchemaError(f"{where}: schema must be an object or boolean")
    if "type" in schema:
        t = schema["type"]
        names = t if isinstance(t, list) else [t]
        if not names or not all(isinstance(n, str) and n in TYPES for n in names):
            raise SchemaError(f"{where}/type: unknown type {t!r}")
    if "properties" in schema:
        props = schema["properties"]
        if not isinstance(props, dict):
            raise SchemaError(f"{where}/properties: must be an object")
        for name, sub in props.items():
            check_schema(sub, f"{where}/properties/{name}")
    if "required" in schema:
        req = schema["required"]
        if not isinstance(req, list) or not all(isinstance(r, str) for r in req):
            raise SchemaError(f"{where}/required: must be a list of strings")
    if "items" in schema:
        check_schema(schema["items"], f"{where}/items")
    if "enum" in schema and not isinstance(schema["enum"], list):
        raise SchemaError(f"{where}/enum: must be a list")
    for key in ("minimum", "maximum"):
        if key in schema and (isinstance(schema[key], bool) or not isinstance(schema[key], (int, float))):
            raise SchemaError(f"{where}/{key}: must be a number")


def iter_errors(instance: Any, schema: Any, path: str = "$") -> list[str]:
    if schema is True:
        return []
    if schema is False:
        return [f"{path}: no value is allowed here"]
    errors: list[str] = []
    if "type" in schema:
        names = schema["type"] if isinstance(schema["type"], list) else [schema["type"]]
        if not any(_is_type(instance, n) for n in names):
            got = _json_type(instance)
            errors.append(f"{path}: expected {' or '.join(names)}, got {got}")
    if "enum" in schema and not any(_equal(instance, v) for v in schema["enum"]):
        errors.append(f"{path}: {json.dumps(instance)} is not one of {json.dumps(schema['enum'])}")
    if _is_type(instance, "number"):
        if "minimum" in schema and instance < schema["minimum"]:
            errors.append(f"{path}: {instance} is less than the minimum {schema['minimum']}")
        if "maximum" in schema and instance > schema["maximum"]:
            errors.append(f"{path}: {instance} is greater than the maximum {schema['maximum']}")
    if isinstance(instance, dict):
        for name in schema.get("required", []):
            if name not in instance:
                errors.append(f"{path}: missing required property {name!r}")
        for name, sub in schema.get("properties", {}).items():
            if name in instance:
                errors.extend(iter_errors(instance[name], sub, f"{path}.{name}"))
    if isinstance(instance, list) and "items" in schema:
        for i, item in enumerate(instance):
            errors.extend(iter_errors(item, schema["items"], f"{path}[{i}]"))
    return errors


def _json_type(value: Any) -> str:
    for name in ("null", "boolean", "integer", "number", "string", "array", "object"):
        if _is_type(value, name):
            return name
    return type(value).__name__


def validate(instance: Any, schema: Any) -> None:
    """Raise SchemaError listing every violation; return None when valid."""
    errors = iter_errors(instance, schema)
    if errors:
        raise SchemaError("; ".join(errors))


def is_valid(instance: Any, schema: Any) -> bool:
    return not iter_errors(instance, schema)
