"""Self-contained JSON schema checks for the report files we emit.

Supports the subset the shipped schemas use: type, required, properties,
additionalProperties, items, enum, minimum, maximum. Values of type
"number"/"integer" reject booleans, matching the JSON data model rather
than Python's bool-is-int.
"""

import json
from pathlib import Path


class SchemaError(Exception):
    pass


EVAL_SCHEMA_PATH = Path(__file__).with_name("eval_schema.json")


def eval_schema() -> dict:
    return json.loads(EVAL_SCHEMA_PATH.read_text())


def _type_ok(value, name: str) -> bool:
    if name == "object":
        return isinstance(value, dict)
    if name == "array":
        return isinstance(value, list)
    if name == "string":
        return isinstance(value, str)
    if name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if name == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if name == "boolean":
        return isinstance(value, bool)
    if name == "null":
        return value is None
    raise SchemaError(f"unsupported schema type {name!r}")


def validate(instance, schema: dict, path: str = "$") -> list[str]:
    """All violations as '<path>: message' strings; empty means valid."""
    errors = []
    stated = schema.get("type")
    if stated is not None:
        names = stated if isinstance(stated, list) else [stated]
        if not any(_type_ok(instance, n) for n in names):
            errors.append(f"{path}: expected {'/'.join(names)}, "
                          f"got {type(instance).__name__}")
            return errors
    if "enum" in schema and instance not in schema["enum"]:
        errors.append(f"{path}: {instance!r} not in enum {schema['enum']}")
    if isinstance(instance, (int, float)) and not isinstance(instance, bool):
        if "minimum" in schema and instance < schema["minimum"]:
            errors.append(f"{path}: {instance} below minimum {schema['minimum']}")
        if "maximum" in schema and instance > schema["maximum"]:
            errors.append(f"{path}: {instance} above maximum {schema['maximum']}")
    if isinstance(instance, dict):
        for key in schema.get("required", ()):
            if key not in instance:
                errors.append(f"{path}: missing required key {key!r}")
        props = schema.get("properties", {})
        for key, value in instance.items():
            if key in props:
                errors.extend(validate(value, props[key], f"{path}.{key}"))
            elif schema.get("additionalProperties", True) is False:
                errors.append(f"{path}: unexpected key {key!r}")
    if isinstance(instance, list) and "items" in schema:
        for i, item in enumerate(instance):
            errors.extend(validate(item, schema["items"], f"{path}[{i}]"))
    return errors


def check(instance, schema: dict, what: str) -> None:
    errors = validate(instance, schema)
    if errors:
        head = "; ".join(errors[:5])
        raise SchemaError(f"{what} fails schema validation: {head}")
