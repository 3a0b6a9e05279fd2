"""JSON Schema loading and validation for network/scenario documents."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import ConfigError

__all__ = ["get_schema", "validate_document"]

_FILES = {"network": "network.schema", "scenario": "scenario.schema"}


@lru_cache(maxsize=None)
def get_schema(name: str) -> dict:
    try:
        fname = _FILES[name]
    except KeyError:
        raise KeyError(f"unknown schema {name!r}") from None
    text = resources.files(__package__).joinpath(fname).read_text()
    return json.loads(text)


def validate_document(doc: dict, name: str, source: str = "<memory>") -> None:
    """Raise ConfigError with a pointable message on schema violation."""
    try:
        jsonschema.validate(doc, get_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: invalid {name} document at {where}: {exc.message}") from exc
