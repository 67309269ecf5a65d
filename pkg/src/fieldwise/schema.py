"""Extraction schema, the self-contained JSON value model, and shared record types.

The JSON value model keeps numbers as exact decimal strings so that
parse -> serialize -> parse is a fixed point and golden files stay
byte-stable. Strict validation is deliberately unforgiving: it is the
"will the pipeline survive" check, while anything tolerant lives in
the canonicalizer.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .errors import DataError, SchemaMismatch


class JsonParseError(DataError):
    """Text is not a single well-formed JSON document."""


@dataclass(frozen=True)
class JsonNumber:
    """A JSON number kept as its exact source literal (never a binary float)."""

    literal: str

    def __str__(self) -> str:
        return self.literal


# JsonValue = None | bool | JsonNumber | str | list[JsonValue] | dict[str, JsonValue]
JsonValue = object


def _object_pairs(pairs):
    out: dict[str, JsonValue] = {}
    for key, value in pairs:
        if key in out:
            raise JsonParseError(f"duplicate object key: {key!r}")
        out[key] = value
    return out


def _reject_constant(name: str):
    raise JsonParseError(f"non-finite number not allowed: {name}")


def parse_json_value(text: str) -> JsonValue:
    """Parse ``text`` as a single strict JSON document.

    Raises JsonParseError on anything json.org would reject, on duplicate
    object keys, and on NaN/Infinity.
    """
    try:
        return json.loads(
            text,
            object_pairs_hook=_object_pairs,
            parse_float=JsonNumber,
            parse_int=JsonNumber,
            parse_constant=_reject_constant,
        )
    except json.JSONDecodeError as exc:
        raise JsonParseError(str(exc)) from None


def serialize_json_value(value: JsonValue) -> str:
    """Serialize back to JSON text, emitting number literals verbatim."""
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, JsonNumber):
        return value.literal
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    if isinstance(value, list):
        return "[" + ", ".join(serialize_json_value(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(k, ensure_ascii=True)}: {serialize_json_value(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    raise TypeError(f"not a JsonValue: {type(value).__name__}")


class ValueKind(enum.Enum):
    FREE_STRING = "free_string"
    NUMERIC_WITH_UNIT = "numeric_with_unit"
    FRACTION = "fraction"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    value_kind: ValueKind
    normalizer_id: str

    def __post_init__(self):
        if not self.name:
            raise SchemaMismatch("field name must be non-empty")


@dataclass(frozen=True)
class Schema:
    name: str
    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        if not self.fields:
            raise SchemaMismatch("schema needs at least one field")
        lowered = [f.name.lower() for f in self.fields]
        if len(set(lowered)) != len(lowered):
            raise SchemaMismatch(f"field names collide case-insensitively: {lowered}")

    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "fields": [
                {"name": f.name, "value_kind": f.value_kind.value, "normalizer_id": f.normalizer_id}
                for f in self.fields
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Schema":
        try:
            fields = tuple(
                FieldSpec(f["name"], ValueKind(f["value_kind"]), f["normalizer_id"])
                for f in doc["fields"]
            )
            return cls(name=doc["name"], fields=fields)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"bad schema document: {exc}") from None


def load_schema(path: str) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def save_schema(schema: Schema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def default_camera_schema() -> Schema:
    """The six-field camera metadata schema used throughout the benchmark."""
    return Schema(
        name="camera_metadata_v1",
        fields=(
            FieldSpec("CAMERA", ValueKind.FREE_STRING, "free"),
            FieldSpec("LENS", ValueKind.FREE_STRING, "free"),
            FieldSpec("ISO", ValueKind.NUMERIC_WITH_UNIT, "iso"),
            FieldSpec("APERTURE", ValueKind.NUMERIC_WITH_UNIT, "aperture"),
            FieldSpec("SHUTTER_SPEED", ValueKind.FRACTION, "shutter"),
            FieldSpec("FOCAL_LENGTH", ValueKind.NUMERIC_WITH_UNIT, "focal"),
        ),
    )


class PromptVariant(enum.Enum):
    ZERO_SHOT = "zero_shot"
    FEW_SHOT_K3 = "few_shot_k3"


@dataclass(frozen=True)
class RawOutput:
    example_id: str
    model_id: str
    prompt_variant: PromptVariant
    text: str


@dataclass(frozen=True)
class GoldRecord:
    example_id: str
    query: str
    gold: dict[str, str | None]
    split: str = "test"


@dataclass(frozen=True)
class CanonicalRecord:
    example_id: str
    model_id: str
    fields: dict[str, str | None]
    strict_valid: bool
    trace: tuple[str, ...] = ()


class StrictFailure(enum.Enum):
    NOT_JSON = "not_json"
    MISSING_KEYS = "missing_keys"
    EXTRA_KEYS = "extra_keys"
    BAD_VALUE_TYPE = "bad_value_type"


@dataclass(frozen=True)
class StrictResult:
    fields: dict[str, JsonValue] | None
    reason: StrictFailure | None

    @property
    def ok(self) -> bool:
        return self.reason is None


def validate_strict(text: str, schema: Schema) -> StrictResult:
    """Strict parse + schema validation of raw text.

    Ok only when the text is a single JSON object (no leading/trailing
    non-whitespace), carries exactly the schema's keys (case-sensitive),
    and every value is a string or null. Failures come back as a reason,
    never as an exception.
    """
    try:
        parsed = parse_json_value(text)
    except JsonParseError:
        return StrictResult(None, StrictFailure.NOT_JSON)
    if not isinstance(parsed, dict):
        return StrictResult(None, StrictFailure.NOT_JSON)
    names = schema.field_names()
    if any(n not in parsed for n in names):
        return StrictResult(None, StrictFailure.MISSING_KEYS)
    if any(k not in names for k in parsed):
        return StrictResult(None, StrictFailure.EXTRA_KEYS)
    if any(not (v is None or isinstance(v, str)) for v in parsed.values()):
        return StrictResult(None, StrictFailure.BAD_VALUE_TYPE)
    return StrictResult({n: parsed[n] for n in names}, None)


def serialize_fields(fields: dict[str, str | None]) -> str:
    """Serialize a schema-complete field map as strict JSON (schema key order)."""
    return serialize_json_value(dict(fields))
