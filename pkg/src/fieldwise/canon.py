"""Deterministic canonicalization of raw LLM text into schema-complete records.

Five stages: fence stripping, JSON span extraction, near-JSON repair,
key/value normalization, schema completion. Every stage is pure, total,
and leaves an auditable trace tag when it actually changed something.
Trace tags are stable strings and part of the golden-file contract.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigError
from .schema import (
    CanonicalRecord,
    FieldSpec,
    JsonNumber,
    JsonParseError,
    JsonValue,
    RawOutput,
    Schema,
    parse_json_value,
    serialize_json_value,
    validate_strict,
)

# Repair rule identifiers (CanonConfig.repair_rules members).
TRAILING_COMMA = "trailing_comma"
SINGLE_QUOTES = "single_quotes"
UNQUOTED_KEYS = "unquoted_keys"
UNESCAPED_CHARS = "unescaped_chars"

_ALL_REPAIR_RULES = (TRAILING_COMMA, SINGLE_QUOTES, UNQUOTED_KEYS, UNESCAPED_CHARS)

# Trace tags.
TAG_FENCE = "fence_stripped"
TAG_SPAN = "span_extracted"
TAG_KEY_FOLD = "key_case_folded"
TAG_VALUE_NORM = "value_normalized"
TAG_COMPLETED = "schema_completed"
TAG_NO_SPAN = "no_json_span"
TAG_UNREPAIRABLE = "unrepairable"

_REPAIR_TAGS = {
    TRAILING_COMMA: "repaired_trailing_comma",
    SINGLE_QUOTES: "repaired_single_quotes",
    UNQUOTED_KEYS: "repaired_unquoted_keys",
    UNESCAPED_CHARS: "repaired_unescaped_chars",
}


@dataclass(frozen=True)
class CanonConfig:
    fence_patterns: tuple[str, ...] = ("markdown", "xml_tag")
    repair_rules: frozenset = frozenset(_ALL_REPAIR_RULES)
    span_strategy: str = "most_schema_keys"

    def __post_init__(self):
        if "markdown" not in self.fence_patterns:
            raise ConfigError("the markdown fence pattern is always enabled")
        unknown = set(self.repair_rules) - set(_ALL_REPAIR_RULES)
        if unknown:
            raise ConfigError(f"unknown repair rules: {sorted(unknown)}")
        if self.span_strategy != "most_schema_keys":
            raise ConfigError(f"unknown span strategy: {self.span_strategy}")

    def to_json(self) -> dict:
        return {
            "fence_patterns": list(self.fence_patterns),
            "repair_rules": sorted(self.repair_rules),
            "span_strategy": self.span_strategy,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CanonConfig":
        return cls(
            fence_patterns=tuple(doc.get("fence_patterns", ("markdown", "xml_tag"))),
            repair_rules=frozenset(doc.get("repair_rules", _ALL_REPAIR_RULES)),
            span_strategy=doc.get("span_strategy", "most_schema_keys"),
        )


DEFAULT_CONFIG = CanonConfig()


_MD_OPENER = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\r?\n?")
_XML_OPENER = re.compile(r"<([A-Za-z_][\w.-]*)>\s*")


def strip_fences(text: str, cfg: CanonConfig = DEFAULT_CONFIG) -> tuple[str, bool]:
    """Remove one outer delimiter block (markdown fence or XML-style tag pair).

    Fires only when the first non-whitespace content is a fence opener and a
    matching closer exists; anything outside the fence (language tags,
    trailing prose) is discarded. Otherwise the text comes back unchanged.
    """
    s = text.lstrip()
    if "markdown" in cfg.fence_patterns and s.startswith("```"):
        opener = _MD_OPENER.match(s)
        close = s.find("```", opener.end())
        if close != -1:
            return s[opener.end():close].strip(), True
    if "xml_tag" in cfg.fence_patterns and s.startswith("<"):
        opener = _XML_OPENER.match(s)
        if opener:
            closer = f"</{opener.group(1)}>"
            close = s.find(closer, opener.end())
            if close != -1:
                return s[opener.end():close].strip(), True
    return text, False


def _balanced_object_spans(text: str) -> list[tuple[int, int]]:
    """All maximal balanced {...} spans, honoring double-quoted strings and escapes."""
    spans: list[tuple[int, int]] = []
    depth = 0
    start = -1
    in_str = False
    escaped = False
    for i, ch in enumerate(text):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append((start, i + 1))
    return spans


def _fold_key(key: str) -> str:
    return re.sub(r"[-_\s]+", "_", key.strip().lower())


def _quoted_key_pattern(name: str) -> re.Pattern:
    parts = [p for p in re.split(r"[-_\s]+", name.strip()) if p]
    inner = r"[-_\s]+".join(re.escape(p) for p in parts)
    return re.compile(r"[\"']\s*" + inner + r"\s*[\"']", re.IGNORECASE)


def extract_json_span(text: str, schema: Schema) -> str | None:
    """Pick the most plausible object span via bracket matching.

    Candidates are maximal balanced {...} spans; the winner contains the most
    schema key names (case-insensitive match on quoted keys), with ties broken
    by longest span, then earliest start. None when nothing balances.
    """
    spans = _balanced_object_spans(text)
    if not spans:
        return None
    patterns = [_quoted_key_pattern(name) for name in schema.field_names()]
    best = None
    best_rank = None
    for start, end in spans:
        body = text[start:end]
        count = sum(1 for p in patterns if p.search(body))
        rank = (count, end - start, -start)
        if best_rank is None or rank > best_rank:
            best_rank = rank
            best = body
    return best


def _strip_trailing_commas(text: str) -> str:
    out = []
    in_str = False
    escaped = False
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if in_str:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            i += 1
            continue
        if ch == '"':
            in_str = True
            out.append(ch)
            i += 1
            continue
        if ch == ",":
            j = i + 1
            while j < n and text[j] in " \t\r\n":
                j += 1
            if j < n and text[j] in "}]":
                i += 1  # drop the comma; whitespace and closer emitted as usual
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def _single_to_double_quotes(text: str) -> str:
    # Rewrites single-quoted strings as double-quoted with proper escaping.
    # Content is kept verbatim apart from \' unescaping and re-escaping.
    import json as _json

    out = []
    in_dq = False
    escaped = False
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if in_dq:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_dq = False
            i += 1
            continue
        if ch == '"':
            in_dq = True
            out.append(ch)
            i += 1
            continue
        if ch == "'":
            j = i + 1
            content = []
            while j < n:
                cj = text[j]
                if cj == "\\" and j + 1 < n and text[j + 1] == "'":
                    content.append("'")
                    j += 2
                    continue
                if cj == "'":
                    break
                content.append(cj)
                j += 1
            if j < n:  # found the closing quote
                out.append(_json.dumps("".join(content), ensure_ascii=True))
                i = j + 1
                continue
        out.append(ch)
        i += 1
    return "".join(out)


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")


def _quote_unquoted_keys(text: str) -> str:
    out = []
    stack: list[str] = []
    in_str = False
    escaped = False
    expect_key = False
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if in_str:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            i += 1
            continue
        if ch == '"':
            in_str = True
            out.append(ch)
            i += 1
            continue
        if ch == "{":
            stack.append("{")
            expect_key = True
        elif ch == "[":
            stack.append("[")
            expect_key = False
        elif ch in "}]":
            if stack:
                stack.pop()
            expect_key = False
        elif ch == ",":
            expect_key = bool(stack) and stack[-1] == "{"
        elif ch == ":":
            expect_key = False
        elif expect_key and (ch.isalpha() or ch == "_"):
            m = _IDENT.match(text, i)
            j = m.end()
            k = j
            while k < n and text[k] in " \t\r\n":
                k += 1
            if k < n and text[k] == ":":
                out.append(f'"{m.group(0)}"')
                i = j
                expect_key = False
                continue
        out.append(ch)
        i += 1
    return "".join(out)


_CTRL_ESCAPES = {"\n": "\\n", "\t": "\\t", "\r": "\\r"}


def _escape_control_chars(text: str) -> str:
    out = []
    in_str = False
    escaped = False
    for ch in text:
        if in_str and ch in _CTRL_ESCAPES:
            out.append(_CTRL_ESCAPES[ch])
            continue
        out.append(ch)
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
    return "".join(out)


_REPAIR_FNS = {
    TRAILING_COMMA: _strip_trailing_commas,
    SINGLE_QUOTES: _single_to_double_quotes,
    UNQUOTED_KEYS: _quote_unquoted_keys,
    UNESCAPED_CHARS: _escape_control_chars,
}


def repair_text(text: str, cfg: CanonConfig = DEFAULT_CONFIG) -> tuple[str | None, tuple[str, ...]]:
    """Repaired span text (strictly parseable) or None, plus applied rule tags.

    Rules accumulate (each transforms the previous text) and the first text
    that parses wins. Rules never touch content inside correctly quoted
    strings beyond escaping.
    """
    try:
        parse_json_value(text)
        return text, ()
    except JsonParseError:
        pass
    current = text
    applied: list[str] = []
    for rule in _ALL_REPAIR_RULES:
        if rule not in cfg.repair_rules:
            continue
        repaired = _REPAIR_FNS[rule](current)
        if repaired == current:
            continue
        current = repaired
        applied.append(_REPAIR_TAGS[rule])
        try:
            parse_json_value(current)
            return current, tuple(applied)
        except JsonParseError:
            continue
    return None, tuple(applied)


def repair_near_json(text: str, cfg: CanonConfig = DEFAULT_CONFIG) -> tuple[JsonValue | None, tuple[str, ...]]:
    """Parse a candidate span, applying enabled repair rules in fixed order.

    Returns (value, applied_rule_tags); value is None when nothing parses
    (unrepairable).
    """
    repaired, applied = repair_text(text, cfg)
    if repaired is None:
        return None, applied
    return parse_json_value(repaired), applied


def normalize_keys(obj: dict, schema: Schema) -> tuple[dict, bool, tuple[str, ...]]:
    """Rename keys to canonical schema spellings (case/separator-insensitive).

    Unmatched keys are dropped; when two source keys hit the same field the
    first occurrence wins. Returns (object, any_key_changed, dropped_keys).
    """
    canon = {_fold_key(f.name): f.name for f in schema.fields}
    out: dict = {}
    dropped: list[str] = []
    changed = False
    for key, value in obj.items():
        target = canon.get(_fold_key(key)) if isinstance(key, str) else None
        if target is None or target in out:
            dropped.append(str(key))
            continue
        out[target] = value
        if target != key:
            changed = True
    return out, changed, tuple(dropped)


_NULL_TOKENS = frozenset({"null", "none", "n/a"})

_ISO_RE = re.compile(r"(?:iso)?[\s:]*([0-9]+)", re.IGNORECASE)
_APERTURE_RE = re.compile(r"f?\s*/?\s*([0-9]+(?:\.[0-9]+)?)", re.IGNORECASE)
_SHUTTER_FRACTION_RE = re.compile(r"([0-9]+)\s*/\s*([0-9]+)\s*(?:s(?:ec(?:onds?)?)?)?", re.IGNORECASE)
_SHUTTER_SECONDS_RE = re.compile(r"([0-9]+(?:\.[0-9]+)?)\s*(?:s(?:ec(?:onds?)?)?)?", re.IGNORECASE)
_FOCAL_RE = re.compile(r"([0-9]+(?:\.[0-9]+)?)\s*(?:mm)?", re.IGNORECASE)


def _norm_free(s: str) -> str | None:
    return re.sub(r"\s+", " ", s.strip())


def _norm_iso(s: str) -> str | None:
    m = _ISO_RE.fullmatch(s.strip())
    return m.group(1) if m else None


def _norm_aperture(s: str) -> str | None:
    m = _APERTURE_RE.fullmatch(s.strip())
    return f"f/{m.group(1)}" if m else None


def _norm_shutter(s: str) -> str | None:
    s = s.strip()
    m = _SHUTTER_FRACTION_RE.fullmatch(s)
    if m:
        return f"{m.group(1)}/{m.group(2)}"
    m = _SHUTTER_SECONDS_RE.fullmatch(s)
    return m.group(1) if m else None


def _norm_focal(s: str) -> str | None:
    m = _FOCAL_RE.fullmatch(s.strip())
    return f"{m.group(1)}mm" if m else None


# A normalizer maps a raw string to its canonical form, or None when the
# value does not fit the field's shape (caller keeps the trimmed raw string).
NORMALIZERS = {
    "free": _norm_free,
    "iso": _norm_iso,
    "aperture": _norm_aperture,
    "shutter": _norm_shutter,
    "focal": _norm_focal,
}


def _scalar_text(value: JsonValue) -> str | None:
    if value is None:
        return None
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, JsonNumber):
        return value.literal
    # Nested arrays/objects: keep their JSON text and let the field's
    # normalizer treat it as unparseable-raw.
    return serialize_json_value(value)


def _normalize_traced(field: FieldSpec, value: JsonValue) -> tuple[str | None, bool, bool]:
    """Returns (normalized, changed, kept_raw)."""
    raw = _scalar_text(value)
    if raw is None:
        return None, False, False
    if raw.strip() == "" or raw.strip().lower() in _NULL_TOKENS:
        return None, True, False
    normalizer = NORMALIZERS.get(field.normalizer_id)
    if normalizer is None:
        raise ConfigError(f"unregistered normalizer: {field.normalizer_id}")
    out = normalizer(raw)
    if out is None:
        kept = raw.strip()
        return kept, kept != value, True
    return out, out != value, False


def normalize_value(field: FieldSpec, value: JsonValue) -> str | None:
    """Canonical string form of a field value (or None for null-like values)."""
    return _normalize_traced(field, value)[0]


def _all_null(schema: Schema) -> dict[str, str | None]:
    return {name: None for name in schema.field_names()}


def canonicalize_text(text: str, schema: Schema, cfg: CanonConfig = DEFAULT_CONFIG) -> tuple[dict[str, str | None], bool, tuple[str, ...]]:
    """Core pipeline over bare text: returns (fields, strict_valid, trace)."""
    strict = validate_strict(text, schema)
    trace: list[str] = []
    if strict.ok:
        obj = strict.fields
    else:
        stripped_text, stripped = strip_fences(text, cfg)
        if stripped:
            trace.append(TAG_FENCE)
        span = extract_json_span(stripped_text, schema)
        if span is None:
            trace.append(TAG_NO_SPAN)
            return _all_null(schema), False, tuple(trace)
        if span != stripped_text.strip():
            trace.append(TAG_SPAN)
        value, repairs = repair_near_json(span, cfg)
        trace.extend(repairs)
        if not isinstance(value, dict):
            trace.append(TAG_UNREPAIRABLE)
            return _all_null(schema), False, tuple(trace)
        obj, keys_changed, dropped = normalize_keys(value, schema)
        if keys_changed:
            trace.append(TAG_KEY_FOLD)
        trace.extend(f"key_dropped:{k}" for k in dropped)

    fields: dict[str, str | None] = {}
    any_normalized = False
    kept_raw: list[str] = []
    completed = False
    for spec in schema.fields:
        if spec.name in obj:
            out, changed, raw_kept = _normalize_traced(spec, obj[spec.name])
            fields[spec.name] = out
            any_normalized = any_normalized or changed
            if raw_kept:
                kept_raw.append(spec.name)
        else:
            fields[spec.name] = None
            completed = True
    if any_normalized:
        trace.append(TAG_VALUE_NORM)
    trace.extend(f"kept_raw:{name}" for name in kept_raw)
    if completed:
        trace.append(TAG_COMPLETED)
    return fields, strict.ok, tuple(trace)


def canonicalize(raw: RawOutput, schema: Schema, cfg: CanonConfig = DEFAULT_CONFIG) -> CanonicalRecord:
    """Total, pure conversion of one raw output into a schema-complete record."""
    fields, strict_valid, trace = canonicalize_text(raw.text, schema, cfg)
    return CanonicalRecord(
        example_id=raw.example_id,
        model_id=raw.model_id,
        fields=fields,
        strict_valid=strict_valid,
        trace=trace,
    )
