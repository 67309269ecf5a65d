"""Seeded synthetic corpus generator for the camera-metadata benchmark.

Gold records render a natural-language query containing the present field
values (with unit-format jitter and occasional typos); model outputs come
from per-model profiles with two independent stages: a semantic stage
(omit / substitute / copy per field) and a format stage (sample one failure
category and render accordingly). Per-(example, model) RNG streams are
derived by hashing, so adding a model never perturbs any other model's
outputs.

Builtin profiles are calibrated in closed form from target (ros, css)
pairs: with per-field probabilities c = correct, w = wrong, o = omitted and
a = the share of fields that survive formatting after canonicalization,
pooled precision is c / (c + w), strict recall is t_nf * c, and canonical
recall is a * c. Inverting those relations for a chosen precision yields
the profile parameters; the calibration test checks the empirical scores
against the targets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .errors import ConfigError
from .schema import GoldRecord, PromptVariant, RawOutput, Schema, default_camera_schema, serialize_fields
from .taxonomy import FailureCategory, FAILURE_ORDER

_MIX_ORDER = (FailureCategory.NO_FAILURE,) + FAILURE_ORDER

KEY_CASES = ("exact", "lower", "title")
QUOTE_STYLES = ("double", "single")


@dataclass(frozen=True)
class ModelProfile:
    model_id: str
    semantic_error: dict[str, float]  # field -> P(substitute a wrong pool value)
    omission: dict[str, float]  # field -> P(emit null for a present gold value)
    taxonomy_mix: dict[FailureCategory, float]  # includes NO_FAILURE; sums to 1
    key_case: str = "exact"
    quote_style: str = "double"
    prompt_variant: PromptVariant = PromptVariant.ZERO_SHOT
    target_ros: float | None = None
    target_css: float | None = None

    def __post_init__(self):
        for name, probs in (("semantic_error", self.semantic_error), ("omission", self.omission)):
            for key, p in probs.items():
                if not (0.0 <= p <= 1.0):
                    raise ConfigError(f"{name}[{key!r}] = {p} outside [0, 1]")
        total = sum(self.taxonomy_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"taxonomy_mix sums to {total}, expected 1")
        for category, p in self.taxonomy_mix.items():
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"taxonomy_mix[{category}] = {p} outside [0, 1]")
        if self.key_case not in KEY_CASES:
            raise ConfigError(f"unknown key case {self.key_case!r}")
        if self.quote_style not in QUOTE_STYLES:
            raise ConfigError(f"unknown quote style {self.quote_style!r}")

    @property
    def format_failure_prob(self) -> float:
        return 1.0 - self.taxonomy_mix.get(FailureCategory.NO_FAILURE, 0.0)

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "semantic_error": self.semantic_error,
            "omission": self.omission,
            "taxonomy_mix": {c.value: p for c, p in self.taxonomy_mix.items()},
            "key_case": self.key_case,
            "quote_style": self.quote_style,
            "prompt_variant": self.prompt_variant.value,
            "target_ros": self.target_ros,
            "target_css": self.target_css,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelProfile":
        return cls(
            model_id=doc["model_id"],
            semantic_error=dict(doc["semantic_error"]),
            omission=dict(doc["omission"]),
            taxonomy_mix={FailureCategory(k): v for k, v in doc["taxonomy_mix"].items()},
            key_case=doc.get("key_case", "exact"),
            quote_style=doc.get("quote_style", "double"),
            prompt_variant=PromptVariant(doc.get("prompt_variant", "zero_shot")),
            target_ros=doc.get("target_ros"),
            target_css=doc.get("target_css"),
        )


_DEFAULT_POOLS: dict[str, tuple[str, ...]] = {
    "CAMERA": (
        "Canon EOS R5",
        "Nikon Z6 II",
        "Sony A7 IV",
        "Fujifilm X-T4",
        "Olympus OM-1",
        "Panasonic Lumix S5",
        "Leica Q2",
        "Pentax K-1",
    ),
    "LENS": (
        "RF 24-70mm F2.8 L",
        "Nikkor Z 50mm f/1.8 S",
        "FE 85mm F1.4 GM",
        "XF 35mm F1.4 R",
        "M.Zuiko 12-40mm F2.8 PRO",
        "Sigma 40mm F1.4 Art",
        "Lumix S 20-60mm F3.5-5.6",
    ),
    "ISO": ("100", "200", "400", "800", "1600", "3200", "6400"),
    "APERTURE": ("f/1.4", "f/1.8", "f/2", "f/2.8", "f/4", "f/5.6", "f/8"),
    "SHUTTER_SPEED": ("1/1000", "1/500", "1/250", "1/125", "1/60", "1/30", "2", "30"),
    "FOCAL_LENGTH": ("24mm", "35mm", "50mm", "85mm", "105mm", "200mm"),
}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 42
    n_examples: int = 10000
    profiles: tuple[ModelProfile, ...] = ()
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)  # train, dev, test
    field_present_prob: float = 0.8
    typo_prob: float = 0.03
    jitter_prob: float = 0.35
    pools: dict[str, tuple[str, ...]] = dataclass_field(default_factory=lambda: dict(_DEFAULT_POOLS))

    def __post_init__(self):
        if self.n_examples < 1:
            raise ConfigError("n_examples must be >= 1")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ConfigError(f"splits sum to {sum(self.splits)}, expected 1")
        for name, pool in self.pools.items():
            if not pool:
                raise ConfigError(f"empty value pool for {name!r}")
        ids = [p.model_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ConfigError("profile model_ids must be unique")

    def with_profiles(self, profiles) -> "GenConfig":
        return replace(self, profiles=tuple(profiles))

    def schema(self) -> Schema:
        return default_camera_schema()

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_examples": self.n_examples,
            "profiles": [p.to_json() for p in self.profiles],
            "splits": list(self.splits),
            "field_present_prob": self.field_present_prob,
            "typo_prob": self.typo_prob,
            "jitter_prob": self.jitter_prob,
            "pools": {k: list(v) for k, v in self.pools.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GenConfig":
        return cls(
            seed=doc["seed"],
            n_examples=doc["n_examples"],
            profiles=tuple(ModelProfile.from_json(p) for p in doc["profiles"]),
            splits=tuple(doc["splits"]),
            field_present_prob=doc["field_present_prob"],
            typo_prob=doc["typo_prob"],
            jitter_prob=doc["jitter_prob"],
            pools={k: tuple(v) for k, v in doc["pools"].items()},
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _sub_rng(seed: int, *parts) -> np.random.Generator:
    key = "|".join([str(seed), *map(str, parts)]).encode()
    digest = hashlib.sha256(key).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def _pick(rng: np.random.Generator, options) -> str:
    return options[int(rng.integers(0, len(options)))]


_CAMERA_FRAGMENTS = ("Shot with the {v}", "Taken on a {v}", "Captured using my {v}", "Photo from the {v}")
_LENS_FRAGMENTS = ("with the {v} lens", "using the {v}", "paired with a {v}")
_EMPTY_QUERIES = (
    "A photo with no shooting details recorded.",
    "No capture settings were noted for this image.",
    "An undated snapshot without any listed settings.",
)


def _jittered(field: str, value: str, rng: np.random.Generator, jitter_prob: float) -> str:
    roll = rng.random()
    if field == "APERTURE":
        bare = value.removeprefix("f/")
        forms = (value, f"f{bare}", f"F{bare}")
    elif field == "ISO":
        forms = (f"ISO {value}", f"ISO{value}", f"iso {value}")
    elif field == "SHUTTER_SPEED":
        forms = (f"{value}s", f"{value} s", value) if "/" in value else (f"{value}s", f"{value} s", f"{value} sec")
    elif field == "FOCAL_LENGTH":
        bare = value.removesuffix("mm")
        forms = (value, f"{bare} mm")
    else:
        return value
    if roll < jitter_prob:
        return _pick(rng, forms[1:])
    return forms[0]


def _typo(text: str, rng: np.random.Generator) -> str:
    words = text.split(" ")
    candidates = [i for i, w in enumerate(words) if sum(ch.isalpha() for ch in w) >= 4]
    if not candidates:
        return text
    wi = candidates[int(rng.integers(0, len(candidates)))]
    word = words[wi]
    positions = [i for i in range(len(word) - 1) if word[i].isalpha() and word[i + 1].isalpha()]
    if not positions:
        return text
    pos = positions[int(rng.integers(0, len(positions)))]
    words[wi] = word[:pos] + word[pos + 1] + word[pos] + word[pos + 2:]
    return " ".join(words)


def _render_query(gold: dict[str, str | None], rng: np.random.Generator, cfg: GenConfig) -> str:
    fragments: list[str] = []
    if gold.get("CAMERA"):
        fragments.append(_pick(rng, _CAMERA_FRAGMENTS).format(v=gold["CAMERA"]))
    if gold.get("LENS"):
        fragments.append(_pick(rng, _LENS_FRAGMENTS).format(v=gold["LENS"]))
    if gold.get("APERTURE"):
        fragments.append(f"at {_jittered('APERTURE', gold['APERTURE'], rng, cfg.jitter_prob)}")
    if gold.get("ISO"):
        fragments.append(_jittered("ISO", gold["ISO"], rng, cfg.jitter_prob))
    if gold.get("SHUTTER_SPEED"):
        fragments.append(_jittered("SHUTTER_SPEED", gold["SHUTTER_SPEED"], rng, cfg.jitter_prob))
    if gold.get("FOCAL_LENGTH"):
        fragments.append(f"at {_jittered('FOCAL_LENGTH', gold['FOCAL_LENGTH'], rng, cfg.jitter_prob)}")
    if not fragments:
        query = _pick(rng, _EMPTY_QUERIES)
    else:
        query = ", ".join(fragments) + "."
    if rng.random() < cfg.typo_prob:
        query = _typo(query, rng)
    return query


def _split_counts(n: int, splits: tuple[float, float, float]) -> tuple[int, int, int]:
    train_end = int(np.floor(splits[0] * n))
    dev_end = int(np.floor((splits[0] + splits[1]) * n))
    return train_end, dev_end - train_end, n - dev_end


def generate_gold(cfg: GenConfig) -> list[GoldRecord]:
    """Gold records with deterministic split tags; values are normalization fixed points."""
    schema = cfg.schema()
    n = cfg.n_examples
    perm = _sub_rng(cfg.seed, "splits").permutation(n)
    n_train, n_dev, _ = _split_counts(n, cfg.splits)
    split_of = np.empty(n, dtype=object)
    split_of[perm[:n_train]] = "train"
    split_of[perm[n_train:n_train + n_dev]] = "dev"
    split_of[perm[n_train + n_dev:]] = "test"

    records = []
    for i in range(n):
        example_id = f"ex{i:06d}"
        rng = _sub_rng(cfg.seed, "gold", example_id)
        gold: dict[str, str | None] = {}
        for spec in schema.fields:
            if rng.random() < cfg.field_present_prob:
                gold[spec.name] = _pick(rng, cfg.pools[spec.name])
            else:
                gold[spec.name] = None
        query = _render_query(gold, rng, cfg)
        records.append(GoldRecord(example_id=example_id, query=query, gold=gold, split=str(split_of[i])))
    return records


_PREAMBLES = (
    "Sure! Here is the extracted metadata:",
    "Here you go:",
    "Of course. The requested fields are:",
    "Based on the description, I extracted the following:",
    "The JSON you asked for is below:",
)
_TRAILERS = (
    "Hope that helps!",
    "Let me know if anything looks off.",
    "These values were inferred from the text.",
    "Feel free to ask for corrections.",
)
_EXTRA_KEYS = (("confidence", "high"), ("notes", "auto-extracted"), ("source", "caption"), ("mood", "neutral"))


def _case_key(name: str, key_case: str) -> str:
    if key_case == "lower":
        return name.lower()
    if key_case == "title":
        return name.title()
    return name


def _quirked_body(values: dict[str, str | None], profile: ModelProfile) -> str:
    body = serialize_fields({_case_key(k, profile.key_case): v for k, v in values.items()})
    if profile.quote_style == "single":
        body = body.replace('"', "'")
    return body


def _sample_category(mix: dict[FailureCategory, float], rng: np.random.Generator) -> FailureCategory:
    roll = rng.random()
    cumulative = 0.0
    for category in _MIX_ORDER:
        cumulative += mix.get(category, 0.0)
        if roll < cumulative:
            return category
    return FailureCategory.NO_FAILURE


def _render_output(values: dict[str, str | None], profile: ModelProfile, rng: np.random.Generator) -> str:
    category = _sample_category(profile.taxonomy_mix, rng)
    exact = serialize_fields(values)
    if category is FailureCategory.NO_FAILURE:
        return exact
    if category is FailureCategory.FENCED_JSON:
        lang = _pick(rng, ("json", ""))
        text = f"```{lang}\n{_quirked_body(values, profile)}\n```"
        if rng.random() < 0.3:
            text += " " + _pick(rng, _TRAILERS)
        return text
    if category is FailureCategory.PROSE_WRAPPER:
        text = _pick(rng, _PREAMBLES) + " " + _quirked_body(values, profile)
        if rng.random() < 0.3:
            text += " " + _pick(rng, _TRAILERS)
        return text
    if category is FailureCategory.TRAILING_TEXT:
        return _quirked_body(values, profile) + " " + _pick(rng, _TRAILERS)
    if category is FailureCategory.MISSING_KEYS:
        drop = int(rng.integers(1, 4))
        names = list(values)
        doomed = set(rng.choice(len(names), size=min(drop, len(names)), replace=False).tolist())
        return serialize_fields({k: v for i, (k, v) in enumerate(values.items()) if i not in doomed})
    if category is FailureCategory.EXTRA_KEYS:
        n_extra = int(rng.integers(1, 3))
        start = int(rng.integers(0, len(_EXTRA_KEYS)))
        extended = dict(values)
        for j in range(n_extra):
            key, value = _EXTRA_KEYS[(start + j) % len(_EXTRA_KEYS)]
            extended[key] = value
        return serialize_fields(extended)
    # Malformed: one of three corruptions; the single-quote variant is the
    # only repairable one, which the profile calibration accounts for.
    corruption = int(rng.integers(0, 3))
    if corruption == 0:
        return exact.rstrip()[:-1]
    if corruption == 1:
        return exact.replace('"', "'")
    with_comma = exact.rstrip()[:-1] + ",}"
    last_quote = with_comma.rfind('"')
    return with_comma[:last_quote] + with_comma[last_quote + 1:]


def simulate_output(gold: GoldRecord, profile: ModelProfile, cfg: GenConfig) -> RawOutput:
    """One model's raw text for one example.

    Semantics and formatting draw from independent hash-derived RNG streams,
    so changing the taxonomy mix never perturbs which values were extracted.
    """
    sem_rng = _sub_rng(cfg.seed, "sem", gold.example_id, profile.model_id)
    fmt_rng = _sub_rng(cfg.seed, "fmt", gold.example_id, profile.model_id)
    values: dict[str, str | None] = {}
    for spec in cfg.schema().fields:
        name = spec.name
        gold_value = gold.gold.get(name)
        if gold_value is None:
            values[name] = None
            continue
        if sem_rng.random() < profile.omission.get(name, 0.0):
            values[name] = None
            continue
        if sem_rng.random() < profile.semantic_error.get(name, 0.0):
            pool = [v for v in cfg.pools[name] if v != gold_value]
            values[name] = _pick(sem_rng, pool) if pool else gold_value
        else:
            values[name] = gold_value
    text = _render_output(values, profile, fmt_rng)
    return RawOutput(
        example_id=gold.example_id,
        model_id=profile.model_id,
        prompt_variant=profile.prompt_variant,
        text=text,
    )


def generate_corpus(cfg: GenConfig) -> tuple[list[GoldRecord], list[RawOutput]]:
    """Gold records plus outputs for every profile, in canonical order."""
    if not cfg.profiles:
        raise ConfigError("generate_corpus needs at least one profile")
    golds = generate_gold(cfg)
    outputs = [
        simulate_output(gold, profile, cfg)
        for gold in golds
        for profile in sorted(cfg.profiles, key=lambda p: p.model_id)
    ]
    return golds, outputs


# ---------------------------------------------------------------------------
# Profile calibration


def solve_profile(
    model_id: str,
    target_ros: float,
    target_css: float,
    precision: float,
    failure_shares: dict[FailureCategory, float],
    key_case: str = "exact",
    quote_style: str = "double",
    prompt_variant: PromptVariant = PromptVariant.ZERO_SHOT,
    fields: tuple[str, ...] = tuple(_DEFAULT_POOLS),
) -> ModelProfile:
    """Invert the score algebra to per-field probabilities.

    failure_shares covers the six failure categories (conditional on a
    failure) and must sum to 1; the no-failure mass falls out of the solve.
    Missing-keys corruption drops 2 of 6 keys on average and one of the three
    malformed corruptions is repairable, giving the canonicalized survival
    rate a = 1 - (1 - t_nf) * (s_missing / 3 + 2 * s_malformed / 3).
    """
    total = sum(failure_shares.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"failure shares sum to {total}, expected 1")
    if not (2 * precision > target_css > target_ros >= 0):
        raise ConfigError("need 2 * precision > css target > ros target >= 0")
    r_css = precision * target_css / (2 * precision - target_css)
    r_ros = precision * target_ros / (2 * precision - target_ros)
    k = failure_shares[FailureCategory.MISSING_KEYS] / 3 + 2 * failure_shares[FailureCategory.MALFORMED_JSON] / 3
    a = (1 - k) / (1 - k * r_ros / r_css)
    correct = r_css / a
    if correct > precision:
        raise ConfigError(f"targets not reachable at precision {precision}: need correct={correct:.3f}")
    t_nf = r_ros / correct
    wrong = correct * (1 - precision) / precision
    omit = 1.0 - correct - wrong
    error = wrong / (correct + wrong)
    mix = {FailureCategory.NO_FAILURE: t_nf}
    for category in FAILURE_ORDER:
        mix[category] = (1.0 - t_nf) * failure_shares[category]
    return ModelProfile(
        model_id=model_id,
        semantic_error={f: error for f in fields},
        omission={f: omit for f in fields},
        taxonomy_mix=mix,
        key_case=key_case,
        quote_style=quote_style,
        prompt_variant=prompt_variant,
        target_ros=target_ros,
        target_css=target_css,
    )


def _shares(fenced, prose, trailing, missing, extra, malformed) -> dict[FailureCategory, float]:
    return {
        FailureCategory.FENCED_JSON: fenced,
        FailureCategory.PROSE_WRAPPER: prose,
        FailureCategory.TRAILING_TEXT: trailing,
        FailureCategory.MISSING_KEYS: missing,
        FailureCategory.EXTRA_KEYS: extra,
        FailureCategory.MALFORMED_JSON: malformed,
    }


_BUILTIN_SPECS = (
    # model_id, ros, css, precision, shares, key_case, quote_style
    ("gemma9b-like", 0.685, 0.745, 0.80, _shares(0.42, 0.25, 0.13, 0.10, 0.05, 0.05), "exact", "double"),
    ("gemma2b-like", 0.116, 0.246, 0.55, _shares(0.36, 0.24, 0.12, 0.13, 0.07, 0.08), "lower", "single"),
    ("qwen7b-like", 0.421, 0.588, 0.70, _shares(0.44, 0.26, 0.10, 0.08, 0.05, 0.07), "exact", "single"),
    ("mistral7b-like", 0.522, 0.656, 0.75, _shares(0.40, 0.22, 0.18, 0.09, 0.06, 0.05), "title", "double"),
    ("phi3-like", 0.284, 0.398, 0.62, _shares(0.37, 0.28, 0.11, 0.11, 0.06, 0.07), "lower", "double"),
    ("stablelm-like", 0.168, 0.312, 0.58, _shares(0.38, 0.21, 0.14, 0.11, 0.07, 0.09), "exact", "single"),
)

_FEWSHOT_SPECS = (
    ("gemma9b-like", 0.599, 0.678, 0.80, _shares(0.42, 0.25, 0.13, 0.10, 0.05, 0.05), "exact", "double"),
    ("gemma2b-like", 0.184, 0.218, 0.55, _shares(0.36, 0.24, 0.12, 0.13, 0.07, 0.08), "lower", "single"),
    ("qwen7b-like", 0.410, 0.520, 0.70, _shares(0.44, 0.26, 0.10, 0.08, 0.05, 0.07), "exact", "single"),
    ("mistral7b-like", 0.470, 0.580, 0.75, _shares(0.40, 0.22, 0.18, 0.09, 0.06, 0.05), "title", "double"),
    ("phi3-like", 0.290, 0.400, 0.62, _shares(0.37, 0.28, 0.11, 0.11, 0.06, 0.07), "lower", "double"),
    ("stablelm-like", 0.220, 0.310, 0.58, _shares(0.38, 0.21, 0.14, 0.11, 0.07, 0.09), "exact", "single"),
)


def builtin_profiles() -> list[ModelProfile]:
    """Six zero-shot profiles calibrated to the benchmark's reference scores."""
    return [
        solve_profile(model_id, ros, css, precision, shares, key_case, quote_style)
        for model_id, ros, css, precision, shares, key_case, quote_style in _BUILTIN_SPECS
    ]


def builtin_fewshot_profiles() -> list[ModelProfile]:
    """Few-shot (k=3) variants: fewer format failures, similar error structure."""
    return [
        solve_profile(
            model_id, ros, css, precision, shares, key_case, quote_style,
            prompt_variant=PromptVariant.FEW_SHOT_K3,
        )
        for model_id, ros, css, precision, shares, key_case, quote_style in _FEWSHOT_SPECS
    ]


def random_profile(model_id: str, rng: np.random.Generator) -> ModelProfile:
    """A random but well-behaved profile (used by property suites)."""
    ranges = {
        FailureCategory.FENCED_JSON: (0.35, 0.45),
        FailureCategory.PROSE_WRAPPER: (0.20, 0.30),
        FailureCategory.TRAILING_TEXT: (0.10, 0.20),
        FailureCategory.MISSING_KEYS: (0.05, 0.15),
        FailureCategory.EXTRA_KEYS: (0.05, 0.10),
        FailureCategory.MALFORMED_JSON: (0.05, 0.10),
    }
    raw = {c: rng.uniform(lo, hi) for c, (lo, hi) in ranges.items()}
    total = sum(raw.values())
    t_nf = float(rng.uniform(0.15, 0.85))
    mix = {FailureCategory.NO_FAILURE: t_nf}
    for category, value in raw.items():
        mix[category] = (1.0 - t_nf) * value / total
    omit = float(rng.uniform(0.05, 0.45))
    error = float(rng.uniform(0.05, 0.45))
    fields = tuple(_DEFAULT_POOLS)
    return ModelProfile(
        model_id=model_id,
        semantic_error={f: error for f in fields},
        omission={f: omit for f in fields},
        taxonomy_mix=mix,
        key_case=_pick(rng, KEY_CASES),
        quote_style=_pick(rng, QUOTE_STYLES),
    )
