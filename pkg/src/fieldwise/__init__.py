"""fieldwise: canonicalize messy LLM JSON, score it, and select per field.

The three-step surface mirrors production use: canonicalize raw outputs,
score candidates with a per-field verifier, and assemble one validated
record with keep/override/abstain decisions.
"""

from .canon import CanonConfig, canonicalize, canonicalize_text, normalize_value
from .errors import FieldwiseError, ProtocolViolation
from .metrics import css_score, cross_model_gap, micro_f1, oracle_select, ros_score
from .policy import PolicyConfig, safe_override, tune_thresholds
from .schema import (
    CanonicalRecord,
    FieldSpec,
    GoldRecord,
    RawOutput,
    Schema,
    default_camera_schema,
    validate_strict,
)
from .taxonomy import FailureCategory, classify_failure, taxonomy_report
from .verifier import (
    ExternalScores,
    VerifierMode,
    VerifierModel,
    featurize,
    load_external_scores,
    score,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CanonConfig",
    "CanonicalRecord",
    "ExternalScores",
    "FailureCategory",
    "FieldSpec",
    "FieldwiseError",
    "GoldRecord",
    "PolicyConfig",
    "ProtocolViolation",
    "RawOutput",
    "Schema",
    "VerifierMode",
    "VerifierModel",
    "__version__",
    "canonicalize",
    "canonicalize_text",
    "classify_failure",
    "cross_model_gap",
    "css_score",
    "default_camera_schema",
    "featurize",
    "load_external_scores",
    "micro_f1",
    "normalize_value",
    "oracle_select",
    "ros_score",
    "safe_override",
    "score",
    "taxonomy_report",
    "train",
    "tune_thresholds",
    "validate_strict",
]
