from __future__ import annotations

import pytest

from fieldwise.benchgen import GenConfig, builtin_profiles, generate_corpus
from fieldwise.corpus import Corpus, canonical_records, run_pipeline


def build_corpus(seed: int, n: int, profiles=None, **kwargs) -> Corpus:
    cfg = GenConfig(
        seed=seed,
        n_examples=n,
        profiles=tuple(profiles if profiles is not None else builtin_profiles()),
        **kwargs,
    )
    golds, outputs = generate_corpus(cfg)
    return Corpus(
        schema=cfg.schema(),
        golds=golds,
        outputs=outputs,
        provenance={"generator_seed": cfg.seed, "config_hash": cfg.config_hash()},
    )


@pytest.fixture(scope="session")
def default_corpus() -> Corpus:
    """The documented default configuration: seed 42, 8000/1000/1000 split."""
    return build_corpus(seed=42, n=10000)


@pytest.fixture(scope="session")
def default_canon(default_corpus):
    return canonical_records(default_corpus)


@pytest.fixture(scope="session")
def default_result(default_corpus, default_canon):
    return run_pipeline(default_corpus, canon=default_canon)
