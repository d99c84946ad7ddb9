"""Shared fixtures: a small synthetic corpus reused across test modules."""

from dataclasses import replace

import pytest

from ontask import synth


@pytest.fixture(scope="session")
def small_synth_config() -> synth.SynthConfig:
    # 5-minute sessions keep the full 3-cell layout but run in seconds.
    return replace(synth.default_config(), session_duration_ms=300_000)


@pytest.fixture(scope="session")
def small_corpus(small_synth_config) -> synth.SynthCorpus:
    return synth.generate_corpus(small_synth_config)
