import numpy as np
import pytest
from hypothesis import settings

from vadosd.corpus_io import load_manifest
from vadosd.synth import SynthSpec, generate, write_corpus

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Four 10 s single-channel recordings: 2 train, 1 dev, 1 eval."""
    spec = SynthSpec(seed=11, num_recordings=4, recording_length=10.0, overlap_ratio=0.2, partitions={"train": 2, "dev": 1, "eval": 1})
    out = tmp_path_factory.mktemp("tiny")
    path = write_corpus(generate(spec), out, embeddings=True)
    return load_manifest(path)


@pytest.fixture(scope="session")
def tiny_multichannel(tmp_path_factory):
    spec = SynthSpec(seed=12, num_recordings=3, recording_length=6.0, channels=4, overlap_ratio=0.2, partitions={"train": 1, "dev": 1, "eval": 1})
    out = tmp_path_factory.mktemp("tiny4")
    return load_manifest(write_corpus(generate(spec), out))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
