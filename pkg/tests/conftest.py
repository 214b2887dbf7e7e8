from __future__ import annotations

import numpy as np
import pytest

from merklespeech import evaluation
from merklespeech.repository import FileStore


@pytest.fixture(scope="session")
def speech_chunk():
    """One deterministic 2 s speech-like chunk."""
    return evaluation.synth_speech(4242, duration_s=2.0).samples


@pytest.fixture(scope="session")
def small_corpus():
    """Five deterministic files, 6-12 s each."""
    return evaluation.synth_corpus(5, 777)


@pytest.fixture(scope="session")
def enrolled(tmp_path_factory, small_corpus):
    """(ctx, assets) for a small enrolled corpus backed by a file store."""
    root = tmp_path_factory.mktemp("repo")
    ctx = evaluation.make_context(FileStore(root))
    assets = evaluation.enroll_corpus(ctx, small_corpus)
    return ctx, assets


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
