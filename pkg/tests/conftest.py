from __future__ import annotations

import numpy as np
import pytest

from engagecf import cfgan, classifier
from engagecf.data import HIGH, LOW, fit_normalizer, normalize_dataset, split_by_session
from engagecf.features import extract_corpus
from engagecf.synthgen import EngagementProfile, generate_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """Six two-minute sessions, noise 0 (about 330 windows)."""
    return extract_corpus(generate_corpus(6, 11, EngagementProfile(duration_s=120.0)))


@pytest.fixture(scope="session")
def small_split(small_corpus):
    train, test = split_by_session(small_corpus, 0.67, 0)
    stats = fit_normalizer(train)
    return normalize_dataset(train, stats), normalize_dataset(test, stats)


@pytest.fixture(scope="session")
def small_clf(small_split):
    train, _ = small_split
    return classifier.train(train, classifier.TrainConfig(epochs=30, seed=0))


@pytest.fixture(scope="session")
def small_gan(small_split, small_clf):
    train, _ = small_split
    return cfgan.train_gan(train.with_class(LOW), train.with_class(HIGH), small_clf,
                           cfgan.GanConfig(epochs=150, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
