"""Shared fixtures: a small dataset and a tiny encoder, built once per session."""

import numpy as np
import pytest
import torch

from filmseg.dualenc.model import DualEncoder, EncoderConfig, EncoderWeights, freeze
from filmseg.scenegen.dataset import DatasetConfig, build_dataset
from filmseg.scenegen.grammar import vocabulary

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_split():
    return build_dataset(DatasetConfig(n_train=48, n_test_seen=12, n_test_unseen=12, master_seed=5))


def tiny_encoder_config(**kw) -> EncoderConfig:
    base = dict(n_vision_blocks=3, n_text_blocks=1, model_width=32, n_heads=2, joint_dim=16, taps=(1, 3))
    base.update(kw)
    return EncoderConfig(vocabulary=tuple(vocabulary()), **base)


@pytest.fixture
def tiny_encoder():
    torch.manual_seed(0)
    return freeze(EncoderWeights(DualEncoder(tiny_encoder_config())))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, description); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}")
