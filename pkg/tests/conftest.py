import numpy as np
import pytest
import torch

from egopose.ingest import synthesize_sequence
from egopose.skeleton import NUM_BETAS, load_skeleton

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def skel():
    return load_skeleton()


@pytest.fixture(scope="session")
def walk_seq(skel):
    beta = np.zeros(NUM_BETAS)
    beta[0] = 0.5
    return synthesize_sequence(11, "walk", 3.0, 60.0, beta, skel, subject_id="s1", sequence_id="walk-11")


@pytest.fixture(scope="session")
def reach_seq(skel):
    return synthesize_sequence(5, "reach", 3.0, 60.0, np.zeros(NUM_BETAS), skel, sequence_id="reach-5")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
