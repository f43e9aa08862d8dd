import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advre.corpus import Instance  # noqa: E402
from advre.encoders import EncoderConfig, EncoderParams  # noqa: E402


TOY_VOCAB = 12
TOY_RELATIONS = 4
TOY_MAX_LEN = 8


def toy_config(arch, dropout_p=0.0):
    return EncoderConfig(arch, k_w=4, k_p=2, k_h=3, m=3, dropout_p=dropout_p, max_len=TOY_MAX_LEN)


def toy_params(arch, seed=0, dropout_p=0.0):
    rng = np.random.default_rng(seed)
    params = EncoderParams.init(toy_config(arch, dropout_p), TOY_VOCAB, TOY_RELATIONS, rng)
    # break the zero init so every gradient path is exercised
    params.sampler_w.data[:] = rng.normal(size=params.sampler_w.shape)
    if "conv.b" in params.tensors:
        params["conv.b"].data[:] = rng.normal(scale=0.1, size=params["conv.b"].shape)
    return params


@pytest.fixture
def toy_instances():
    return [
        Instance(0, [2, 3, 4, 5, 6], 1, 3, 0, 1),
        Instance(1, [7, 8, 9], 0, 2, 0, 2),          # tail entity ends the sentence
        Instance(2, [3, 5, 7, 9, 11, 2, 4], 2, 5, 1, 0),
    ]


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
