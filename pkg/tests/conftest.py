import numpy as np
import pytest
import torch

from fgbgvos import matching
from fgbgvos.ensembler import EnsemblerConfig
from fgbgvos.model import ModelConfig, SegModel


@pytest.fixture(params=matching.available_backends())
def backend(request):
    """Run the test once per available kernel backend."""
    matching.set_backend(request.param)
    yield request.param
    matching.set_backend(None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model_config(embedding_dim=8, windows=(1, 2), use_background=True):
    return ModelConfig(
        embedding_dim=embedding_dim,
        encoder_width=8,
        windows=windows,
        use_background=use_background,
        ensembler=EnsemblerConfig(
            stage_widths=(16, 24, 24),
            context_width=16,
            decoder_width=16,
            low_level_proj=8,
        ),
    )


@pytest.fixture
def tiny_model():
    torch.manual_seed(7)
    return SegModel(tiny_model_config())


# ---------------------------------------------------------------------------
# Acceptance reporting: one pass/fail line per criterion in the summary.

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = (
            "PASS" if report.passed else "FAIL"
        )


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{_ACCEPTANCE_RESULTS[name]:4s}  {name}")
