import numpy as np
import pytest

from firedrone.predictor import IcnnModel

from helpers import random_sq_model


@pytest.fixture(scope="session")
def tiny_models(tmp_path_factory):
    """Untrained 20x20 S and SQ checkpoints; enough to drive the planners quickly."""
    d = tmp_path_factory.mktemp("models")
    rng = np.random.default_rng(0)
    IcnnModel.init("S", (20, 20), 4, rng).save(d / "s.icnn")
    sq = random_sq_model((20, 20), rng, hidden=4)
    sq.params["vc"][:] = -1.0
    sq.save(d / "sq.icnn")
    return d


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
