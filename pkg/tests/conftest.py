import json
import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

FIXTURES = HERE / "fixtures"


@pytest.fixture(scope="session")
def reference_values():
    return json.loads((FIXTURES / "reference_values.json").read_text())


@pytest.fixture(scope="session")
def integrator_scenes():
    return dict(np.load(FIXTURES / "integrator_scenes.npz"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    import workspace
    return workspace.build(tmp_path_factory.mktemp("ws"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
