import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pdfa.data import DATA_DIR_ENV, FILES, default_data_dir  # noqa: E402
from registry import ACCEPTANCE  # noqa: E402


def dataset_available(name: str) -> bool:
    directory = default_data_dir() / name
    return all((directory / s).exists() or (directory / (s + ".gz")).exists() for s in FILES.values())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_report_header(config):
    return [f"{DATA_DIR_ENV}={os.environ.get(DATA_DIR_ENV, '(unset)')}",
            "datasets: " + ", ".join(f"{n}={'yes' if dataset_available(n) else 'missing'}"
                                     for n in ("fashion_mnist", "mnist"))]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} | {detail}")
