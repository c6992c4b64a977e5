import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

MNIST_DIR = Path(os.environ.get("EA_MNIST_DIR", "/root/mnist"))


@pytest.fixture
def mnist_dir():
    needed = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    if not all((MNIST_DIR / f).exists() for f in needed):
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set EA_MNIST_DIR)")
    return MNIST_DIR


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number, name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
