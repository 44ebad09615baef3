import numpy as np
import pytest

from promptcount.backend import MockBackend, SourceImage

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def mock():
    return MockBackend()


def label_image(labels, name="scene"):
    return SourceImage(name, labels=np.asarray(labels, dtype=np.int64))


def paint(shape, rects):
    """Label map with ``(label, x1, y1, x2, y2)`` rectangles painted in order."""
    labels = np.zeros(shape, dtype=np.int64)
    for label, x1, y1, x2, y2 in rects:
        labels[y1:y2 + 1, x1:x2 + 1] = label
    return labels
