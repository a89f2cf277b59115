import re

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

# one-line verdict per acceptance criterion, printed after the run
_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if m is None:
        return
    num, label = int(m.group(1)), m.group(2)
    if report.when == "call":
        _CRITERIA[num] = (label, "PASS" if report.passed else "FAIL")
    elif report.when == "setup" and not report.passed:
        _CRITERIA[num] = (label, "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_CRITERIA):
        label, verdict = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d} {verdict}  {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def unit_sphere_mesh():
    from scoretex import primitives

    return primitives.icosphere(2)


@pytest.fixture(scope="session")
def front_camera():
    from scoretex import meshes

    return meshes.camera_from_spherical(30.0, 20.0, 3.0, 45.0, (48, 48))
