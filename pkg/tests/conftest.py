import numpy as np
import pytest

from scenegraph3d.geometry import Obb


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_obb(rng, spread=2.0, yaw=None):
    dims = tuple(rng.uniform(0.2, 1.5, 3))
    centroid = (rng.uniform(-spread, spread), rng.uniform(-spread, spread), dims[2] / 2 + rng.uniform(0, 0.5))
    return Obb(centroid, dims, rng.uniform(0, 2 * np.pi) if yaw is None else yaw)


# acceptance criteria report: number -> (name, passed, detail)
_ACCEPTANCE = {}
ACCEPTANCE_NAMES = {
    1: "gradient correctness",
    2: "fusion algebra",
    3: "constraint evaluator oracle",
    4: "geometry oracles",
    5: "predictor desk-scale training",
    6: "generator desk-scale training",
    7: "VAE invariants",
    8: "end-to-end pipeline",
    9: "synthetic GT self-consistency",
    10: "serialization",
}


@pytest.fixture
def acceptance():
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {ACCEPTANCE_NAMES[number]}: {detail}"
        print(line)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in ACCEPTANCE_NAMES.items():
        if number in _ACCEPTANCE:
            passed, detail = _ACCEPTANCE[number]
            terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2} {name}: {detail}")
        else:
            terminalreporter.write_line(f"[ -- ] {number:>2} {name}: not reported (deselected, or errored first)")
