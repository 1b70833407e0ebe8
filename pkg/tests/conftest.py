import numpy as np
import pytest

from dipolarsim.system_builder import DensitySpec, SpinSystem, random_system


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_system(n=4, density=236.0, seed=0, disorder=80.0) -> SpinSystem:
    return random_system(DensitySpec(density, n_spins=n), seed, disorder)


def pair_system(r_nm=3.0, direction=(0.0, 0.0, 1.0), disorder=(0.0, 0.0)) -> SpinSystem:
    d = np.asarray(direction, dtype=float)
    return SpinSystem(np.array([[0.0, 0.0, 0.0], r_nm * d / np.linalg.norm(d)]), np.asarray(disorder, dtype=float))


# Acceptance criteria report one PASS/FAIL line each; they are collected here and
# printed in the terminal summary so they appear in the plain test log.
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _criterion_key(line: str):
    cid = line.split()[1].rstrip(":")
    digits = "".join(ch for ch in cid if ch.isdigit())
    return int(digits), cid[len(digits):]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_key):
            terminalreporter.write_line(line)
