from __future__ import annotations

import pytest

from ftlcrl.config import Config, config_from_dict

TINY = {
    "env": {"name": "boxworld", "params": {"num_boxes": 2}},
    "schedule": {"episodes_per_task": 2, "episode_cap": 15},
    "encoder": {"num_tiles": 8, "grid_dim": 2, "bins": 5},
    "planner": {"population": 20, "horizon": 4, "iterations": 2},
    "eval": {"every": 1, "episodes": 2, "mse_buffer_cap": 50},
    "seeds": [0],
}


@pytest.fixture
def tiny_dict() -> dict:
    import copy

    return copy.deepcopy(TINY)


@pytest.fixture
def tiny_cfg(tiny_dict) -> Config:
    return config_from_dict(tiny_dict)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record (and print) a pass/fail line for an acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
