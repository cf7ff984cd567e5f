import functools
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wil.model import ModelSpec  # noqa: E402
from wil.presets import PresetParams, build_preset  # noqa: E402


def benchmark():
    return build_preset(PresetParams(kind="constant_boost", c=1.0, K_boost=1.0, rate=1.0))


def sweeping(c=1.0):
    return build_preset(PresetParams(kind="exp_decay_exp_q", c=c, K_boost=0.0, b_boost=math.exp(2.0 * c), rate=1.0))


@functools.lru_cache(maxsize=None)
def benchmark_solution(n_cells):
    from wil.stationary import solve_stationary
    return solve_stationary(benchmark(), n_cells=n_cells)


@pytest.fixture
def bench():
    return benchmark()


@pytest.fixture(scope="session")
def bench_400():
    return benchmark_solution(400)


@pytest.fixture(scope="session")
def evolution_setup():
    """Benchmark on a 400 x 400 characteristic-aligned grid: (model, solution, operator, f_* on grid, f_*)."""
    from wil.evolution import EvolutionOperator, age_cap, on_grid
    from wil.stationary import build_joint_stationary
    m = benchmark()
    sol = benchmark_solution(400)
    a_edges = np.linspace(0.0, age_cap(m, sol.h.edges), 401)
    op = EvolutionOperator(m, sol.h.edges, a_edges)
    f = build_joint_stationary(m, sol.h, a_edges)
    return m, sol, op, on_grid(f, op), f


def generic_exponential(scale=1.0):
    """q = scale * e^{-a} with no closed forms; only its normalized shape is meaningful."""
    return ModelSpec(F=lambda x: -np.asarray(x, dtype=float), G=lambda x: np.asarray(x, dtype=float) + 1.0,
                     q=lambda x_b, a: scale * np.exp(-np.clip(a, 0, None)) * (np.asarray(a) >= 0)
                     * np.ones(np.broadcast(np.asarray(x_b), np.asarray(a)).shape),
                     decay_rate=1.0, G_increasing=True, G_inverse=lambda y: np.asarray(y, dtype=float) - 1.0)


# ---------------------------------------------------------------- acceptance summary


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def report_criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
