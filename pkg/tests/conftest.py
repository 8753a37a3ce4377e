import time

import numpy as np
import pytest

from grouplstm.data import GenConfig, generate


def central_diff(f, x, step=1e-5):
    """Numeric gradient of scalar f at array x (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        up = f()
        flat[j] = orig - step
        down = f()
        flat[j] = orig
        gflat[j] = (up - down) / (2 * step)
    return g


def rel_err(a, n, floor=1e-8):
    a, n = np.asarray(a, dtype=float), np.asarray(n, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


@pytest.fixture(scope="session")
def small_dataset():
    return generate(GenConfig(num_scenes=60, seed=7))


@pytest.fixture(scope="session")
def twenty_scenes():
    return generate(GenConfig(num_scenes=20, seed=11))


@pytest.fixture(scope="session")
def benchmark_dataset():
    """The seeded temporal-necessity benchmark: 600 scenes, noise 0.3."""
    return generate(GenConfig(num_scenes=600, noise_std=0.3, seed=0))


@pytest.fixture(scope="session")
def default_bench(benchmark_dataset):
    from grouplstm.pipeline import TrainConfig, bench_all
    start = time.perf_counter()
    table = bench_all(benchmark_dataset, seed=0, tc=TrainConfig())
    return table, time.perf_counter() - start


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, with its measured values."""
    reports = [r for key in ("passed", "failed") for r in terminalreporter.stats.get(key, [])
               if r.when == "call" and "test_acceptance.py::test_criterion_" in r.nodeid]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: int(r.nodeid.split("test_criterion_")[1].split("_")[0])):
        props = dict(r.user_properties)
        verdict = "PASS" if r.passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {props.get('criterion', '?')}: "
                                    f"{props.get('title', r.nodeid)} | {props.get('measured', '')}")
