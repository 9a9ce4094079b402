import time

import pytest
from hypothesis import given, strategies as st

from ddsg import runtime


def test_equal_tasks_split_evenly():
    groups = runtime.load_balance([1.0] * 4, 2)
    assert sorted(len(g) for g in groups) == [2, 2]


def test_single_task_many_workers():
    groups = runtime.load_balance([5.0], 8)
    assert sum(1 for g in groups if g) == 1
    plan = runtime.TaskPlan.make([(0,)], [5.0], 8)
    assert plan.fine_workers == 8


def test_lpt_example():
    # [DERIVED] greedy LPT: 8 goes alone, the eight unit tasks fill the other worker
    costs = [8, 1, 1, 1, 1, 1, 1, 1, 1]
    groups = runtime.load_balance(costs, 2)
    assert sorted(runtime.group_loads(costs, groups)) == [8, 8]


def test_load_balance_deterministic():
    costs = [3.0, 1.0, 3.0, 2.0, 2.0, 1.0]
    assert runtime.load_balance(costs, 3) == runtime.load_balance(list(costs), 3)


@given(st.lists(st.floats(0.1, 100.0), min_size=2, max_size=60), st.integers(1, 8))
def test_balance_bound(costs, workers):
    groups = runtime.load_balance(costs, workers)
    assert sorted(i for g in groups for i in g) == list(range(len(costs)))
    if len(costs) >= 2 * workers:
        loads = runtime.group_loads(costs, groups)
        assert max(loads) / (sum(loads) / workers) <= 1.5


def test_parallel_map_order_and_equivalence():
    tasks = list(range(50))
    seq = [t * t for t in tasks]
    for w in (1, 2, 8):
        assert runtime.parallel_map(tasks, w, lambda t: t * t) == seq


def test_failures_are_aggregated():
    def f(t):
        if t in (3, 7):
            raise KeyError(t)
        return t

    for w in (1, 4):
        with pytest.raises(runtime.TaskError) as info:
            runtime.parallel_map(range(10), w, f)
        assert [tid for tid, _ in info.value.failures] == [3, 7]
        assert "task 3" in str(info.value)


def test_invalid_worker_count():
    with pytest.raises(ValueError):
        runtime.parallel_map([1], 0, abs)
    with pytest.raises(ValueError):
        runtime.load_balance([1.0], 0)


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv(runtime.WORKERS_ENV, "3")
    assert runtime.default_workers() == 3
    monkeypatch.setenv(runtime.WORKERS_ENV, "0")
    with pytest.raises(ValueError):
        runtime.default_workers()


def test_task_plan_returns_component_order():
    comps = [(0,), (1,), (2,), (3,), (4,)]
    plan = runtime.TaskPlan.make(comps, [5, 1, 4, 2, 3], 2)
    assert plan.run(lambda u: u[0] * 10) == [0, 10, 20, 30, 40]


def test_sleep_tasks_speed_up():
    # sleeping releases the GIL, so this measures the scheduler rather than the core count
    def task(_):
        time.sleep(0.01)
        return 1

    t0 = time.perf_counter()
    runtime.parallel_map(range(64), 1, task)
    t1 = time.perf_counter() - t0
    t0 = time.perf_counter()
    runtime.parallel_map(range(64), 8, task)
    t8 = time.perf_counter() - t0
    assert t1 / t8 >= 3.0
