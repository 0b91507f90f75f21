import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntuplex.aggregate import AverageSpec, BinSpec, CountSpec, DeviateSpec, SumSpec, serialize, to_json
from ntuplex.errors import TaskFailedError, UserInputError
from ntuplex.executor import (
    CostModel,
    InputFile,
    RunReport,
    Strategy,
    TaskMetrics,
    build_report,
    makespan,
    partition,
    resolve_inputs,
    run,
    simulate,
    straggler_report,
    task_loads,
    throughput,
)
from ntuplex.synth import GenSpec, file_event_counts, generate

from conftest import assert_close, sequential_fill

HOUR = 3600.0


def sized(sizes):
    return [InputFile(f"f{i}", s) for i, s in enumerate(sizes)]


# -- partition ----------------------------------------------------------------------


def test_lpt_example():
    plan = partition(sized([5, 4, 3, 3, 1]), 2, "lpt")
    assert sorted(sorted(f.size for f in t.files) for t in plan) == [[1, 3, 4], [3, 5]]
    assert task_loads(plan) == [8, 8] and makespan(plan) == 8


def test_equal_count_example():
    plan = partition(sized([5, 4, 3, 3, 1]), 2, Strategy.EQUAL_COUNT)
    assert [[f.size for f in t.files] for t in plan] == [[5, 3, 1], [4, 3]]
    assert task_loads(plan) == [9, 7] and makespan(plan) == 9


def test_one_file_four_tasks():
    plan = partition(sized([7]), 4, "lpt")
    assert [len(t.files) for t in plan] == [1, 0, 0, 0]
    plan = partition(sized([7]), 4, "equal")
    assert [len(t.files) for t in plan] == [1, 0, 0, 0]
    assert [t.task_id for t in plan] == [0, 1, 2, 3]


def test_partition_errors():
    for n in (0, -1):
        with pytest.raises(UserInputError):
            partition(sized([1]), n)
    with pytest.raises(UserInputError):
        partition([], 2)
    with pytest.raises(UserInputError):
        partition(sized([1]), 1, "random")


def brute_force_optimum(sizes, m):
    """Smallest achievable makespan by exhaustive search with symmetry pruning."""
    sizes = sorted(sizes, reverse=True)
    best = [sum(sizes)]
    loads = [0] * m

    def dfs(i):
        if i == len(sizes):
            best[0] = min(best[0], max(loads))
            return
        seen = set()
        for k in range(m):
            if loads[k] in seen or loads[k] + sizes[i] >= best[0]:
                continue
            seen.add(loads[k])
            loads[k] += sizes[i]
            dfs(i + 1)
            loads[k] -= sizes[i]

    dfs(0)
    return best[0]


def test_brute_force_oracle_sanity():
    assert brute_force_optimum([5, 4, 3, 3, 1], 2) == 8
    assert brute_force_optimum([3, 3, 2, 2, 2], 2) == 6
    assert brute_force_optimum([10], 3) == 10


@settings(max_examples=300, deadline=None)
@given(sizes=st.lists(st.integers(1, 1000), min_size=1, max_size=12), m=st.integers(1, 5))
def test_lpt_makespan_bounds(sizes, m):
    lpt = partition(sized(sizes), m, "lpt")
    opt = brute_force_optimum(sizes, m)
    assert makespan(lpt) * 3 * m <= (4 * m - 1) * opt
    assert makespan(lpt) >= opt


@settings(max_examples=300, deadline=None)
@given(sizes=st.lists(st.integers(0, 10**9), min_size=1, max_size=40), m=st.integers(1, 12),
       strategy=st.sampled_from(["equal", "lpt"]))
def test_every_file_exactly_once(sizes, m, strategy):
    files = sized(sizes)
    plan = partition(files, m, strategy)
    assert len(plan) == m
    assigned = [f for t in plan for f in t.files]
    assert sorted(assigned, key=lambda f: f.path) == sorted(files, key=lambda f: f.path)
    if strategy == "equal":
        counts = [len(t.files) for t in plan]
        assert max(counts) - min(counts) <= 1


def test_lpt_is_a_heuristic_not_a_dominance():
    # round-robin can win by luck; LPT only guarantees the 4/3 bound
    sizes = [2, 3, 2, 3, 2]
    assert makespan(partition(sized(sizes), 2, "equal")) == 6
    assert makespan(partition(sized(sizes), 2, "lpt")) == 7
    assert brute_force_optimum(sizes, 2) == 6


@pytest.mark.parametrize("skew", [1.0, 1.5, 2.0])
def test_lpt_not_worse_than_equal_on_generated_skew(skew):
    for seed in range(100):
        sizes = file_event_counts(20, 1000, skew, seed)
        for m in (4, 5, 8):
            files = sized(sizes)
            assert makespan(partition(files, m, "lpt")) <= makespan(partition(files, m, "equal")), (seed, m)


# -- metrics ------------------------------------------------------------------------


@pytest.mark.parametrize("executor_h,cpu_h,read_h", [(5.8, 2.9, 2.9), (11.7, 2.9, 8.8)])
def test_table2_read_time(executor_h, cpu_h, read_h):
    walls = [executor_h * HOUR * f for f in (0.1, 0.2, 0.3, 0.4)]
    cpus = [cpu_h * HOUR * f for f in (0.25, 0.25, 0.25, 0.25)]
    report = build_report([TaskMetrics(i, w, c) for i, (w, c) in enumerate(zip(walls, cpus))], run_time=600.0)
    assert report.executor_time / HOUR == pytest.approx(executor_h, rel=1e-12)
    assert report.cpu_time / HOUR == pytest.approx(cpu_h, rel=1e-12)
    assert report.read_time / HOUR == pytest.approx(read_h, rel=1e-12)
    assert report.read_time == report.executor_time - report.cpu_time


def test_read_time_zero_when_all_cpu():
    m = TaskMetrics(0, 2.5, 2.5, bytes_read=100)
    assert m.read_time == 0.0
    assert throughput(m) is None


def test_throughput_examples():
    assert throughput(TaskMetrics(0, 10.0, 0.0, bytes_read=1 << 30)) == 107374182.4
    assert throughput(TaskMetrics(0, 10.0, 5.0, bytes_read=0)) == 0
    assert throughput(TaskMetrics(0, 1.0, 2.0, read_time=-1.0, bytes_read=5)) is None


def test_throughput_summary_by_hand():
    tasks = [
        TaskMetrics(0, 4.0, 2.0, bytes_read=200),  # 100 B/s
        TaskMetrics(1, 5.0, 1.0, bytes_read=1200),  # 300 B/s
        TaskMetrics(2, 3.0, 2.0, bytes_read=50),  # 50 B/s
    ]
    s = build_report(tasks, 5.0).throughput_summary()
    assert s["per_task_mean"] == pytest.approx(150.0)
    assert s["per_task_median"] == pytest.approx(100.0)
    assert s["total_based"] == pytest.approx(1450 / 7.0)


def test_report_totals_are_sums():
    tasks = [TaskMetrics(i, 1.0 + i, 0.5 * i, bytes_read=10 * i, events_processed=i) for i in range(5)]
    r = build_report(reversed(tasks), 7.0)
    assert [m.task_id for m in r.tasks] == list(range(5))
    t = r.totals()
    assert t["executor_time_s"] == math.fsum(1.0 + i for i in range(5))
    assert t["cpu_time_s"] == math.fsum(0.5 * i for i in range(5))
    assert t["read_time_s"] == t["executor_time_s"] - t["cpu_time_s"]
    assert t["bytes_read"] == 100 and t["events_processed"] == 10


def test_csv_and_json_layout():
    r = build_report([TaskMetrics(0, 2.0, 1.0, bytes_read=10, start_s=0.0),
                      TaskMetrics(1, 3.0, 1.0, bytes_read=20, start_s=0.5)], 3.5, label="x")
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert rows[0][0] == "task_id" and len(rows) == 1 + 2 + 1 + 4
    assert rows[3] == []
    totals = {k: float(v) for k, v in rows[4:]}
    assert totals == {"total_executor_time_s": 5.0, "total_cpu_time_s": 2.0, "total_read_time_s": 3.0,
                      "run_time_s": 3.5}
    doc = json.loads(json.dumps(r.to_json()))
    assert doc["label"] == "x" and doc["totals"]["read_time_s"] == 3.0
    assert [t["throughput_Bps"] for t in doc["tasks"]] == [10.0, 10.0]
    assert doc["straggler"]["tail_ratio"] >= 1.0
    lines = r.straggler().timeline_csv().splitlines()
    assert lines == ["task_id,start_s,end_s,wall_s,bytes", "0,0.0,2.0,2.0,10", "1,0.5,3.5,3.0,20"]


# -- stragglers ---------------------------------------------------------------------


def test_equal_durations_tail_one():
    r = build_report([TaskMetrics(i, 2.0, 1.0) for i in range(6)], 2.0)
    s = straggler_report(r)
    assert (s.p50, s.p95, s.max, s.tail_ratio) == (2.0, 2.0, 2.0, 1.0)


def test_heavy_file_tail_matches_load_ratio():
    sizes = [10_000_000] + [1_000_000] * 7
    model = CostModel(cpu_per_byte=1e-8, read_per_byte=2e-8)
    equal = partition(sized(sizes), 4, "equal")
    s_equal = simulate(equal, model=model).straggler()
    loads = task_loads(equal)
    assert s_equal.tail_ratio == pytest.approx(max(loads) / np.median(loads), rel=1e-12)
    assert s_equal.tail_ratio == pytest.approx(5.5)
    s_lpt = simulate(partition(sized(sizes), 4, "lpt"), model=model).straggler()
    assert s_lpt.tail_ratio <= s_equal.tail_ratio


@settings(max_examples=200, deadline=None)
@given(sizes=st.lists(st.integers(1, 10**8), min_size=1, max_size=30), m=st.integers(1, 10),
       latency=st.sampled_from([0.0, 1e-3]))
def test_simulated_run_time_is_makespan(sizes, m, latency):
    model = CostModel(latency_per_read=latency)
    for strategy in ("equal", "lpt"):
        plan = partition(sized(sizes), m, strategy)
        r = simulate(plan, model=model)
        assert r.straggler().tail_ratio >= 1.0
        assert r.run_time == max(m_.wall_time for m_ in r.tasks)
        assert all(t.read_time == pytest.approx(t.wall_time - t.cpu_time) for t in r.tasks)
        if latency == 0:
            assert r.run_time == pytest.approx(makespan(plan) * (model.cpu_per_byte + model.read_per_byte))


def test_simulated_workers_queue():
    plan = partition(sized([100] * 4), 4, "equal")
    r = simulate(plan, workers=2, model=CostModel(cpu_per_byte=1.0, read_per_byte=0.0))
    assert [(m.start_s, m.end_s) for m in r.tasks] == [(0, 100), (0, 100), (100, 200), (100, 200)]
    assert r.run_time == 200


# -- real runs ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    paths = generate(d, GenSpec(n_files=5, events_per_file=400, skew=1.0, seed=11, basket_target_bytes=2048))
    return resolve_inputs([str(d)]), paths


SPECS = [
    CountSpec(),
    SumSpec("pt * 2 - eta"),
    BinSpec(12, 0, 120, "pt", SumSpec("sum(jets)")),
    BinSpec(5, -5, 5, "eta", BinSpec(4, 0, 100, "nhits")),
]


@pytest.mark.parametrize("spec", SPECS)
@pytest.mark.parametrize("strategy", ["equal", "lpt"])
def test_parallel_equals_sequential_exactly(dataset, spec, strategy):
    files, paths = dataset
    oracle = serialize(sequential_fill(paths, spec, "nhits > 20 && len(jets) >= 1"))
    outs = set()
    for n_tasks in (1, 3, 7):
        plan = partition(files, n_tasks, strategy, spec=spec, predicate="nhits > 20 && len(jets) >= 1")
        agg, report = run(plan, workers=1)
        outs.add(serialize(agg))
    assert outs == {oracle}


@pytest.mark.parametrize("spec", [AverageSpec("pt"), DeviateSpec("sum(jets) + eta"),
                                  BinSpec(6, -3, 3, "eta", DeviateSpec("pt"))])
def test_parallel_means_within_tolerance(dataset, spec):
    files, paths = dataset
    oracle = to_json(sequential_fill(paths, spec))
    for n_tasks in (1, 2, 5):
        agg, _ = run(partition(files, n_tasks, "lpt", spec=spec), workers=1)
        assert_close(to_json(agg), oracle, rel=1e-9)


@pytest.mark.parametrize("pool", ["thread", "process"])
def test_workers_one_vs_eight_identical(dataset, pool):
    files, _ = dataset
    spec = BinSpec(10, 0, 100, "pt", DeviateSpec("eta"))
    plan = partition(files, 8, "equal", spec=spec, predicate="run > 0")
    a, ra = run(plan, workers=1)
    b, rb = run(plan, workers=8, pool=pool)
    assert serialize(a) == serialize(b)
    assert [m.bytes_read for m in ra.tasks] == [m.bytes_read for m in rb.tasks]
    assert [m.events_processed for m in ra.tasks] == [m.events_processed for m in rb.tasks]


def test_run_metrics_consistent(dataset):
    files, paths = dataset
    agg, report = run(partition(files, 3, "lpt", spec=SumSpec("pt")), workers=2, pool="thread")
    assert report.events_processed == 2000
    for m in report.tasks:
        assert 0 <= m.cpu_time <= m.wall_time
        assert m.read_time == pytest.approx(m.wall_time - m.cpu_time)
        assert 0 <= m.start_s <= m.end_s <= report.run_time + 1e-6
    # the pruned read touches less than the whole dataset
    assert 0 < report.bytes_read < sum(f.size for f in files)


def test_bytes_read_independent_of_plan(dataset):
    files, _ = dataset
    totals = {run(partition(files, n, s, spec=CountSpec(), branches=["pt"]), workers=1)[1].bytes_read
              for n in (1, 2, 5) for s in ("equal", "lpt")}
    assert len(totals) == 1


def test_fail_fast_with_partial_report(dataset, tmp_path):
    files, _ = dataset
    bad = tmp_path / "bad.ntf"
    bad.write_bytes(b"XXXX" + bytes(100))
    plan = partition(files[:2] + [InputFile(str(bad), 104)], 3, "equal", spec=CountSpec())
    with pytest.raises(TaskFailedError) as info:
        run(plan, workers=1)
    err = info.value
    assert err.task_id == 2 and err.path == str(bad) and err.exit_code == 3
    assert "bad.ntf" in str(err) and "magic" in str(err)
    assert [m.task_id for m in err.partial_report.tasks] == [0, 1]
    with pytest.raises(TaskFailedError) as info:
        run(plan, workers=3, pool="process")
    assert info.value.path == str(bad) and info.value.partial_report is not None


def test_run_rejects_bad_input(dataset):
    files, _ = dataset
    plan = partition(files, 2, spec=CountSpec())
    for workers in (0, -2, 1.5, True):
        with pytest.raises(UserInputError):
            run(plan, workers=workers)
    with pytest.raises(UserInputError):
        run([], workers=1)
    mixed = [plan[0], partition(files, 2, spec=SumSpec("pt"))[1]]
    with pytest.raises(UserInputError):
        run(mixed)
    with pytest.raises(UserInputError):
        run(plan, pool="gpu")


def test_missing_field_fails_task(dataset):
    files, _ = dataset
    with pytest.raises(TaskFailedError) as info:
        run(partition(files, 1, spec=SumSpec("nope")), workers=1)
    assert info.value.exit_code == 2


def test_resolve_inputs_local_and_remote(dataset, server, tmp_path):
    files, paths = dataset
    import shutil

    for p in paths:
        shutil.copy(p, tmp_path / "export")
    remote = resolve_inputs([server.url("")])
    assert [f.size for f in remote] == [f.size for f in files]
    assert [f.path.rsplit("/", 1)[1] for f in remote] == [f.path.rsplit("/", 1)[1] for f in files]
    single = resolve_inputs([server.url("part000.ntf")])
    assert single == [remote[0]]
    with pytest.raises(UserInputError):
        resolve_inputs([str(tmp_path / "nothing*.ntf")])


def test_report_is_plain_data():
    r = RunReport([TaskMetrics(0, 1.0, 0.25, bytes_read=3)], 1.0)
    assert json.loads(json.dumps(r.to_json()))["throughput"]["total_based"] == 4.0
