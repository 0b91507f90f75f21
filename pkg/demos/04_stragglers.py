"""Why equal file counts per task leave a long tail.

With a heavy-tailed file size distribution, dealing out the same number of
files to every task lets one unlucky task collect the giants. Largest-first
(LPT) assignment evens the load. The simulated cost model makes the
comparison deterministic and independent of how many cores this machine has.

    python3 demos/04_stragglers.py
"""

import tempfile
from pathlib import Path

from ntuplex.aggregate import CountSpec
from ntuplex.executor import CostModel, makespan, partition, resolve_inputs, simulate
from ntuplex.synth import GenSpec, generate, parse_schema_text


def gantt(report, width=60):
    end = max(m.end_s for m in report.tasks) or 1.0
    for m in report.tasks:
        a, b = int(m.start_s / end * width), max(int(m.end_s / end * width), int(m.start_s / end * width) + 1)
        print(f"  task {m.task_id:>2} |{' ' * a}{'#' * (b - a)}{' ' * (width - b)}| {m.wall_time:.3f} s")


with tempfile.TemporaryDirectory() as tmp:
    schema = parse_schema_text("pt:F32,eta:F64,nhits:I32,run:I64,jets:VarF32")
    generate(Path(tmp), GenSpec(schema, n_files=20, events_per_file=5_000, skew=1.5, seed=11))
    files = resolve_inputs([tmp])
    print("file sizes:", sorted((f.size for f in files), reverse=True), "\n")

    for strategy in ("equal", "lpt"):
        plan = partition(files, 5, strategy, spec=CountSpec())
        report = simulate(plan, model=CostModel())
        s = report.straggler()
        print(f"{strategy}: makespan {makespan(plan)} bytes, simulated run {report.run_time:.4f} s, "
              f"p50 {s.p50:.4f} s, max {s.max:.4f} s, tail ratio {s.tail_ratio:.2f}")
        gantt(report)
        print()
