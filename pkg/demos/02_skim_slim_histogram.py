"""The usual reduction chain: skim, slim, then fill a histogram.

Generates a synthetic dataset, drops uninteresting events (skim) and
unneeded branches (slim), and fills the same histogram from the original
and from the reduced copy to show the answer does not change.

    python3 demos/02_skim_slim_histogram.py
"""

import tempfile
from pathlib import Path

from ntuplex.aggregate import BinSpec, SumSpec, plot_table_csv, serialize
from ntuplex.executor import partition, resolve_inputs, run
from ntuplex.pipeline import skim, slim
from ntuplex.synth import GenSpec, generate, parse_schema_text

SELECTION = "nhits >= 20 && len(jets) >= 2"
HISTOGRAM = BinSpec(12, 0, 120, "pt", SumSpec("sum(jets)"))

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    schema = parse_schema_text("pt:F32,eta:F64,nhits:I32,run:I64,jets:VarF32")
    raw = generate(tmp / "raw", GenSpec(schema, n_files=3, events_per_file=20_000, seed=1))

    (tmp / "reduced").mkdir()
    reduced = []
    for path in raw:
        name = Path(path).name
        counts = skim(path, SELECTION, tmp / f"skim_{name}")
        slim(tmp / f"skim_{name}", ["pt", "jets"], tmp / "reduced" / name)
        before, after = Path(path).stat().st_size, (tmp / "reduced" / name).stat().st_size
        print(f"{name}: kept {counts.events_out}/{counts.events_in} events, {before} -> {after} bytes")
        reduced.append(str(tmp / "reduced" / name))

    full, _ = run(partition(resolve_inputs([str(tmp / "raw")]), 3, spec=HISTOGRAM, predicate=SELECTION))
    small, _ = run(partition(resolve_inputs(reduced), 3, spec=HISTOGRAM))
    print("\nsame histogram from both:", serialize(full) == serialize(small))
    print()
    print(plot_table_csv(small))
