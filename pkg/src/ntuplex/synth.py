"""Deterministic synthetic datasets with a tunable file-size skew.

File ``i`` of ``n`` gets weight ``(1 - u_i) ** -skew`` with ``u_i`` uniform
on [0, 1), i.e. a Pareto law with shape ``1 / skew``. The total of
``n * events_per_file`` events is split in proportion to the weights by the
largest-remainder method, so ``skew = 0`` gives every file exactly
``events_per_file`` events and larger skews give heavier tails. Branch values
come from per-file generators spawned from one seed, so output is byte-for-byte
reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, UserInputError
from .eventfmt import DEFAULT_BASKET_BYTES, BranchType, NTFWriter, Schema, VarColumn

DEFAULT_SCHEMA = {"pt": "F32", "eta": "F64", "nhits": "I32", "run": "I64", "jets": "VarF32"}
CHUNK_EVENTS = 1 << 18


def parse_schema_text(text: str) -> Schema:
    """``"pt:F32,jets:VarF32"`` -> Schema."""
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, type_ = item.partition(":")
        if not sep:
            raise SchemaError(f"branch spec {item!r} is not name:type")
        pairs.append((name.strip(), type_.strip()))
    if not pairs:
        raise SchemaError("empty schema")
    return Schema.declare(pairs)


def file_event_counts(n_files: int, events_per_file: int, skew: float, seed: int) -> list[int]:
    if n_files < 1:
        raise UserInputError("n_files must be positive")
    if events_per_file < 0:
        raise UserInputError("events_per_file must be non-negative")
    if not (skew >= 0 and np.isfinite(skew)):
        raise UserInputError(f"skew must be a finite non-negative number, got {skew!r}")
    total = n_files * events_per_file
    if skew == 0:
        return [events_per_file] * n_files
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    u = rng.random(n_files)
    w = (1.0 - u) ** -skew
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(np.int64)
    short = total - int(counts.sum())
    # largest remainders first, ties by file index
    order = np.lexsort((np.arange(n_files), -(quota - counts)))
    counts[order[:short]] += 1
    return counts.tolist()


def _column(rng: np.random.Generator, t: BranchType, n: int, mean_len: float):
    if t is BranchType.F32:
        return rng.normal(50.0, 20.0, n).astype(np.float32)
    if t is BranchType.F64:
        return rng.normal(0.0, 2.5, n)
    if t is BranchType.I32:
        return rng.integers(0, 100, n, dtype=np.int32)
    if t is BranchType.I64:
        return rng.integers(0, 1 << 40, n, dtype=np.int64)
    lengths = rng.poisson(mean_len, n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    values = rng.exponential(30.0, int(offsets[-1])).astype(np.float32)
    return VarColumn(offsets, values)


def generate_columns(schema: Schema, n: int, rng: np.random.Generator, mean_len: float = 3.0) -> dict:
    return {b.name: _column(rng, b.branch_type, n, mean_len) for b in schema.branches}


@dataclass
class GenSpec:
    schema: Schema = field(default_factory=lambda: Schema.declare(DEFAULT_SCHEMA))
    n_files: int = 4
    events_per_file: int = 1000
    skew: float = 0.0
    seed: int = 0
    mean_len: float = 3.0
    compression: str = "deflate"
    basket_target_bytes: int = DEFAULT_BASKET_BYTES
    prefix: str = "part"


def generate(out_dir, spec: GenSpec) -> list[str]:
    """Write ``spec.n_files`` files into ``out_dir``; returns their paths."""
    if spec.mean_len < 0:
        raise UserInputError("mean_len must be non-negative")
    spec.schema.check_names()
    os.makedirs(out_dir, exist_ok=True)
    counts = file_event_counts(spec.n_files, spec.events_per_file, spec.skew, spec.seed)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_files)
    width = max(3, len(str(spec.n_files - 1)))
    paths = []
    for i, (count, ss) in enumerate(zip(counts, seeds)):
        rng = np.random.default_rng(ss)
        path = os.path.join(out_dir, f"{spec.prefix}{i:0{width}d}.ntf")
        with NTFWriter(path, spec.schema, spec.compression, spec.basket_target_bytes) as w:
            done = 0
            while done < count:
                n = min(CHUNK_EVENTS, count - done)
                w.append_columns(generate_columns(spec.schema, n, rng, spec.mean_len))
                done += n
        paths.append(path)
    return paths
