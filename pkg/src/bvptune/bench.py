"""Batch prediction timing of the regressor kinds."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset, _case_id, load_csv
from .plots import bar_chart
from .sampling import default_space
from .surrogate import ModelKind, train_regressor

__all__ = ["BENCH_SCHEMA_VERSION", "random_settings", "time_predictions", "run_benchmark"]

BENCH_SCHEMA_VERSION = 1


def random_settings(n: int, seed: int = 0, chunk: int = 100_000) -> np.ndarray:
    """``(n, 8)`` uniformly scattered settings (log-uniform on log dimensions)."""
    space = default_space()
    rng = np.random.default_rng(seed)
    out = np.empty((n, len(space)))
    for s in range(0, n, chunk):
        m = min(chunk, n - s)
        U = rng.random((m, len(space)))
        out[s : s + m] = np.column_stack([d.from_unit(U[:, k]) for k, d in enumerate(space.dimensions)])
    return out


def time_predictions(model, X: np.ndarray) -> float:
    model.predict(X[: min(len(X), 16)])  # warm up compiled kernels
    t0 = time.perf_counter()
    out = model.predict(X)
    elapsed = time.perf_counter() - t0
    if out.shape != (len(X), 3) or not np.isfinite(out).all():
        raise RuntimeError("benchmark predictions are malformed")
    return elapsed


def run_benchmark(data, test_case, kinds, sizes, seed: int = 0, out_dir=None) -> dict:
    """Train one regressor per kind on ``test_case`` and time batch predictions per size."""
    ds = data if isinstance(data, LabeledDataset) else load_csv(data)
    case = _case_id(test_case)
    if isinstance(kinds, str):
        kinds = [k for k in kinds.split(",") if k.strip()]
    kinds = [ModelKind(k) for k in kinds]
    sizes = sorted(int(n) for n in sizes)
    inputs = random_settings(max(sizes), seed)
    times = {}
    for kind in kinds:
        model = train_regressor(ds, case, kind, seed=seed)
        times[kind.value] = {str(n): time_predictions(model, inputs[:n]) for n in sizes}
    report = {
        "schema_version": BENCH_SCHEMA_VERSION,
        "test_case": case,
        "sizes": sizes,
        "wall_time_seconds": times,
        "per_row_microseconds": {k: {n: 1e6 * t / int(n) for n, t in v.items()} for k, v in times.items()},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        bar_chart({f"{n} rows": {k: v[str(n)] for k, v in times.items()} for n in sizes}, out / "bench.svg")
    return report
