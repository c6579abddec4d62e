"""Single-query refinement latency and model size."""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..pose_core import apply_arrays
from .checkpoint import save_checkpoint


@dataclass
class BenchResult:
    queries: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    apr_ms: float
    model_bytes: int

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def benchmark_inference(apr, rpr, observations, scene_index, n: int, checkpoint_path=None,
                        warmup: int = 2) -> BenchResult:
    """Time one refinement iteration (PAE encode + RPR + apply) per query, batch size 1.

    ``model_bytes`` is the size of the RPR's checkpoint archive; when no path
    is given the model is written to a temporary file to measure it.
    """
    if n < 1:
        raise ValueError("benchmark_inference needs n >= 1 queries")
    obs = np.asarray(observations)
    scene_index = np.asarray(scene_index)
    m = len(obs)
    for i in range(min(warmup, m)):
        x, q = apr.predict(obs[i:i + 1])
        rpr.predict(obs[i:i + 1], x, q, scene_index[i:i + 1])
    apr_times, times = [], []
    for j in range(n):
        i = j % m
        t0 = time.perf_counter()
        x, q = apr.predict(obs[i:i + 1])
        t1 = time.perf_counter()
        dx, dq = rpr.predict(obs[i:i + 1], x, q, scene_index[i:i + 1])
        apply_arrays(x, q, dx, dq)
        t2 = time.perf_counter()
        apr_times.append(t1 - t0)
        times.append(t2 - t1)
    if checkpoint_path is None:
        with tempfile.TemporaryDirectory() as tmp:
            size = save_checkpoint(rpr, Path(tmp) / "rpr.ckpt")
    else:
        path = Path(checkpoint_path)
        size = path.stat().st_size if path.exists() else save_checkpoint(rpr, path)
    ms = np.asarray(times) * 1e3
    return BenchResult(n, float(ms.mean()), float(np.percentile(ms, 50)), float(np.percentile(ms, 95)),
                       float(np.mean(apr_times) * 1e3), int(size))
