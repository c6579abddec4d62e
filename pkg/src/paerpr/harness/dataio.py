"""Export and import of generated benchmarks: a JSON manifest plus ``.npy`` arrays."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..scene_sim import SampleSet, SceneSpec
from .pipeline import Benchmark

COLUMNS = ("observations", "positions", "orientations", "scene_index")


def export_benchmark(bench: Benchmark, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    splits = {}
    for split in ("train", "test"):
        data: SampleSet = getattr(bench, split)
        files = {}
        for col in COLUMNS:
            name = f"{split}_{col}.npy"
            np.save(directory / name, getattr(data, col), allow_pickle=False)
            files[col] = name
        splits[split] = {"count": len(data), "files": files}
    manifest = {"scenes": [s.to_dict() for s in bench.scenes], "splits": splits, **(extra or {})}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def import_benchmark(directory) -> Benchmark:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    scenes = [SceneSpec.from_dict(d) for d in manifest["scenes"]]
    splits = {}
    for split in ("train", "test"):
        entry = manifest["splits"][split]
        cols = {c: np.load(directory / entry["files"][c], allow_pickle=False) for c in COLUMNS}
        data = SampleSet(**cols)
        if len(data) != entry["count"]:
            raise ValueError(f"{split}: manifest says {entry['count']} samples, found {len(data)}")
        splits[split] = data
    return Benchmark(scenes, splits["train"], splits["test"])
