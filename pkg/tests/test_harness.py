from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
import pytest

from paerpr.harness import (
    BadMagicError,
    CheckpointError,
    ExperimentConfig,
    MetricsReport,
    MissingTensorError,
    Pipeline,
    ShapeMismatchError,
    TruncatedArchiveError,
    UnknownTensorError,
    cdf_table,
    evaluate_poses,
    load_checkpoint,
    run_experiment_suite,
    save_checkpoint,
)
from paerpr.harness.bench import benchmark_inference
from paerpr.harness.checkpoint import MAGIC, read_archive, tensor_names
from paerpr.harness.cli import main
from paerpr.harness.config import stable_hash
from paerpr.harness.dataio import export_benchmark, import_benchmark
from paerpr.pae import PaeConfig, PaeModel
from paerpr.regressors import AprModel, ImageRprModel, ModelConfig, PaeRprModel, TransformerRprModel
from paerpr.scene_sim import SampleSet, generate_scene

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.json"
SMALL = ModelConfig(obs_dim=48, encoder_sizes=(24, 16), latent_dim=8, regressor_hidden=8,
                    num_layers=1, num_heads=2, mlp_hidden=16, head_hidden=8)


def all_models():
    bounds = [(s.outer_min, s.outer_max) for s in (generate_scene(0, i, 16) for i in range(2))]
    pae = PaeModel(PaeConfig(latent_dim=8, hidden=8, num_layers=2, num_bands=2), bounds).astype(np.float32)
    return {
        "apr": AprModel(SMALL).astype(np.float32),
        "img": ImageRprModel(SMALL).astype(np.float32),
        "pae": PaeRprModel(SMALL, pae).astype(np.float32),
        "tf": TransformerRprModel(SMALL, pae).astype(np.float32),
        "pae_model": pae,
    }


def rewrite_header(path: Path, edit) -> None:
    raw = path.read_bytes()
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    edit(header)
    head = json.dumps(header).encode()
    path.write_bytes(raw[:8] + struct.pack("<I", len(head)) + head + raw[12 + n:])


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["apr", "img", "pae", "tf", "pae_model"])
    def test_roundtrip_bitwise(self, tmp_path, kind):
        model = all_models()[kind]
        path = tmp_path / "m.ckpt"
        size = save_checkpoint(model, path)
        assert size == path.stat().st_size
        assert path.read_bytes()[:8] == MAGIC
        loaded = load_checkpoint(path)
        assert type(loaded) is type(model)
        a, b = tensor_names(model), tensor_names(loaded)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name].data.tobytes() == b[name].data.tobytes(), name
        x = np.random.default_rng(0).normal(size=(2, 48))
        if kind == "apr":
            np.testing.assert_array_equal(model.eval().predict(x)[0], loaded.predict(x)[0])

    def test_names_are_prefixed(self):
        names = {k: list(tensor_names(m)) for k, m in all_models().items()}
        assert all(n.startswith("apr/") for n in names["apr"])
        assert all(n.startswith("rpr_tf/") for n in names["tf"])
        assert "rpr_tf/t_trans" in names["tf"]
        assert all("." not in n for ns in names.values() for n in ns)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(all_models()["apr"], path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError) as err:
            load_checkpoint(path)
        assert err.value.code == "bad_magic"

    def test_offset_past_end(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(all_models()["img"], path)
        rewrite_header(path, lambda h: h[next(k for k in h if k != "__meta__")].update(offset=10 ** 9))
        with pytest.raises(TruncatedArchiveError) as err:
            load_checkpoint(path)
        assert err.value.code == "truncated_archive"

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(all_models()["apr"], path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(TruncatedArchiveError):
            load_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(all_models()["apr"], path)

        def transpose(h):
            entry = h["apr/encoder/backbone/layers/0/weight"]
            entry["shape"] = entry["shape"][::-1]

        rewrite_header(path, transpose)
        with pytest.raises(ShapeMismatchError):
            load_checkpoint(path)

    def test_unknown_and_missing(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(all_models()["apr"], path)
        rewrite_header(path, lambda h: h.update(extra=h.pop("apr/s_x")))
        with pytest.raises(UnknownTensorError):
            load_checkpoint(path)
        save_checkpoint(all_models()["apr"], path)
        rewrite_header(path, lambda h: h.pop("apr/s_x"))
        with pytest.raises(MissingTensorError):
            load_checkpoint(path)

    def test_error_taxonomy(self):
        for cls in (BadMagicError, TruncatedArchiveError, ShapeMismatchError, UnknownTensorError,
                    MissingTensorError):
            assert issubclass(cls, CheckpointError)
        assert len({c.code for c in (BadMagicError, TruncatedArchiveError, ShapeMismatchError,
                                     UnknownTensorError, MissingTensorError)}) == 5

    def test_read_archive_meta(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(all_models()["tf"], path)
        meta, tensors = read_archive(path)
        assert meta["kind"] == "tf" and "pae" in meta
        assert all(t.dtype == np.float32 for t in tensors.values())


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = ExperimentConfig.load(SMOKE)
        cfg.save(tmp_path / "c.json")
        again = ExperimentConfig.load(tmp_path / "c.json")
        assert again == cfg
        assert stable_hash(again) == stable_hash(cfg)

    def test_overrides(self):
        cfg = ExperimentConfig.load(SMOKE)
        new = cfg.with_overrides(["schedule.apr.epochs=7", "seeds=[4]"])
        assert new.schedule.apr.epochs == 7 and tuple(new.seeds) == (4,)
        assert stable_hash(new) != stable_hash(cfg)
        with pytest.raises(KeyError):
            cfg.with_overrides(["schedule.nope=1"])
        with pytest.raises(ValueError):
            cfg.with_overrides(["seeds"])

    def test_validation(self):
        cfg = ExperimentConfig.load(SMOKE)
        with pytest.raises(ValueError):
            cfg.with_overrides(["model.obs_dim=49"])


class TestMetrics:
    def test_perfect(self):
        x = np.zeros((4, 3))
        q = np.tile([1.0, 0, 0, 0], (4, 1))
        test = SampleSet(np.zeros((4, 6)), x, q, np.array([0, 0, 1, 1]))
        r = evaluate_poses(x, -q, test)
        assert r.median_position == 0 and r.median_orientation == 0

    def test_median_per_scene(self):
        r = MetricsReport.from_errors([1, 2, 3, 10], [0, 0, 0, 4], [0, 0, 0, 1])
        assert r.scene_median_position == {0: 2.0, 1: 10.0}
        assert r.median_position == 6.0

    def test_cdf_counting_oracle(self):
        rng = np.random.default_rng(0)
        errs = rng.uniform(0, 1, 200)
        errs[:5] = 0.5
        table = cdf_table(errs, 1.0, 21)
        for t, frac in table:
            assert frac == sum(1 for e in errs if e <= t) / len(errs)

    def test_empty(self):
        with pytest.raises(ValueError):
            MetricsReport.from_errors([], [], [])
        with pytest.raises(ValueError):
            cdf_table([], 1.0)


@pytest.fixture(scope="module")
def smoke_pipe(tmp_path_factory):
    return Pipeline(ExperimentConfig.load(SMOKE), tmp_path_factory.mktemp("cache"))


def read_rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


class TestSuites:
    def test_table3_rows(self, smoke_pipe, tmp_path):
        res = run_experiment_suite("table3", smoke_pipe.config, tmp_path, pipeline=smoke_pipe)
        rows = read_rows(res.csv_files[0])
        methods = {(r["method"], r["iterations"]) for r in rows if r["seed"] == "mean"}
        assert methods == {("apr", "0"), ("nearest", "1"), ("i=1", "1"), ("i=2", "2"), ("i=3", "3")}
        assert len(rows) == 5 * (len(smoke_pipe.config.seeds) + 1)
        assert (tmp_path / "table3_manifest.json").exists() and (tmp_path / "config.json").exists()
        assert all(isinstance(c.passed, bool) for c in res.criteria)

    def test_table2_rows(self, smoke_pipe, tmp_path):
        res = run_experiment_suite("table2", smoke_pipe.config, tmp_path, pipeline=smoke_pipe)
        rows = read_rows(res.csv_files[0])
        assert {float(r["k_percent"]) for r in rows} == {100.0, 30.0}

    def test_table4_rows(self, smoke_pipe, tmp_path):
        res = run_experiment_suite("table4", smoke_pipe.config, tmp_path, pipeline=smoke_pipe)
        assert {int(r["depth"]) for r in read_rows(res.csv_files[0])} == {1, 2}

    def test_table3_deterministic(self, smoke_pipe, tmp_path):
        a = run_experiment_suite("table3", smoke_pipe.config, tmp_path / "a", pipeline=smoke_pipe)
        b = run_experiment_suite("table3", smoke_pipe.config, tmp_path / "b", cache_dir=None)
        assert a.csv_files[0].read_bytes() == b.csv_files[0].read_bytes()

    def test_unknown_suite(self, smoke_pipe, tmp_path):
        with pytest.raises(ValueError):
            run_experiment_suite("table9", smoke_pipe.config, tmp_path, pipeline=smoke_pipe)

    def test_bench(self, smoke_pipe, tmp_path):
        apr, rpr = smoke_pipe.apr(0), smoke_pipe.rpr("tf", 0)
        obs = smoke_pipe.test_observations(0)
        si = smoke_pipe.benchmark(0).test.scene_index
        with pytest.raises(ValueError):
            benchmark_inference(apr, rpr, obs, si, 0)
        res = benchmark_inference(apr, rpr, obs, si, 10, tmp_path / "r.ckpt")
        assert res.model_bytes == (tmp_path / "r.ckpt").stat().st_size
        assert 0 < res.p50_ms <= res.p95_ms

    def test_dataio_roundtrip(self, smoke_pipe, tmp_path):
        bench = smoke_pipe.benchmark(0)
        export_benchmark(bench, tmp_path, {"seed": 0})
        again = import_benchmark(tmp_path)
        assert np.array_equal(again.train.observations, bench.train.observations)
        assert np.array_equal(again.test.orientations, bench.test.orientations)
        assert [s.landmarks.tobytes() for s in again.scenes] == [s.landmarks.tobytes() for s in bench.scenes]


class TestCli:
    def test_gen_scenes(self, tmp_path, capsys):
        assert main(["gen-scenes", "--config", str(SMOKE), "--out", str(tmp_path), "--seed", "0"]) == 0
        assert (tmp_path / "seed0" / "manifest.json").exists()
        assert json.loads((tmp_path / "config.json").read_text())["seeds"] == [0]

    def test_errors_exit_2(self, tmp_path, capsys):
        assert main(["gen-scenes", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
        assert main(["gen-scenes", "--config", str(SMOKE), "--set", "nope=1", "--out", str(tmp_path)]) == 2
        with pytest.raises(SystemExit):
            main(["bogus"])
