"""Acceptance criteria 1-11; each test records one PASS/FAIL line (see conftest)."""
from __future__ import annotations

import json
import math
import struct
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from paerpr.harness import (
    BadMagicError,
    CheckpointError,
    MissingTensorError,
    Pipeline,
    ShapeMismatchError,
    TruncatedArchiveError,
    UnknownTensorError,
    load_checkpoint,
    run_experiment_suite,
    save_checkpoint,
)
from paerpr.harness.checkpoint import tensor_names
from paerpr.harness.suites import distillation_criterion
from paerpr.nn import (
    MLP,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    Tensor,
    TransformerConfig,
    TransformerEncoder,
    TransformerEncoderLayer,
    gradient_check,
)
from paerpr.pae import LatentPair, PaeConfig, PaeModel, pae_training_loss
from paerpr.pose_core import (
    IDENTITY_QUAT,
    Pose,
    UncertaintyParams,
    apply_relative,
    batch_pose_loss,
    orientation_loss,
    pose_loss,
    position_loss,
    random_quaternion,
    relative_pose,
)
from paerpr.regressors import AprModel, ImageRprModel, ModelConfig, PaeRprModel, TransformerRprModel
from paerpr.scene_sim import generate_scene


def record(number: int, name: str, passed: bool, detail) -> None:
    text = json.dumps(detail, default=float)
    ACCEPTANCE_RESULTS.append((number, name, bool(passed), text))
    print(f"{'PASS' if passed else 'FAIL'} criterion {number} {name}: {text}")
    assert passed, f"criterion {number} ({name}) failed: {text}"


def record_criteria(number: int, name: str, criteria) -> None:
    record(number, name, all(c.passed for c in criteria),
           {c.name: {"passed": c.passed, **c.detail} for c in criteria})


@pytest.fixture(scope="module")
def table3(acceptance_pipe, tmp_path_factory):
    return run_experiment_suite("table3", acceptance_pipe.config, tmp_path_factory.mktemp("table3"),
                                pipeline=acceptance_pipe)


# 1 ---------------------------------------------------------------------------
def test_criterion_01_gradient_integrity():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    errors = {}

    def check(name, module, make_loss, inputs=None):
        module.eval()
        params = [p for p in module.parameters() if p.requires_grad]
        errors[name] = gradient_check(make_loss, params, inputs, lambda v: v, max_entries=20)

    def weighted(out):
        return (out * np.random.default_rng(99).normal(size=out.shape)).sum()

    x = rng.normal(size=(2, 3, 6))
    layers = {
        "linear": Linear(6, 4, rng),
        "layernorm": LayerNorm(6),
        "mlp": MLP([6, 5, 4], rng, activation="gelu", final_activation=True),
        "attention": MultiHeadAttention(6, 3, rng),
        "encoder_layer": TransformerEncoderLayer(TransformerConfig(1, 2, 6, 10, 0.0), rng),
        "encoder": TransformerEncoder(TransformerConfig(2, 3, 6, 8, 0.0), rng),
    }
    layers["layernorm"].gain.data = rng.normal(size=6)
    for name, layer in layers.items():
        check(name, layer, lambda _, layer=layer: weighted(layer(Tensor(x))))

    cfg = ModelConfig(obs_dim=48, encoder_sizes=(12, 10), latent_dim=8, regressor_hidden=8, num_layers=2,
                      num_heads=2, mlp_hidden=12, head_hidden=8, dropout_rate=0.1)
    bounds = [(s.outer_min, s.outer_max) for s in (generate_scene(0, i, 16) for i in range(2))]
    obs = rng.normal(size=(3, 48))
    ref_obs = rng.normal(size=(3, 48))
    ref_x = rng.normal(size=(3, 3)) * 0.2
    ref_q = random_quaternion(rng, 3)
    scenes = np.array([0, 1, 0])
    gt_x, gt_q = rng.normal(size=(3, 3)), random_quaternion(rng, 3)

    def loss(model, out):
        return batch_pose_loss(out[0], out[1], gt_x, gt_q, model.s_x, model.s_q)

    apr = AprModel(cfg, seed=1)
    check("apr", apr, lambda _: loss(apr, apr(obs)[1:]))
    img = ImageRprModel(cfg, seed=2)
    check("image_rpr", img, lambda _: loss(img, img(obs, ref_obs)))
    pae = PaeModel(PaeConfig(latent_dim=8, hidden=8, num_layers=2, num_bands=2), bounds, seed=3)
    check("pae", pae, lambda _: weighted(pae(ref_x, ref_q, scenes).z_x) + weighted(pae(ref_x, ref_q, scenes).z_q))
    cat = PaeRprModel(cfg, pae, seed=4)
    check("pae_rpr", cat, lambda _: loss(cat, cat(obs, ref_x, ref_q, scenes)))
    tf = TransformerRprModel(cfg, pae, seed=5)
    check("transformer_rpr", tf, lambda _: loss(tf, tf(obs, ref_x, ref_q, scenes)))

    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    record(1, "gradient_integrity", worst < 1e-4 and elapsed < 60,
           {"max_relative_error": worst, "seconds": round(elapsed, 2), "per_module": errors})


# 2 ---------------------------------------------------------------------------
def test_criterion_02_pose_algebra():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10_000):
        ref = Pose(rng.normal(size=3) * 5, random_quaternion(rng))
        query = Pose(rng.normal(size=3) * 5, random_quaternion(rng))
        back = apply_relative(ref, relative_pose(ref, query))
        worst = max(worst, float(np.abs(back.position - query.position).max()),
                    float(min(np.abs(back.orientation - query.orientation).max(),
                              np.abs(back.orientation + query.orientation).max())))
    s2 = math.sqrt(2)
    examples = [
        (float(position_loss(np.array([1.0, 1, 0]), np.zeros(3))), s2),
        (float(position_loss(np.zeros(3), np.zeros(3))), 0.0),
        (float(orientation_loss(np.array([2.0, 0, 0, 0]), IDENTITY_QUAT)), 0.0),
        (float(orientation_loss(np.array([0.0, 1, 0, 0]), IDENTITY_QUAT)), s2),
        (float(orientation_loss(-IDENTITY_QUAT, IDENTITY_QUAT)), 0.0),
        (float(pose_loss(1.0, 0.5, 0.0, 0.0)), 1.5),
        (float(pose_loss(2.0, 0.0, math.log(2), 0.0)), 1 + math.log(2)),
        (float(pose_loss(0.0, 0.0, 0.7, -1.2)), -0.5),
    ]
    unit_err = max(abs(a - b) for a, b in examples)
    record(2, "pose_algebra", worst < 1e-9 and unit_err <= 1e-12,
           {"roundtrip_max_error": worst, "unit_example_max_error": unit_err})


# 3 ---------------------------------------------------------------------------
def _distill_loss_by_hand(zx, zq, tx, tq, dec_x, dec_q, gt_x, gt_q, s_x, s_q):
    def dist(a, b):
        return math.sqrt(sum((ai - bi) ** 2 for ai, bi in zip(a, b)))

    n = math.sqrt(sum(v * v for v in dec_q))
    unit = [v / n for v in dec_q]
    unit = unit if unit[0] >= 0 else [-v for v in unit]
    target = list(gt_q) if gt_q[0] >= 0 else [-v for v in gt_q]
    lx, lq = dist(dec_x, gt_x), dist(unit, target)
    return dist(zx, tx) + dist(zq, tq) + lx * math.exp(-s_x) + s_x + lq * math.exp(-s_q) + s_q


def test_criterion_03_distillation_loss_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        zx, zq, tx, tq = (rng.normal(size=(1, 16)) for _ in range(4))
        dec_x, gt_x, dec_q = rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 4))
        gt_q = random_quaternion(rng, 1)
        s = UncertaintyParams(*rng.normal(size=2))
        got = float(pae_training_loss(LatentPair(zx, zq), LatentPair(tx, tq), (dec_x, dec_q), (gt_x, gt_q), s).data)
        expect = _distill_loss_by_hand(zx[0], zq[0], tx[0], tq[0], dec_x[0], dec_q[0], gt_x[0], gt_q[0], s.s_x, s.s_q)
        worst = max(worst, abs(got - expect))
    record(3, "distillation_loss_oracle", worst <= 1e-12, {"max_abs_error": worst, "instances": 100})


# 4-9 -------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_04_distillation_quality(acceptance_pipe):
    crit = distillation_criterion(acceptance_pipe, acceptance_pipe.config.seeds)
    record_criteria(4, "teacher_quality_distillation", [crit])


@pytest.mark.slow
def test_criterion_05_table1_parity(acceptance_pipe, tmp_path):
    result = run_experiment_suite("table1", acceptance_pipe.config, tmp_path, pipeline=acceptance_pipe)
    record_criteria(5, "table1_parity", result.criteria)


@pytest.mark.slow
def test_criterion_06_refinement_improves(table3):
    record_criteria(6, "refinement_improvement", [c for c in table3.criteria if c.name.startswith("table3_i1_")])


@pytest.mark.slow
def test_criterion_07_table3(table3):
    record_criteria(7, "table3_iterations_and_nearest", table3.criteria)


@pytest.mark.slow
def test_criterion_08_table2(acceptance_pipe, tmp_path):
    result = run_experiment_suite("table2", acceptance_pipe.config, tmp_path, pipeline=acceptance_pipe)
    record_criteria(8, "table2_data_scarcity", result.criteria)


@pytest.mark.slow
def test_criterion_09_table4(acceptance_pipe, tmp_path):
    result = run_experiment_suite("table4", acceptance_pipe.config, tmp_path, pipeline=acceptance_pipe)
    assert result.criteria, "depth 2 missing from the configured depths"
    record_criteria(9, "table4_depth2_competitive", result.criteria)


# 10 --------------------------------------------------------------------------
def _expect(exc, path):
    try:
        load_checkpoint(path)
    except exc:
        return True
    except CheckpointError:
        return False
    return False


def _edit_header(path, edit):
    raw = path.read_bytes()
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    edit(header)
    head = json.dumps(header).encode()
    path.write_bytes(raw[:8] + struct.pack("<I", len(head)) + head + raw[12 + n:])


@pytest.mark.slow
def test_criterion_10_persistence(acceptance_pipe, tmp_path):
    seed = acceptance_pipe.config.seeds[0]
    models = {"apr": acceptance_pipe.apr(seed), "pae_model": acceptance_pipe.pae(seed)}
    for kind in ("img", "pae", "tf"):
        models[kind] = acceptance_pipe.rpr(kind, seed)
    roundtrip = {}
    for kind, model in models.items():
        path = tmp_path / f"{kind}.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        a, b = tensor_names(model), tensor_names(loaded)
        roundtrip[kind] = a.keys() == b.keys() and all(
            np.asarray(a[n].data, "<f4").tobytes() == b[n].data.tobytes() for n in a)

    src = tmp_path / "apr.ckpt"
    cases = {}
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTMAGIC" + src.read_bytes()[8:])
    cases["bad_magic"] = _expect(BadMagicError, bad)
    bad.write_bytes(src.read_bytes()[:-16])
    cases["truncated_payload"] = _expect(TruncatedArchiveError, bad)
    bad.write_bytes(src.read_bytes())
    _edit_header(bad, lambda h: h["apr/s_x"].update(offset=2 ** 40))
    cases["offset_past_end"] = _expect(TruncatedArchiveError, bad)
    bad.write_bytes(src.read_bytes())
    _edit_header(bad, lambda h: h["apr/encoder/backbone/layers/0/weight"].update(
        shape=h["apr/encoder/backbone/layers/0/weight"]["shape"][::-1]))
    cases["shape_mismatch"] = _expect(ShapeMismatchError, bad)
    bad.write_bytes(src.read_bytes())
    _edit_header(bad, lambda h: h.update({"apr/bogus": h.pop("apr/s_q")}))
    cases["unknown_tensor"] = _expect(UnknownTensorError, bad)
    bad.write_bytes(src.read_bytes())
    _edit_header(bad, lambda h: h.pop("apr/s_q"))
    cases["missing_tensor"] = _expect(MissingTensorError, bad)
    record(10, "persistence", all(roundtrip.values()) and all(cases.values()),
           {"bitwise_roundtrip": roundtrip, "error_taxonomy": cases})


# 11 --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_11_determinism(acceptance_config, table3, tmp_path):
    """A second table3 run on a fresh pipeline, retraining every model, must match byte for byte."""
    fresh = Pipeline(acceptance_config, tmp_path / "cache")
    again = run_experiment_suite("table3", acceptance_config, tmp_path / "out", pipeline=fresh)
    first, second = table3.csv_files[0].read_bytes(), again.csv_files[0].read_bytes()
    record(11, "table3_determinism", first == second,
           {"bytes": len(first), "identical": first == second, "retrained_models": len(fresh.trained)})
