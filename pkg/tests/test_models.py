"""Desk-scale network assembly: parameter naming/shapes, tape forward
cross-checked against the single-layer operator module, hand-counted MAC
totals, matched-budget twin construction, freeze consistency, and
checkpoint round-trips."""

import numpy as np
import pytest

from tvconv import models, operator
from tvconv.models import LayoutModel, ModelSpec, StageSpec
from tvconv.operator import StaleCacheError


def dw_spec(**kw) -> ModelSpec:
    return models.default_model_spec("depthwise", **kw)


def tv_spec(**kw) -> ModelSpec:
    return models.default_model_spec("tvconv", **kw)


def test_default_spec_shape():
    spec = dw_spec()
    assert spec.in_channels == 1 and spec.h == 32 and spec.classes == 8
    assert all(st.operator == "depthwise" for st in spec.stages)
    assert all(st.operator == "tvconv" for st in tv_spec().stages)


def test_param_names_and_shapes_depthwise():
    m = LayoutModel.create(dw_spec(), seed=0)
    spec = m.spec
    names = list(m.params)
    assert names == [
        "stem.w", "stem.ln.g", "stem.ln.b",
        "s0.t.w", "s0.t.ln.g", "s0.t.ln.b",
        "s0.b0.dw.w", "s0.b0.sp.ln.g", "s0.b0.sp.ln.b",
        "s0.b0.pw.w", "s0.b0.pw.ln.g", "s0.b0.pw.ln.b",
        "s1.t.w", "s1.t.ln.g", "s1.t.ln.b",
        "s1.b0.dw.w", "s1.b0.sp.ln.g", "s1.b0.sp.ln.b",
        "s1.b0.pw.w", "s1.b0.pw.ln.g", "s1.b0.pw.ln.b",
        "head.w", "head.b",
    ]
    assert m.params["stem.ln.g"].shape == (spec.stem_channels,)
    assert np.all(m.params["s0.b0.sp.ln.g"] == 1.0)
    assert np.all(m.params["s0.b0.sp.ln.b"] == 0.0)
    # residual branches start near identity: projection norm gain is small
    assert np.all(m.params["s0.b0.pw.ln.g"] == models.BRANCH_GAIN)
    assert np.all(m.params["s1.b0.pw.ln.g"] == models.BRANCH_GAIN)
    c0 = spec.stages[0].channels
    c1 = spec.stages[1].channels
    assert m.params["stem.w"].shape == (spec.stem_channels, 1, 3, 3)
    assert m.params["s0.t.w"].shape == (c0, spec.stem_channels, 1, 1)
    assert m.params["s0.b0.dw.w"].shape == (c0, 3, 3)
    assert m.params["s1.b0.pw.w"].shape == (c1, c1, 1, 1)
    assert m.params["head.w"].shape == (c1, spec.classes)
    assert m.params["head.b"].shape == (spec.classes,)


def test_param_names_tvconv():
    m = LayoutModel.create(tv_spec(), seed=0)
    spec = m.spec
    prefix = "s0.b0.tv"
    assert f"{prefix}.aff" in m.params
    assert f"{prefix}.h0.w" in m.params
    assert f"{prefix}.h0.gamma" in m.params
    assert f"{prefix}.out.w" in m.params
    # stage 0 runs at 16x16 after its stride-2 entry
    assert m.params[f"{prefix}.aff"].shape == (spec.affinity_channels, 16, 16)
    assert np.all(m.params[f"{prefix}.aff"] == 1.0)


def test_create_deterministic():
    a = LayoutModel.create(tv_spec(), seed=5)
    b = LayoutModel.create(tv_spec(), seed=5)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    c = LayoutModel.create(tv_spec(), seed=6)
    assert not np.array_equal(a.params["stem.w"], c.params["stem.w"])


def test_forward_shapes_and_finite():
    m = LayoutModel.create(tv_spec(), seed=1)
    x = np.random.default_rng(0).normal(size=(4, 1, 32, 32))
    logits = m.logits_array(x)
    assert logits.shape == (4, 8)
    assert np.all(np.isfinite(logits))


def test_forward_rejects_wrong_shape():
    m = LayoutModel.create(dw_spec(), seed=1)
    with pytest.raises(ValueError, match="1, 32, 32"):
        m.logits_array(np.zeros((2, 1, 16, 16)))


def test_tape_generator_matches_operator_module():
    # the batched tape must produce bit-for-bit the field that the
    # single-layer module generates from the same parameter arrays
    m = LayoutModel.create(tv_spec(), seed=3)
    fields = m.weight_fields()
    for name, layer in m.tv_layers.items():
        assert np.array_equal(fields[name], layer.weights().values)


def test_affinity_stats_init():
    rng = np.random.default_rng(4)
    imgs = rng.uniform(size=(10, 1, 32, 32))
    m = LayoutModel.create(tv_spec(affinity_init="stats"), seed=0,
                           stats_images=imgs)
    expect = operator.init_affinity_from_stats(imgs, m.spec.affinity_channels,
                                               16, 16)
    assert np.array_equal(m.params["s0.b0.tv.aff"], expect.values)
    with pytest.raises(ValueError, match="stats"):
        LayoutModel.create(tv_spec(affinity_init="stats"), seed=0)


# --- MAC accounting ----------------------------------------------------------

def test_model_macs_frozen():
    total, one_time = models.model_macs(dw_spec())
    # stem 73728; s0: pw 16384 + dw 18432 + pw 16384;
    # s1: pw 8192 + dw 9216 + pw 16384; head linear 128
    assert total == 73_728 + 16_384 + 18_432 + 16_384 + 8192 + 9216 + 16_384 + 128
    assert one_time == 0


def test_model_macs_parity():
    td, od = models.model_macs(dw_spec())
    tt, ot = models.model_macs(tv_spec())
    assert td == tt
    assert od == 0 and ot > 0


def test_matched_twin_is_exact_at_parity():
    twin, mult = models.matched_depthwise_twin(tv_spec())
    assert mult == 1.0
    assert all(st.operator == "depthwise" for st in twin.stages)
    assert models.model_macs(twin)[0] == models.model_macs(tv_spec())[0]


def test_matched_twin_search_really_searches():
    # handicapping the baseline forces the multiplier above 1
    slim = models.default_model_spec("tvconv")
    handicapped = models.scale_model_spec(
        models.to_operator(slim, "depthwise"), 0.5)
    target, _ = models.model_macs(slim)
    twin, mult = models.matched_depthwise_twin(slim, baseline=handicapped)
    assert mult > 1.0
    got, _ = models.model_macs(twin)
    assert abs(got - target) <= 0.02 * target


# --- freeze and checkpoints --------------------------------------------------

def test_freeze_preserves_logits():
    m = LayoutModel.create(tv_spec(), seed=2)
    x = np.random.default_rng(2).normal(size=(3, 1, 32, 32))
    before = m.logits_array(x)
    m.freeze()
    after = m.predict(x)
    assert np.array_equal(before, after)


def test_freeze_detects_mutation():
    m = LayoutModel.create(tv_spec(), seed=2)
    x = np.zeros((1, 1, 32, 32))
    m.freeze()
    m.params["s0.b0.tv.aff"][0, 0, 0] += 1.0
    with pytest.raises(StaleCacheError):
        m.predict(x)


def test_predict_unfrozen_uses_tape_path():
    m = LayoutModel.create(dw_spec(), seed=2)
    x = np.random.default_rng(3).normal(size=(2, 1, 32, 32))
    assert np.array_equal(m.predict(x), m.logits_array(x))


def test_checkpoint_round_trip(tmp_path):
    m = LayoutModel.create(tv_spec(), seed=9)
    x = np.random.default_rng(5).normal(size=(2, 1, 32, 32))
    ref = m.logits_array(x)
    out = tmp_path / "ckpt"
    models.save_model(m, out)
    assert (out / "model.txt").exists()
    back = models.load_model(out)
    assert back.spec == m.spec
    for name in m.params:
        assert np.array_equal(back.params[name], m.params[name])
    assert np.array_equal(back.logits_array(x), ref)
    # rewriting produces identical bytes
    first = {p.name: p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    models.save_model(m, out)
    second = {p.name: p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    assert first == second


def test_checkpoint_tv_layers_rebound(tmp_path):
    m = LayoutModel.create(tv_spec(), seed=9)
    models.save_model(m, tmp_path / "c")
    back = models.load_model(tmp_path / "c")
    layer = back.tv_layers["s0.b0.tv"]
    # the rebuilt layer must alias the loaded arrays, not copy them
    assert layer.affinity is back.params["s0.b0.tv.aff"]
    assert layer.gen.w_out is back.params["s0.b0.tv.out.w"]


def test_mixed_stage_operators():
    spec = ModelSpec(stages=(StageSpec(8, 1, "tvconv", 2),
                             StageSpec(16, 1, "depthwise", 2)))
    m = LayoutModel.create(spec, seed=0)
    assert "s0.b0.tv.aff" in m.params
    assert "s1.b0.dw.w" in m.params
    x = np.random.default_rng(6).normal(size=(2, 1, 32, 32))
    assert m.logits_array(x).shape == (2, 8)
