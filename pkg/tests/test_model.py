import json

import numpy as np
import pytest

from tamformer.data import FeatureSequence, GeneratorConfig, generate_synthetic
from tamformer.errors import ContractError, ParseError, RangeError, VersionError
from tamformer.maskgen import predict_mask
from tamformer.model import (
    PROFILES,
    ModelConfig,
    anticipation_bounds,
    count_parameters,
    encode,
    forward,
    forward_arrays,
    init_params,
    load_checkpoint,
    predict,
    project,
    query_step_for_time,
    save_checkpoint,
    stack_windows,
)
from tamformer.numerics import concat_last_axis
from tamformer.training import model_grad_check


def random_inputs(config, rng, batch=()):
    return [rng.standard_normal((*batch, config.t_enc, w)) for w in config.modality_widths]


# ------------------------------------------------------------------ config

def test_query_grid_examples():
    assert ModelConfig(t_enc=135, query_stride=3).t_q == 45
    np.testing.assert_array_equal(ModelConfig(t_enc=7, query_stride=1).query_frames, np.arange(7))
    np.testing.assert_array_equal(ModelConfig(t_enc=7, query_stride=3).query_frames, [2, 5])


@pytest.mark.parametrize("kw", [
    dict(query_stride=0), dict(t_enc=2, query_stride=3), dict(d_model=6, n_heads=4),
    dict(modality_widths=(1, 2)), dict(modality_widths=(0, 1, 1, 1)),
])
def test_config_rejects(kw):
    with pytest.raises(ContractError):
        ModelConfig(**kw)


def test_config_round_trip():
    c = PROFILES["desk"]
    assert ModelConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(ContractError):
        ModelConfig.from_dict({**c.to_dict(), "bogus": 1})


@pytest.mark.parametrize("name", ["desk", "wide", "paper"])
def test_parameter_count_is_closed_form(name):
    c = PROFILES[name]
    if name == "paper":
        # the paper profile is large; check the formula on a shallower twin
        c = ModelConfig(t_enc=9, d_model=12, n_heads=6, ff_dim=20, mask_hidden=(6, 4, 2))
    assert init_params(c, 0).parameter_count() == count_parameters(c)


def test_desk_parameter_count():
    assert count_parameters(PROFILES["desk"]) == 9315


# ----------------------------------------------------------------- forward

def test_encode_width_and_degenerate_concat(tiny_config, rng):
    p = init_params(tiny_config, 0)
    x = random_inputs(tiny_config, rng)
    xs = project(p, x)
    fused = concat_last_axis(*xs)
    mask = predict_mask(p.mask_e, fused, fused, np.arange(tiny_config.t_enc))
    z = encode(p, x, mask)
    assert z.shape == (tiny_config.t_enc, tiny_config.d_cat)

    single = ModelConfig(modality_names=("only",), modality_widths=(3,), t_enc=6,
                         query_stride=2, d_model=4, n_heads=2, ff_dim=6, mask_hidden=(4,))
    p1 = init_params(single, 0)
    x1 = [rng.standard_normal((6, 3))]
    f1 = project(p1, x1)[0]
    m1 = predict_mask(p1.mask_e, f1, f1, np.arange(6))
    assert encode(p1, x1, m1).shape == (6, 4)


def test_encode_width_three_modalities(rng):
    c = ModelConfig(modality_names=("a", "b", "c"), modality_widths=(4, 6, 2), t_enc=6,
                    query_stride=2, d_model=4, n_heads=2, ff_dim=6, mask_hidden=(4,))
    out = forward_arrays(init_params(c, 0), random_inputs(c, rng))
    assert out.embeddings.shape == (3, 12)


def test_encode_causal_in_last_frame(tiny_config, rng):
    p = init_params(tiny_config, 1)
    x = random_inputs(tiny_config, rng)
    y = [a.copy() for a in x]
    for a in y:
        a[-1] = rng.standard_normal(a.shape[-1]) * 5

    def z_e(inputs):
        fused = concat_last_axis(*project(p, inputs))
        mask = predict_mask(p.mask_e, fused, fused, np.arange(tiny_config.t_enc))
        return encode(p, inputs, mask).data

    assert z_e(x)[:-1].tobytes() == z_e(y)[:-1].tobytes()


def test_wrong_modality_width_rejected(tiny_config, rng):
    p = init_params(tiny_config, 0)
    x = random_inputs(tiny_config, rng)
    x[1] = rng.standard_normal((tiny_config.t_enc, 5))
    with pytest.raises(ContractError):
        forward_arrays(p, x)
    with pytest.raises(ContractError):
        forward_arrays(p, x[:2])


def test_forward_on_sample():
    c = PROFILES["desk"]
    samples, _ = generate_synthetic(4, 0, GeneratorConfig.for_model(c))
    tl = forward(init_params(c, 0), samples[0])
    assert tl.scores.shape == (c.t_q,)
    assert np.all((tl.scores > 0) & (tl.scores < 1))
    assert np.all(np.diff(tl.query_frames) > 0)
    assert tl.query_frames[-1] == samples[0].n_frames - 1


def test_fresh_scores_near_half():
    c = PROFILES["desk"]
    samples, _ = generate_synthetic(16, 0, GeneratorConfig.for_model(c))
    for seed in range(5):
        s = predict(init_params(c, seed), samples)
        assert np.all(np.abs(s - 0.5) < 0.2)


def test_strict_causality_end_to_end(tiny_config, rng):
    p = init_params(tiny_config, 2)
    x = random_inputs(tiny_config, rng, (3,))
    base = forward_arrays(p, x).scores.data
    for q, frame in enumerate(tiny_config.query_frames):
        y = [a.copy() for a in x]
        for a in y:
            a[:, frame + 1:] = rng.standard_normal(a[:, frame + 1:].shape) * 3
        out = forward_arrays(p, y).scores.data
        assert out[:, :q + 1].tobytes() == base[:, :q + 1].tobytes()


def test_batch_matches_single(tiny_config, rng):
    p = init_params(tiny_config, 3)
    x = random_inputs(tiny_config, rng, (4,))
    batch = forward_arrays(p, x).scores.data
    for i in range(4):
        single = forward_arrays(p, [a[i] for a in x]).scores.data
        np.testing.assert_allclose(single, batch[i], rtol=1e-12, atol=1e-14)


def test_attention_collection(tiny_config, rng):
    out = forward_arrays(init_params(tiny_config, 0), random_inputs(tiny_config, rng), True)
    names = [n for n, _ in out.attention]
    assert names == ["enc.0.0", "enc.1.0", "enc.2.0", "enc.3.0", "query.0", "dec.0"]


def test_whole_model_gradient(tiny_config):
    worst, per = model_grad_check(tiny_config, batch=2)
    assert worst < 1e-4
    assert any(k.startswith("mask_e.") for k in per) and any(k.startswith("mask_d.") for k in per)


# ------------------------------------------------------ anticipation times

def make_sample(n_frames=12, event_offset=3):
    mods = [(n, np.zeros((n_frames, w))) for n, w in zip(("context", "bbox", "pose", "speed"), (4, 2, 3, 1))]
    return FeatureSequence("s", mods, 1, n_frames - 1 + event_offset, 0)


def test_anticipation_bounds_and_mapping():
    c = PROFILES["desk"]
    s = make_sample()
    lo, hi = anticipation_bounds(s, c)
    assert (lo, hi) == pytest.approx((0.1, 0.4))
    assert query_step_for_time(s, c, 0.4) == 0
    assert query_step_for_time(s, c, 0.1) == 3
    assert query_step_for_time(s, c, 0.22) == 2


def test_anticipation_tie_goes_earlier():
    c = PROFILES["desk"]
    # 0.15 s lies halfway between steps 2 (0.2 s) and 3 (0.1 s)
    assert query_step_for_time(make_sample(), c, 0.15) == 2


def test_anticipation_out_of_range():
    c = PROFILES["desk"]
    with pytest.raises(RangeError) as info:
        query_step_for_time(make_sample(), c, 10.0)
    assert "0.1" in str(info.value) and "0.4" in str(info.value)


# ------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path, tiny_config, rng):
    p = init_params(tiny_config, 4)
    for t in p.tensors():
        t.data += rng.standard_normal(t.shape) * 1e-3
    path = tmp_path / "ck.json"
    save_checkpoint(path, p, {"note": 1})
    q = load_checkpoint(path)
    for (na, a), (nb, b) in zip(p.named_tensors(), q.named_tensors()):
        assert na == nb and a.data.tobytes() == b.data.tobytes()
    x = random_inputs(tiny_config, rng, (2,))
    assert forward_arrays(p, x).scores.data.tobytes() == forward_arrays(q, x).scores.data.tobytes()
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and doc["extra"] == {"note": 1}


def test_checkpoint_errors(tmp_path, tiny_config):
    path = tmp_path / "ck.json"
    save_checkpoint(path, init_params(tiny_config, 0))
    doc = json.loads(path.read_text())
    bad = tmp_path / "bad.json"
    bad.write_text(path.read_text()[:200])
    with pytest.raises(ParseError):
        load_checkpoint(bad)
    bad.write_text(json.dumps({**doc, "format_version": 99}))
    with pytest.raises(VersionError):
        load_checkpoint(bad)
    bad.write_text(json.dumps({**doc, "tensors": doc["tensors"][1:]}))
    with pytest.raises(ParseError):
        load_checkpoint(bad)


def test_stack_windows_uses_last_frames():
    c = PROFILES["desk"]
    s = make_sample(n_frames=15)
    s.modalities[0][1][...] = np.arange(15)[:, None]
    w = stack_windows([s], c)
    assert w[0].shape == (1, 12, 4)
    assert w[0][0, 0, 0] == 3 and w[0][0, -1, 0] == 14
