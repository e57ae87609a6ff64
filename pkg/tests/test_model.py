import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melodyssl import audio, model
from oracles import numeric_grads, relative_error

TINY_VARIANTS = [
    dict(cell="gru", residual=True, bidirectional=True),
    dict(cell="lstm", residual=False, bidirectional=True),
    dict(cell="lstm", residual=True, bidirectional=False),
]


def _tiny_batch(seed, batch=2, soft=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, 31, 12))
    if soft:
        y = rng.dirichlet(np.ones(442) * 0.1, size=(batch, 31))
    else:
        y = rng.integers(0, 442, (batch, 31))
    return x, y


@pytest.mark.parametrize("variant", TINY_VARIANTS, ids=lambda v: "-".join(map(str, v.values())))
@pytest.mark.parametrize("soft", [False, True], ids=["hard", "soft"])
def test_gradients_match_finite_differences(variant, soft):
    params = model.init_params(model.tiny_config(**variant), seed=3, dtype=np.float64)
    # non-zero biases so every bias path is exercised
    rng = np.random.default_rng(4)
    for k, w in params.weights.items():
        if w.ndim == 1:
            w += rng.normal(0, 0.1, w.shape)
    x, y = _tiny_batch(5, soft=soft)
    _, grads = model.loss_and_grads(params, x, y)
    num = numeric_grads(lambda: model.loss_and_grads(params, x, y)[0], params.weights)
    for name in params.weights:
        assert relative_error(grads[name], num[name]) <= 1e-4, name


def test_init_deterministic_and_bounded():
    cfg = model.desk_config()
    a, b = model.init_params(cfg, 1), model.init_params(cfg, 1)
    c = model.init_params(cfg, 2)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    assert any(not np.array_equal(a.weights[k], c.weights[k]) for k in a.weights)
    for name, shape in model.param_shapes(cfg).items():
        w = a.weights[name]
        assert np.all(np.isfinite(w))
        if len(shape) > 1:
            assert np.max(np.abs(w)) <= math.sqrt(6.0 / np.prod(shape[:-1]))


def test_config_invariants():
    with pytest.raises(ValueError):
        model.ModelConfig(output_classes=100)
    with pytest.raises(ValueError):
        model.ModelConfig(context_frames=15)
    assert model.desk_config().conv_blocks[1].channels == 16


def test_forward_rows_are_distributions():
    params = model.init_params(model.desk_config(), 0)
    x = np.random.default_rng(0).standard_normal((3, 31, 513)).astype(np.float32)
    p = model.forward(params, x)
    assert p.shape == (3, 31, 442)
    assert np.all(p >= 0) and np.allclose(p.sum(-1), 1.0, atol=1e-6)
    dup = model.forward(params, np.stack([x[0], x[0]]))
    assert np.array_equal(dup[0], dup[1])
    with pytest.raises(model.ShapeError):
        model.forward(params, x[:, :30])


def test_zero_output_layer_gives_uniform():
    params = model.init_params(model.desk_config(), 0)
    params.weights["out.w"][:] = 0
    p = model.forward(params, np.ones((1, 31, 513), np.float32))
    assert np.allclose(p, 1 / 442, atol=1e-9)


def test_cross_entropy_examples():
    onehot = np.eye(442)[[5, 9]]
    assert model.cross_entropy(onehot, onehot) <= 1e-9
    uniform = np.full((2, 442), 1 / 442)
    assert model.cross_entropy(np.array([3, 7]), uniform) == pytest.approx(math.log(442), abs=1e-9)
    assert model.cross_entropy(uniform, uniform) == pytest.approx(math.log(442), abs=1e-9)


def test_unreachable_weight_has_zero_gradient():
    # a zero output matrix cuts every path from earlier layers to the loss
    params = model.init_params(model.tiny_config(), 0, dtype=np.float64)
    params.weights["out.w"][:] = 0.0
    x, y = _tiny_batch(1)
    _, grads = model.loss_and_grads(params, x, y)
    assert grads["out.w"].any() and grads["out.b"].any()
    for name, g in grads.items():
        if not name.startswith("out."):
            assert not g.any(), name


def test_adam_behaviour():
    params = model.init_params(model.tiny_config(), 0, dtype=np.float64)
    before = {k: w.copy() for k, w in params.weights.items()}
    state = model.OptimizerState()
    assert state.lr == 0.003
    grads = {k: np.zeros_like(w) for k, w in params.weights.items()}
    grads["out.b"][:] = np.linspace(-1, 1, 442)
    grads["out.b"][221] = 0.5
    model.adam_step(params, grads, state)
    delta = params.weights["out.b"] - before["out.b"]
    nz = grads["out.b"] != 0
    assert np.all(np.sign(delta[nz]) == -np.sign(grads["out.b"][nz]))
    assert np.array_equal(params.weights["out.w"], before["out.w"])
    assert state.step == 1
    zero_lr = model.OptimizerState(lr=0.0)
    snap = {k: w.copy() for k, w in params.weights.items()}
    model.adam_step(params, grads, zero_lr)
    assert all(np.array_equal(snap[k], params.weights[k]) for k in snap)


def test_adam_skips_non_finite():
    params = model.init_params(model.tiny_config(), 0, dtype=np.float64)
    snap = {k: w.copy() for k, w in params.weights.items()}
    grads = {k: np.zeros_like(w) for k, w in params.weights.items()}
    grads["out.b"][0] = np.nan
    state = model.OptimizerState()
    model.adam_step(params, grads, state)
    assert state.flagged_batches == 1 and state.step == 0
    assert all(np.array_equal(snap[k], params.weights[k]) for k in snap)


def test_plateau_schedule():
    s = model.OptimizerState()
    for acc in (0.5, 0.49, 0.48):
        model.plateau_update(s, acc)
    assert s.lr == 0.003
    model.plateau_update(s, 0.47)
    assert s.lr == pytest.approx(0.003 * 0.7)
    s = model.OptimizerState()
    for acc in np.linspace(0.1, 0.9, 10):
        model.plateau_update(s, acc)
    assert s.lr == 0.003
    s = model.OptimizerState()
    for acc in (0.5, 0.5, 0.5, 0.6):
        model.plateau_update(s, acc)
    assert s.lr == 0.003 and s.plateau_counter == 0


def test_checkpoint_roundtrip(tmp_path):
    norm = (np.linspace(-3, 1, 513).astype(np.float32), np.linspace(1, 2, 513).astype(np.float32))
    params = model.init_params(model.desk_config(), 7, norm=norm)
    path = tmp_path / "m.ckpt"
    model.save_checkpoint(path, params)
    back = model.load_checkpoint(path)
    x = np.random.default_rng(1).standard_normal((2, 31, 513)).astype(np.float32)
    assert np.array_equal(model.forward(params, x), model.forward(back, x))
    assert np.array_equal(back.norm_mean, norm[0])
    data = bytearray(path.read_bytes())
    data[8] = 99
    with pytest.raises(model.CheckpointError):
        model.checkpoint_from_bytes(bytes(data))
    with pytest.raises(model.CheckpointError):
        model.checkpoint_from_bytes(b"garbage!" + bytes(20))


def test_checkpoint_full_preset_roundtrip():
    params = model.init_params(model.full_config(), 1)
    back = model.checkpoint_from_bytes(model.checkpoint_bytes(params))
    assert back.config == params.config
    assert all(np.array_equal(back.weights[k], params.weights[k]) for k in params.weights)


@given(st.integers(1, 200))
@settings(max_examples=15, deadline=None)
def test_predict_contour_length(n_frames):
    params = model.init_params(model.desk_config(), 0)
    n = n_frames * 80 - 17
    clip = audio.AudioClip(np.random.default_rng(n).uniform(-0.3, 0.3, n), 8000)
    f0 = model.predict_contour(params, clip)
    assert f0.size == -(-n // 80)
    assert np.array_equal(f0, model.predict_contour(params, clip))


def test_predict_probs_tiles_from_frame_zero():
    params = model.init_params(model.desk_config(), 0)
    values = np.random.default_rng(3).standard_normal((70, 513)).astype(np.float32)
    probs = model.predict_probs(params, values)
    assert probs.shape == (70, 442)
    assert np.allclose(probs[:31], model.forward(params, values[None, :31])[0], atol=1e-6)
    assert np.allclose(probs[31:62], model.forward(params, values[None, 31:62])[0], atol=1e-6)


def test_loss_halves_in_200_steps():
    rng = np.random.default_rng(0)
    params = model.init_params(model.desk_config(), 0)
    x = rng.standard_normal((32, 31, 513)).astype(np.float32)
    y = rng.integers(0, 442, (32, 31))
    state = model.OptimizerState()
    first, _ = model.loss_and_grads(params, x, y)
    for _ in range(200):
        loss, grads = model.loss_and_grads(params, x, y)
        model.adam_step(params, grads, state)
    final, _ = model.loss_and_grads(params, x, y)
    assert final <= 0.5 * first
