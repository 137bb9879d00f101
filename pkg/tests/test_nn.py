import numpy as np
import pytest

from potflow import graph as gr
from potflow import nn


def _graph_forward(spec, store, x):
    g = gr.Graph()
    tids = nn.register_params(g, store)
    xids = [g.var() for _ in range(spec.in_dim)]
    outs = nn.forward(spec, tids, g, xids)
    binds = nn.param_bindings(tids, store)
    binds.update({xid: v for xid, v in zip(xids, x)})
    return g.evaluate(outs, binds)


def test_forward_zero_parameters_gives_zero():
    spec = nn.MlpSpec(2, 2, 4, 1)
    store = nn.ParamStore(spec)
    assert _graph_forward(spec, store, [0.7, -1.2]) == [0.0]


def test_forward_ones_network_at_zero_input():
    spec = nn.MlpSpec(1, 1, 1, 1)
    store = nn.ParamStore(spec)
    store.weight(0)[:] = 1.0
    store.weight(1)[:] = 1.0
    assert _graph_forward(spec, store, [0.0]) == [0.0]


def test_forward_affine_layer():
    # zero hidden layers: a pure affine map, w=2, b=1, input 3 -> 7
    spec = nn.MlpSpec(1, 0, 1, 1)
    store = nn.ParamStore(spec)
    store.weight(0)[:] = 2.0
    store.bias(0)[:] = 1.0
    assert _graph_forward(spec, store, [3.0]) == [7.0]


def test_forward_dimension_mismatch():
    spec = nn.MlpSpec(3, 1, 4, 1)
    store = nn.ParamStore(spec)
    g = gr.Graph()
    tids = nn.register_params(g, store)
    with pytest.raises(ValueError, match="expected 3 inputs"):
        nn.forward(spec, tids, g, [g.var(), g.var()])


def test_forward_differentiable_in_inputs_and_parameters():
    spec = nn.MlpSpec(2, 2, 3, 1)
    store = nn.init(spec, seed=3)
    g = gr.Graph()
    tids = nn.register_params(g, store)
    xids = [g.var(), g.var()]
    (out,) = nn.forward(spec, tids, g, xids)
    gx = g.grad(out, xids)
    gt = g.grad(out, tids[:4])
    binds = nn.param_bindings(tids, store)
    binds.update({xids[0]: 0.3, xids[1]: -0.9})
    h = 1e-6
    for k, xid in enumerate(xids):
        up = dict(binds); up[xid] = binds[xid] + h
        dn = dict(binds); dn[xid] = binds[xid] - h
        fd = (g.evaluate(out, up) - g.evaluate(out, dn)) / (2 * h)
        assert g.evaluate(gx[k], binds) == pytest.approx(fd, rel=1e-4)


def test_init_deterministic_and_seed_sensitive():
    spec = nn.MlpSpec(3, 2, 8, 1)
    a = nn.init(spec, seed=11)
    b = nn.init(spec, seed=11)
    c = nn.init(spec, seed=12)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)


def test_init_glorot_statistics():
    # weight mean over many draws stays within 3 sigma / sqrt(count)
    spec = nn.MlpSpec(10, 1, 50, 1)
    draws = np.concatenate([nn.init(spec, seed=s).weight(0).ravel()
                            for s in range(20)])
    bound = np.sqrt(6.0 / 60.0)
    sigma = bound / np.sqrt(3.0)
    assert abs(draws.mean()) < 3.0 * sigma / np.sqrt(draws.size)
    assert np.all(np.abs(draws) <= bound)
    assert draws.std() == pytest.approx(sigma, rel=0.05)


def test_init_biases_zero():
    spec = nn.MlpSpec(3, 2, 8, 2)
    store = nn.init(spec, seed=0)
    for l in range(store.n_layers):
        assert np.all(store.bias(l) == 0.0)


def test_adam_zero_gradient_is_identity_on_theta():
    spec = nn.MlpSpec(2, 1, 4, 1)
    store = nn.init(spec, seed=1)
    before = store.theta.copy()
    state = nn.AdamState.fresh(store.theta.size, lr=0.1)
    nn.adam_step(store, np.zeros_like(before), state)
    assert np.array_equal(store.theta, before)
    assert state.t == 1


def test_adam_first_step_moves_by_lr_sign():
    # bias-corrected mhat/sqrt(vhat) at t=1 equals sign(g)
    spec = nn.MlpSpec(2, 1, 4, 1)
    store = nn.ParamStore(spec)
    state = nn.AdamState.fresh(store.theta.size, lr=1e-3)
    g = np.linspace(-2, 2, store.theta.size)
    g[g == 0] = 0.5
    nn.adam_step(store, g, state)
    expected = -1e-3 * np.sign(g) * (np.abs(g) / (np.abs(g) + state.eps))
    assert np.allclose(store.theta, expected, atol=1e-18)


def test_adam_two_steps_reduce_convex_quadratic():
    # f(theta) = 0.5 |theta - target|^2, oracle update by hand
    spec = nn.MlpSpec(1, 1, 2, 1)
    store = nn.ParamStore(spec)
    target = np.full(store.theta.size, 0.7)
    state = nn.AdamState.fresh(store.theta.size, lr=0.05, beta1=0.5, beta2=0.9)
    f0 = 0.5 * np.sum((store.theta - target) ** 2)
    for _ in range(2):
        nn.adam_step(store, store.theta - target, state)
    assert 0.5 * np.sum((store.theta - target) ** 2) < f0


def test_adam_rejects_non_finite_gradient():
    spec = nn.MlpSpec(1, 1, 2, 1)
    store = nn.ParamStore(spec)
    state = nn.AdamState.fresh(store.theta.size)
    bad = np.zeros(store.theta.size)
    bad[3] = np.nan
    with pytest.raises(nn.OptimizerError, match="step 1"):
        nn.adam_step(store, bad, state)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    spec = nn.MlpSpec(3, 2, 6, 1)
    store = nn.init(spec, seed=5)
    state = nn.AdamState.fresh(store.theta.size, lr=1e-4, beta1=0.9)
    state.m[:] = np.random.default_rng(0).normal(size=state.m.size)
    state.v[:] = np.abs(np.random.default_rng(1).normal(size=state.v.size))
    state.t = 17
    path = tmp_path / "ckpt.bin"
    nn.save_checkpoint(store, state, path)
    store2, state2 = nn.load_checkpoint(path)
    assert np.array_equal(store.theta, store2.theta)
    assert np.array_equal(state.m, state2.m)
    assert np.array_equal(state.v, state2.v)
    assert (state2.t, state2.lr, state2.beta1) == (17, 1e-4, 0.9)
    assert store2.spec == spec


def test_checkpoint_truncated_file(tmp_path):
    spec = nn.MlpSpec(2, 1, 4, 1)
    store = nn.init(spec, seed=0)
    state = nn.AdamState.fresh(store.theta.size)
    path = tmp_path / "ckpt.bin"
    nn.save_checkpoint(store, state, path)
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(nn.CheckpointError, match="truncated"):
        nn.load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "ckpt.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(nn.CheckpointError, match="magic"):
        nn.load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    spec = nn.MlpSpec(2, 1, 4, 1)
    store = nn.init(spec, seed=0)
    state = nn.AdamState.fresh(store.theta.size)
    path = tmp_path / "ckpt.bin"
    nn.save_checkpoint(store, state, path)
    data = bytearray(path.read_bytes())
    data[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(nn.CheckpointError, match="version"):
        nn.load_checkpoint(path)


def test_param_store_layout_bijection():
    spec = nn.MlpSpec(3, 2, 4, 2)
    store = nn.ParamStore(spec)
    assert store.theta.size == spec.n_params
    # writing through every view touches every flat slot exactly once
    marker = 1.0
    for l in range(store.n_layers):
        store.weight(l)[:] = marker
        store.bias(l)[:] = marker
    assert np.all(store.theta == marker)
