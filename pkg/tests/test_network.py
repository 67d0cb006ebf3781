import numpy as np
import pytest
import torch

from darcyop.errors import InvalidArgument, TrainingDiverged
from darcyop.network import (
    Architecture, Normalization, OperatorNet, TrainConfig, TrainingSet, adam_step, gradients,
    operator_loss, predict, time_embedding, train,
)

DT = torch.float64


def tiny(kind="aronet", out=1, q=4, cin=1, seed=0):
    arch = Architecture(kind, cin, out, 8, 8, base_width=4, levels=2, branch_channels=q,
                        time_dim=8, trunk_hidden=8)
    return OperatorNet(arch, seed=seed)


def batch(n=3, cin=1, out=1, seed=0):
    rng = np.random.default_rng(seed)
    u = torch.as_tensor(rng.standard_normal((n, cin, 8, 8)), dtype=DT)
    y = torch.as_tensor(rng.uniform(0, 1, (n, out, 8, 8)), dtype=DT)
    return u, list(rng.integers(0, 10, n)), y


def test_time_embedding_examples():
    np.testing.assert_array_equal(time_embedding(0, 4), [0, 1, 0, 1])
    np.testing.assert_allclose(time_embedding(1, 2), [np.sin(1), np.cos(1)], rtol=1e-15)
    # second pair uses frequency 10000^(-2/4) = 1/100
    np.testing.assert_allclose(time_embedding(7, 4)[2:], [np.sin(0.07), np.cos(0.07)], rtol=1e-14)


@pytest.mark.parametrize("t", [0, 1, 3.5, 120, 1e6])
def test_time_embedding_bounded(t):
    te = time_embedding(t, 64)
    assert te.shape == (64,) and np.all(np.abs(te) <= 1)


def test_time_embedding_rejects_odd_dim():
    with pytest.raises(InvalidArgument):
        time_embedding(1, 3)


def test_arunet_rejects_odd_area():
    with pytest.raises(InvalidArgument):
        Architecture("arunet", 1, 1, 4, 4, levels=0, base_width=2).__class__(
            "arunet", 1, 1, 3, 5, levels=0, base_width=2)


@pytest.mark.parametrize("kind", ["aronet", "arunet"])
@pytest.mark.parametrize("cin,out", [(1, 1), (4, 2)])
def test_parameter_count_matches_descriptor(kind, cin, out):
    for arch in [Architecture(kind, cin, out, 16, 16),
                 Architecture(kind, cin, out, 8, 8, base_width=4, levels=1, branch_channels=4,
                              time_dim=8, trunk_hidden=6)]:
        net = OperatorNet(arch)
        assert sum(p.numel() for p in net.parameters()) == arch.parameter_count()


def test_parameter_count_default_aronet_by_hand():
    # w = 16, 32, 64; q = 16; d_te = h = 64; one input, one output channel
    enc = (16 * 9 + 16) + 2 * (16 * 16 * 9 + 16)
    enc += (32 * 16 * 9 + 32) + 2 * (32 * 32 * 9 + 32)
    enc += (64 * 32 * 9 + 64) + 2 * (64 * 64 * 9 + 64)
    dec = 0
    for hi, lo in [(64, 32), (32, 16)]:
        dec += (lo * hi * 9 + lo) + 2 * (lo + 1) + (2 * lo * lo + lo) + 2 * (lo * lo * 9 + lo)
    proj = 16 * 16 + 16
    head = 16 * 9 + 16 + 16 + 1
    trunk = 64 * 64 + 64 + 64 * 16 + 16
    assert Architecture("aronet", 1, 1, 16, 16).parameter_count() == enc + dec + proj + head + trunk


@pytest.mark.parametrize("kind", ["aronet", "arunet"])
def test_shapes_and_sigmoid_range(kind):
    net = tiny(kind, out=2)
    u, t, _ = batch()
    y = net(u, t)
    assert y.shape == (3, 2, 8, 8)
    assert torch.all(y > 0) and torch.all(y < 1)


def test_shape_mismatch_rejected():
    net = tiny()
    with pytest.raises(InvalidArgument):
        net(torch.zeros(2, 2, 8, 8, dtype=DT), [0, 1])
    with pytest.raises(InvalidArgument):
        net(torch.zeros(2, 1, 8, 8, dtype=DT), [0])


def test_trunk_annihilation():
    net = tiny()
    with torch.no_grad():
        for p in net.trunk.parameters():
            p.zero_()
    u, t, _ = batch(4)
    y = net(u, t)
    # head of an all-zero tensor: sigmoid(W relu(b_dw) + b_pw), constant in space and batch
    hidden = torch.relu(net.head.depthwise.bias)
    expected = torch.sigmoid(net.head.pointwise.weight[0, :, 0, 0] @ hidden
                             + net.head.pointwise.bias[0])
    assert torch.allclose(y, expected.expand_as(y), rtol=0, atol=1e-15)
    u2 = torch.randn_like(u)
    assert torch.equal(net(u2, t), y)


def test_combination_is_bilinear():
    net = tiny()
    u, t, _ = batch(2)
    b = net.branch(u)
    w = net.trunk_weights(t)
    w2 = w.clone()
    w2[:, 1] *= 2
    c, c2 = net.combine(b, w), net.combine(b, w2)
    assert torch.equal(c2[:, 1], 2 * c[:, 1])
    assert torch.equal(c2[:, [0, 2, 3]], c[:, [0, 2, 3]])


def test_arunet_time_only_changes_embedding_channel():
    net = tiny("arunet")
    u, _, _ = batch(1)
    captured = []
    hook = net.backbone.stem.register_forward_hook(lambda m, inp, out: captured.append(inp[0]))
    net(u, [0])
    net(u, [5])
    hook.remove()
    a, b = captured
    assert torch.equal(a[:, :1], b[:, :1])
    assert not torch.equal(a[:, 1:], b[:, 1:])


def test_arunet_zero_backbone_gives_constant_output():
    net = tiny("arunet")
    with torch.no_grad():
        for p in net.backbone.parameters():
            p.zero_()
    u, t, _ = batch(3)
    y = net(u, t)
    assert torch.all(y == y.flatten()[0])


def test_loss_examples():
    assert operator_loss(torch.ones(2, 3), torch.ones(2, 3)) == 0
    assert operator_loss(torch.tensor([[2.0]]), torch.tensor([[0.0]])) == 4
    rng = np.random.default_rng(0)
    a, b = torch.as_tensor(rng.random((5, 2, 4))), torch.as_tensor(rng.random((5, 2, 4)))
    perm = torch.as_tensor(rng.permutation(5))
    assert torch.isclose(operator_loss(a, b), operator_loss(a[perm], b[perm]), rtol=1e-15)


def test_gradient_matches_finite_differences():
    net = tiny(q=4)
    u, t, y = batch(2)
    g = gradients(net, (u, t, y)).numpy()
    theta = net.parameter_vector()
    rng = np.random.default_rng(1)
    coords = rng.choice(theta.numel(), size=50, replace=False)
    h = 1e-5

    def loss_at(vec):
        net.load_parameter_vector(vec)
        with torch.no_grad():
            return float(operator_loss(net(u, t), y))

    fd = np.empty(len(coords))
    for k, c in enumerate(coords):
        plus, minus = theta.clone(), theta.clone()
        plus[c] += h
        minus[c] -= h
        fd[k] = (loss_at(plus) - loss_at(minus)) / (2 * h)
    # rounding noise of the central difference is ~eps * loss / h ~ 1e-12
    assert np.linalg.norm(fd - g[coords]) / np.linalg.norm(fd) < 1e-4
    np.testing.assert_allclose(g[coords], fd, rtol=1e-4, atol=1e-10)
    net.load_parameter_vector(theta)


def test_zero_residual_gives_zero_gradient():
    net = tiny()
    u, t, _ = batch(2)
    with torch.no_grad():
        y = net(u, t)
    assert torch.count_nonzero(gradients(net, (u, t, y))) == 0


def test_frozen_group_has_zero_gradient():
    net = tiny()
    g = gradients(net, batch(2), frozen=("trunk",))
    offset = 0
    for name, p in net.named_parameters():
        block = g[offset:offset + p.numel()]
        if name.startswith("trunk"):
            assert torch.count_nonzero(block) == 0
        offset += p.numel()
    assert torch.count_nonzero(g) > 0


def test_adam_zero_gradient_keeps_theta():
    theta = torch.tensor([1.0, -2.0])
    zero = torch.zeros(2)
    new, m, v = adam_step(theta, zero, zero, zero, 0.1, 1)
    assert torch.equal(new, theta)


def test_adam_first_step_is_lr_per_coordinate():
    theta = torch.zeros(4, dtype=DT)
    g = torch.tensor([3.0, -0.5, 1e-3, 20.0], dtype=DT)
    zero = torch.zeros(4, dtype=DT)
    new, _, _ = adam_step(theta, g, zero, zero, 5e-3, 1)
    # m_hat = g, v_hat = g^2 after bias correction
    expected = -5e-3 * g / (g.abs() + 1e-8)
    assert torch.allclose(new, expected, rtol=1e-14)
    assert torch.allclose(new.abs(), torch.full((4,), 5e-3, dtype=DT), rtol=1e-5)


def test_normalization_round_trip_and_endpoints():
    rng = np.random.default_rng(0)
    u = rng.normal(3.0, 2.0, (6, 2, 4, 4))
    y = rng.uniform(1e7, 3e7, (6, 5, 2, 4, 4))
    y[..., 1, :, :] = 0.7  # constant second channel
    stats = Normalization.fit(u, y)
    un = stats.normalize_inputs(u)
    np.testing.assert_allclose(un.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(un.std(axis=(0, 2, 3)), 1, rtol=1e-12)
    yn = stats.normalize_outputs(y)
    assert yn[..., 0, :, :].min() == 0 and yn[..., 0, :, :].max() == 1
    assert np.all(yn[..., 1, :, :] == 0)
    z = rng.uniform(0, 1, (3, 2, 4, 4))
    np.testing.assert_allclose(stats.normalize_outputs(stats.denormalize_outputs(z))[:, 0], z[:, 0],
                               atol=1e-14)
    back = Normalization.from_dict(stats.to_dict())
    assert np.array_equal(back.out_max, stats.out_max)


def test_constant_input_channel_uses_std_floor():
    u = np.ones((3, 1, 2, 2))
    stats = Normalization.fit(u, np.zeros((3, 1, 1, 2, 2)))
    assert stats.in_std[0] == 1e-12
    assert np.all(stats.normalize_inputs(u) == 0)


def small_set(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return TrainingSet(rng.standard_normal((n, 1, 8, 8)), rng.uniform(0, 1, (n, 3, 1, 8, 8)),
                       np.array([1, 2, 3]))


def test_train_history_length_and_determinism():
    cfg = TrainConfig(epochs=2, iterations=5, batch_size=4, seed=3)
    a, ha = train(tiny(seed=1), small_set(), cfg)
    b, hb = train(tiny(seed=1), small_set(), cfg)
    assert len(ha) == 10
    assert ha == hb
    assert torch.equal(a.parameter_vector(), b.parameter_vector())


def test_train_detects_divergence():
    data = small_set()
    data.inputs[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="lr"):
        train(tiny(), data, TrainConfig(epochs=1, iterations=50, batch_size=12))


def test_predict_covers_all_times():
    net = tiny()
    data = small_set(2)
    out = predict(net, data.inputs, data.times)
    assert out.shape == (2, 3, 1, 8, 8)
    with torch.no_grad():
        direct = net(torch.as_tensor(data.inputs[1:2]), [data.times[2]]).numpy()
    np.testing.assert_allclose(out[1, 2], direct[0], rtol=1e-14)


def test_train_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(learning_rate=0.0)
