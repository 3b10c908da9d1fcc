import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vatseg.architectures import Checkpoint, UNetSpec, VNetSpec, build_network
from vatseg.autograd import Graph, no_grad

# independent layer-by-layer count for UNetSpec() with base 64, frozen
UNET64_PARAMS = 31_031_875


def _unet_param_oracle(base=64, depth=4, cin=3, ncls=3):
    def conv(ci, co, k):
        return ci * co * k * k + co

    total, prev = 0, cin
    widths = [base * 2 ** i for i in range(depth + 1)]
    for c in widths:
        total += conv(prev, c, 3) + conv(c, c, 3)
        prev = c
    for c in widths[:-1]:
        total += conv(2 * c, c, 2) + conv(2 * c, c, 3) + conv(c, c, 3)
    return total + conv(base, ncls, 1)


def _rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


def test_unet_full_size_shape():
    net = build_network(UNetSpec(base_channels=2))
    with no_grad():
        assert net(np.zeros((1, 3, 256, 256), np.float32)).shape == (1, 3, 256, 256)


def test_unet_base8_bottleneck():
    net = build_network(UNetSpec(base_channels=8))
    trace = {}
    with no_grad():
        out = net(_rand((1, 3, 64, 64)), trace=trace)
    assert out.shape == (1, 3, 64, 64)
    assert trace["bottleneck"].shape == (1, 128, 4, 4)


def test_unet_parameter_count_base64():
    assert _unet_param_oracle() == UNET64_PARAMS
    assert build_network(UNetSpec()).num_parameters() == UNET64_PARAMS


@settings(max_examples=10, deadline=None)
@given(h=st.sampled_from([16, 32, 48]), w=st.sampled_from([16, 32, 64]), n=st.integers(1, 2))
def test_unet_preserves_resolution(h, w, n):
    net = build_network(UNetSpec(base_channels=1))
    with no_grad():
        assert net(np.zeros((n, 3, h, w), np.float32)).shape == (n, 3, h, w)


def test_unet_rejects_indivisible_axis():
    net = build_network(UNetSpec(base_channels=1))
    with pytest.raises(ValueError, match="width 40 is not divisible by 16"):
        net(np.zeros((1, 3, 32, 40), np.float32))


def test_vnet_shapes_and_depth_trace():
    spec = VNetSpec(base_channels=2)
    assert spec.depth_trace() == [24, 24, 12, 12, 6]
    net = build_network(spec)
    trace = {}
    with no_grad():
        out = net(_rand((1, 3, 24, 64, 64)), trace=trace)
    assert out.shape == (1, 3, 24, 64, 64)
    assert [trace[f"enc{l}"].shape[2] for l in range(1, 6)] == [24, 24, 12, 12, 6]
    assert [trace[f"dec{l}"].shape[2] for l in range(4, 0, -1)] == [12, 12, 24, 24]


def test_vnet_rejects_wrong_depth():
    net = build_network(VNetSpec(base_channels=2))
    with pytest.raises(ValueError, match="depth 24"):
        net(np.zeros((1, 3, 20, 16, 16), np.float32))


def test_vnet_first_block_has_no_residual_add():
    x = _rand((1, 3, 24, 16, 16))
    trace = {}
    build_network(VNetSpec(base_channels=3))(x, trace=trace)
    assert "add" not in Graph.from_output(trace["enc1"]).ops
    trace = {}
    build_network(VNetSpec(base_channels=3, first_block_short_skip=True))(x, trace=trace)
    assert "add" in Graph.from_output(trace["enc1"]).ops


def test_vnet_residual_identity():
    net = build_network(VNetSpec(base_channels=2), np.random.default_rng(4))
    trace = {}
    with no_grad():
        net(_rand((1, 3, 24, 16, 16)), trace=trace)
    for path in [f"enc{l}" for l in range(2, 6)] + [f"dec{l}" for l in range(1, 5)]:
        np.testing.assert_allclose(trace[path].data - trace[f"{path}.stack"].data, trace[f"{path}.input"].data,
                                   atol=1e-5)


def test_vnet_dropout_only_in_deep_levels():
    net = build_network(VNetSpec(base_channels=2))
    out = net(_rand((1, 3, 24, 16, 16)), train=True, rng=np.random.default_rng(0))
    assert Graph.from_output(out).ops.count("dropout") == 3


@pytest.mark.parametrize("spec,shape", [
    (UNetSpec(base_channels=2), (1, 3, 32, 32)),
    (VNetSpec(base_channels=2), (1, 3, 24, 16, 16)),
])
def test_no_parameter_is_shared(spec, shape):
    net = build_network(spec)
    out = net(_rand(shape), train=True, rng=np.random.default_rng(0))
    uses = {id(t): 0 for t in net.params.values()}
    for node in Graph.from_output(out).nodes:
        for t in node.inputs:
            if id(t) in uses:
                uses[id(t)] += 1
    assert set(uses.values()) == {1}


@pytest.mark.parametrize("spec,shape", [
    (UNetSpec(base_channels=2), (3, 3, 16, 16)),
    (VNetSpec(base_channels=2), (3, 3, 24, 16, 16)),
])
def test_forward_sanity(spec, shape):
    net = build_network(spec, np.random.default_rng(1))
    with no_grad():
        zeros = net(np.zeros(shape, np.float32)).data
        assert np.all(np.isfinite(zeros))
        x = _rand(shape, 2)
        a, b = net(x).data, net(x.copy()).data
        assert a.tobytes() == b.tobytes()
        perm = [2, 0, 1]
        np.testing.assert_allclose(net(x[perm]).data, a[perm], atol=1e-6)


def test_transposed_conv_init_scale():
    net = build_network(VNetSpec(base_channels=8), np.random.default_rng(0))
    w = net.params["up4.conv.weight"].data  # (128, 64, 2, 2, 2), stride 2 in every axis
    assert abs(w.std() * np.sqrt(128) - 1) < 0.05
    assert not net.params["up4.conv.bias"].data.any()


@pytest.mark.parametrize("spec,shape", [
    (UNetSpec(base_channels=2), (1, 3, 16, 16)),
    (VNetSpec(base_channels=2), (1, 3, 24, 16, 16)),
])
def test_checkpoint_round_trip(tmp_path, spec, shape):
    net = build_network(spec, np.random.default_rng(7))
    net(_rand(shape), train=True, rng=np.random.default_rng(0))  # move running stats away from init
    ckpt = Checkpoint.from_network(net, iteration=12, meta={"fold": 1})
    ckpt.save(tmp_path / "a.asck")
    back = Checkpoint.load(tmp_path / "a.asck")
    assert back.iteration == 12 and back.meta == {"fold": 1} and back.spec == spec
    assert sorted(back.params) == sorted(net.state_dict())
    x = _rand(shape, 3)
    with no_grad():
        assert back.to_network()(x).data.tobytes() == net(x).data.tobytes()
    assert back.to_bytes() == ckpt.to_bytes()


def test_checkpoint_rejects_bad_input():
    raw = Checkpoint.from_network(build_network(UNetSpec(base_channels=1))).to_bytes()
    with pytest.raises(ValueError, match="bad magic"):
        Checkpoint.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="truncated|expected"):
        Checkpoint.from_bytes(raw[:-10])
    with pytest.raises(ValueError, match="trailing"):
        Checkpoint.from_bytes(raw + b"\0")


def test_load_state_dict_requires_matching_keys():
    a = build_network(UNetSpec(base_channels=1))
    state = a.state_dict()
    state.pop("head.bias")
    with pytest.raises(KeyError):
        a.load_state_dict(state)
