import json

import numpy as np
import pytest

from icarec import autodiff as ad
from icarec import nn
from icarec.errors import CheckpointError, NonFiniteError, SpecError
from oracles import adam_transcript


def mlp_spec(role="encoder", dims=(2, 64, 64, 64, 1), act="softplus"):
    layers = []
    for i in range(len(dims) - 1):
        a = act if i < len(dims) - 2 else "identity"
        layers.append(nn.Dense(dims[i], dims[i + 1], a))
    return nn.NetSpec(tuple(layers), role)


def encoder_24ch_spec(in_ch=24, n_d=5):
    return nn.NetSpec((
        nn.Conv1d(in_ch, 8, 3, "tanh"),
        nn.Conv1d(8, 8, 5, "tanh"),
        nn.BatchNorm1d(8),
        nn.Conv1d(8, 8, 3, "tanh"),
        nn.BatchNorm1d(8),
        nn.Conv1d(8, 8, 11, "tanh"),
        nn.Conv1d(8, 8, 13, "tanh"),
        nn.Conv1d(8, n_d, 3, "tanh"),
    ), "encoder")


class TestBuildNet:
    def test_parameter_count_formula(self):
        net = nn.build_net(mlp_spec(), seed=7)
        expect = (2 * 64 + 64) + (64 * 64 + 64) + (64 * 64 + 64) + (64 * 1 + 1)
        assert net.param_count() == expect

    def test_conv_encoder_output_shape(self):
        net = nn.build_net(encoder_24ch_spec(), seed=0)
        x = np.random.default_rng(0).standard_normal((2, 24, 2000))
        out = net.forward_array(x)
        assert out.shape == (2, 5, 2000)

    def test_same_seed_bit_identical(self):
        a = nn.build_net(mlp_spec(), seed=3)
        b = nn.build_net(mlp_spec(), seed=3)
        for name in a.params:
            assert np.array_equal(a.params[name].value.data,
                                  b.params[name].value.data)

    def test_different_seed_differs(self):
        a = nn.build_net(mlp_spec(), seed=3)
        b = nn.build_net(mlp_spec(), seed=4)
        assert not np.array_equal(a.params["layer0.w"].value.data,
                                  b.params["layer0.w"].value.data)

    def test_inconsistent_spec_names_layer(self):
        with pytest.raises(SpecError, match="layer 1"):
            nn.NetSpec((nn.Dense(2, 8), nn.Dense(9, 1)), "encoder")
        with pytest.raises(SpecError, match="layer 2"):
            nn.NetSpec((nn.Conv1d(2, 8, 3), nn.Conv1d(8, 8, 3),
                        nn.BatchNorm1d(4)), "encoder")

    def test_decoder_requires_one_concat(self):
        with pytest.raises(SpecError, match="concat-condition"):
            nn.NetSpec((nn.Dense(2, 1),), "decoder")


class TestForward:
    def test_zero_weights_zero_code(self):
        net = nn.build_net(nn.NetSpec(
            (nn.Dense(3, 4, "tanh"), nn.Dense(4, 2, "tanh")), "encoder"), 0)
        for p in net.params.values():
            p.value = ad.Tensor(np.zeros(p.value.shape))
        out = net.forward_array(np.random.default_rng(1).standard_normal((5, 3)))
        assert np.array_equal(out, np.zeros((5, 2)))

    def test_decoder_concat_along_channels(self):
        spec = nn.NetSpec((
            nn.ConcatCondition("append-channels", dim=3),
            nn.Conv1d(8, 4, 3, "tanh"),
        ), "decoder")
        net = nn.build_net(spec, 0)
        code = np.zeros((2, 5, 16))
        cond = np.zeros((2, 3, 16))
        out = net.forward_array(code, cond)
        assert out.shape == (2, 4, 16)
        # first conv indeed consumed 8 channels
        assert net.params["layer1.w"].value.shape == (4, 8, 3)

    def test_mlp_matches_hand_matrix_arithmetic(self):
        spec = nn.NetSpec((nn.Dense(2, 3, "tanh"), nn.Dense(3, 1)), "encoder")
        net = nn.build_net(spec, 11)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 2))
        w1 = net.params["layer0.w"].value.data
        b1 = net.params["layer0.b"].value.data
        w2 = net.params["layer1.w"].value.data
        b2 = net.params["layer1.b"].value.data
        expect = np.tanh(x @ w1 + b1) @ w2 + b2
        got = net.forward_array(x)
        np.testing.assert_allclose(got, expect, rtol=1e-15, atol=1e-15)

    def test_node_and_array_paths_bitwise_equal(self):
        net = nn.build_net(encoder_24ch_spec(in_ch=4, n_d=2), 2).eval()
        x = np.random.default_rng(3).standard_normal((2, 4, 50))
        out_node = net.forward(ad.constant(x))
        out_arr = net.forward_array(x)
        assert np.array_equal(out_node.value.data, out_arr)

    def test_embedding_condition(self):
        spec = nn.NetSpec((
            nn.ConcatCondition("append-features", dim=4, classes=3),
            nn.Dense(6, 2),
        ), "decoder")
        net = nn.build_net(spec, 0)
        out = net.forward_array(np.zeros((5, 2)), np.array([0, 1, 2, 0, 1]))
        assert out.shape == (5, 2)
        table = net.params["layer0.embed"].value.data
        assert table.shape == (3, 4)

    def test_condition_presence_enforced(self):
        enc = nn.build_net(mlp_spec(), 0)
        with pytest.raises(Exception, match="condition"):
            enc.forward_array(np.zeros((2, 2)), np.zeros((2, 1)))

    def test_eval_forward_pure(self):
        net = nn.build_net(encoder_24ch_spec(in_ch=3, n_d=2), 1).eval()
        x = np.random.default_rng(0).standard_normal((1, 3, 40))
        buf_before = {k: v.copy() for k, v in net.buffers.items()}
        a = net.forward_array(x)
        b = net.forward_array(x)
        assert np.array_equal(a, b)
        for k in buf_before:
            assert np.array_equal(net.buffers[k], buf_before[k])

    def test_train_mode_updates_running_stats(self):
        net = nn.build_net(encoder_24ch_spec(in_ch=3, n_d=2), 1)
        x = np.random.default_rng(0).standard_normal((2, 3, 40))
        before = net.buffers["layer2.running_mean"].copy()
        net.forward_array(x)
        assert not np.array_equal(net.buffers["layer2.running_mean"], before)


class TestAdam:
    def test_single_step_hand_recurrence(self):
        theta = ad.parameter(ad.Tensor(np.array([0.0])))
        state = nn.AdamState(lr=1e-3)
        nn.adam_step(state, {"w": theta}, {"w": np.array([10.0])})
        expect = adam_transcript(0.0, [10.0], lr=1e-3)[0]
        assert np.isclose(float(theta.value.data), expect, rtol=0, atol=1e-18)
        # magnitude is ~ lr * g / (|g| + eps)
        assert np.isclose(float(theta.value.data), -1e-3, rtol=1e-6)

    def test_zero_gradient_no_change(self):
        theta = ad.parameter(ad.Tensor(np.array([1.5, -2.0])))
        state = nn.AdamState(lr=0.1)
        nn.adam_step(state, {"w": theta}, {"w": np.zeros(2)})
        assert np.array_equal(theta.value.data, [1.5, -2.0])

    def test_two_steps_match_transcript(self):
        g = 3.7
        theta = ad.parameter(ad.Tensor(np.array([0.25])))
        state = nn.AdamState(lr=1e-2)
        nn.adam_step(state, {"w": theta}, {"w": np.array([g])})
        nn.adam_step(state, {"w": theta}, {"w": np.array([g])})
        expect = adam_transcript(0.25, [g, g], lr=1e-2)[-1]
        assert abs(float(theta.value.data) - expect) < 1e-12

    def test_gradient_scaling_direction_invariance(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal(8)
        updates = []
        for c in (1.0, 100.0):
            theta = ad.parameter(ad.Tensor(np.zeros(8)))
            nn.adam_step(nn.AdamState(lr=1e-3), {"w": theta}, {"w": c * g})
            updates.append(theta.value.data.copy())
        assert np.array_equal(np.sign(updates[0]), np.sign(updates[1]))
        np.testing.assert_allclose(np.abs(updates[0]), np.abs(updates[1]),
                                   rtol=1e-4)

    def test_nonfinite_gradient_names_parameter(self):
        theta = ad.parameter(ad.Tensor(np.array([0.0])))
        with pytest.raises(NonFiniteError, match="w_bad"):
            nn.adam_step(nn.AdamState(), {"w_bad": theta},
                         {"w_bad": np.array([np.nan])})


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        net = nn.build_net(mlp_spec(dims=(2, 5, 1)), 9)
        state = nn.AdamState(lr=1e-3)
        # run a few updates so moments are nontrivial
        rng = np.random.default_rng(1)
        for _ in range(3):
            grads = {k: rng.standard_normal(p.value.shape)
                     for k, p in net.params.items()}
            nn.adam_step(state, net.params, grads)
        path = tmp_path / "ckpt.json"
        nn.save_checkpoint(net, state, path)
        net2, state2 = nn.load_checkpoint(path)
        for name in net.params:
            assert np.array_equal(net.params[name].value.data,
                                  net2.params[name].value.data)
        assert state2.step_count == state.step_count
        for name in state.m:
            assert np.array_equal(state.m[name], state2.m[name])
            assert np.array_equal(state.v[name], state2.v[name])

    def test_truncated_file_fails_with_offset(self, tmp_path):
        net = nn.build_net(mlp_spec(dims=(2, 3, 1)), 0)
        path = tmp_path / "ckpt.json"
        nn.save_checkpoint(net, None, path)
        blob = path.read_text()
        bad = tmp_path / "truncated.json"
        bad.write_text(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="byte offset"):
            nn.load_checkpoint(bad)
        # original file remains loadable
        nn.load_checkpoint(path)

    def test_param_spec_mismatch_rejected(self, tmp_path):
        net = nn.build_net(mlp_spec(dims=(2, 3, 1)), 0)
        path = tmp_path / "ckpt.json"
        nn.save_checkpoint(net, None, path)
        doc = json.loads(path.read_text())
        doc["params"][0]["shape"] = [4, 4]
        doc["params"][0]["data"] = [0.0] * 16
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            nn.load_checkpoint(bad)

    def test_reload_reproduces_forward(self, tmp_path):
        net = nn.build_net(mlp_spec(dims=(2, 16, 16, 1), act="tanh"), 4).eval()
        x = np.random.default_rng(2).standard_normal((6, 2))
        expect = net.forward_array(x)
        path = tmp_path / "net.json"
        nn.save_checkpoint(net, None, path)
        net2, _ = nn.load_checkpoint(path)
        assert np.array_equal(net2.forward_array(x), expect)

    def test_batchnorm_buffers_roundtrip(self, tmp_path):
        net = nn.build_net(encoder_24ch_spec(in_ch=2, n_d=1), 0)
        net.forward_array(np.random.default_rng(0).standard_normal((2, 2, 30)))
        path = tmp_path / "bn.json"
        nn.save_checkpoint(net, None, path)
        net2, _ = nn.load_checkpoint(path)
        for k in net.buffers:
            assert np.array_equal(net.buffers[k], net2.buffers[k])
