import numpy as np
import pytest

from duohar import kernels
from duohar.errors import DataError, NumericError, StorageError
from duohar.nn import (
    AdamState,
    HarHead,
    ProjectionHead,
    ScalogramEncoder,
    SignalEncoder,
    Tensor,
    adam_step,
    grad_check,
    init_params,
    load_checkpoint,
    make_checkpoint,
    save_checkpoint,
)
from duohar.nn import tensor as T


def conv1d_oracle(x, w, b):
    """Nested-loop definition of the valid 1-D convolution."""
    B, L, Ci = x.shape
    K, _, Co = w.shape
    Lo = L - K + 1
    out = np.zeros((B, Lo, Co))
    for bi in range(B):
        for lo in range(Lo):
            for co in range(Co):
                acc = b[co]
                for k in range(K):
                    for ci in range(Ci):
                        acc += x[bi, lo + k, ci] * w[k, ci, co]
                out[bi, lo, co] = acc
    return out


def conv2d_oracle(x, w, b):
    B, H, W, Ci = x.shape
    KH, KW, _, Co = w.shape
    Ho, Wo = H - KH + 1, W - KW + 1
    out = np.zeros((B, Ho, Wo, Co))
    for bi in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                for co in range(Co):
                    acc = b[co]
                    for kh in range(KH):
                        for kw in range(KW):
                            for ci in range(Ci):
                                acc += x[bi, oh + kh, ow + kw, ci] * w[kh, kw, ci, co]
                    out[bi, oh, ow, co] = acc
    return out


class TestConvKernels:
    def test_conv1d_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(0)
        for B, L, Ci, K, Co in ((1, 10, 1, 3, 2), (3, 21, 3, 12, 5), (2, 16, 4, 1, 3)):
            x = rng.normal(size=(B, L, Ci))
            w = rng.normal(size=(K, Ci, Co))
            b = rng.normal(size=Co)
            got = kernels.conv1d_forward(x, w, b)
            assert np.max(np.abs(got - conv1d_oracle(x, w, b))) < 1e-9

    def test_conv2d_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(1)
        for B, H, W, Ci, KH, KW, Co in ((1, 8, 9, 1, 3, 2, 2), (2, 12, 10, 3, 8, 8, 4)):
            x = rng.normal(size=(B, H, W, Ci))
            w = rng.normal(size=(KH, KW, Ci, Co))
            b = rng.normal(size=Co)
            got = kernels.conv2d_forward(x, w, b)
            assert np.max(np.abs(got - conv2d_oracle(x, w, b))) < 1e-9

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(2, 9, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        target = rng.normal(size=(2, 7, 4))

        def loss_fn():
            out = T.conv1d(x, w, b)
            diff = out - Tensor(target)
            return T.tsum(diff * diff)

        report = grad_check(loss_fn, {"x": x, "w": w, "b": b}, step=1e-5, coords_per_param=10)
        assert report.max_rel_error < 1e-6

    def test_conv2d_backward_finite_differences(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(1, 6, 7, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)

        def loss_fn():
            out = T.conv2d(x, w, b)
            return T.tsum(out * out)

        report = grad_check(loss_fn, {"x": x, "w": w, "b": b}, step=1e-5, coords_per_param=10)
        assert report.max_rel_error < 1e-6


class TestEncoders:
    def test_signal_intermediate_lengths(self):
        enc = init_params("signal_encoder", seed=0)
        x = Tensor(np.random.default_rng(0).normal(size=(1, 128, 3)))
        h = x
        lengths = []
        for conv in enc.convs:
            h = T.relu(conv(h))
            lengths.append(h.shape[1])
        assert lengths == [117, 110, 103]
        assert enc(x).shape == (1, 96)

    def test_scalogram_intermediate_sizes(self):
        enc = init_params("scalogram_encoder", seed=0)
        x = Tensor(np.random.default_rng(0).normal(size=(1, 128, 128, 3)))
        h = x
        sizes = []
        for conv in enc.convs:
            h = T.relu(conv(h))
            sizes.append(h.shape[1:3])
        assert sizes == [(121, 121), (118, 118), (115, 115)]
        assert enc(x).shape == (1, 96)

    def test_zero_params_zero_embedding(self):
        for arch, shape in (("signal_encoder", (2, 128, 3)), ("scalogram_encoder", (2, 32, 32, 3))):
            kwargs = {} if arch == "signal_encoder" else {"kernels": (8, 4, 4)}
            enc = init_params(arch, seed=0)
            enc.load_state({n: np.zeros_like(t.data) for n, t in enc.params().items()})
            if arch == "scalogram_encoder":
                x = Tensor(np.random.default_rng(1).normal(size=shape))
            else:
                x = Tensor(np.random.default_rng(1).normal(size=shape))
            out = enc(x)
            np.testing.assert_array_equal(out.data, 0.0)

    def test_signal_encoder_matches_oracle(self):
        enc = init_params("signal_encoder", seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 128, 3))
        state = enc.state()
        h = x
        for i in (1, 2, 3):
            h = conv1d_oracle(h, state[f"conv{i}.w"], state[f"conv{i}.b"])
            h = np.maximum(h, 0.0)
        want = h.max(axis=1)
        got = enc(Tensor(x)).data
        assert np.max(np.abs(got - want)) < 1e-9

    def test_scalogram_encoder_matches_oracle(self):
        # reduced spatial size keeps the nested-loop oracle tractable
        enc = init_params("scalogram_encoder", seed=5)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 24, 24, 3))
        state = enc.state()
        h = x
        for i in (1, 2, 3):
            h = conv2d_oracle(h, state[f"conv{i}.w"], state[f"conv{i}.b"])
            h = np.maximum(h, 0.0)
        want = h.max(axis=(1, 2))
        got = enc(Tensor(x)).data
        assert np.max(np.abs(got - want)) < 1e-9

    def test_forward_determinism(self):
        enc = init_params("signal_encoder", seed=7)
        x = np.random.default_rng(8).normal(size=(3, 128, 3))
        a = enc(Tensor(x)).data
        b = enc(Tensor(x.copy())).data
        np.testing.assert_array_equal(a, b)


class TestHeads:
    def test_projection_identity_on_nonnegative(self):
        head = init_params("projection_head", seed=0)
        eye = np.eye(96)
        head.load_state(
            {
                "dense1.w": eye,
                "dense1.b": np.zeros(96),
                "dense2.w": eye,
                "dense2.b": np.zeros(96),
            }
        )
        x = np.abs(np.random.default_rng(1).normal(size=(4, 96)))
        np.testing.assert_allclose(head(Tensor(x)).data, x, atol=1e-12)

    def test_projection_zero_input(self):
        head = init_params("projection_head", seed=1)
        out = head(Tensor(np.zeros((2, 96))))
        state = head.state()
        want = np.maximum(np.zeros((2, 96)) @ state["dense1.w"] + state["dense1.b"], 0)
        want = want @ state["dense2.w"] + state["dense2.b"]
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    def test_projection_matches_matmul_oracle(self):
        head = init_params("projection_head", seed=2)
        state = head.state()
        x = np.random.default_rng(3).normal(size=(5, 96))
        want = np.maximum(x @ state["dense1.w"] + state["dense1.b"], 0.0)
        want = want @ state["dense2.w"] + state["dense2.b"]
        assert np.max(np.abs(head(Tensor(x)).data - want)) < 1e-12

    def test_har_head_uniform_on_zero_logits(self):
        head = init_params("har_head", seed=0, num_classes=5)
        head.load_state({n: np.zeros_like(t.data) for n, t in head.params().items()})
        out = head(Tensor(np.random.default_rng(1).normal(size=(3, 96)))).data
        np.testing.assert_allclose(out, 0.2, atol=1e-12)

    def test_har_head_shift_invariance_and_oracle(self):
        head = init_params("har_head", seed=4, num_classes=4)
        state = head.state()
        x = np.random.default_rng(5).normal(size=(6, 96))
        logits = np.maximum(x @ state["dense1.w"] + state["dense1.b"], 0.0)
        logits = logits @ state["dense2.w"] + state["dense2.b"]
        e = np.exp(logits)
        want = e / e.sum(axis=1, keepdims=True)
        got = head(Tensor(x)).data
        assert np.max(np.abs(got - want)) < 1e-12
        shifted = logits + 123.456
        e2 = np.exp(shifted - shifted.max(axis=1, keepdims=True))
        np.testing.assert_allclose(want, e2 / e2.sum(axis=1, keepdims=True), atol=1e-12)

    def test_har_head_sums_to_one(self):
        head = init_params("har_head", seed=6, num_classes=7)
        out = head(Tensor(np.random.default_rng(7).normal(size=(10, 96)))).data
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


class TestInit:
    def test_biases_zero_and_weights_bounded(self):
        for arch, kw in (
            ("signal_encoder", {}),
            ("scalogram_encoder", {}),
            ("projection_head", {}),
            ("har_head", {"num_classes": 3}),
            ("fusion_head", {"num_classes": 3}),
        ):
            mod = init_params(arch, seed=9, **kw)
            for name, t in mod.params().items():
                if name.endswith(".b"):
                    np.testing.assert_array_equal(t.data, 0.0)
                else:
                    if t.data.ndim == 2:
                        fan_in, fan_out = t.data.shape
                    elif t.data.ndim == 3:
                        k, ci, co = t.data.shape
                        fan_in, fan_out = k * ci, k * co
                    else:
                        kh, kw_, ci, co = t.data.shape
                        fan_in, fan_out = kh * kw_ * ci, kh * kw_ * co
                    limit = np.sqrt(6.0 / (fan_in + fan_out))
                    assert np.max(np.abs(t.data)) <= limit

    def test_seed_determinism(self):
        a = init_params("signal_encoder", seed=3).state()
        b = init_params("signal_encoder", seed=3).state()
        c = init_params("signal_encoder", seed=4).state()
        for n in a:
            np.testing.assert_array_equal(a[n], b[n])
        assert any(not np.array_equal(a[n], c[n]) for n in a)

    def test_unknown_arch(self):
        with pytest.raises(DataError) as exc:
            init_params("transformer", seed=0)
        assert exc.value.code == "UNKNOWN_ARCH"


def adam_reference(w0, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-7):
    """Independent transcription of the update equations."""
    w = float(w0)
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w -= lr * mhat / (np.sqrt(vhat) + eps)
        out.append(w)
    return out


class TestAdam:
    def test_first_step_unit_gradient(self):
        p = {"w": Tensor(np.zeros(1), requires_grad=True)}
        adam_step(p, {"w": np.ones(1)}, AdamState())
        assert p["w"].data[0] == pytest.approx(-0.001 / (1 + 1e-7), abs=1e-12)

    def test_zero_gradient_no_move(self):
        p = {"w": Tensor(np.full(3, 1.5), requires_grad=True)}
        adam_step(p, {"w": np.zeros(3)}, AdamState())
        np.testing.assert_array_equal(p["w"].data, 1.5)

    def test_ten_step_quadratic_matches_reference(self):
        # minimize 0.5*w^2: gradient is w itself
        state = AdamState()
        p = {"w": Tensor(np.array([2.0]), requires_grad=True)}
        mine = []
        ref_grads = []
        w_ref = 2.0
        # reference trajectory computed independently with the same grads
        ref_state = []
        m = v = 0.0
        for t in range(1, 11):
            g = p["w"].data[0]
            ref_grads.append(g)
            adam_step(p, {"w": np.array([g])}, state)
            mine.append(p["w"].data[0])
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w_ref -= 0.001 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-7)
            ref_state.append(w_ref)
        np.testing.assert_allclose(mine, ref_state, atol=1e-9)

    def test_l2_on_decayed_names_only(self):
        state = AdamState()
        p = {
            "conv.w": Tensor(np.array([1.0]), requires_grad=True),
            "dense.w": Tensor(np.array([1.0]), requires_grad=True),
        }
        adam_step(p, {"conv.w": np.zeros(1), "dense.w": np.zeros(1)}, state, decay={"conv.w"})
        assert p["dense.w"].data[0] == 1.0  # no decay without gradient
        assert p["conv.w"].data[0] < 1.0  # 2*lambda*w pushes toward zero

    def test_shape_mismatch(self):
        p = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
        with pytest.raises(DataError) as exc:
            adam_step(p, {"w": np.zeros(3)}, AdamState())
        assert exc.value.code == "SHAPE_MISMATCH"


class TestGradCheck:
    def test_quadratic(self):
        w = Tensor(np.random.default_rng(0).normal(size=7), requires_grad=True)

        def loss_fn():
            return T.tsum(w * w)

        report = grad_check(loss_fn, {"w": w}, step=1e-4)
        assert report.max_rel_error < 1e-8

    def test_nonfinite_loss(self):
        w = Tensor(np.ones(2), requires_grad=True)

        def loss_fn():
            return Tensor(np.asarray(np.nan))

        with pytest.raises(NumericError) as exc:
            grad_check(loss_fn, {"w": w})
        assert exc.value.code == "NONFINITE_LOSS"


class TestCheckpoint:
    def make(self):
        rng = np.random.default_rng(0)
        weights = {
            "encoder.conv1.w": rng.normal(size=(12, 3, 32)).astype(np.float32),
            "encoder.conv1.b": rng.normal(size=32).astype(np.float32),
            "head.dense1.w": rng.normal(size=(96, 256)).astype(np.float32),
        }
        return make_checkpoint(
            "signal_ntxent",
            weights,
            label_map={"walk": 0, "sit": 1},
            hparams={"tau": 0.5},
            seed=3,
            history={"loss_curve": [1.0, 0.5]},
        )

    def test_round_trip_bit_exact(self, tmp_path):
        ck = self.make()
        save_checkpoint(ck, tmp_path / "ck")
        back = load_checkpoint(tmp_path / "ck")
        assert back.manifest == ck.manifest
        for name, arr in ck.weights.items():
            assert back.weights[name].dtype == np.float32
            np.testing.assert_array_equal(back.weights[name], arr)

    def test_truncated_blob(self, tmp_path):
        ck = self.make()
        save_checkpoint(ck, tmp_path / "ck")
        blob = (tmp_path / "ck" / "weights.bin").read_bytes()
        (tmp_path / "ck" / "weights.bin").write_bytes(blob[:-8])
        with pytest.raises(StorageError) as exc:
            load_checkpoint(tmp_path / "ck")
        assert exc.value.code == "SIZE_MISMATCH"

    def test_manifest_shape_edit_rejected_before_use(self, tmp_path):
        import json

        ck = self.make()
        save_checkpoint(ck, tmp_path / "ck")
        manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        manifest["tensors"][0]["shape"] = [12, 3, 64]
        (tmp_path / "ck" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(StorageError) as exc:
            load_checkpoint(tmp_path / "ck")
        assert exc.value.code == "SIZE_MISMATCH"

    def test_corrupted_blob_rejected(self, tmp_path):
        ck = self.make()
        save_checkpoint(ck, tmp_path / "ck")
        blob = bytearray((tmp_path / "ck" / "weights.bin").read_bytes())
        blob[100] ^= 0xFF
        (tmp_path / "ck" / "weights.bin").write_bytes(bytes(blob))
        with pytest.raises(StorageError) as exc:
            load_checkpoint(tmp_path / "ck")
        assert exc.value.code == "CHECKSUM_MISMATCH"

    def test_bad_manifest_json(self, tmp_path):
        ck = self.make()
        save_checkpoint(ck, tmp_path / "ck")
        (tmp_path / "ck" / "manifest.json").write_text("{not json")
        with pytest.raises(StorageError) as exc:
            load_checkpoint(tmp_path / "ck")
        assert exc.value.code == "CORRUPT_MANIFEST"
