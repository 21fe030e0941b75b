import math

import numpy as np
import pytest

from duohar.augment import RngStream, TemporalKind, TemporalSpec, ViewPipeline
from duohar.contrastive import (
    NTXENT,
    SCALOGRAM,
    SIGNAL,
    STOPGRAD,
    LatentBatch,
    PretrainConfig,
    cosine_sim,
    ntxent_batch_loss,
    ntxent_batch_tensor,
    ntxent_pair_loss,
    pretrain,
    stopgrad_loss,
)
from duohar.dataio import ClassSpec, synth_dataset, window
from duohar.errors import DataError, NumericError
from duohar.nn import Tensor, grad_check, init_params
from duohar.nn import tensor as T


def brute_force_batch_loss(z, tau):
    """Literal transcription of the pair/batch formulas, all loops."""

    def sim(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    n2 = z.shape[0]
    n = n2 // 2

    def pair(i, j):
        num = math.exp(sim(z[i], z[j]) / tau)
        den = sum(math.exp(sim(z[i], z[k]) / tau) for k in range(n2) if k != i)
        return -math.log(num / den)

    total = 0.0
    for k in range(1, n + 1):  # 1-based indexing of the definition
        total += pair(2 * k - 2, 2 * k - 1) + pair(2 * k - 1, 2 * k - 2)
    return total / n2


class TestCosine:
    def test_identity(self):
        v = np.array([0.3, -1.2, 2.0])
        assert cosine_sim(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_analytic(self):
        assert cosine_sim([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_zero_vector(self):
        with pytest.raises(NumericError) as exc:
            cosine_sim([0.0, 0.0], [1.0, 0.0])
        assert exc.value.code == "ZERO_VECTOR"


class TestPairLoss:
    def test_degenerate_batch(self):
        b = LatentBatch(np.array([[1.0, 0.0], [1.0, 0.0]]), tau=1.0)
        assert ntxent_pair_loss(0, 1, b) == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        b = LatentBatch(z, tau=1.0)
        expected = -math.log(math.e / (math.e + 2.0))
        assert ntxent_pair_loss(0, 1, b) == pytest.approx(expected, abs=1e-9)

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(6, 4))
        a = ntxent_pair_loss(0, 1, LatentBatch(z, tau=0.5))
        b = ntxent_pair_loss(0, 1, LatentBatch(3.0 * z, tau=0.5))
        assert a == pytest.approx(b, abs=1e-12)


class TestBatchLoss:
    def test_degenerate(self):
        b = LatentBatch(np.array([[1.0, 2.0], [1.0, 2.0]]), tau=0.5)
        assert ntxent_batch_loss(b) == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_duplicate_pattern(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        expected = -math.log(math.e / (math.e + 2.0))
        assert ntxent_batch_loss(LatentBatch(z, tau=1.0)) == pytest.approx(expected, abs=1e-9)

    def test_sample_permutation_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(8, 5))
        base = ntxent_batch_loss(LatentBatch(z, tau=0.5))
        perm = np.array([2, 3, 6, 7, 0, 1, 4, 5])  # permute samples, keep view pairing
        permuted = ntxent_batch_loss(LatentBatch(z[perm], tau=0.5))
        assert base == pytest.approx(permuted, abs=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            n = int(rng.integers(1, 5))  # 2N <= 8
            d = int(rng.integers(2, 5))
            z = rng.normal(size=(2 * n, d))
            tau = float(rng.choice([0.1, 0.5, 1.0]))
            mine = ntxent_batch_loss(LatentBatch(z, tau=tau))
            want = brute_force_batch_loss(z, tau)
            assert abs(mine - want) <= 1e-6 * max(1.0, abs(want))

    def test_positive_pair_ordering(self):
        # lowering sim(z_i, z_j) with everything else fixed raises the pair loss
        base = np.array([[1.0, 0.0], [1.0, 0.05], [0.3, 0.9], [0.2, 1.0]])
        worse = base.copy()
        worse[1] = [0.6, 0.8]  # partner rotated away from anchor
        l1 = ntxent_pair_loss(0, 1, LatentBatch(base, tau=0.5))
        l2 = ntxent_pair_loss(0, 1, LatentBatch(worse, tau=0.5))
        assert l2 > l1

    def test_latent_scale_invariance(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(10, 6))
        a = ntxent_batch_loss(LatentBatch(z, tau=0.5))
        b = ntxent_batch_loss(LatentBatch(123.0 * z, tau=0.5))
        assert a == pytest.approx(b, abs=1e-9)

    def test_zero_row_rejected(self):
        z = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(NumericError) as exc:
            ntxent_batch_loss(LatentBatch(z, tau=0.5))
        assert exc.value.code == "ZERO_VECTOR"

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(4)
        z = Tensor(rng.normal(size=(6, 4)), requires_grad=True)

        def loss_fn():
            return ntxent_batch_tensor(z, 0.5)

        report = grad_check(loss_fn, {"z": z}, step=1e-5, coords_per_param=24)
        assert report.max_rel_error < 1e-7


class TestStopgrad:
    def test_aligned_minimum(self):
        rng = np.random.default_rng(0)
        z1 = rng.normal(size=(3, 5))
        z2 = rng.normal(size=(3, 5))
        loss = stopgrad_loss(Tensor(z1), Tensor(z2), Tensor(z2.copy()), Tensor(z1.copy()))
        assert float(loss.data) == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_zero(self):
        z1 = np.array([[1.0, 0.0]])
        z2 = np.array([[0.0, 1.0]])
        p1 = np.array([[1.0, 0.0]])  # orthogonal to its target z2
        p2 = np.array([[0.0, 1.0]])  # orthogonal to its target z1
        loss = stopgrad_loss(Tensor(z1), Tensor(z2), Tensor(p1), Tensor(p2))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_stop_gradient_branch_is_exactly_zero(self):
        rng = np.random.default_rng(1)
        z1 = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        z2 = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        p1 = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        p2 = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        loss = stopgrad_loss(z1, z2, p1, p2)
        loss.backward()
        # analytic gradient through the detached arguments is identically zero
        assert z1.grad is None and z2.grad is None
        assert np.any(p1.grad != 0) and np.any(p2.grad != 0)

        # finite differences with the detached targets captured at the base
        # point reproduce the backprop gradients of the predictor inputs
        t1 = Tensor(z2.data.copy())
        t2 = Tensor(z1.data.copy())

        def loss_fn():
            return stopgrad_loss(t2, t1, p1, p2)

        report = grad_check(loss_fn, {"p1": p1, "p2": p2}, step=1e-6, coords_per_param=8)
        assert report.max_rel_error < 1e-7

    def test_zero_vector(self):
        with pytest.raises(NumericError):
            stopgrad_loss(
                Tensor(np.zeros((1, 3))),
                Tensor(np.ones((1, 3))),
                Tensor(np.ones((1, 3))),
                Tensor(np.ones((1, 3))),
            )


class TestPipelineGradients:
    def tiny_signal_setup(self, objective):
        rng = np.random.default_rng(0)
        enc = init_params("signal_encoder", seed=1, kernels=(4, 3, 3), filters=(3, 4, 5))
        proj = init_params("projection_head", seed=2, dim=5)
        x = rng.normal(size=(4, 16, 3))
        params = {f"enc.{n}": t for n, t in enc.params().items()}
        params.update({f"proj.{n}": t for n, t in proj.params().items()})
        pred = None
        if objective == STOPGRAD:
            pred = init_params("predictor_head", seed=3, dim=5)
            params.update({f"pred.{n}": t for n, t in pred.params().items()})
        return enc, proj, pred, x, params

    def test_full_ntxent_pipeline_gradient(self):
        enc, proj, _, x, params = self.tiny_signal_setup(NTXENT)

        def loss_fn():
            z = proj(enc(Tensor(x)))
            return ntxent_batch_tensor(z, 0.5)

        report = grad_check(loss_fn, params, step=1e-5, coords_per_param=4, seed=1)
        assert report.max_rel_error < 1e-4

    def test_full_stopgrad_pipeline_gradient(self):
        enc, proj, pred, x, params = self.tiny_signal_setup(STOPGRAD)
        # capture the detached targets at the base parameters: backprop through
        # the stop-gradient loss equals the derivative of the loss with targets
        # held at their base values, which central differences can measure
        t1 = Tensor(proj(enc(Tensor(x[1::2]))).data.copy())
        t2 = Tensor(proj(enc(Tensor(x[0::2]))).data.copy())

        def loss_fn():
            z1 = proj(enc(Tensor(x[0::2])))
            z2 = proj(enc(Tensor(x[1::2])))
            return stopgrad_loss(t2, t1, pred(z1), pred(z2))

        def full_loss():
            z1 = proj(enc(Tensor(x[0::2])))
            z2 = proj(enc(Tensor(x[1::2])))
            return stopgrad_loss(z1, z2, pred(z1), pred(z2))

        # same analytic gradients from the captured and the live-graph forms
        for p in params.values():
            p.grad = None
        full_loss().backward()
        live = {n: None if p.grad is None else p.grad.copy() for n, p in params.items()}
        for p in params.values():
            p.grad = None
        loss_fn().backward()
        for n, p in params.items():
            if live[n] is None:
                assert p.grad is None or not np.any(p.grad)
            else:
                np.testing.assert_allclose(p.grad, live[n], atol=1e-12)

        report = grad_check(loss_fn, params, step=1e-5, coords_per_param=4, seed=2)
        assert report.max_rel_error < 1e-4


def tiny_corpus(num_subjects=4, n_windows=4, seed=0):
    rs = synth_dataset(
        num_subjects,
        [ClassSpec("a", 2.0), ClassSpec("b", 5.0)],
        n_windows,
        0.05,
        seed=seed,
    )
    return window(rs, 128, 128)


def signal_pipeline():
    return ViewPipeline(
        steps=(
            (TemporalSpec(TemporalKind.NOISE), 1.0),
            (TemporalSpec(TemporalKind.SCALE), 0.5),
        )
    )


class TestPretrain:
    def test_insufficient_data(self):
        ws = tiny_corpus(2, 1)
        cfg = PretrainConfig(SIGNAL, batch_size=128, epochs=1, pipeline=signal_pipeline())
        with pytest.raises(DataError) as exc:
            pretrain(cfg, ws)
        assert exc.value.code == "INSUFFICIENT_DATA"

    def test_loss_curve_finite_and_decreasing(self):
        ws = tiny_corpus(4, 4)
        cfg = PretrainConfig(
            SIGNAL, objective=NTXENT, batch_size=16, epochs=20, pipeline=signal_pipeline(), seed=5
        )
        ck = pretrain(cfg, ws)
        curve = ck.manifest["history"]["loss_curve"]
        assert len(curve) == 20
        assert np.all(np.isfinite(curve))
        assert np.mean(curve[-5:]) < np.mean(curve[:5])

    def test_determinism_bit_exact(self):
        ws = tiny_corpus(4, 2)
        cfg = PretrainConfig(SIGNAL, batch_size=8, epochs=3, pipeline=signal_pipeline(), seed=9)
        a = pretrain(cfg, ws)
        b = pretrain(cfg, ws)
        assert a.checkpoint_id == b.checkpoint_id
        for name in a.weights:
            np.testing.assert_array_equal(a.weights[name], b.weights[name])

    def test_stopgrad_no_collapse(self):
        # desk-scale budget: embedding variance must stay clear of the
        # collapsed regime across the run
        rs = synth_dataset(
            6,
            [
                ClassSpec("a", (1.5, 2.0, 2.5)),
                ClassSpec("b", (4.0, 4.5, 5.0)),
                ClassSpec("c", (7.0, 7.5, 8.0)),
            ],
            4,
            0.2,
            seed=0,
        )
        ws = window(rs, 128, 128)
        cfg = PretrainConfig(
            SIGNAL, objective=STOPGRAD, batch_size=16, epochs=3, pipeline=signal_pipeline(), seed=2
        )
        ck = pretrain(cfg, ws)
        stds = ck.manifest["history"]["embed_std"]
        assert min(stds) > 0.01

    def test_subject_guard_fires(self):
        ws = tiny_corpus(4, 2)
        cfg = PretrainConfig(SIGNAL, batch_size=8, epochs=1, pipeline=signal_pipeline())
        with pytest.raises(DataError) as exc:
            pretrain(cfg, ws, subject_guard={"s00"})
        assert exc.value.code == "SPLIT_LEAK"
