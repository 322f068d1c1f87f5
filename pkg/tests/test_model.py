import math
import warnings

import numpy as np
import pytest

from bical.errors import InvalidInput, InvalidState, NonFiniteGradient, NumericalFloorWarning
from bical.model import (ModelParams, backward, batch_loss, forward, init_params, load_checkpoint,
                         loss_query, loss_text, save_checkpoint, sgd_momentum_step)
from bical.numerics import is_prob_vec

from gradcheck import max_rel_error, numeric_grads, random_instance


def zero_params(d_in=3, K=4, M=6, hidden=(5,)):
    p = init_params(d_in, K, M, hidden=hidden, seed=0)
    for v in p.tensors.values():
        v[:] = 0.0
    return p


class TestForward:
    def test_zero_weights_uniform(self):
        rec = forward(zero_params(), [1.0, -2.0, 0.5])
        np.testing.assert_allclose(rec.p_q, np.full(4, 0.25))
        np.testing.assert_allclose(rec.p_t, np.full(6, 1 / 6))

    def test_identity_encoder_argmax(self):
        K = 3
        p = ModelParams({"v2q": 5.0 * np.eye(K), "v2t": np.zeros((K, 2))}, [])
        for j in range(K):
            assert np.argmax(forward(p, np.eye(K)[j]).p_q) == j

    def test_random_is_valid_and_deterministic(self):
        rng = np.random.default_rng(1)
        p = init_params(4, 3, 7, seed=5)
        x = rng.standard_normal((10, 4))
        a, b = forward(p, x), forward(p, x)
        assert is_prob_vec(a.p_q) and is_prob_vec(a.p_t)
        assert a.p_q.tobytes() == b.p_q.tobytes() and a.f_v.tobytes() == b.f_v.tobytes()

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            forward(zero_params(), [1.0, 2.0])


class TestLosses:
    def test_query_perfect(self):
        assert loss_query([0.0, 1.0], [0.0, 1.0]) == 0.0

    def test_query_uniform(self):
        assert loss_query(np.full(4, 0.25), np.eye(4)[2]) == pytest.approx(math.log(4))

    def test_query_direct(self):
        assert loss_query([0.7, 0.3], [0.0, 1.0]) == pytest.approx(-math.log(0.3))

    def test_text_entropy_minimum(self):
        rng = np.random.default_rng(0)
        t = rng.dirichlet(np.ones(5))
        entropy = -np.sum(t * np.log(t))
        assert loss_text(t, t) == pytest.approx(entropy)
        for _ in range(20):
            assert loss_text(rng.dirichlet(np.ones(5)), t) >= entropy

    def test_text_one_hot_equals_query(self):
        p = np.array([0.2, 0.5, 0.3])
        assert loss_text(p, [0, 0, 1]) == loss_query(p, [0, 0, 1])

    def test_text_direct(self):
        assert loss_text([0.9, 0.1], [0.5, 0.5]) == pytest.approx(
            -0.5 * (math.log(0.9) + math.log(0.1)))

    def test_floor(self):
        with pytest.warns(NumericalFloorWarning):
            v = loss_query([1.0, 0.0], [0.0, 1.0])
        assert v == pytest.approx(-math.log(1e-12))


class TestBackward:
    def test_targets_equal_predictions(self):
        p = init_params(3, 2, 4, hidden=(4,), seed=2)
        rec = forward(p, np.random.default_rng(0).standard_normal((3, 3)))
        g = backward(p, rec, rec.p_q, rec.p_t)
        for v in g.values():
            assert np.max(np.abs(v)) < 1e-15

    def test_hand_derived_linear(self):
        # no hidden layer: f_v = x, D=2, K=2
        W = np.array([[0.5, -0.2], [0.1, 0.3]])
        p = ModelParams({"v2q": W.copy(), "v2t": np.zeros((2, 2))}, [])
        x = np.array([1.0, 2.0])
        z = x @ W
        pq = np.exp(z) / np.exp(z).sum()
        y = np.array([0.0, 1.0])
        rec = forward(p, x)
        g = backward(p, rec, y, np.array([0.5, 0.5]), w_t=0.0)
        np.testing.assert_allclose(g["v2q"], np.outer(x, pq - y), atol=1e-15)
        np.testing.assert_array_equal(g["v2t"], np.zeros((2, 2)))

    @pytest.mark.parametrize("kind", ["q", "t", "q_hat", "t_hat"])
    def test_finite_differences(self, kind):
        rng = np.random.default_rng({"q": 0, "t": 1, "q_hat": 2, "t_hat": 3}[kind])
        for _ in range(5):
            params, x, tq, tt, wq, wt = random_instance(rng, kind)
            analytic = backward(params, forward(params, x), tq, tt, wq, wt)
            numeric = numeric_grads(params, x, tq, tt, wq, wt)
            assert max_rel_error(analytic, numeric) < 1e-4

    def test_per_sample_weights(self):
        rng = np.random.default_rng(9)
        params = init_params(3, 3, 5, hidden=(4,), seed=1)
        x = rng.standard_normal((4, 3))
        tq = np.eye(3)[[0, 1, 2, 0]]
        tt = rng.dirichlet(np.ones(5), size=4)
        wq = np.array([1.0, 0.0, 1.0, 0.5])
        analytic = backward(params, forward(params, x), tq, tt, wq, 1.0)
        numeric = numeric_grads(params, x, tq, tt, wq, 1.0)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_stale_record(self):
        p = init_params(2, 2, 3, hidden=(3,), seed=0)
        rec = forward(p, [0.1, 0.2])
        g = backward(p, rec, [1, 0], [1, 0, 0])
        sgd_momentum_step(p, g, lr=0.1)
        with pytest.raises(InvalidState):
            backward(p, rec, [1, 0], [1, 0, 0])


class TestSGD:
    def grads_like(self, p, value):
        return {k: np.full_like(v, value) for k, v in p.tensors.items()}

    def test_plain_sgd(self):
        p = init_params(2, 2, 3, hidden=(3,), seed=0)
        before = p.copy()
        g = self.grads_like(p, 0.5)
        sgd_momentum_step(p, g, lr=0.1, momentum=0.0, weight_decay=0.0)
        for k in p.tensors:
            np.testing.assert_allclose(p.tensors[k], before.tensors[k] - 0.05)

    def test_zero_grads(self):
        p = init_params(2, 2, 3, hidden=(3,), seed=0)
        before = p.copy()
        sgd_momentum_step(p, self.grads_like(p, 0.0), lr=0.1, momentum=0.9)
        for k in p.tensors:
            np.testing.assert_array_equal(p.tensors[k], before.tensors[k])

    def test_momentum_unrolled(self):
        p = init_params(2, 2, 3, hidden=(3,), seed=0)
        g = self.grads_like(p, 0.3)
        sgd_momentum_step(p, g, lr=0.01, momentum=0.9)
        mid = p.copy()
        sgd_momentum_step(p, g, lr=0.01, momentum=0.9)
        for k in p.tensors:
            np.testing.assert_allclose(mid.tensors[k] - p.tensors[k], 0.01 * 1.9 * 0.3, rtol=1e-12)

    def test_weight_decay(self):
        p = init_params(2, 2, 3, hidden=(3,), seed=0)
        before = p.copy()
        sgd_momentum_step(p, self.grads_like(p, 0.0), lr=0.1, momentum=0.0, weight_decay=1e-4)
        for k in p.tensors:
            np.testing.assert_allclose(p.tensors[k], before.tensors[k] * (1 - 1e-5))

    def test_non_finite_aborts(self):
        p = init_params(2, 2, 3, hidden=(3,), seed=0)
        before = p.copy()
        g = self.grads_like(p, 0.1)
        g["v2t"][0, 0] = np.nan
        with pytest.raises(NonFiniteGradient):
            sgd_momentum_step(p, g, lr=0.1)
        assert p.equals(before)

    def test_small_step_decreases_loss(self):
        rng = np.random.default_rng(4)
        for seed in range(10):
            p = init_params(4, 3, 6, hidden=(8, 8), seed=seed)
            x = rng.standard_normal((16, 4))
            tq = np.eye(3)[rng.integers(3, size=16)]
            tt = rng.dirichlet(np.ones(6), size=16)
            rec = forward(p, x)
            before = batch_loss(rec, tq, tt)
            sgd_momentum_step(p, backward(p, rec, tq, tt), lr=1e-3, momentum=0.9)
            assert batch_loss(forward(p, x), tq, tt) < before


def test_checkpoint_round_trip(tmp_path):
    p = init_params(3, 4, 5, hidden=(6, 7), seed=3)
    rec = forward(p, np.ones(3))
    sgd_momentum_step(p, backward(p, rec, np.eye(4)[1], np.full(5, 0.2)), lr=0.1)
    save_checkpoint(tmp_path / "ck", p, step=17, rng_state={"seed": 1}, extra={"a": 1},
                    extra_arrays={"table": np.arange(6.0).reshape(2, 3)})
    q, manifest, extra = load_checkpoint(tmp_path / "ck")
    assert q.equals(p) and q.version == p.version
    assert manifest["step"] == 17 and manifest["extra"] == {"a": 1}
    np.testing.assert_array_equal(extra["table"], np.arange(6.0).reshape(2, 3))
