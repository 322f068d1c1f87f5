import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bical.calibration import (Branch, CalibrationState, calibrate_batch, confidence,
                               momentum_update, q2t_correction, refine_query_supervision,
                               refine_text_supervision, select_branch, select_branches,
                               t2q_correction)
from bical.errors import DegenerateVector, InvalidInput
from bical.numerics import is_prob_vec, l1_renormalize
from bical.vocab import TextVocabulary

from conftest import random_vocab


class TestCorrections:
    def test_t2q_uniform(self):
        tv = TextVocabulary(np.eye(6)[:, :6] + 0.1, [0, 0, 0, 1, 2, 2], 3)
        np.testing.assert_allclose(t2q_correction(np.full(6, 1 / 6), tv), [3 / 6, 1 / 6, 2 / 6])

    def test_t2q_one_hot(self, vocab_2x2):
        np.testing.assert_array_equal(t2q_correction([0, 0, 1, 0], vocab_2x2), [0, 1])

    def test_t2q_hand(self, vocab_2x2):
        np.testing.assert_allclose(t2q_correction([0.1, 0.2, 0.3, 0.4], vocab_2x2), [0.3, 0.7],
                                   atol=1e-15)

    def test_q2t_one_hot(self):
        tv = TextVocabulary(np.ones((4, 2)), [0, 1, 1, 1], 2)
        np.testing.assert_allclose(q2t_correction([0, 1], tv), [0, 1 / 3, 1 / 3, 1 / 3])

    def test_q2t_singletons_relabel(self):
        tv = TextVocabulary(np.ones((3, 2)), [0, 1, 2], 3)
        np.testing.assert_array_equal(q2t_correction([0.2, 0.5, 0.3], tv), [0.2, 0.5, 0.3])

    def test_q2t_hand(self, vocab_2x2):
        np.testing.assert_allclose(q2t_correction([0.3, 0.7], vocab_2x2),
                                   [0.15, 0.15, 0.35, 0.35], atol=1e-15)

    def test_length_mismatch(self, vocab_2x2):
        with pytest.raises(InvalidInput):
            t2q_correction([0.5, 0.5], vocab_2x2)
        with pytest.raises(InvalidInput):
            q2t_correction([1.0], vocab_2x2)

    @settings(max_examples=200)
    @given(st.integers(0, 2**31), st.integers(1, 8))
    def test_round_trip_and_mass(self, seed, K):
        rng = np.random.default_rng(seed)
        tv = random_vocab(rng, K)
        p_q = rng.dirichlet(np.ones(K))
        p_hat_t = q2t_correction(p_q, tv)
        assert abs(p_hat_t.sum() - 1) < 1e-9
        np.testing.assert_allclose(t2q_correction(p_hat_t, tv), p_q, atol=1e-12)
        p_t = rng.dirichlet(np.ones(tv.size))
        assert abs(t2q_correction(p_t, tv).sum() - 1) < 1e-9


class TestConfidence:
    def test_one_hot(self):
        np.testing.assert_array_equal(confidence([0, 1, 0], [0.2, 0.5, 0.3]), [0, 0.5, 0])

    def test_uniform(self):
        np.testing.assert_allclose(confidence(np.full(4, 0.25), np.full(4, 0.25)), 1 / 16)

    def test_direct(self):
        np.testing.assert_allclose(confidence([0.6, 0.4], [0.5, 0.5]), [0.3, 0.2])

    def test_mismatch(self):
        with pytest.raises(InvalidInput):
            confidence([1.0], [0.5, 0.5])


class TestRefinement:
    def test_query_worked_example(self):
        y_conf = confidence([1, 0], [0.6, 0.4])
        r = refine_query_supervision(y_conf, [0.3, 0.7])
        assert abs(r[0] - 0.5625) <= 1e-12 and abs(r[1] - 0.4375) <= 1e-12

    def test_query_fixed_point(self):
        np.testing.assert_array_equal(refine_query_supervision([0, 1, 0], [0, 1, 0]), [0, 1, 0])

    def test_query_zero_confidence(self):
        p_hat = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(refine_query_supervision(np.zeros(3), p_hat), p_hat, atol=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateVector):
            refine_query_supervision([0.0, 0.0], [0.0, 0.0])

    def test_text_mirrors(self):
        y_conf = confidence([0, 1], [0.4, 0.6])
        np.testing.assert_allclose(refine_text_supervision(y_conf, [0.7, 0.3]),
                                   [0.4375, 0.5625], atol=1e-12)
        np.testing.assert_array_equal(refine_text_supervision([1, 0], [1, 0]), [1, 0])

    def test_text_uniform(self):
        np.testing.assert_allclose(refine_text_supervision(np.full(5, 0.04), np.full(5, 0.2)),
                                   np.full(5, 0.2), atol=1e-15)

    def test_text_worked_example(self):
        y_conf = confidence([0.5, 0.3, 0.2], [0.2, 0.5, 0.3])
        np.testing.assert_allclose(y_conf, [0.10, 0.15, 0.06], atol=1e-15)
        r = refine_text_supervision(y_conf, [0.1, 0.1, 0.8])
        expected = np.array([0.2, 0.25, 0.86]) / 1.31
        np.testing.assert_allclose(r, expected, atol=1e-12)

    @given(st.integers(0, 2**31), st.integers(2, 10))
    def test_hot_confidence_monotone(self, seed, K):
        rng = np.random.default_rng(seed)
        p_hat = rng.dirichlet(np.ones(K))
        k = int(rng.integers(K))
        lo, hi = np.sort(rng.uniform(0, 1, 2))
        if hi - lo < 1e-6:
            return
        r_lo = refine_query_supervision(lo * np.eye(K)[k], p_hat)[k]
        r_hi = refine_query_supervision(hi * np.eye(K)[k], p_hat)[k]
        if p_hat[k] < 1 - 1e-9:
            assert r_hi > r_lo


class TestMomentum:
    def make(self, alpha, rows):
        return CalibrationState.from_primary([f"s{i}" for i in range(len(rows))], rows, alpha=alpha)

    def test_alpha_zero(self):
        st_ = self.make(0.0, [[0.5, 0.5]])
        np.testing.assert_array_equal(momentum_update(st_, "s0", [0.2, 0.8]), [0.2, 0.8])

    def test_fixed_point(self):
        st_ = self.make(0.9, [[0.3, 0.7]])
        np.testing.assert_allclose(momentum_update(st_, "s0", [0.3, 0.7]), [0.3, 0.7], atol=1e-15)

    def test_default_alpha(self):
        st_ = self.make(0.9, [[1.0, 0.0]])
        np.testing.assert_allclose(momentum_update(st_, "s0", [0.0, 1.0]), [0.9, 0.1], atol=1e-15)
        np.testing.assert_allclose(st_.get("s0"), [0.9, 0.1], atol=1e-15)

    def test_only_touches_own_row(self):
        st_ = self.make(0.5, [[1.0, 0.0], [0.0, 1.0]])
        momentum_update(st_, "s1", [1.0, 0.0])
        np.testing.assert_array_equal(st_.get("s0"), [1.0, 0.0])

    @given(st.integers(0, 2**31), st.floats(0, 0.999))
    def test_stays_in_simplex(self, seed, alpha):
        rng = np.random.default_rng(seed)
        st_ = self.make(alpha, rng.dirichlet(np.ones(7), size=3))
        for _ in range(20):
            row = int(rng.integers(3))
            momentum_update(st_, f"s{row}", rng.dirichlet(np.ones(7)))
        assert is_prob_vec(st_.running_r_t)


# (dist_q, dist_t) -> branch, thresholds eps_q=0.5, eps_t=0.7
SELECTION_TABLE = {
    ("above", "above"): Branch.PLAIN,
    ("above", "below"): Branch.T2Q,
    ("above", "equal"): Branch.PLAIN,
    ("below", "above"): Branch.Q2T,
    ("below", "below"): Branch.PLAIN,
    ("below", "equal"): Branch.PLAIN,
    ("equal", "above"): Branch.PLAIN,
    ("equal", "below"): Branch.PLAIN,
    ("equal", "equal"): Branch.PLAIN,
}


def _at(region, eps):
    return {"above": eps + 0.2, "below": eps - 0.2, "equal": eps}[region]


class TestSelection:
    @pytest.mark.parametrize("rq,rt", list(itertools.product(["above", "below", "equal"], repeat=2)))
    def test_table(self, rq, rt):
        got = select_branches(_at(rq, 0.5), _at(rt, 0.7), 0.5, 0.7)
        assert Branch(int(got)) == SELECTION_TABLE[rq, rt]

    def test_examples(self):
        assert Branch(int(select_branches(0.8, 0.3))) == Branch.T2Q
        assert Branch(int(select_branches(0.2, 0.9))) == Branch.Q2T
        assert Branch(int(select_branches(0.9, 0.9))) == Branch.PLAIN

    def test_from_vectors(self):
        # dist_q = |(0.2,0) - (0,1)| = sqrt(1.04) > 0.5; dist_t = 0 < 0.7
        d = select_branch([0.2, 0.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.5])
        assert d.tag == Branch.T2Q
        assert d.dist_q == pytest.approx(np.sqrt(1.04))
        assert d.dist_t == 0.0

    @given(st.floats(0, 3), st.floats(0, 3))
    def test_total(self, dq, dt):
        tag = Branch(int(select_branches(dq, dt)))
        t2q = dq > 0.5 and dt < 0.7
        q2t = dt > 0.7 and dq < 0.5
        assert not (t2q and q2t)
        assert tag == (Branch.T2Q if t2q else Branch.Q2T if q2t else Branch.PLAIN)


def test_calibrate_batch_matches_scalar_ops(vocab_2x2):
    rng = np.random.default_rng(0)
    p_q = rng.dirichlet(np.ones(2), size=5)
    p_t = rng.dirichlet(np.ones(4), size=5)
    y_q = np.eye(2)[[0, 1, 1, 0, 0]]
    y_t = rng.dirichlet(np.ones(4), size=5)
    state = CalibrationState.from_primary([f"s{i}" for i in range(5)], y_t)
    out = calibrate_batch(p_q, p_t, y_q, y_t, np.arange(5), state, vocab_2x2)
    for i in range(5):
        p_hat_q = t2q_correction(p_t[i], vocab_2x2)
        p_hat_t = q2t_correction(p_q[i], vocab_2x2)
        r_t = refine_text_supervision(confidence(y_t[i], p_t[i]), p_hat_t)
        np.testing.assert_allclose(out.r_q[i], refine_query_supervision(
            confidence(y_q[i], p_q[i]), p_hat_q), atol=1e-15)
        np.testing.assert_allclose(out.running_r_t[i], 0.9 * y_t[i] + 0.1 * r_t, atol=1e-15)
        d = select_branch(confidence(y_q[i], p_q[i]), p_hat_q, confidence(y_t[i], p_t[i]), p_hat_t)
        assert out.branch[i] == d.tag
