"""
Losses: hardest-negative triplet ranking, masked InfoNCE over a queue,
text center loss and the weighted total.
"""

import math
from functools import partial

import numpy as np
import pytest
from gradcheck import numerical_grad, rel_error, unit_rows

from meel.errors import InvalidArgumentError, NonFiniteLossError, ShapeMismatchError
from meel.memory import CenterBank, CrossModalQueue
from meel.numerics import softmax_cross_entropy_with_grad
from meel.objective import (
    LossParts,
    center_loss,
    infonce_batch,
    infonce_loss,
    total_loss,
    triplet_ranking_loss,
)


def _queue(E, owners):
    return CrossModalQueue(np.asarray(E, dtype=np.float64), np.asarray(owners, dtype=np.int64))


def _brute_force_triplet(V, T, margin):
    B = V.shape[0]
    total = 0.0
    for i in range(B):
        s_ii = V[i] @ T[i]
        hardest_t = max(V[i] @ T[j] for j in range(B) if j != i)
        hardest_v = max(V[j] @ T[i] for j in range(B) if j != i)
        total += max(0.0, margin - s_ii + hardest_t) + max(0.0, margin - s_ii + hardest_v)
    return total / B


def _center_value(T, labels, bank):
    return center_loss(T, labels, bank)[0]


@pytest.mark.unit
class TestTripletRankingLoss:
    """Hinge on the hardest in-batch negative, both directions."""

    def test_aligned_pairs(self):
        e = np.eye(2)
        loss, gV, gT = triplet_ranking_loss(e, e, 0.2)
        assert loss == 0.0
        assert np.all(gV == 0.0) and np.all(gT == 0.0)

    def test_swapped_pairs(self):
        e = np.eye(2)
        loss, _, _ = triplet_ranking_loss(e, e[::-1], 0.2)
        assert loss == pytest.approx(2.4)

    def test_matches_enumeration_and_finite_differences(self, rng):
        for _ in range(20):
            V = unit_rows(rng, 8, 5)
            T = unit_rows(rng, 8, 5)
            loss, gV, gT = triplet_ranking_loss(V, T, 0.2)
            assert loss == pytest.approx(_brute_force_triplet(V, T, 0.2), abs=1e-12)
            nV = numerical_grad(lambda X: triplet_ranking_loss(X, T, 0.2)[0], V)
            nT = numerical_grad(lambda X: triplet_ranking_loss(V, X, 0.2)[0], T)
            assert rel_error(gV, nV) <= 1e-5
            assert rel_error(gT, nT) <= 1e-5

    def test_non_negative(self, rng):
        for _ in range(10):
            loss, _, _ = triplet_ranking_loss(unit_rows(rng, 6, 4), unit_rows(rng, 6, 4), 0.3)
            assert loss >= 0.0

    def test_batch_of_one(self):
        with pytest.raises(InvalidArgumentError):
            triplet_ranking_loss(np.ones((1, 2)), np.ones((1, 2)), 0.2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            triplet_ranking_loss(np.ones((2, 2)), np.ones((3, 2)), 0.2)


@pytest.mark.unit
class TestInfoNCE:
    """Label-zero cross-entropy over [positive | queue] / tau."""

    def test_uniform_logits(self):
        k = np.array([1.0, 0.0])
        K = 7
        queue = _queue(np.tile(k, (K, 1)), np.arange(K))
        loss, _ = infonce_loss(k, k, queue, owner_id=99, tau=0.07)
        assert loss == pytest.approx(math.log(K + 1), abs=1e-9)

    def test_everything_masked(self, rng):
        q, k = unit_rows(rng, 2, 4)
        queue = _queue(unit_rows(rng, 5, 4), [3] * 5)
        loss, grad = infonce_loss(q, k, queue, owner_id=3, tau=0.07)
        assert loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_toy_queue_direct_formula(self, rng):
        tau = 0.07
        for _ in range(20):
            q, k = unit_rows(rng, 2, 4)
            E = unit_rows(rng, 6, 4)
            owners = [1, 4, 2, 4, 3, 5]  # entries 1 and 3 belong to the query's video
            queue = _queue(E, owners)
            loss, grad = infonce_loss(q, k, queue, owner_id=4, tau=tau)

            live = [i for i, o in enumerate(owners) if o != 4]
            pos = math.exp(float(q @ k) / tau)
            neg = sum(math.exp(float(q @ E[i]) / tau) for i in live)
            assert loss == pytest.approx(-math.log(pos / (pos + neg)), abs=1e-9)

            concat = np.concatenate([[q @ k], E @ q]) / tau
            concat[[2, 4]] = -np.inf
            assert loss == pytest.approx(softmax_cross_entropy_with_grad(concat, 0)[0], abs=1e-9)

            numeric = numerical_grad(lambda x: infonce_loss(x, k, queue, 4, tau)[0], q)
            assert rel_error(grad, numeric) <= 1e-6

    def test_masked_entries_have_no_influence(self, rng):
        # brute force over every subset of a 6-entry queue marked as the query's own
        q, k = unit_rows(rng, 2, 3)
        E = unit_rows(rng, 6, 3)
        for subset in range(1 << 6):
            owners = [0 if subset >> i & 1 else 10 + i for i in range(6)]
            loss, grad = infonce_loss(q, k, _queue(E, owners), owner_id=0, tau=0.5)
            live = [i for i in range(6) if not subset >> i & 1]
            if live:
                ref_queue = _queue(E[live], [10 + i for i in live])
                ref_loss, ref_grad = infonce_loss(q, k, ref_queue, owner_id=0, tau=0.5)
            else:
                ref_loss, ref_grad = 0.0, np.zeros(3)
            assert loss == pytest.approx(ref_loss, abs=1e-12)
            np.testing.assert_allclose(grad, ref_grad, atol=1e-12)

    def test_batch_is_mean_of_rows(self, rng):
        Q = unit_rows(rng, 4, 5)
        Kp = unit_rows(rng, 4, 5)
        queue = _queue(unit_rows(rng, 8, 5), [0, 1, 2, 3, 0, 1, 9, 9])
        ids = np.array([0, 1, 2, 3])
        loss, G = infonce_batch(Q, Kp, queue, ids, 0.1)
        singles = [infonce_loss(Q[i], Kp[i], queue, int(ids[i]), 0.1) for i in range(4)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-12)
        np.testing.assert_allclose(G, np.stack([s[1] for s in singles]) / 4, atol=1e-12)


@pytest.mark.unit
class TestCenterLoss:
    """Half squared distance to the class center."""

    def test_on_centers(self, rng):
        bank = CenterBank(rng.standard_normal((3, 4)))
        labels = np.array([0, 2])
        loss, grad = center_loss(bank.centers[labels], labels, bank)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_single_text(self):
        loss, _ = center_loss(np.array([[1.0, 0.0]]), np.array([0]), CenterBank(np.zeros((1, 2))))
        assert loss == pytest.approx(0.5)

    def test_gradient(self, rng):
        for _ in range(20):
            n, H, d = int(rng.integers(1, 10)), int(rng.integers(1, 6)), int(rng.integers(2, 6))
            bank = CenterBank(rng.standard_normal((H, d)))
            labels = rng.integers(0, H, size=n)
            T = unit_rows(rng, n, d)
            _, grad = center_loss(T, labels, bank)
            numeric = numerical_grad(partial(_center_value, labels=labels, bank=bank), T)
            assert rel_error(grad, numeric) <= 1e-7

    def test_label_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            center_loss(np.zeros((1, 2)), np.array([3]), CenterBank(np.zeros((2, 2))))


def _parts(l_tri=1.0, l_v2t=2.0, l_t2v=3.0, l_c=4.0, B=2, d=3):
    z = np.zeros((B, d))
    return LossParts(l_tri, l_v2t, l_t2v, l_c, z, z, z, z, z)


@pytest.mark.unit
class TestTotalLoss:
    """Weighted sum of the four components."""

    def test_arithmetic(self):
        report = total_loss(_parts(), 0.005)
        assert report.total == pytest.approx(6.02)

    def test_zero_weight_ignores_center(self):
        a = total_loss(_parts(l_c=4.0), 0.0)
        b = total_loss(_parts(l_c=400.0), 0.0)
        assert a.total == b.total == 6.0

    def test_non_finite(self):
        with pytest.raises(NonFiniteLossError):
            total_loss(_parts(l_v2t=float("nan")), 0.005)

    def test_scalars_sum(self):
        report = total_loss(_parts(), 1.0)
        s = report.scalars()
        expected = s["l_tri"] + s["l_v2t"] + s["l_t2v"] + s["l_c"]
        assert s["total"] == pytest.approx(expected, abs=1e-9)

    def test_composite_gradient(self, rng):
        for _ in range(20):
            _check_composite_gradient(rng, alpha=float(rng.uniform(0.0, 1.0)), tau=0.2)


def _check_composite_gradient(rng, alpha, tau, B=4, d=3, K=8):
    V = unit_rows(rng, B, d)
    T = unit_rows(rng, B, d)
    K_v = unit_rows(rng, B, d)
    K_t = unit_rows(rng, B, d)
    q_text = _queue(unit_rows(rng, K, d), rng.integers(-1, 2 * B, size=K))
    q_video = _queue(unit_rows(rng, K, d), rng.integers(-1, 2 * B, size=K))
    ids = np.arange(B)
    labels = rng.integers(0, B, size=B)
    bank = CenterBank(rng.standard_normal((B, d)))

    def report_for(Vx, Tx):
        l_tri, g_tv, g_tt = triplet_ranking_loss(Vx, Tx, 0.2)
        l_v2t, g_v2t = infonce_batch(Vx, K_t, q_text, ids, tau)
        l_t2v, g_t2v = infonce_batch(Tx, K_v, q_video, ids, tau)
        l_c, g_c = center_loss(Tx, labels, bank)
        parts = LossParts(l_tri, l_v2t, l_t2v, l_c, g_tv, g_tt, g_v2t, g_t2v, g_c)
        return total_loss(parts, alpha)

    report = report_for(V, T)
    nV = numerical_grad(lambda X: report_for(X, T).total, V)
    nT = numerical_grad(lambda X: report_for(V, X).total, T)
    assert rel_error(report.grads_v, nV) <= 1e-5
    assert rel_error(report.grads_t, nT) <= 1e-5
