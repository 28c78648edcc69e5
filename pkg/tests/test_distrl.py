import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drlora.distrl import (
    _huber_grad_mean,
    EnsembleModel,
    EpistemicStore,
    QuantileTable,
    ReplayBuffer,
    Transition,
    cvar_beta,
    distorted_q,
    ensemble_q,
    ensemble_update,
    epistemic_dist,
    huber_quantile_loss,
    identity_beta,
    quantile_fractions,
    store_update,
    td_update,
)
from drlora.risk import cvar_right, make_empirical


def test_fractions():
    assert quantile_fractions(1).tolist() == [0.5]
    assert quantile_fractions(2).tolist() == [0.25, 0.75]
    assert quantile_fractions(4).tolist() == [0.125, 0.375, 0.625, 0.875]
    with pytest.raises(ValueError):
        quantile_fractions(0)


class TestHuber:
    def test_examples(self):
        assert huber_quantile_loss(0.0, 0.3, 1.0) == (0.0, 0.0)
        assert huber_quantile_loss(0.5, 0.5, 1.0)[0] == pytest.approx(0.0625)
        assert huber_quantile_loss(-2.0, 0.9, 1.0)[0] == pytest.approx(0.15)

    @given(st.floats(-20, 20), st.floats(0.01, 0.99), st.floats(0.05, 5))
    def test_nonnegative_zero_iff_zero(self, d, q, k):
        loss, _ = huber_quantile_loss(d, q, k)
        assert loss >= 0
        if d != 0:
            assert loss > 0 or abs(d) < 1e-150

    @given(st.floats(-20, 20), st.floats(0.01, 0.99), st.floats(0.05, 5))
    def test_gradient_matches_finite_differences(self, d, q, k):
        h = 1e-6
        if abs(abs(d) - k) < 10 * h or abs(d) < 10 * h:
            return
        num = (huber_quantile_loss(d + h, q, k)[0] - huber_quantile_loss(d - h, q, k)[0]) / (2 * h)
        _, g = huber_quantile_loss(d, q, k)
        assert num == pytest.approx(g, rel=1e-6, abs=1e-8)

    def test_vectorised(self):
        loss, grad = huber_quantile_loss(np.array([-1.0, 0.0, 2.0]), 0.5, 1.0)
        assert loss.shape == grad.shape == (3,)

    @given(st.integers(1, 16), st.floats(0.05, 5), st.integers(0, 2**32 - 1))
    def test_mean_gradient_fast_path(self, n, k, seed):
        delta = np.random.default_rng(seed).normal(0, 3, (4, n, n))
        q = quantile_fractions(n)[None, :, None]
        _, g = huber_quantile_loss(delta, q, k)
        assert np.allclose(_huber_grad_mean(delta, q, k), g.mean(axis=-1), rtol=0, atol=1e-12)


class TestDistortedQ:
    def test_constant(self, rng):
        t = QuantileTable(np.full((1, 1, 8), 3.0))
        assert distorted_q(t, 0, 0, cvar_beta(0.3), m=16, rng=rng) == 3.0

    def test_identity_exact(self):
        t = QuantileTable(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        assert distorted_q(t, 0, 0) == 2.5

    def test_lower_half(self):
        t = QuantileTable(np.array([[[0.0, 0.0, 10.0, 10.0]]]))
        assert distorted_q(t, 0, 0, cvar_beta(0.5)) == 0.0

    def test_lower_decile(self):
        t = QuantileTable(np.array([[[0.0] * 9 + [10.0]]]))
        assert distorted_q(t, 0, 0, cvar_beta(0.1)) == 0.0

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=16))
    def test_identity_equals_mean(self, xs):
        t = QuantileTable(np.array([[xs]]))
        assert distorted_q(t, 0, 0) == pytest.approx(cvar_right(make_empirical(xs), 1.0), abs=1e-12)

    def test_monte_carlo_converges(self):
        t = QuantileTable(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        assert distorted_q(t, 0, 0, m=20000, rng=np.random.default_rng(0)) == pytest.approx(2.5, abs=0.03)


class TestTd:
    def test_terminal_converges(self):
        t = QuantileTable.zeros(1, 1, 4)
        tr = Transition(0, 0, 1.0, 0, True)
        dist = []
        for _ in range(200):
            dist.append(np.abs(t.values - 1.0).max())
            td_update(t, tr, 0.9, 0.2)
        assert np.allclose(t.values, 1.0, atol=0.05)
        # contraction toward the point mass for small steps
        assert all(b < a for a, b in zip(dist[:20], dist[1:21]))

    def test_lr_zero(self):
        t = QuantileTable(np.random.default_rng(0).random((2, 2, 4)))
        before = t.values.copy()
        td_update(t, Transition(0, 1, 5.0, 1, False), 0.9, 0.0)
        assert np.array_equal(before, t.values)

    def test_geometric_fixed_point(self):
        t = QuantileTable.zeros(1, 1, 4)
        tr = Transition(0, 0, 1.0, 0, False)
        for _ in range(3000):
            td_update(t, tr, 0.5, 0.1)
        assert t.values.mean() == pytest.approx(2.0, abs=0.05)

    def test_target_uses_greedy_action_of_same_head(self):
        # next state: action 1 better under identity beta, action 0 better under a low-tail beta
        vals = np.zeros((2, 2, 4))
        vals[1, 0] = [4.0, 4.0, 4.0, 4.0]
        vals[1, 1] = [0.0, 0.0, 10.0, 10.0]
        a = QuantileTable(vals.copy())
        b = QuantileTable(vals.copy())
        tr = Transition(0, 0, 0.0, 1, False)
        td_update(a, tr, 1.0, 0.01)
        td_update(b, tr, 1.0, 0.01, beta=cvar_beta(0.5))
        assert a.values[0, 0].tolist() != b.values[0, 0].tolist()
        # low-tail target picks action 0: every target is 4, beyond kappa, so atom i moves by lr * q_i
        assert b.values[0, 0] == pytest.approx(0.01 * quantile_fractions(4))


class TestEnsemble:
    def test_full_mask_updates_all(self, rng):
        m = EnsembleModel.random(3, 2, 2, 4, rng, p_mask=1.0)
        before = m.atoms.copy()
        ensemble_update(m, Transition(0, 0, 1.0, 1, True), 0.9, 0.1, identity_beta, 1.0, rng)
        assert np.all(np.any(m.atoms[:, 0, 0] != before[:, 0, 0], axis=-1))

    def test_mask_reproducible(self):
        def run():
            r = np.random.default_rng(3)
            m = EnsembleModel.random(6, 3, 2, 4, r, p_mask=0.5)
            for i in range(20):
                ensemble_update(m, Transition(i % 3, i % 2, 1.0, (i + 1) % 3, i % 5 == 0), 0.9, 0.1,
                                identity_beta, 1.0, r)
            return m.atoms
        assert np.array_equal(run(), run())

    def test_identical_heads_stay_identical(self, rng):
        atoms = np.repeat(rng.random((1, 3, 2, 4)), 4, axis=0)
        m = EnsembleModel(atoms, p_mask=1.0)
        for i in range(100):
            ensemble_update(m, Transition(i % 3, (i // 3) % 2, float(i % 4), (i + 1) % 3, False), 0.9, 0.1,
                            identity_beta, 1.0, rng)
        assert all(np.array_equal(m.atoms[0], m.atoms[k]) for k in range(1, 4))

    def test_heads_exchangeable(self):
        base = np.random.default_rng(0).random((3, 2, 2, 4))
        perm = [2, 0, 1]
        a = EnsembleModel(base.copy())
        b = EnsembleModel(base[perm].copy())
        assert np.array_equal(ensemble_q(a, 1, 0)[perm], ensemble_q(b, 1, 0))

    def test_ensemble_q_examples(self):
        atoms = np.zeros((3, 1, 1, 2))
        atoms[1] += 1
        atoms[2] += 2
        assert ensemble_q(EnsembleModel(atoms), 0, 0).tolist() == [0.0, 1.0, 2.0]
        single = EnsembleModel(np.array([[[[1.0, 3.0]]]]))
        assert ensemble_q(single, 0, 0).tolist() == [distorted_q(single.head(0), 0, 0)]

    def test_bad_mask(self, rng):
        with pytest.raises(ValueError):
            EnsembleModel.random(2, 1, 1, 1, rng, p_mask=0.0)


class TestStore:
    def test_epistemic_dist(self):
        d = epistemic_dist([3.0, 1.0, 2.0])
        assert d.atoms.tolist() == [1.0, 2.0, 3.0]
        assert epistemic_dist([1.5, 1.5]).atoms.tolist() == [1.5, 1.5]
        assert d.mean() == 2.0

    def test_asynchronous(self):
        st_ = EpistemicStore(2, 2)
        init = {(s, a): make_empirical([s, a]) for s in range(2) for a in range(2)}
        for (s, a), v in init.items():
            st_.get(s, a, lambda v=v: v)
        store_update(st_, (0, 0), make_empirical([9.0]))
        assert st_.get(0, 1, lambda: None) == init[(0, 1)]
        store_update(st_, (0, 0), make_empirical([7.0]))
        assert st_.get(0, 0, lambda: None).atoms.tolist() == [7.0]
        untouched = {k: hash(v) for k, v in st_.items() if k != (0, 0)}
        store_update(st_, (0, 0), make_empirical([1.0]))
        assert untouched == {k: hash(v) for k, v in st_.items() if k != (0, 0)}

    def test_lazy_init_then_frozen(self):
        st_ = EpistemicStore(1, 1)
        calls = []
        first = st_.get(0, 0, lambda: calls.append(1) or make_empirical([1.0]))
        again = st_.get(0, 0, lambda: calls.append(1) or make_empirical([2.0]))
        assert first == again and len(calls) == 1

    def test_peek_does_not_write(self):
        st_ = EpistemicStore(1, 1)
        st_.peek(0, 0, lambda: make_empirical([1.0]))
        assert not st_.initialized(0, 0)

    def test_bounds(self):
        with pytest.raises(IndexError):
            store_update(EpistemicStore(1, 1), (1, 0), make_empirical([0]))


def test_replay_ring(rng):
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.push(Transition(i, 0, 0.0, 0, False))
    assert len(buf) == 3
    assert {t.s for t in buf.sample(50, rng)} <= {2, 3, 4}
