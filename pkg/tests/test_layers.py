import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipflow import layers
from skipflow.errors import DimensionError
from skipflow.numerics import AdamState, ParamBlock, adam_step, relative_error, sigmoid
from skipflow.text import PAD

H_STEP = 1e-5
TOL = 1e-4


def numeric_grad(f, arr, h=H_STEP):
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def assert_grads_close(analytic, numeric, tol=TOL):
    worst = max((relative_error(a, n) for a, n in zip(np.ravel(analytic), np.ravel(numeric))), default=0.0)
    assert worst < tol, worst


def randomize(blocks, rng, scale=1.0):
    for p in blocks:
        p.values[...] = rng.uniform(-scale, scale, p.shape)
        p.zero_grad()


# ---------------------------------------------------------------- embedding


class TestEmbedding:
    def table(self, V=6, n=3, seed=0):
        return layers.EmbeddingTable.init(np.random.default_rng(seed), V, n)

    def test_all_pad_is_zero(self):
        assert not layers.embed_forward(np.zeros(5, dtype=int), self.table()).any()

    def test_repeated_ids_give_identical_rows(self):
        X = layers.embed_forward(np.array([2, 4, 2]), self.table())
        np.testing.assert_array_equal(X[0], X[2])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            layers.embed_forward(np.array([1, 6]), self.table())

    def test_gradient_of_sum_counts_occurrences(self):
        t = self.table()
        ids = np.array([[1, 3, 3], [0, 3, 5]])
        layers.embed_backward(ids, np.ones((2, 3, 3)), t)
        counts = np.bincount(ids.ravel(), minlength=6).astype(float)
        counts[PAD] = 0.0
        np.testing.assert_array_equal(t.W_e.grad, np.repeat(counts[:, None], 3, axis=1))

    def test_pad_row_stays_zero_under_adam(self):
        rng = np.random.default_rng(1)
        t = self.table()
        opt = AdamState(lr=0.1)
        for _ in range(25):
            t.W_e.zero_grad()
            ids = rng.integers(0, 6, size=(4, 7))
            layers.embed_backward(ids, rng.normal(size=(4, 7, 3)), t)
            adam_step(t.blocks(), opt)
        assert not t.W_e.values[PAD].any()
        assert t.W_e.values[1:].any()


# ---------------------------------------------------------------- LSTM


def lstm_params(N=3, d=4, seed=0):
    return layers.LstmParams.init(np.random.default_rng(seed), N, d)


class TestLstmStep:
    def test_block_shapes(self):
        p = lstm_params(N=3, d=5)
        for g in layers.GATES:
            assert p.W[g].shape == (5, 3)
            assert p.U[g].shape == (5, 5)
            assert p.b[g].shape == (5,)
        assert (p.b["f"].values == 1.0).all()

    def test_zero_params_zero_state(self):
        p = lstm_params()
        for blk in p.blocks():
            blk.values[...] = 0.0
        (h, c), _ = layers.lstm_step(np.ones(3), np.zeros(4), np.zeros(4), p)
        assert not h.any() and not c.any()

    def test_forget_saturation_keeps_cell(self):
        p = lstm_params()
        for blk in p.blocks():
            blk.values[...] = 0.0
        p.b["f"].values[...] = 50.0
        p.b["i"].values[...] = -50.0
        c_prev = np.array([0.3, -0.7, 1.2, 0.0])
        (_, c), _ = layers.lstm_step(np.ones(3), np.full(4, 0.2), c_prev, p)
        np.testing.assert_allclose(c, c_prev, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            layers.lstm_step(np.ones(2), np.zeros(4), np.zeros(4), lstm_params())

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        p = lstm_params(seed=seed)
        randomize(p.blocks(), rng)
        x, h0, c0 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4)
        wh, wc = rng.normal(size=4), rng.normal(size=4)

        def loss():
            (h, c), _ = layers.lstm_step(x, h0, c0, p)
            return wh @ h + wc @ c

        _, cache = layers.lstm_step(x, h0, c0, p)
        dx, dh0, dc0 = layers.lstm_step_backward(wh, wc, cache, p)
        assert_grads_close(dx, numeric_grad(loss, x))
        assert_grads_close(dh0, numeric_grad(loss, h0))
        assert_grads_close(dc0, numeric_grad(loss, c0))
        for blk in p.blocks():
            assert_grads_close(blk.grad, numeric_grad(loss, blk.values))


class TestRunSequence:
    def setup(self, V=10, N=3, d=4, seed=0):
        rng = np.random.default_rng(seed)
        t = layers.EmbeddingTable.init(rng, V, N)
        p = layers.LstmParams.init(rng, N, d)
        return t, p

    def test_matches_stepwise(self):
        t, p = self.setup()
        ids = np.array([[3, 1, 4, 1, 5]])
        H, _, _ = layers.run_sequence(ids, [5], t, p)
        h, c = np.zeros(4), np.zeros(4)
        for k, tok in enumerate(ids[0]):
            (h, c), _ = layers.lstm_step(t.W_e.values[tok], h, c, p)
            np.testing.assert_allclose(H[0, k], h, atol=1e-14)

    def test_single_step_mean(self):
        t, p = self.setup()
        H, e, _ = layers.run_sequence(np.array([[7]]), [1], t, p)
        np.testing.assert_array_equal(e[0], H[0, 0])

    def test_constant_states_mean(self):
        t, p = self.setup()
        for blk in p.blocks():
            blk.values[...] = 0.0
        p.b["g"].values[...] = 0.5
        p.b["i"].values[...] = 30.0
        p.b["f"].values[...] = -30.0  # c_t = g regardless of history
        H, e, _ = layers.run_sequence(np.array([[2, 5, 3, 8]]), [4], t, p)
        np.testing.assert_allclose(H[0], np.broadcast_to(H[0, 0], (4, 4)), atol=1e-12)
        np.testing.assert_allclose(e[0], H[0, 0], atol=1e-12)

    def test_masked_mean_two_of_five(self):
        t, p = self.setup()
        H, e, _ = layers.run_sequence(np.array([[4, 2, 0, 0, 0]]), [2], t, p)
        np.testing.assert_allclose(e[0], (H[0, 0] + H[0, 1]) / 2, atol=1e-15)

    @given(st.lists(st.integers(1, 9), min_size=1, max_size=6), st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_appending_pad_leaves_mean_unchanged(self, toks, extra):
        t, p = self.setup()
        short = np.array([toks])
        longer = np.array([toks + [PAD] * extra])
        _, e1, _ = layers.run_sequence(short, [len(toks)], t, p)
        _, e2, _ = layers.run_sequence(longer, [len(toks)], t, p)
        np.testing.assert_allclose(e1, e2, atol=1e-15)

    def test_zero_length_pools_to_zero(self):
        t, p = self.setup()
        _, e, _ = layers.run_sequence(np.zeros((1, 4), dtype=int), [0], t, p)
        assert not e.any()

    @pytest.mark.parametrize("pooling", ["mean", "last"])
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed, pooling):
        rng = np.random.default_rng(seed)
        t, p = self.setup(seed=seed)
        randomize(t.blocks() + p.blocks(), rng)
        t.W_e.values[PAD] = 0.0
        ids = rng.integers(1, 10, size=(3, 6))
        lengths = np.array([6, 4, 2])
        for b, n in enumerate(lengths):
            ids[b, n:] = PAD
        wH, we = rng.normal(size=(3, 6, 4)), rng.normal(size=(3, 4))

        def loss():
            H, e, _ = layers.run_sequence(ids, lengths, t, p, pooling)
            return np.sum(wH * H) + np.sum(we * e)

        _, _, cache = layers.run_sequence(ids, lengths, t, p, pooling)
        layers.run_sequence_backward(wH, we, cache, t, p)
        for blk in t.blocks() + p.blocks():
            assert_grads_close(blk.grad, numeric_grad(loss, blk.values))
        assert not t.W_e.grad[PAD].any()


# ---------------------------------------------------------------- coherence scorers


def ntn(d=3, k=2, seed=0):
    return layers.NtnParams.init(np.random.default_rng(seed), d, k)


class TestNtn:
    def test_zero_params_half(self):
        p = ntn()
        for blk in p.blocks():
            blk.values[...] = 0.0
        assert layers.ntn_score([1.0, -2.0, 3.0], [0.5, 0.5, 0.5], p) == 0.5

    def test_negating_u_complements(self):
        rng = np.random.default_rng(3)
        p = ntn()
        randomize(p.blocks(), rng)
        a, b = rng.normal(size=(2, 3))
        s = layers.ntn_score(a, b, p)
        p.u.values *= -1
        assert layers.ntn_score(a, b, p) == pytest.approx(1 - s, abs=1e-15)

    def test_hand_instance(self):
        p = layers.NtnParams(
            M=ParamBlock("M", np.array([[[0.5], [-1.0]], [[2.0], [0.25]]])),
            V=ParamBlock("V", np.array([[0.1, -0.2, 0.3, 0.4]])),
            b=ParamBlock("b", np.array([-0.05])),
            u=ParamBlock("u", np.array([1.5])),
        )
        a, b = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
        # a^T M b = 0.5*1*-1 + -1*1*0.5 + 2*2*-1 + 0.25*2*0.5 = -4.75
        # V [a;b] = 0.1 - 0.4 - 0.3 + 0.2 = -0.4
        expected = 1.0 / (1.0 + np.exp(-1.5 * np.tanh(-4.75 - 0.4 - 0.05)))
        assert abs(layers.ntn_score(a, b, p) - expected) < 1e-12

    def test_not_symmetric(self):
        rng = np.random.default_rng(4)
        p = ntn(d=4, k=3)
        randomize(p.blocks(), rng)
        a, b = rng.normal(size=(2, 4))
        assert abs(layers.ntn_score(a, b, p) - layers.ntn_score(b, a, p)) > 1e-6

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_open_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        p = ntn()
        randomize(p.blocks(), rng, scale=3.0)
        s = layers.ntn_score(*rng.normal(size=(2, 3)), p)
        assert 0.0 < s < 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        p = ntn(d=3, k=2, seed=seed)
        randomize(p.blocks(), rng)
        a, b = rng.uniform(-1, 1, (2, 5, 3))
        w = rng.normal(size=5)

        def loss():
            return w @ layers.ntn_forward(a, b, p)[0]

        _, cache = layers.ntn_forward(a, b, p)
        da, db = layers.ntn_backward(w, cache, p)
        assert_grads_close(da, numeric_grad(loss, a))
        assert_grads_close(db, numeric_grad(loss, b))
        for blk in p.blocks():
            assert_grads_close(blk.grad, numeric_grad(loss, blk.values))

    def test_dimension_error(self):
        with pytest.raises(DimensionError):
            layers.ntn_score(np.ones(2), np.ones(2), ntn(d=3))


class TestBilinear:
    def params(self, M):
        return layers.BilinearParams(ParamBlock("M", np.asarray(M, dtype=float)))

    def test_zero_form(self):
        assert layers.bilinear_score([1.0, 2.0], [3.0, 4.0], self.params(np.zeros((2, 2)))) == 0.5

    def test_zero_vector(self):
        p = self.params([[1.0, 2.0], [3.0, 4.0]])
        assert layers.bilinear_score([0.0, 0.0], [3.0, 4.0], p) == 0.5
        assert layers.bilinear_score([1.0, 2.0], [0.0, 0.0], p) == 0.5

    def test_hand_value(self):
        s = layers.bilinear_score([1.0, 0.0], [0.0, 1.0], self.params([[0.0, 4.0], [0.0, 0.0]]))
        assert s == pytest.approx(0.9820, abs=1e-4)
        assert s == sigmoid(4.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        p = self.params(rng.uniform(-1, 1, (3, 3)))
        a, b = rng.uniform(-1, 1, (2, 4, 3))
        w = rng.normal(size=4)

        def loss():
            return w @ layers.bilinear_forward(a, b, p)[0]

        _, cache = layers.bilinear_forward(a, b, p)
        da, db = layers.bilinear_backward(w, cache, p)
        assert_grads_close(da, numeric_grad(loss, a))
        assert_grads_close(db, numeric_grad(loss, b))
        assert_grads_close(p.M.grad, numeric_grad(loss, p.M.values))


# ---------------------------------------------------------------- dense + output


class TestDense:
    def params(self, d=3, n=2, H=4, activation="tanh", seed=0):
        return layers.DenseParams.init(np.random.default_rng(seed), d + n, H, activation)

    def test_zero_map(self):
        p = self.params()
        p.W_h.values[...] = 0.0
        assert not layers.dense_hidden(np.ones(3), np.ones(2), p).any()

    def test_bias_outside_activation(self):
        p = self.params()
        p.W_h.values[...] = 0.0
        p.b_h.values[...] = 3.0  # tanh(3) would give 0.995
        np.testing.assert_array_equal(layers.dense_hidden(np.ones(3), np.ones(2), p), 3.0)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            layers.dense_hidden(np.ones(3), np.ones(3), self.params())

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            self.params(activation="gelu")

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed, activation):
        rng = np.random.default_rng(seed)
        p = self.params(activation=activation, seed=seed)
        randomize(p.blocks(), rng)
        e, s = rng.uniform(-1, 1, (6, 3)), rng.uniform(0, 1, (6, 2))
        w = rng.normal(size=(6, 4))

        def loss():
            return np.sum(w * layers.dense_forward(e, s, p)[0])

        _, cache = layers.dense_forward(e, s, p)
        de, ds = layers.dense_backward(w, cache, p)
        assert_grads_close(de, numeric_grad(loss, e))
        assert_grads_close(ds, numeric_grad(loss, s))
        for blk in p.blocks():
            assert_grads_close(blk.grad, numeric_grad(loss, blk.values))


class TestOutput:
    def test_zero_is_half(self):
        p = layers.OutputParams(ParamBlock("W", np.zeros(4)), ParamBlock("b", np.array(0.0)))
        assert layers.output_score(np.ones(4), p) == 0.5

    @pytest.mark.parametrize("mean", [0.1, 0.37, 0.5, 0.9])
    def test_initial_bias_reproduces_mean(self, mean):
        p = layers.OutputParams.init(np.random.default_rng(0), 4, mean_target=mean)
        p.W_f.values[...] = 0.0
        assert layers.output_score(np.ones(4), p) == pytest.approx(mean, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        p = layers.OutputParams.init(rng, 4)
        randomize(p.blocks(), rng)
        h = rng.uniform(-1, 1, (5, 4))
        w = rng.normal(size=5)

        def loss():
            return w @ layers.output_forward(h, p)[0]

        _, cache = layers.output_forward(h, p)
        dh = layers.output_backward(w, cache, p)
        assert_grads_close(dh, numeric_grad(loss, h))
        for blk in p.blocks():
            assert_grads_close(blk.grad, numeric_grad(loss, blk.values))


def test_glorot_range():
    W = layers.glorot(np.random.default_rng(0), (50, 30), 30, 50)
    r = np.sqrt(6 / 80)
    assert np.abs(W).max() <= r
    assert np.abs(W).max() > 0.9 * r
