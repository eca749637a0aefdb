import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmtlab import nn
from dmtlab.errors import ConfigError, NumericError, ParseError, ShapeError


def naive_forward(model, x):
    """Triple-loop matmul oracle, independent of numpy's @."""
    a = [list(map(float, row)) for row in x]
    for layer in model.layers:
        w, b = layer.weight, layer.bias
        out = []
        for row in a:
            z = []
            for j in range(w.shape[1]):
                s = 0.0
                for k in range(w.shape[0]):
                    s += row[k] * w[k, j]
                s += b[j]
                z.append(max(s, 0.0) if layer.activation == "relu" else s)
            out.append(z)
        a = out
    return np.array(a)


def fd_gradient(model, loss_fn, h=1e-5):
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def weighted_ce(model, x, w, y, n=None):
    probs = nn.predict_proba(model, x)
    n = len(x) if n is None else n
    return sum(wi * nn.cross_entropy(p, yi) for p, wi, yi in zip(probs, w, y)) / n


class TestInitModel:
    def test_deterministic(self):
        a, b = nn.init_model(7, [2, 4, 2]), nn.init_model(7, [2, 4, 2])
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_distinct_seeds(self):
        a, b = nn.init_model(7, [2, 4, 2]), nn.init_model(8, [2, 4, 2])
        assert any(not np.array_equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    @pytest.mark.parametrize("sizes", [[2], [], [2, 0, 2]])
    def test_invalid_sizes(self, sizes):
        with pytest.raises(ConfigError):
            nn.init_model(7, sizes)

    def test_structure(self):
        m = nn.init_model(1, [3, 5, 4, 2])
        assert m.layer_sizes == [3, 5, 4, 2]
        assert [l.activation for l in m.layers] == ["relu", "relu", "identity"]
        assert all(np.all(l.bias == 0) for l in m.layers)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            nn.init_model(1, [3, 1])


class TestForward:
    def test_zero_weights(self):
        m = nn.init_model(0, [3, 4, 2])
        for p in m.parameters():
            p[...] = 0
        np.testing.assert_array_equal(nn.forward(m, np.ones((5, 3))), np.zeros((5, 2)))

    def test_identity_layer(self):
        m = nn.Model([nn.Layer(np.eye(2), np.zeros(2), "identity")])
        np.testing.assert_array_equal(nn.forward(m, [[1.0, 2.0]]), [[1.0, 2.0]])

    def test_matches_triple_loop_oracle(self):
        m = nn.init_model(3, [4, 6, 3])
        for l in m.layers:
            l.bias[:] = np.linspace(-0.5, 0.5, l.bias.size)
        x = nn.make_rng(5).standard_normal((7, 4))
        np.testing.assert_allclose(nn.forward(m, x), naive_forward(m, x), rtol=0, atol=1e-12)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            nn.forward(nn.init_model(0, [3, 2]), np.ones((2, 4)))


class TestSoftmaxEntropy:
    def test_symmetric(self):
        np.testing.assert_allclose(nn.softmax([0.0, 0.0]), [0.5, 0.5])

    def test_stable(self):
        p = nn.softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)

    def test_closed_form(self):
        np.testing.assert_allclose(nn.softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], rtol=1e-14)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            nn.softmax([np.nan, 0.0])

    # float64 saturates to exactly 1.0 once logit gaps exceed ~37
    @given(st.lists(st.floats(-15, 15), min_size=2, max_size=12))
    def test_softmax_simplex(self, logits):
        p = nn.softmax(logits)
        assert abs(p.sum() - 1) < 1e-9
        assert np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("p,expected", [
        ([0, 0, 1, 0], 0.0),
        ([0.25] * 4, 1.386294),
        ([0.5, 0.5], 0.693147),
    ])
    def test_entropy_values(self, p, expected):
        assert nn.entropy(p) == pytest.approx(expected, abs=1e-6)

    @settings(max_examples=200)
    @given(st.integers(2, 8), st.integers(0, 2**32 - 1))
    def test_entropy_max_at_uniform(self, c, seed):
        rng = nn.make_rng(seed)
        u = np.full(c, 1 / c)
        q = rng.dirichlet(np.ones(c))
        eps = rng.uniform(0, 1)
        assert nn.entropy(u) >= nn.entropy((1 - eps) * u + eps * q) - 1e-12
        assert nn.entropy(u) <= math.log(c) + 1e-12

    def test_entropy_zero_only_one_hot(self):
        assert nn.entropy([1.0, 0.0, 0.0]) == 0
        assert nn.entropy([0.999, 0.001, 0.0]) > 0

    @pytest.mark.parametrize("p,t,expected", [
        ([0.0, 1.0], 1, 0.0),
        ([0.25] * 4, 2, math.log(4)),
        ([0.75, 0.25], 1, 1.386294),
    ])
    def test_cross_entropy(self, p, t, expected):
        assert nn.cross_entropy(p, t) == pytest.approx(expected, abs=1e-6)

    def test_cross_entropy_floor(self):
        assert nn.cross_entropy([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))

    def test_cross_entropy_index(self):
        with pytest.raises(IndexError):
            nn.cross_entropy([0.5, 0.5], 2)


class TestBackward:
    def test_zero_weights_zero_grad(self):
        m = nn.init_model(1, [3, 5, 2])
        x = nn.make_rng(2).standard_normal((4, 3))
        g = nn.backward(m, x, np.zeros(4), [0, 1, 0, 1])
        assert np.all(g.flat() == 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = nn.make_rng(seed)
        sizes = [3] + list(rng.integers(2, 9, size=rng.integers(0, 3))) + [3]
        m = nn.init_model(seed, sizes)
        for l in m.layers:
            l.bias[:] = rng.normal(0, 0.1, l.bias.size)
        x = rng.standard_normal((6, 3))
        w = rng.uniform(0, 2, 6)
        y = rng.integers(0, 3, 6)
        g = nn.backward(m, x, w, y, batch_size=8)
        num = fd_gradient(m, lambda: weighted_ce(m, x, w, y, 8))
        for a, b in zip(g, num):
            np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-8)

    def test_duplication(self):
        rng = nn.make_rng(11)
        m = nn.init_model(11, [2, 6, 3])
        x = rng.standard_normal((3, 2))
        y = np.array([0, 2, 1])
        g_weighted = nn.backward(m, x, [2.0, 1.0, 1.0], y, batch_size=4)
        xd = np.vstack([x[:1], x])
        g_dup = nn.backward(m, xd, [1.0, 1.0, 1.0, 1.0], np.r_[y[:1], y], batch_size=4)
        for a, b in zip(g_weighted, g_dup):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)

    def test_shape_mismatch(self):
        m = nn.init_model(1, [2, 2])
        with pytest.raises(ShapeError):
            nn.backward(m, np.ones((3, 2)), [1.0, 1.0], [0, 1])


class TestSgd:
    def test_zero_grad_no_change(self):
        m = nn.init_model(1, [2, 3, 2])
        before = [p.copy() for p in m.parameters()]
        zero = nn.GradientSet([np.zeros_like(p) for p in m.parameters()])
        nn.sgd_step(m, zero, lr=0.1, momentum=0.9)
        for a, b in zip(before, m.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_plain_step(self):
        m = nn.init_model(1, [2, 3, 2])
        before = [p.copy() for p in m.parameters()]
        g = nn.GradientSet([np.full_like(p, 0.5) for p in m.parameters()])
        nn.sgd_step(m, g, lr=0.1)
        for a, b in zip(before, m.parameters()):
            np.testing.assert_allclose(b, a - 0.05, rtol=0, atol=1e-15)

    def test_momentum_recurrence(self):
        m = nn.init_model(1, [1, 2])
        p0 = m.layers[0].weight[0, 0]
        g1, g2, lr, mu, wd = 0.3, -0.2, 0.1, 0.9, 0.01
        vel = None
        for gval in (g1, g2):
            g = nn.GradientSet([np.full_like(p, gval) for p in m.parameters()])
            _, vel = nn.sgd_step(m, g, lr, mu, wd, vel)
        v1 = g1 + wd * p0
        p1 = p0 - lr * v1
        v2 = mu * v1 + g2 + wd * p1
        p2 = p1 - lr * v2
        assert abs(m.layers[0].weight[0, 0] - p2) < 1e-12

    @pytest.mark.parametrize("kw", [dict(lr=0.0), dict(lr=0.1, momentum=1.0), dict(lr=0.1, weight_decay=-1)])
    def test_bad_hyperparameters(self, kw):
        m = nn.init_model(1, [1, 2])
        with pytest.raises(ConfigError):
            nn.sgd_step(m, nn.GradientSet([np.zeros_like(p) for p in m.parameters()]), **kw)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        m = nn.init_model(9, [3, 7, 4])
        m.layers[0].bias[:] = 1 / 3
        path = tmp_path / "m.txt"
        nn.save_model(m, path)
        assert path.read_text().splitlines()[0] == "dmt-model v1 3 7 4"
        back = nn.load_model(path)
        assert back.fingerprint() == m.fingerprint()

    def test_truncated(self):
        text = nn.dumps_model(nn.init_model(1, [2, 2]))
        with pytest.raises(ParseError):
            nn.loads_model(text.rsplit("\n", 2)[0])

    def test_bad_header(self):
        with pytest.raises(ParseError):
            nn.loads_model("model 2 2\n0 0 0 0 0 0\n")


def test_determinism_bit_identical():
    def run():
        m = nn.init_model(4, [2, 5, 2])
        rng = nn.make_rng(4)
        vel = None
        for _ in range(20):
            x = rng.standard_normal((8, 2))
            y = (x[:, 0] > 0).astype(int)
            g = nn.backward(m, x, np.ones(8), y)
            _, vel = nn.sgd_step(m, g, 0.1, 0.9, 1e-4, vel)
        return m.fingerprint()

    assert run() == run()
