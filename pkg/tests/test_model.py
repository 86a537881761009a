import math

import numpy as np
import pytest

from inrcine.model import (
    CoordinateGrid,
    FMLPModel,
    FourierFeatureConfig,
    MLPConfig,
    embed_joint,
    embed_points,
    embed_separate,
    embedding_jacobian,
    init_weights,
)

from .helpers import central_diff, rel_err


def scalar_embedding(x, y, t, ff):
    # independent per-entry reimplementation using Python floats
    if ff.mode == "separate":
        sp = [ff.B[i, 0] * ff.s_x * x + ff.B[i, 1] * ff.s_y * y for i in range(ff.n_spatial)]
        tp = [ff.b[j] * ff.s_t * t for j in range(ff.n_temporal)]
        return np.array([math.sin(p) for p in sp] + [math.cos(p) for p in sp]
                        + [math.sin(p) for p in tp] + [math.cos(p) for p in tp])
    ph = [ff.B_joint[i, 0] * ff.s_x * x + ff.B_joint[i, 1] * ff.s_y * y + ff.B_joint[i, 2] * ff.s_t * t
          for i in range(ff.n_joint)]
    return np.array([math.sin(p) for p in ph] + [math.cos(p) for p in ph])


class TestEmbedding:
    def test_default_lengths(self):
        assert embed_separate(0.01, -0.02, 0.3, FourierFeatureConfig()).shape == (640,)
        assert embed_joint(0.01, -0.02, 0.3, FourierFeatureConfig(mode="joint")).shape == (640,)

    def test_origin_is_cos_ones(self):
        e = embed_separate(0.0, 0.0, 0.0, FourierFeatureConfig())
        np.testing.assert_array_equal(e[:256], 0.0)
        np.testing.assert_array_equal(e[256:512], 1.0)
        np.testing.assert_array_equal(e[512:576], 0.0)
        np.testing.assert_array_equal(e[576:], 1.0)

    @pytest.mark.parametrize("mode", ["separate", "joint"])
    def test_matches_scalar_oracle(self, mode):
        ff = FourierFeatureConfig(mode=mode, seed=3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x, y = rng.uniform(-0.15, 0.15, 2)
            t = rng.uniform(0, 4)
            got = embed_points(np.array([[x, y]]), t, ff)[0]
            assert np.max(np.abs(got - scalar_embedding(x, y, t, ff))) < 1e-12

    def test_seed_reproducible_and_mode_independent(self):
        a = FourierFeatureConfig(seed=5)
        b = FourierFeatureConfig(seed=5, mode="joint")
        np.testing.assert_array_equal(a.B, b.B)
        np.testing.assert_array_equal(a.B_joint, b.B_joint)
        c = FourierFeatureConfig(seed=6)
        assert not np.array_equal(a.B, c.B)

    def test_wrong_mode_rejected(self):
        with pytest.raises(ValueError):
            embed_joint(0, 0, 0, FourierFeatureConfig())
        with pytest.raises(ValueError):
            FourierFeatureConfig(mode="mixed")

    @pytest.mark.parametrize("mode", ["separate", "joint"])
    def test_jacobian_finite_differences(self, mode):
        ff = FourierFeatureConfig(n_spatial=8, n_temporal=4, n_joint=10, mode=mode, seed=1)
        p = np.array([0.02, -0.03, 0.7])
        fn = embed_separate if mode == "separate" else embed_joint
        fd = np.zeros((ff.n_features, 3))
        h = 1e-6
        for i in range(3):
            q1, q2 = p.copy(), p.copy()
            q1[i] += h
            q2[i] -= h
            fd[:, i] = (fn(*q1, ff) - fn(*q2, ff)) / (2 * h)
        assert rel_err(embedding_jacobian(*p, ff), fd) < 1e-6


class TestGrid:
    def test_center_pixel_is_origin(self):
        g = CoordinateGrid(8, 4, 0.4, 0.2)
        center = g.coords.reshape(8, 4, 2)[4, 2]
        np.testing.assert_array_equal(center, [0.0, 0.0])
        assert g.dx == pytest.approx(0.1)
        assert g.dy == pytest.approx(0.025)

    def test_row_major_xy(self):
        g = CoordinateGrid(2, 2, 2.0, 2.0)
        np.testing.assert_allclose(g.coords, [[-1, -1], [0, -1], [-1, 0], [0, 0]])


def tiny_model(mode="separate", n_hidden=2, width=8, s_out=1.0):
    ff = FourierFeatureConfig(s_x=20, s_y=20, s_t=2, n_spatial=6, n_temporal=3, n_joint=8,
                              mode=mode, seed=2)
    return FMLPModel(ff, MLPConfig(n_hidden=n_hidden, width=width, sigma_linear=0.5, s_out=s_out),
                     seed=4)


class TestFMLP:
    def test_shapes_and_parameter_count(self):
        m = init_weights(MLPConfig(n_hidden=3, width=16), seed=0,
                         ff=FourierFeatureConfig(n_spatial=8, n_temporal=4))
        sizes = [24, 16, 16, 16, 2]
        expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        assert sum(p.value.size for p in m.parameters()) == expected
        img = m.forward_grid(CoordinateGrid(4, 4, 0.1, 0.1), 0.0)
        assert img.shape == (4, 4) and np.iscomplexobj(img)

    def test_init_statistics(self):
        m = init_weights(MLPConfig(n_hidden=1, width=512, sigma_linear=0.01), seed=0)
        W, b = m.layers[0]
        assert abs(W.value.std() - 0.01) < 2e-4
        assert np.all(b.value == 0)

    def test_fast_path_matches_full_embedding(self):
        for mode in ("separate", "joint"):
            m = tiny_model(mode)
            g = CoordinateGrid(4, 4, 0.3, 0.3)
            img = m.forward_grid(g, 0.37)
            out, _ = m.forward_features(embed_points(g.coords, 0.37, m.ff))
            assert np.max(np.abs(img.ravel() - (out[:, 0] + 1j * out[:, 1]))) < 1e-13

    def test_s_out_scales_output(self):
        g = CoordinateGrid(4, 4, 0.3, 0.3)
        a = tiny_model(s_out=1.0).forward_grid(g, 0.1)
        b = tiny_model(s_out=3.0).forward_grid(g, 0.1)
        np.testing.assert_allclose(b, 3.0 * a, rtol=1e-14)

    @pytest.mark.parametrize("mode", ["separate", "joint"])
    def test_end_to_end_parameter_gradients(self, mode):
        m = tiny_model(mode)
        g = CoordinateGrid(4, 4, 0.3, 0.3)
        rng = np.random.default_rng(9)
        C = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))

        def loss():
            return float(np.sum((np.conj(C) * m.forward_grid(g, 0.42)).real))

        img, cache = m.forward_grid(g, 0.42, return_cache=True)
        m.zero_grad()
        m.backward_grid(cache, C)  # dL/dRe + i dL/dIm of Re<C, img> is C
        for p in m.parameters():
            assert rel_err(p.grad, central_diff(loss, p.value, h=1e-6)) < 1e-4

    def test_state_roundtrip(self):
        m = tiny_model()
        g = CoordinateGrid(4, 4, 0.3, 0.3)
        before = m.forward_grid(g, 0.2)
        saved = m.state()
        for p in m.parameters():
            p.value += 1.0
        m.load_state(saved)
        np.testing.assert_array_equal(m.forward_grid(g, 0.2), before)

    def test_regrid_invalidates_cache(self):
        m = tiny_model()
        a = CoordinateGrid(4, 4, 0.3, 0.3)
        b = a.shifted(0.01, 0.0)
        ia = m.forward_grid(a, 0.0)
        ib = m.forward_grid(b, 0.0)
        assert not np.allclose(ia, ib)
        np.testing.assert_array_equal(m.forward_grid(a, 0.0), ia)

    def test_origin_offset_equals_shifted_grid(self):
        ff = tiny_model().ff
        mlp = tiny_model().mlp
        g = CoordinateGrid(4, 4, 0.3, 0.3)
        m1 = FMLPModel(ff, mlp, seed=4, origin=(0.01, -0.02))
        m2 = FMLPModel(ff, mlp, seed=4)
        np.testing.assert_allclose(m1.forward_grid(g, 0.3), m2.forward_grid(g.shifted(0.01, -0.02), 0.3),
                                   atol=1e-14)
