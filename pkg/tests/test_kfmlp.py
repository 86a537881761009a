import numpy as np
import pytest

from inrcine.kfmlp import (
    KFMLPModel,
    forward_trajectory,
    kcoords_to_index,
    normalize_kcoords,
    reconstruct_image,
)
from inrcine.model import FourierFeatureConfig, MLPConfig
from inrcine.mri import SensitivityMaps
from inrcine.phantom import PhantomConfig, make_schedule, make_sensitivities, synthesize_dataset
from inrcine.tensorcore import fft2

from .helpers import central_diff, rel_err


def small_model(C=2, H=8, W=8, s_t=1.0, width=8):
    ff = FourierFeatureConfig(s_x=2, s_y=2, s_t=s_t, n_spatial=6, n_temporal=3, seed=1)
    return KFMLPModel(ff, MLPConfig(n_hidden=2, width=width, sigma_linear=0.5, s_out=3.0), C, H, W,
                      seed=2)


class TestCoords:
    def test_range_and_dc(self):
        rr, cc = np.meshgrid(np.arange(8), np.arange(16), indexing="ij")
        kx, ky = normalize_kcoords(rr, cc, 8, 16)
        assert kx.min() == -np.pi and kx.max() < np.pi
        assert ky.min() == -np.pi and ky.max() < np.pi
        assert kx[0, 0] == 0 and ky[0, 0] == 0

    def test_inverse(self):
        rr, cc = np.meshgrid(np.arange(8), np.arange(16), indexing="ij")
        kx, ky = normalize_kcoords(rr, cc, 8, 16)
        r2, c2 = kcoords_to_index(kx, ky, 8, 16)
        np.testing.assert_array_equal(r2, rr)
        np.testing.assert_array_equal(c2, cc)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            normalize_kcoords(8, 0, 8, 8)


class TestModel:
    def test_output_width(self):
        for C in (1, 3):
            m = small_model(C=C)
            assert m.layers[-1][0].value.shape[0] == 2 * C
            assert m.forward_full(0.1).shape == (C, 8, 8)

    def test_changing_coils_changes_only_output_layer(self):
        a, b = small_model(C=1), small_model(C=4)
        for (wa, _), (wb, _) in zip(a.layers[:-1], b.layers[:-1]):
            np.testing.assert_array_equal(wa.value, wb.value)

    def test_rows_agree_with_full_grid(self):
        m = small_model()
        full = m.forward_full(0.3)
        rows = np.array([5, 1, 1])
        np.testing.assert_allclose(m.forward_rows(rows, 0.3), full[:, rows], atol=1e-12)

    def test_static_when_s_t_zero(self):
        m = small_model(s_t=0.0)
        sens = make_sensitivities(2, 8, 8)
        np.testing.assert_array_equal(reconstruct_image(m, 0.0, sens), reconstruct_image(m, 3.0, sens))

    def test_zero_model_zero_image(self):
        m = small_model()
        for p in m.parameters():
            p.value[...] = 0
        assert np.all(reconstruct_image(m, 0.2, make_sensitivities(2, 8, 8)) == 0)

    def test_exact_data_reconstruction(self):
        rng = np.random.default_rng(0)
        sens = make_sensitivities(2, 8, 8)
        x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))

        class Exact(KFMLPModel):
            def forward_full(self, t):
                return fft2(sens.maps * x)

        m = Exact(small_model().ff, small_model().mlp, 2, 8, 8)
        np.testing.assert_allclose(reconstruct_image(m, 0.0, sens), x, atol=1e-10)

    def test_backward_rows_finite_differences(self):
        m = small_model(width=6)
        rows = np.array([2, 6])
        rng = np.random.default_rng(3)
        G = rng.standard_normal((2, 2, 8)) + 1j * rng.standard_normal((2, 2, 8))

        def loss():
            return float(np.sum((np.conj(G) * m.forward_rows(rows, 0.4)).real))

        _, cache = m.forward_rows(rows, 0.4, return_cache=True)
        m.zero_grad()
        m.backward_rows(cache, G)
        for p in m.parameters():
            assert rel_err(p.grad, central_diff(loss, p.value, h=1e-6)) < 1e-4

    def test_trajectory_matches_frame_ordering(self):
        cfg = PhantomConfig(H=16, W=16)
        meas = synthesize_dataset(cfg, make_schedule(16, 16, n_total_lines=40, seed=0),
                                  make_sensitivities(2, 16, 16), 0.05, 0, 6)
        m = small_model(C=2, H=16, W=16)
        k = 2
        y = forward_trajectory(m, meas, k)
        frame = meas.frame(k)
        ref = m.forward_full(frame.t)[:, frame.rows, :].ravel()
        np.testing.assert_allclose(y, ref, atol=1e-12)
        assert y.shape == meas.frame_measurements(k).shape


def test_sensitivity_type_roundtrip():
    s = SensitivityMaps(np.ones((4, 4)))
    assert s.C == 1 and s.shape == (4, 4)
