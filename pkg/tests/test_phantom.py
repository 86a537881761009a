import math

import numpy as np
import pytest

from inrcine.phantom import (
    PhantomConfig,
    add_noise,
    cardiac_waveform,
    make_schedule,
    make_sensitivities,
    partial_fourier_rows,
    render_image,
    render_series,
    synthesize_dataset,
)
from inrcine.mri import signed_frequency


def scalar_pixel(cfg, i, j, t):
    """Independent per-pixel evaluation of the ellipse scene."""
    x = (j - cfg.W // 2) * cfg.fov_x / cfg.W
    y = (i - cfg.H // 2) * cfg.fov_y / cfg.H
    shift = cfg.resp_amp * math.sin(2 * math.pi * cfg.resp_freq * t)
    ph = (t * cfg.cardiac_freq) % 1.0
    c = cfg.contraction_fraction
    if ph < c:
        w = -0.5 * (1 - math.cos(math.pi * ph / c))
    else:
        w = -0.5 * (1 + math.cos(math.pi * (ph - c) / (1 - c)))
    soft = cfg.edge_width_px * min(cfg.fov_x / cfg.W, cfg.fov_y / cfg.H)
    total = 0j
    for e in cfg.ellipses:
        s = 1 + cfg.cardiac_amp * w if e.cardiac else 1.0
        a, b = e.axes[0] * s, e.axes[1] * s
        r = math.hypot((x - e.center[0]) / a, (y - e.center[1] - shift) / b)
        z = min(max((1 - r) * min(a, b) / soft + 0.5, 0.0), 1.0)
        total += e.amplitude * z * z * (3 - 2 * z)
    return total * complex(math.cos(cfg.phase_x * x / cfg.fov_x + cfg.phase_y * y / cfg.fov_y),
                           math.sin(cfg.phase_x * x / cfg.fov_x + cfg.phase_y * y / cfg.fov_y))


class TestRender:
    def test_static_phantom(self):
        cfg = PhantomConfig(H=32, W=32, cardiac_amp=0.0, resp_amp=0.0)
        np.testing.assert_array_equal(render_image(cfg, 0.0), render_image(cfg, 2.7))

    def test_cardiac_periodicity(self):
        cfg = PhantomConfig(H=32, W=32, resp_amp=0.0)
        np.testing.assert_array_equal(render_image(cfg, 0.3), render_image(cfg, 1.3))

    def test_scalar_oracle(self):
        cfg = PhantomConfig()
        rng = np.random.default_rng(0)
        for _ in range(20):
            i, j = rng.integers(0, 64, 2)
            t = rng.uniform(0, 4)
            assert abs(render_image(cfg, t)[i, j] - scalar_pixel(cfg, i, j, t)) < 1e-12

    def test_complex_and_finite(self):
        img = render_image(PhantomConfig(), 0.5)
        assert np.all(np.isfinite(img))
        assert np.max(np.abs(img.imag)) > 0.05

    def test_static_patch_does_not_move(self):
        cfg = PhantomConfig()
        rows, cols = cfg.static_patch()
        series = render_series(cfg, np.linspace(0, 4, 41))
        means = np.abs(series[:, rows, cols]).mean(axis=(1, 2))
        assert np.std(means) < 1e-12
        assert means[0] > 0.1

    def test_heart_moves(self):
        cfg = PhantomConfig()
        a = render_image(cfg, 0.0)
        b = render_image(cfg, cfg.contraction_fraction)
        assert np.max(np.abs(a - b)) > 0.1

    def test_waveform_range(self):
        w = cardiac_waveform(np.linspace(0, 3, 1001), 1.0)
        assert w.max() <= 0 and w.min() >= -1
        assert cardiac_waveform(0.35, 1.0) == pytest.approx(-1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            PhantomConfig(cardiac_amp=1.0)
        with pytest.raises(ValueError):
            PhantomConfig(resp_amp=0.1)


class TestSensitivities:
    @pytest.mark.parametrize("C", [1, 2, 4, 8])
    def test_floor_by_scan(self, C):
        s = make_sensitivities(C, 64, 64, seed=3)
        assert s.C == C
        rss = np.sqrt(s.energy())
        # the floor is on the sum of squares; the root of 0.1 is about 0.316
        low = min(float(rss[i, j]) for i in range(64) for j in range(64))
        assert low ** 2 >= 0.1

    def test_seeded(self):
        np.testing.assert_array_equal(make_sensitivities(4, 16, 16, 1).maps,
                                      make_sensitivities(4, 16, 16, 1).maps)
        assert not np.array_equal(make_sensitivities(4, 16, 16, 1).maps,
                                  make_sensitivities(4, 16, 16, 2).maps)


class TestSchedule:
    def test_band(self):
        rows = partial_fourier_rows(64, 0.625)
        f = signed_frequency(rows, 64)
        assert rows.size == 40
        assert f[0] == 31 and f[-1] == -8
        assert np.all(np.diff(f) == -1)

    def test_coverage_rejected(self):
        with pytest.raises(ValueError):
            partial_fourier_rows(64, 1.2)

    def test_schedule(self):
        s = make_schedule(64, 64, 0.625, 1350, 6, seed=0)
        assert len(s) == 1350
        assert s.t[-1] + s.dt_line == pytest.approx(4.0)
        band = set(partial_fourier_rows(64, 0.625).tolist())
        assert set(s.ky.tolist()) <= band
        for k in range(0, 1350, 6):
            sweep = signed_frequency(s.ky[k:k + 6], 64)
            assert np.all(np.diff(sweep) < 0)

    def test_schedule_seeded(self):
        a = make_schedule(32, 32, seed=4, n_total_lines=60)
        b = make_schedule(32, 32, seed=4, n_total_lines=60)
        np.testing.assert_array_equal(a.ky, b.ky)


class TestDataset:
    def small(self, **kw):
        cfg = PhantomConfig(H=32, W=32, **kw)
        sched = make_schedule(32, 32, n_total_lines=120, seed=1)
        sens = make_sensitivities(2, 32, 32, seed=1)
        return synthesize_dataset(cfg, sched, sens, 0.05, 2, 6)

    def test_shapes_and_ground_truth(self):
        m = self.small()
        assert m.lines.shape == (120, 2, 32)
        assert len(m.val) == 6
        assert m.ground_truth.shape == (m.K, 32, 32)
        assert m.val_ground_truth.shape == (6, 32, 32)
        np.testing.assert_array_equal(m.ground_truth[3], render_image(PhantomConfig(H=32, W=32),
                                                                      m.frame_times[3]))

    def test_lines_match_dense_operator(self):
        from inrcine.tensorcore import fft2

        m = self.small()
        cfg = PhantomConfig(H=32, W=32)
        i = 17
        ref = fft2(m.sens.maps * render_image(cfg, m.schedule.t[i]))[:, m.schedule.ky[i]]
        np.testing.assert_allclose(m.lines[i], ref, atol=1e-13)

    def test_noiseless_deterministic(self):
        np.testing.assert_array_equal(self.small().lines, self.small().lines)

    def test_seeded_noise(self):
        a = self.small(noise_snr_db=20.0, seed=3)
        b = self.small(noise_snr_db=20.0, seed=3)
        clean = self.small()
        np.testing.assert_array_equal(a.lines, b.lines)
        n = a.lines - clean.lines
        snr = 10 * np.log10(np.mean(np.abs(clean.lines) ** 2) / np.mean(np.abs(n) ** 2))
        assert abs(snr - 20.0) < 0.5

    def test_add_noise_power(self):
        x = np.ones((2000, 4), complex)
        y = add_noise(x, 10.0, 0)
        assert abs(np.mean(np.abs(y - x) ** 2) - 0.1) < 0.01
