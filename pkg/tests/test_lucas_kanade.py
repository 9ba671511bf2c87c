import numpy as np
import pytest

from voxflow.lucas_kanade import estimate_lucas_kanade


def textured_field(rng, ny=64, nx=64):
    from scipy.ndimage import gaussian_filter
    f = gaussian_filter(rng.normal(size=(ny, nx)), 3.0)
    return 10.0 * (f - f.min())


class TestLucasKanade:
    def test_recovers_unit_translation(self):
        rng = np.random.default_rng(0)
        f0 = textured_field(rng)
        f1 = np.roll(f0, 1, axis=1)  # content moves +x by one cell
        res = estimate_lucas_kanade(f0, f1)
        assert not res.all_rejected
        inner = np.zeros_like(f0, bool)
        inner[8:-8, 8:-8] = True
        sel = inner & res.accepted
        err = np.hypot(res.motion.u[0, 0] - 1.0, res.motion.u[0, 1])
        assert np.median(err[sel]) < 0.2

    def test_recovers_diagonal_translation(self):
        rng = np.random.default_rng(1)
        f0 = textured_field(rng)
        f1 = np.roll(np.roll(f0, 1, axis=1), -1, axis=0)
        res = estimate_lucas_kanade(f0, f1)
        inner = np.zeros_like(f0, bool)
        inner[8:-8, 8:-8] = True
        sel = inner & res.accepted
        err = np.hypot(res.motion.u[0, 0] - 1.0, res.motion.u[0, 1] + 1.0)
        assert np.median(err[sel]) < 0.25

    def test_flat_field_rejects_everything(self):
        f = np.full((32, 32), 5.0)
        res = estimate_lucas_kanade(f, f)
        assert res.all_rejected
        np.testing.assert_array_equal(res.motion.u, 0.0)
        assert np.isfinite(res.motion.u).all()

    def test_rejected_pixels_filled_from_nearest_accepted(self):
        rng = np.random.default_rng(2)
        f0 = np.zeros((48, 48))
        f0[16:32, 16:32] = textured_field(rng, 16, 16)
        f1 = np.roll(f0, 1, axis=1)
        res = estimate_lucas_kanade(f0, f1)
        assert not res.all_rejected
        assert not res.accepted.all()
        # filled values come from accepted cells, so the whole field is finite
        # and carries the dominant motion
        assert np.isfinite(res.motion.u).all()
        assert abs(np.median(res.motion.u[0, 0]) - 1.0) < 0.3

    def test_window_validation(self):
        f = np.zeros((8, 8))
        with pytest.raises(ValueError):
            estimate_lucas_kanade(f, f, window=4)
        with pytest.raises(ValueError):
            estimate_lucas_kanade(f, f, window=1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            estimate_lucas_kanade(np.zeros((8, 8)), np.zeros((9, 9)))
