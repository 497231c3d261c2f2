import numpy as np
import pytest

from histofusion.core import functional as F
from histofusion.core.fft import fft2
from histofusion.core.gradcheck import check_gradients, worst
from histofusion.core.tensor import Tensor
from histofusion.errors import ConfigurationError, DimensionError
from histofusion.frequency import (FreqFuse, FreqMask, MixGate, RefinementModule, freq_decompose,
                                   freq_fuse, mix_fuse, radial_frequency, refine_module)
from histofusion.gradsuite import _randomize


class TestMixFuse:
    def test_zero_theta_is_average(self, rng):
        a, b = rng.standard_normal((2, 1, 3, 4, 4))
        out = mix_fuse(Tensor(a), Tensor(b), MixGate(0.0)).data
        np.testing.assert_allclose(out, 0.5 * (a + b), rtol=1e-6, atol=1e-7)

    def test_saturation(self, f64, rng):
        a, b = rng.standard_normal((2, 1, 3, 4, 4))
        out = mix_fuse(Tensor(a), Tensor(b), MixGate(50.0)).data
        assert np.abs(out - a).max() < 1e-6 * np.abs(a - b).max()

    @pytest.mark.parametrize("theta", [-3.0, 0.0, 0.7, 9.0])
    def test_fixed_point(self, theta, rng):
        f = Tensor(rng.standard_normal((1, 2, 3, 3)))
        np.testing.assert_array_equal(mix_fuse(f, f, MixGate(theta)).data, f.data)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mix_fuse(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 3, 4))), MixGate())


class TestFreqMask:
    def test_range_and_monotone_in_radius(self):
        m = FreqMask(0.4).realize(8, 8).data[0, 0]
        rho = radial_frequency(8, 8)
        assert m.min() > 0 and m.max() < 1
        order = np.argsort(rho.ravel(), kind="stable")
        assert np.all(np.diff(m.ravel()[order]) <= 1e-7)

    def test_nyquist_corner_is_unit_radius(self):
        rho = radial_frequency(8, 8)
        assert rho[0, 0] == 0 and rho[4, 4] == pytest.approx(1.0)

    def test_cutoff_monotone(self):
        lo, hi = FreqMask(0.2).realize(16, 8).data, FreqMask(0.5).realize(16, 8).data
        assert np.all(hi >= lo)

    def test_sharpness_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            FreqMask(0.3, sharpness=0)


class TestFreqDecompose:
    @pytest.mark.parametrize("seed", range(10))
    def test_partition_of_unity(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((2, 3, 8, 16)))
        mask = FreqMask(float(rng.uniform(0, 1)), float(rng.uniform(1, 50)))
        low, high = freq_decompose(x, mask)
        assert np.abs(low.data + high.data - x.data).max() < 1e-5

    def test_constant_is_all_low(self):
        x = Tensor(np.full((1, 1, 8, 8), 0.3))
        low, high = freq_decompose(x, FreqMask(0.5, sharpness=1000.0))
        np.testing.assert_allclose(low.data, x.data, atol=1e-5)
        np.testing.assert_allclose(high.data, 0, atol=1e-5)

    def test_checkerboard_is_all_high(self):
        yy, xx = np.mgrid[0:8, 0:8]
        board = np.where((yy + xx) % 2 == 0, 1.0, -1.0)[None, None]
        spec = np.abs(fft2(board))[0, 0]
        peak = np.unravel_index(spec.argmax(), spec.shape)
        assert peak == (4, 4) and radial_frequency(8, 8)[peak] == pytest.approx(1.0)
        low, high = freq_decompose(Tensor(board), FreqMask(0.5, sharpness=1000.0))
        np.testing.assert_allclose(high.data, board, atol=1e-5)
        np.testing.assert_allclose(low.data, 0, atol=1e-5)

    def test_gradient(self, f64, rng):
        x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
        mask = FreqMask(0.35, 20.0)
        wl, wh = rng.standard_normal((2, 1, 2, 8, 8))

        def loss():
            low, high = freq_decompose(x, mask)
            return F.sum(low * wl) + F.sum(high * wh)
        results = check_gradients(loss, [("x", x), ("cutoff", mask.cutoff)], rng)
        assert not worst(results, 1e-2, 1e-4)


class TestFreqFuse:
    def test_zero_weights_is_residual_identity(self, rng):
        fuser = FreqFuse(4, rng)
        mix = Tensor(rng.standard_normal((1, 4, 4, 4)))
        low, high = (Tensor(rng.standard_normal((1, 4, 4, 4))) for _ in range(2))
        np.testing.assert_array_equal(freq_fuse(mix, low, high, fuser).data, mix.data)

    def test_resizes_and_aligns(self, rng):
        fuser = FreqFuse(4, rng, freq_channels=2)
        _randomize(fuser, rng, 0.3)
        out = fuser(Tensor(rng.standard_normal((1, 4, 8, 8))),
                    Tensor(rng.standard_normal((1, 2, 4, 4))), Tensor(rng.standard_normal((1, 2, 4, 4))))
        assert out.shape == (1, 4, 8, 8)

    def test_channel_mismatch(self, rng):
        fuser = FreqFuse(4, rng)
        x = Tensor(np.zeros((1, 4, 4, 4)))
        with pytest.raises(ConfigurationError):
            fuser(x, Tensor(np.zeros((1, 3, 4, 4))), x)

    def test_deterministic(self, rng):
        fuser = FreqFuse(4, rng)
        _randomize(fuser, rng, 0.3)
        args = [Tensor(rng.standard_normal((1, 4, 4, 4))) for _ in range(3)]
        assert fuser(*args).data.tobytes() == fuser(*args).data.tobytes()

    def test_gradient(self, f64):
        rng = np.random.default_rng(37)
        fuser = FreqFuse(8, rng)
        _randomize(fuser, rng, 0.3)
        mix, low, high = (Tensor(rng.standard_normal((1, 8, 8, 8)), requires_grad=True) for _ in range(3))
        proj = rng.standard_normal((1, 8, 8, 8))
        results = check_gradients(lambda: F.sum(freq_fuse(mix, low, high, fuser) * proj),
                                  [("mix", mix), ("low", low), ("high", high)]
                                  + list(fuser.named_parameters()), rng)
        assert not worst(results, 1e-2, 1e-4)


def refine_inputs(rng, ratios=(1, 2), widths=(4, 8), size=8):
    enc = [Tensor(rng.standard_normal((1, d, size // r, size // r))) for r, d in zip(ratios, widths)]
    dec = [Tensor(rng.standard_normal((1, d, size // r, size // r))) for r, d in zip(ratios, widths)]
    stage1 = Tensor(rng.uniform(0, 1, (1, 3, size, size)))
    return dec[0], enc, dec, stage1


class TestRefinement:
    def test_zero_weights_is_passthrough(self, rng):
        module = RefinementModule((1, 2), (4, 8), rng).zero_()
        feat, enc, dec, stage1 = refine_inputs(rng)
        out = refine_module(feat, enc, dec, stage1, module)
        assert out.data.tobytes() == stage1.data.tobytes()

    @pytest.mark.parametrize("seed", range(10))
    def test_output_range(self, seed):
        rng = np.random.default_rng(seed)
        module = RefinementModule((1, 2), (4, 8), rng)
        _randomize(module, rng, 2.0)
        out = module(*refine_inputs(rng))
        assert out.data.min() >= 0 and out.data.max() <= 1
