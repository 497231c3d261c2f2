"""Randomized invariants over generated shapes, values and configs."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from histofusion.checkpoint import decode, encode
from histofusion.config import (AblationConfig, BottleneckConfig, DeformConfig, ModelConfig,
                                ScaleConfig, format_config, parse_config_text)
from histofusion.core.fft import fft2, ifft2
from histofusion.core.sampling import bilinear_sample
from histofusion.core.tensor import Tensor
from histofusion.data.augment import apply_augment, rotate
from histofusion.frequency import FreqMask, MixGate, freq_decompose, mix_fuse
from histofusion.histogram import bin_bounds, from_tokens, inverse_permute, sort_partition
from histofusion.training.losses import LossWeights, PatchDiscriminator, total_loss
from histofusion.training.optim import lr_at

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2 ** 32 - 1)


@FAST
@given(tokens=st.integers(1, 200), data=st.data())
def test_bin_bounds_cover_all_tokens(tokens, data):
    bins = data.draw(st.integers(1, tokens))
    b = bin_bounds(tokens, bins)
    sizes = np.diff(b)
    assert b[0] == 0 and b[-1] == tokens and len(sizes) == bins
    assert np.all(sizes[:-1] == tokens // bins) and sizes[-1] >= sizes[0]


@FAST
@given(seed=seeds, h=st.integers(1, 6), w=st.integers(1, 6), data=st.data())
def test_partition_round_trip(seed, h, w, data):
    bins = data.draw(st.integers(1, h * w))
    rng = np.random.default_rng(seed)
    feat = Tensor(rng.standard_normal((1, 2, h, w)))
    scores = np.round(rng.standard_normal((1, h, w)), 1)  # coarse values force ties
    part, chunks = sort_partition(feat, scores, bins)
    assert from_tokens(inverse_permute(chunks, part), h, w).data.tobytes() == feat.data.tobytes()


@FAST
@given(seed=seeds, logh=st.integers(1, 4), logw=st.integers(1, 4),
       cutoff=st.floats(0.0, 1.0), sharpness=st.floats(0.5, 80.0))
def test_frequency_split_reconstructs(seed, logh, logw, cutoff, sharpness):
    x = Tensor(np.random.default_rng(seed).standard_normal((1, 2, 2 ** logh, 2 ** logw)))
    low, high = freq_decompose(x, FreqMask(cutoff, sharpness))
    assert np.abs(low.data + high.data - x.data).max() < 1e-5


@FAST
@given(seed=seeds, h=st.integers(1, 9), w=st.integers(1, 9))
def test_fft_round_trip_any_length(seed, h, w):
    x = np.random.default_rng(seed).standard_normal((1, 1, h, w))
    np.testing.assert_allclose(ifft2(fft2(x)).real, x, atol=1e-10)
    np.testing.assert_allclose(fft2(x), np.fft.fft2(x), atol=1e-9)


@FAST
@given(seed=seeds, theta=st.floats(-30, 30))
def test_mix_fuse_is_convex_combination(seed, theta):
    a, b = np.random.default_rng(seed).standard_normal((2, 1, 2, 3, 3))
    out = mix_fuse(Tensor(a), Tensor(b), MixGate(theta)).data
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(out >= lo - 1e-6) and np.all(out <= hi + 1e-6)


@FAST
@given(seed=seeds, y=st.integers(0, 4), x=st.integers(0, 5))
def test_bilinear_at_grid_point_reads_pixel(seed, y, x):
    img = np.random.default_rng(seed).standard_normal((1, 2, 5, 6))
    val = bilinear_sample(Tensor(img), float(x), float(y), 0, 1).item()
    assert val == pytest.approx(img[0, 1, y, x], abs=1e-6)


@FAST
@given(seed=seeds, px=st.floats(-3, 8), py=st.floats(-3, 7))
def test_bilinear_bounded_by_corners(seed, px, py):
    img = np.random.default_rng(seed).uniform(0, 1, (1, 1, 5, 6))
    val = bilinear_sample(Tensor(img), px, py, 0, 0).item()
    assert -1e-6 <= val <= 1 + 1e-6


@given(epochs=st.lists(st.integers(0, 6000), min_size=2, max_size=10),
       scale=st.sampled_from([1.0, 0.5, 0.1, 0.04]))
def test_lr_non_increasing(epochs, scale):
    epochs = sorted(epochs)
    lrs = [lr_at(e, 1, scale) for e in epochs]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert all(lr in (1e-4, 5e-5, 2.5e-5, 1.25e-5) for lr in lrs)


@settings(max_examples=15, deadline=None)
@given(seed=seeds, weights=st.tuples(*[st.floats(0, 2)] * 3))
def test_total_loss_non_negative(seed, weights):
    rng = np.random.default_rng(seed)
    pred, target = rng.uniform(0, 1, (2, 1, 3, 16, 16))
    assert total_loss(pred, target, LossWeights(*weights), PatchDiscriminator(seed=1)).item() >= 0


arrays = st.lists(st.tuples(st.integers(0, 3), st.integers(1, 4)), min_size=1, max_size=5)


@FAST
@given(seed=seeds, shapes=arrays)
def test_checkpoint_codec_round_trip(seed, shapes):
    rng = np.random.default_rng(seed)
    tensors = {f"t{i}": rng.standard_normal(s).astype(np.float32) for i, s in enumerate(shapes)}
    header, back = decode(encode(tensors, {"k": seed}))
    assert header["config"] == {"k": seed} and list(back) == list(tensors)
    assert all(back[k].tobytes() == tensors[k].tobytes() for k in tensors)
    assert encode(back, {"k": seed}) == encode(tensors, {"k": seed})


@FAST
@given(seed=seeds, size=st.integers(2, 6), turns=st.integers(0, 3))
def test_augment_preserves_full_image_values(seed, size, turns):
    img = np.random.default_rng(seed).standard_normal((3, size, size))
    out = apply_augment(img, 0, 0, size, turns)
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(img, axis=None))
    np.testing.assert_array_equal(rotate(out, 4 - turns), img)


@st.composite
def model_configs(draw):
    depth = draw(st.integers(1, 3))
    scales = tuple(ScaleConfig(2 ** i, 4 * draw(st.integers(1, 4)), draw(st.integers(0, 3)))
                   for i in range(depth))
    return ModelConfig(
        scales=scales,
        bottleneck=BottleneckConfig(blocks=draw(st.integers(0, 3)), bins=draw(st.integers(1, 8))),
        deform=DeformConfig(groups=draw(st.sampled_from([1, 2, 4]))),
        ablation=AblationConfig(*(draw(st.booleans()) for _ in range(3))),
        seed=draw(st.integers(0, 10 ** 6)),
    )


@settings(max_examples=60, deadline=None)
@given(cfg=model_configs())
def test_config_text_round_trip(cfg):
    parsed, train = parse_config_text(format_config(cfg))
    assert parsed == cfg and train == {}
