import math

import numpy as np
import pytest

from freqrestore import tensornet as tn
from freqrestore.freqlab import ClassMap, fit_bins
from freqrestore.imgio import ImageBuffer
from freqrestore.models import (
    CEDModel,
    ClassifierModel,
    StageOutput,
    Widths,
    classifier_loss,
    coeff_tensor,
    image_tensor,
    reconstruction_loss,
    restore,
)

TINY = Widths(stem=4, n_f=6, stage=8)


def rng(seed=0):
    return np.random.default_rng(seed)


def batch(seed, shape):
    return tn.Tensor(rng(seed).uniform(size=shape).astype(tn.get_dtype()))


@pytest.mark.parametrize("size,grid", [((96, 96), (24, 24)), ((128, 128), (32, 32)), ((512, 768), (128, 192))])
def test_feature_shape_law(size, grid):
    model = ClassifierModel(rng(), Widths(stem=4, n_f=64, stage=8))
    f = model.feature_extract(tn.Tensor(np.zeros((1, 1) + size, dtype=np.float32)))
    assert f.shape == (1, 64) + grid


def test_default_widths_and_feature_divisibility():
    model = ClassifierModel(rng())
    assert model.T == 2 and model.n_ch == 16
    assert model.F.stem.weight.shape == (32, 1, 3, 3)
    assert model.stages[0].conv1.weight.shape == (128, 64, 3, 3)
    assert model.stages[1].conv1.weight.shape[1] == 64 + 112 == 176
    assert model.stages[1].head.weight.shape[0] == 112
    with pytest.raises(ValueError):
        model.feature_extract(tn.Tensor(np.zeros((1, 1, 10, 12), dtype=np.float32)))


def test_stage_outputs_are_distributions():
    model = ClassifierModel(rng(), TINY)
    outs = model.forward(batch(1, (2, 1, 16, 24)))
    assert len(outs) == 2
    for o in outs:
        p = o.probs.data.reshape(2, 16, 7, 4, 6)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=2), 1.0, atol=1e-6)


def test_zero_head_gives_uniform_and_zero_labels():
    model = ClassifierModel(rng(), TINY)
    model.stages[-1].head.zero_()
    dist, labels = model.classify(np.full((16, 16), 128.0))
    np.testing.assert_allclose(dist.probs, 1 / 7, atol=1e-6)
    assert np.all(labels.labels == 0)


def test_stage_forward_preconditions():
    model = ClassifierModel(rng(), TINY)
    f = model.feature_extract(batch(2, (1, 1, 16, 16)))
    s1 = model.stage_forward(1, f)
    with pytest.raises(ValueError):
        model.stage_forward(1, f, s1)
    with pytest.raises(ValueError):
        model.stage_forward(2, f)
    small = model.feature_extract(batch(2, (1, 1, 8, 8)))
    with pytest.raises(ValueError):
        model.stage_forward(2, small, s1)
    with pytest.raises(ValueError):
        ClassifierModel(rng(), TINY, T=0)


def test_classify_batch_and_shift_invariance():
    model = ClassifierModel(rng(), TINY)
    x = batch(3, (2, 1, 16, 16))
    dists, labels = model.classify(x)
    assert len(labels) == 2 and labels[0].labels.shape == (4, 4, 16)
    f = model.feature_extract(x)
    s1 = model.stage_forward(1, f)
    logits = model.stages[1](tn.concat([f, s1.probs]))
    shifted = logits.data.reshape(2, 16, 7, 4, 4) + rng(4).normal(size=(2, 16, 1, 4, 4))
    a = logits.data.reshape(2, 16, 7, 4, 4).argmax(axis=2)
    np.testing.assert_array_equal(a, shifted.argmax(axis=2))
    np.testing.assert_array_equal(a[0].transpose(1, 2, 0), labels[0].labels)


def test_classifier_loss_mean_of_stages():
    target = np.zeros((1, 16, 2, 2), dtype=int)
    uniform = StageOutput(tn.Tensor(np.zeros((1, 112, 2, 2))), None)
    loss = classifier_loss([uniform, uniform], target).item()
    assert loss == pytest.approx(math.log(7), abs=1e-6)
    # two stages with known per-stage losses average arithmetically
    z = np.zeros((1, 112, 2, 2))
    z.reshape(1, 16, 7, 2, 2)[:, :, 0] = 5.0
    sharp = StageOutput(tn.Tensor(z), None)
    l_sharp = classifier_loss([sharp], target).item()
    both = classifier_loss([uniform, sharp], target).item()
    assert both == pytest.approx((math.log(7) + l_sharp) / 2, abs=1e-6)
    cm = ClassMap(np.zeros((2, 2, 16), dtype=int), 7)
    assert classifier_loss([uniform], cm).item() == pytest.approx(math.log(7), abs=1e-6)


def _has_grads(module):
    return [p.grad is not None and np.any(p.grad != 0) for p in module.parameters()]


def test_loss_separation():
    clf = ClassifierModel(rng(5), TINY)
    ced = CEDModel(rng(6), TINY)
    ced.D.out.weight.data[:] = rng(7).normal(size=ced.D.out.weight.shape) * 0.1
    x = batch(8, (1, 1, 16, 16))
    target = rng(9).integers(0, 7, (1, 16, 4, 4))
    classifier_loss(clf.forward(x), target).backward()
    assert all(_has_grads(clf))
    assert not any(p.grad is not None for p in ced.parameters())
    clf.zero_grad()
    _, labels = clf.classify(x)
    q = np.zeros((1, 16, 4, 4), dtype=np.float32)
    reconstruction_loss(ced, x, q, rng(10).uniform(size=(1, 1, 16, 16))).backward()
    assert any(_has_grads(ced.E)) and any(_has_grads(ced.D))
    assert not any(p.grad is not None for p in clf.parameters())


def test_encoder_shapes_and_distinct_storage():
    ced = CEDModel(rng(), Widths(stem=4, n_f=64, stage=8))
    clf = ClassifierModel(rng(), Widths(stem=4, n_f=64, stage=8))
    f = ced.encode(tn.Tensor(np.zeros((1, 1, 96, 96), dtype=np.float32)))
    assert f.shape == (1, 64, 24, 24)
    assert ced.D.fuse.weight.shape == (64, 64 + 16, 3, 3)
    ours = {id(p.data) for p in ced.E.parameters()}
    assert not ours & {id(p.data) for p in clf.F.parameters()}
    x = batch(1, (1, 1, 16, 16))
    np.testing.assert_array_equal(ced.encode(x).data, ced.encode(x).data)


def test_decode_shape_and_grid_check():
    ced = CEDModel(rng(), TINY)
    f = tn.Tensor(np.zeros((1, 6, 24, 24), dtype=np.float32))
    out = ced.decode(f, np.zeros((1, 16, 24, 24), dtype=np.float32))
    assert out.shape == (1, 1, 96, 96)
    with pytest.raises(ValueError):
        ced.decode(f, np.zeros((1, 16, 12, 24), dtype=np.float32))


def test_global_skip_starts_at_identity():
    ced = CEDModel(rng(), TINY)
    x = batch(2, (1, 1, 16, 16))
    out = ced.reconstruct(x, np.zeros((1, 16, 4, 4), dtype=np.float32))
    np.testing.assert_array_equal(out.data, x.data)
    assert reconstruction_loss(ced, x, np.zeros((1, 16, 4, 4)), x.data).item() == 0.0


def test_reconstruction_loss_batch_order_invariant():
    ced = CEDModel(rng(1), TINY, global_skip=False)
    x = batch(2, (3, 1, 16, 16))
    q = rng(3).normal(size=(3, 16, 4, 4)).astype(np.float32)
    g = rng(4).uniform(size=(3, 1, 16, 16))
    perm = [2, 0, 1]
    a = reconstruction_loss(ced, x, q, g).item()
    b = reconstruction_loss(ced, tn.Tensor(x.data[perm]), q[perm], g[perm]).item()
    assert a == pytest.approx(b, rel=1e-5)


@pytest.mark.usefixtures("float64")
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composed_gradients(seed):
    w = Widths(stem=2, n_f=3, stage=4)
    clf = ClassifierModel(rng(seed), w, n_cl=3)
    ced = CEDModel(rng(seed + 10), w)
    ced.D.out.weight.data[:] = rng(seed).normal(size=ced.D.out.weight.shape) * 0.3
    x = tn.Tensor(rng(seed + 20).uniform(size=(1, 1, 8, 8)), requires_grad=True)
    target = rng(seed + 30).integers(0, 3, (1, 16, 2, 2))
    q = rng(seed + 40).normal(size=(1, 16, 2, 2))
    g = rng(seed + 50).uniform(size=(1, 1, 8, 8))
    sub = np.random.default_rng(seed)
    err_c = tn.grad_check(lambda: classifier_loss(clf.forward(x), target), [x] + clf.parameters(), max_coords=6, rng=sub)
    err_r = tn.grad_check(lambda: reconstruction_loss(ced, x, q, g), [x] + ced.parameters(), max_coords=6, rng=sub)
    assert err_c <= 1e-4 and err_r <= 1e-4


def test_restore_dims_and_determinism(natural_image):
    bins = fit_bins(rng(0).normal(size=(1000, 16)), 7)
    clf = ClassifierModel(rng(1), TINY)
    ced = CEDModel(rng(2), TINY)
    ced.D.out.weight.data[:] = rng(3).normal(size=ced.D.out.weight.shape) * 0.01
    for shape in [(32, 48), (24, 24)]:
        img = ImageBuffer(natural_image[: shape[0], : shape[1]], "u8")
        a = restore(clf, ced, bins, img)
        b = restore(clf, ced, bins, img)
        assert a.data.shape == shape and a.domain == "real"
        np.testing.assert_array_equal(a.data, b.data)


def test_coeff_tensor_normalizes():
    from freqrestore.freqlab import CoeffMap

    bins = fit_bins(rng(0).normal(3.0, 2.0, size=(5000, 16)), 7)
    cm = CoeffMap(np.broadcast_to(bins.channel_mean, (2, 3, 16)).copy())
    np.testing.assert_allclose(coeff_tensor(cm, bins), 0, atol=1e-6)
    assert coeff_tensor([cm, cm]).shape == (2, 16, 2, 3)
    assert image_tensor(np.full((4, 4), 255.0)).data.max() == 1.0
