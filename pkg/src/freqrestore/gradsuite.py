"""Finite-difference checks over every differentiable operator and the composed networks."""

from __future__ import annotations

import numpy as np

from . import tensornet as tn
from .models import CEDModel, ClassifierModel, Widths, classifier_loss, reconstruction_loss


def _leaf(rng, shape, scale=1.0):
    return tn.Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _conv(rng):
    x = _leaf(rng, (2, 3, 6, 5))
    w = tn.Parameter(rng.normal(size=(4, 3, 3, 3)))
    b = tn.Parameter(rng.normal(size=4))
    r = rng.normal(size=(2, 4, 3, 3))
    return lambda: tn.dot(tn.conv2d(x, w, b, stride=2, pad=1), r), [x, w, b]


def _leaky_relu(rng):
    data = rng.normal(size=(2, 3, 4, 4))
    data[np.abs(data) < 1e-3] = 0.5
    x = tn.Tensor(data, requires_grad=True)
    r = rng.normal(size=data.shape)
    return lambda: tn.dot(tn.leaky_relu(x, 0.2), r), [x]


def _pixel_shuffle(rng):
    x = _leaf(rng, (1, 8, 2, 3))
    r = rng.normal(size=(1, 2, 4, 6))
    return lambda: tn.dot(tn.pixel_shuffle(x, 2), r), [x]


def _unshuffle_reshape(rng):
    x = _leaf(rng, (1, 2, 4, 6))
    r = rng.normal(size=(1, 48))
    return lambda: tn.dot(tn.reshape(tn.pixel_unshuffle(x, 2), (1, -1)), r), [x]


def _concat_add_scale(rng):
    x, y = _leaf(rng, (1, 2, 3, 3)), _leaf(rng, (1, 1, 3, 3))
    r = rng.normal(size=(1, 3, 3, 3))
    return lambda: tn.dot(tn.offset(tn.scale(tn.add(tn.concat([x, y]), tn.concat([y, x])), 0.7), 0.3), r), [x, y]


def _residual(rng):
    block = tn.ResidualBlock(rng, 3)
    x = _leaf(rng, (1, 3, 5, 5))
    r = rng.normal(size=(1, 3, 5, 5))
    return lambda: tn.dot(block(x), r), [x] + block.parameters()


def _grouped_softmax_ce(rng):
    z = _leaf(rng, (2, 3 * 7, 2, 2), 2.0)
    t = rng.integers(0, 7, (2, 3, 2, 2))
    return lambda: tn.grouped_softmax_ce(z, t, 7), [z]


def _grouped_softmax(rng):
    z = _leaf(rng, (1, 2 * 7, 2, 2))
    r = rng.normal(size=z.shape)
    return lambda: tn.dot(tn.grouped_softmax(z, 7), r), [z]


def _mse(rng):
    x = _leaf(rng, (2, 1, 3, 3))
    t = rng.normal(size=x.shape)
    return lambda: tn.mse_loss(x, t), [x]


_STUB = Widths(stem=2, n_f=3, stage=4)


def _classifier(rng):
    model = ClassifierModel(rng, _STUB, n_cl=3)
    x = tn.Tensor(rng.uniform(size=(1, 1, 8, 8)), requires_grad=True)
    t = rng.integers(0, 3, (1, 16, 2, 2))
    return lambda: classifier_loss(model.forward(x), t), [x] + model.parameters()


def _encoder_decoder(rng):
    model = CEDModel(rng, _STUB)
    model.D.out.weight.data[:] = rng.normal(size=model.D.out.weight.shape) * 0.3
    x = tn.Tensor(rng.uniform(size=(1, 1, 8, 8)), requires_grad=True)
    q = rng.normal(size=(1, 16, 2, 2))
    g = rng.uniform(size=(1, 1, 8, 8))
    return lambda: reconstruction_loss(model, x, q, g), [x] + model.parameters()


CASES = {
    "conv2d": _conv,
    "leaky_relu": _leaky_relu,
    "pixel_shuffle": _pixel_shuffle,
    "pixel_unshuffle/reshape": _unshuffle_reshape,
    "concat/add/scale/offset": _concat_add_scale,
    "residual_block": _residual,
    "grouped_softmax": _grouped_softmax,
    "grouped_softmax_ce": _grouped_softmax_ce,
    "mse_loss": _mse,
    "classifier": _classifier,
    "encoder_decoder": _encoder_decoder,
}


def run_suite(seeds=(0, 1, 2), max_coords: int | None = 12) -> dict:
    """Max relative error per case over ``seeds``, computed in float64."""
    out = {}
    with tn.precision(np.float64):
        for name, build in CASES.items():
            worst = 0.0
            for seed in seeds:
                rng = np.random.default_rng(seed)
                fn, wrt = build(rng)
                worst = max(worst, tn.grad_check(fn, wrt, max_coords=max_coords, rng=np.random.default_rng(seed)))
            out[name] = float(worst)
    return out
