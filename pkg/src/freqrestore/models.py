"""Classifier C (feature extractor + stage blocks), encoder E and decoder D."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensornet as tn
from .freqlab import BinSpec, ClassDistMap, ClassMap, CoeffMap, class_to_coeff, normalize_coeffs
from .imgio import ImageBuffer, REAL, as_array


@dataclass
class Widths:
    """Channel widths; the defaults are the full-size network."""

    stem: int = 32
    n_f: int = 64
    stage: int = 128
    slope: float = 0.2


class FeatureExtractor(tn.Module):
    """conv(1->stem) + two stride-2 stages, each followed by a residual block.

    Spatial size shrinks by 4, matching a 4x4 patch grid.
    """

    def __init__(self, rng, widths: Widths, in_ch: int = 1):
        s = widths.slope
        self.stem = tn.Conv(rng, in_ch, widths.stem, 3, slope=s)
        self.down1 = tn.Conv(rng, widths.stem, widths.n_f, 3, stride=2, slope=s)
        self.res1 = tn.ResidualBlock(rng, widths.n_f, s)
        self.down2 = tn.Conv(rng, widths.n_f, widths.n_f, 3, stride=2, slope=s)
        self.res2 = tn.ResidualBlock(rng, widths.n_f, s)
        self.slope = s

    def __call__(self, img: tn.Tensor) -> tn.Tensor:
        h, w = img.shape[2:]
        if h % 4 or w % 4:
            raise ValueError(f"input {w}x{h} not divisible by 4")
        # zero-centred input; without it training barely leaves the identity map
        x = tn.leaky_relu(self.stem(tn.offset(img, -0.5)), self.slope)
        x = self.res1(tn.leaky_relu(self.down1(x), self.slope))
        x = self.res2(tn.leaky_relu(self.down2(x), self.slope))
        return x


class StageBlock(tn.Module):
    def __init__(self, rng, in_ch: int, widths: Widths, n_out: int):
        s = widths.slope
        self.conv1 = tn.Conv(rng, in_ch, widths.stage, 3, slope=s)
        self.conv2 = tn.Conv(rng, widths.stage, widths.stage, 3, slope=s)
        self.head = tn.Conv(rng, widths.stage, n_out, 1, slope=s)
        self.slope = s

    def __call__(self, x: tn.Tensor) -> tn.Tensor:
        x = tn.leaky_relu(self.conv1(x), self.slope)
        x = tn.leaky_relu(self.conv2(x), self.slope)
        return self.head(x)


@dataclass
class StageOutput:
    logits: tn.Tensor  # (B, n_ch * n_cl, n_h, n_w)
    probs: tn.Tensor  # same layout, softmax within each channel's n_cl group

    def dist_maps(self, n_cl: int) -> list:
        b, c, h, w = self.probs.shape
        p = self.probs.data.astype(np.float64).reshape(b, c // n_cl, n_cl, h, w).transpose(0, 3, 4, 1, 2)
        return [ClassDistMap(p[i]) for i in range(b)]


class ClassifierModel(tn.Module):
    def __init__(self, rng, widths: Widths | None = None, T: int = 2, n_cl: int = 7, w_b: int = 4, h_b: int = 4):
        if T < 1:
            raise ValueError("T must be >= 1")
        if (w_b, h_b) != (4, 4):
            raise ValueError("the feature extractor's two stride-2 stages fix the patch at 4x4")
        self.widths = widths or Widths()
        self.T, self.n_cl, self.w_b, self.h_b = T, n_cl, w_b, h_b
        self.n_ch = w_b * h_b
        n_out = self.n_ch * n_cl
        self.F = FeatureExtractor(rng, self.widths)
        self.stages = [StageBlock(rng, self.widths.n_f + (n_out if t else 0), self.widths, n_out) for t in range(T)]

    def hyperparameters(self) -> dict:
        return {"kind": "classifier", "T": self.T, "n_cl": self.n_cl, "w_b": self.w_b, "h_b": self.h_b, **asdict(self.widths)}

    def feature_extract(self, img: tn.Tensor) -> tn.Tensor:
        return self.F(img)

    def stage_forward(self, t: int, f: tn.Tensor, prev: StageOutput | None = None) -> StageOutput:
        """Stage ``t`` (1-based). Stage 1 sees only ``f``; later stages also see the previous distributions."""
        if t == 1:
            if prev is not None:
                raise ValueError("stage 1 takes no previous distribution")
            x = f
        else:
            if prev is None:
                raise ValueError(f"stage {t} needs the previous stage's distribution")
            if prev.probs.shape[2:] != f.shape[2:]:
                raise ValueError("previous distribution grid does not match the feature map")
            x = tn.concat([f, prev.probs])
        logits = self.stages[t - 1](x)
        return StageOutput(logits, tn.grouped_softmax(logits, self.n_cl))

    def forward(self, img: tn.Tensor) -> list:
        f = self.feature_extract(img)
        outs, prev = [], None
        for t in range(1, self.T + 1):
            prev = self.stage_forward(t, f, prev)
            outs.append(prev)
        return outs

    def classify(self, img) -> tuple:
        """Final-stage distributions and argmax labels (ties go to the lowest class).

        ``img`` is an ImageBuffer / 2-D array on [0, 255], or a (B, 1, H, W) Tensor on [0, 1].
        Returns lists when given a batch tensor, single maps otherwise.
        """
        single = not isinstance(img, tn.Tensor)
        x = image_tensor(img) if single else img
        final = self.forward(x)[-1]
        dists = final.dist_maps(self.n_cl)
        labels = [d.argmax() for d in dists]
        return (dists[0], labels[0]) if single else (dists, labels)


def classifier_loss(stage_outputs, target) -> tn.Tensor:
    """Mean over stages of the per-(patch, channel) mean cross entropy.

    ``target`` is an integer array (B, n_ch, n_h, n_w) or a single ClassMap.
    """
    if isinstance(target, ClassMap):
        target = target.labels.transpose(2, 0, 1)[None]
    n_cl = stage_outputs[0].logits.shape[1] // np.asarray(target).shape[1]
    losses = [tn.grouped_softmax_ce(s.logits, target, n_cl) for s in stage_outputs]
    return tn.mean(losses)


class Decoder(tn.Module):
    """concat(f, q) -> conv + res block -> 2x (conv, pixel shuffle x2, lrelu) -> conv(->1), no output activation."""

    def __init__(self, rng, widths: Widths, n_ch: int = 16):
        s, nf = widths.slope, widths.n_f
        self.fuse = tn.Conv(rng, nf + n_ch, nf, 3, slope=s)
        self.res = tn.ResidualBlock(rng, nf, s)
        self.up1 = tn.Conv(rng, nf, 4 * nf, 3, slope=s)
        self.up2 = tn.Conv(rng, nf, 4 * nf, 3, slope=s)
        self.out = tn.Conv(rng, nf, 1, 3, slope=s)
        self.slope = s
        self.n_ch = n_ch

    def __call__(self, f: tn.Tensor, coeffs) -> tn.Tensor:
        coeffs = tn.constant(coeffs)
        if coeffs.shape[2:] != f.shape[2:] or coeffs.shape[1] != self.n_ch:
            raise ValueError(f"coefficient map {coeffs.shape} does not match feature grid {f.shape}")
        x = tn.leaky_relu(self.fuse(tn.concat([f, coeffs])), self.slope)
        x = self.res(x)
        x = tn.leaky_relu(tn.pixel_shuffle(self.up1(x), 2), self.slope)
        x = tn.leaky_relu(tn.pixel_shuffle(self.up2(x), 2), self.slope)
        return self.out(x)


class CEDModel(tn.Module):
    """Encoder + decoder. With ``global_skip`` the decoder output is added to the input image."""

    def __init__(self, rng, widths: Widths | None = None, n_ch: int = 16, global_skip: bool = True):
        self.widths = widths or Widths()
        self.n_ch = n_ch
        self.global_skip = global_skip
        self.E = FeatureExtractor(rng, self.widths)
        self.D = Decoder(rng, self.widths, n_ch)
        if global_skip:
            # start from the identity map: the untrained model returns its input
            self.D.out.zero_()

    def hyperparameters(self) -> dict:
        return {"kind": "ced", "n_ch": self.n_ch, "global_skip": self.global_skip, **asdict(self.widths)}

    def encode(self, img: tn.Tensor) -> tn.Tensor:
        return self.E(img)

    def decode(self, f: tn.Tensor, coeffs) -> tn.Tensor:
        return self.D(f, coeffs)

    def reconstruct(self, img: tn.Tensor, coeffs) -> tn.Tensor:
        out = self.decode(self.encode(img), coeffs)
        return tn.add(out, img) if self.global_skip else out


def reconstruction_loss(model: CEDModel, I_J: tn.Tensor, q: np.ndarray, I_G) -> tn.Tensor:
    """Per-pixel MSE of the reconstruction from ``I_J`` and coefficient map ``q`` against ``I_G``."""
    return tn.mse_loss(model.reconstruct(I_J, q), I_G)


# --- array <-> tensor helpers ----------------------------------------------------

def image_tensor(img) -> tn.Tensor:
    """[0, 255] single-plane image -> (1, 1, H, W) tensor on [0, 1]."""
    data = as_array(img)
    if data.ndim != 2:
        raise ValueError("expected a single-plane image")
    return tn.Tensor(data[None, None] / 255.0)


def coeff_tensor(coeffs, bins: BinSpec | None = None) -> np.ndarray:
    """CoeffMap(s) -> (B, n_ch, n_h, n_w) array, standardized with ``bins`` statistics if given."""
    maps = coeffs if isinstance(coeffs, (list, tuple)) else [coeffs]
    arrs = [normalize_coeffs(m, bins) if bins is not None else m.values for m in maps]
    return np.stack([a.transpose(2, 0, 1) for a in arrs]).astype(tn.get_dtype())


def restore(classifier: ClassifierModel, ced: CEDModel, bins: BinSpec, I_J, zero_coeffs: bool = False) -> ImageBuffer:
    """Classify, map classes to coefficients, decode. Output is Real on the [0, 255] scale."""
    x = image_tensor(I_J)
    if zero_coeffs:
        q = np.zeros((1, ced.n_ch) + (x.shape[2] // 4, x.shape[3] // 4), dtype=tn.get_dtype())
    else:
        _, labels = classifier.classify(x)
        q = coeff_tensor(class_to_coeff(labels[0], bins), bins)
    out = ced.reconstruct(x, q)
    return ImageBuffer(out.data[0, 0].astype(np.float64) * 255.0, REAL)


def first_layer_weight_mass(ced: CEDModel) -> tuple:
    """Mean |w| of the decoder's first conv summed over feature inputs and coefficient inputs.

    Diagnostic only: returns ``(w_f, w_q)``.
    """
    w = np.abs(ced.D.fuse.weight.data).mean(axis=(0, 2, 3))
    nf = ced.widths.n_f
    return float(w[:nf].sum()), float(w[nf:].sum())
