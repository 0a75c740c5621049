# From image to classifier targets: Laplacian -> 4x4 patch DCT -> per-channel
# equal-frequency classes -> representative coefficients.

import numpy as np

from freqrestore.datasets import source_images
from freqrestore.freqlab import class_to_coeff, coeff_to_class, fit_bins, patch_dct, patch_idct
from freqrestore.imgio import ImageBuffer, laplacian

gray = [ImageBuffer(np.floor(a @ [0.299, 0.587, 0.114] + 0.5) if a.ndim == 3 else a) for a in source_images().values()]
crops = [ImageBuffer(g.data[:256, :256]) for g in gray]

coeffs = [patch_dct(laplacian(c)) for c in crops]
print("coefficient grid per image:", coeffs[0].values.shape)

samples = np.concatenate([c.values.reshape(-1, 16) for c in coeffs])
spread = samples.std(axis=0).reshape(4, 4)
print("per-channel std (DC top-left):")
print(np.round(spread, 1))

bins = fit_bins(samples, 7)
print("channel 5 boundaries:", np.round(bins.boundaries[5], 2))
print("channel 5 representatives:", np.round(bins.representatives[5], 2))

labels = coeff_to_class(coeffs[0], bins)
counts = np.stack([np.bincount(coeff_to_class(c, bins).labels[..., 5].ravel(), minlength=7) for c in coeffs]).sum(0)
print("channel 5 label counts over the corpus:", counts)

# decoding the labels gives a coarse Laplacian image
q = class_to_coeff(labels, bins)
approx = patch_idct(q).data
exact = laplacian(crops[0]).data
print("relative error of the class-quantized Laplacian:", np.linalg.norm(approx - exact) / np.linalg.norm(exact))
