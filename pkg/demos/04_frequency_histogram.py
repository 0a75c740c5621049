# Distribution of one high-frequency Laplacian-DCT coefficient (8x8 blocks),
# before and after JPEG at quality 10. Quantization collapses it toward zero.

import numpy as np

from freqrestore.datasets import source_images
from freqrestore.freqlab import freq_histogram, frequency_samples
from freqrestore.imgio import ImageBuffer
from freqrestore.jpegsim import jpeg_degrade

imgs = []
for a in source_images().values():
    g = np.floor(a @ [0.299, 0.587, 0.114] + 0.5) if a.ndim == 3 else a
    imgs.append(ImageBuffer(g[:256, :256]))
jpeg = [jpeg_degrade(i, 10) for i in imgs]

edges = np.linspace(-40, 40, 17)
for channel in [(0, 1), (3, 3), (7, 7)]:
    orig = frequency_samples(imgs, 8, channel)
    deg = frequency_samples(jpeg, 8, channel)
    print(f"channel {channel}: std original {orig.std():.2f}, jpeg {deg.std():.2f}")

h0 = freq_histogram(imgs, 8, (7, 7), edges)
h1 = freq_histogram(jpeg, 8, (7, 7), edges)
print("\n   bin            original   jpeg")
for lo, hi, a, b in zip(edges[:-1], edges[1:], h0, h1):
    print(f"[{lo:6.1f},{hi:6.1f})  {a:8d} {b:7d}  " + "#" * int(60 * b / h1.max()))
