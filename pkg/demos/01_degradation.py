# JPEG degradation sweep on a grayscale photograph.
# Lower quality factors give lower PSNR and stronger blocking (BEF, PSNR-B gap).

import numpy as np
from skimage import data

from freqrestore.jpegsim import STANDARD_LUMINANCE_TABLE, jpeg_degrade, quality_table
from freqrestore.metrics import bef, psnr, psnr_b, ssim

img = data.camera()[64:320, 64:320].astype(float)

# qf 50 is the Annex K table itself
assert np.array_equal(quality_table(50).entries, STANDARD_LUMINANCE_TABLE)
print("qf 10 table, first row:", quality_table(10).entries[0])

print(f"{'qf':>4} {'psnr':>7} {'psnr_b':>7} {'ssim':>6} {'bef':>8}")
print(f"{'orig':>4} {'':>7} {'':>7} {'':>6} {bef(img):8.2f}")
for qf in (5, 10, 20, 50, 90, 100):
    j = jpeg_degrade(img, qf).data
    print(f"{qf:4d} {psnr(img, j):7.2f} {psnr_b(img, j):7.2f} {ssim(img, j):6.3f} {bef(j):8.2f}")

# blocking shows up as a jump in the mean squared difference across 8-pixel boundaries
j = jpeg_degrade(img, 10).data
dx = np.diff(j, axis=1) ** 2
on = dx[:, 7::8].mean()
off = np.delete(dx, np.s_[7::8], axis=1).mean()
print(f"qf 10 horizontal neighbour MSE: boundary {on:.1f}, interior {off:.1f}")
