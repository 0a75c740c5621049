# Mean BEF/MSE lower bound from mean PSNR and mean PSNR-B.
# Per image, BEF/MSE = 10^((PSNR - PSNR-B)/10) - 1; the function is convex, so
# Jensen turns the means into a lower bound on the mean ratio.

import numpy as np

from freqrestore.jpegsim import jpeg_degrade
from freqrestore.metrics import bef_mse_lower_bound, report
from freqrestore.datasets import source_images

# (qf, method, LIVE1 bef/mse, psnr, psnr_b, BSDS500 bef/mse, psnr, psnr_b) as printed
TABLE = [
    (10, "JPEG", 0.754, 27.77, 25.33, 0.824, 27.58, 24.97),
    (10, "*AR-CNN", 0.094, 29.13, 28.74, 0.086, 28.74, 28.38),
    (10, "Galteri-MSE", 0.067, 29.41, 29.13, 0.089, 28.93, 28.56),
    (10, "*Galteri-MSE", 0.084, 29.45, 29.10, 0.102, 29.03, 28.61),
    (10, "*Galteri-GAN", 0.148, 27.29, 26.69, 0.178, 27.01, 26.30),
    (10, "ED", 0.074, 29.40, 29.09, 0.094, 28.96, 28.57),
    (10, "CED-EST", 0.076, 29.40, 29.08, 0.094, 28.95, 28.56),
    (10, "CED-GT", 0.007, 26.54, 26.51, 0.007, 26.00, 25.97),
    (20, "JPEG", 0.778, 30.07, 27.57, 0.884, 29.72, 26.97),
    (20, "*AR-CNN", 0.178, 31.40, 30.69, 0.180, 30.80, 30.08),
    (20, "Galteri-MSE", 0.122, 31.70, 31.20, 0.180, 31.09, 30.37),
    (20, "*Galteri-MSE", 0.125, 31.77, 31.26, 0.180, 31.20, 30.48),
    (20, "*Galteri-GAN", 0.059, 28.35, 28.10, 0.740, 28.07, 27.76),
    (20, "ED", 0.132, 31.68, 31.14, 0.189, 31.08, 30.33),
    (20, "CED-EST", 0.127, 31.65, 31.13, 0.180, 31.04, 30.32),
    (20, "CED-GT", 0.002, 29.33, 29.32, 0.009, 28.62, 28.58),
]

for qf, name, *cols in TABLE:
    for (printed, p, pb), tag in zip((cols[:3], cols[3:]), ("LIVE1", "BSDS")):
        got = bef_mse_lower_bound(p, pb)
        flag = "" if abs(got - printed) <= 0.005 else "   <-- printed value disagrees"
        print(f"qf{qf} {name:13s} {tag:5s} printed {printed:.3f} computed {got:.3f}{flag}")

# the same bound on our own degradations, next to the true mean ratio
imgs = [np.floor(a @ [0.299, 0.587, 0.114] + 0.5) if a.ndim == 3 else a for a in source_images().values()]
reps = [report(im[:256, :256], jpeg_degrade(im[:256, :256], 10).data) for im in imgs]
p = np.mean([r.psnr for r in reps])
pb = np.mean([r.psnr_b for r in reps])
print(f"\nqf 10 on {len(reps)} photos: mean BEF/MSE {np.mean([r.bef_over_mse for r in reps]):.3f} >= bound {bef_mse_lower_bound(p, pb):.3f}")
