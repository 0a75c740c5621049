# Desk-scale run of the whole method on a 64-image toy corpus (about 20 min on one CPU):
# classifier, then encoder-decoders trained with ground-truth q (CED-GT), estimated q
# (CED-EST) and no q (ED); held-out restoration and metrics.

import json
import logging
import sys
import tempfile
from pathlib import Path

from freqrestore.datasets import make_toy_corpus
from freqrestore.experiment import run_pipeline
from freqrestore.trainer import TrainConfig

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="desk_"))
corpus = out / "corpus"
make_toy_corpus(corpus, n_images=64, size=96, seed=0)

widths = dict(stem_width=16, n_f=32, stage_width=64, learning_rate=1e-3)
summary = run_pipeline(corpus, out / "run", TrainConfig(epochs=40, **widths), TrainConfig(epochs=50, **widths))

acc = summary["classifier_accuracy"]
print(f"\nheld-out accuracy: stage 1 {acc['acc_stage1']:.3f}, stage 2 {acc['acc_stage2']:.3f} (chance {1 / 7:.3f})")
print(f"{'':8s} {'psnr':>7} {'psnr_b':>7} {'ssim':>6} {'bef/mse':>8} {'std77':>6}")
for key in ("jpeg", "ed", "ced_est", "ced_gt"):
    m = summary[key]
    print(f"{key:8s} {m['psnr']:7.2f} {m['psnr_b']:7.2f} {m['ssim']:6.3f} {m['bef_over_mse']:8.3f} {m['std_77']:6.2f}")
print(f"reference std77 {summary['reference_std_77']:.2f}")
print(json.dumps(summary["weight_mass"]))
print("outputs in", out / "run")
