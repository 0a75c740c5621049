"""End-to-end desk-scale run: dataset, classifier, CED-GT / CED-EST / ED training, restoration, metrics."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import checkpoint
from .freqlab import frequency_samples
from .imgio import load_image, save_image
from .metrics import evaluate_dataset
from .models import first_layer_weight_mass, restore
from .trainer import TrainConfig, build_dataset, save_samples, train_ced, train_classifier

log = logging.getLogger(__name__)


def restore_samples(samples, classifier, ced, bins, directory, zero_coeffs: bool = False) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for s in samples:
        name = f"{Path(s.name).stem}{'_flip' if s.flipped else ''}.png"
        save_image(restore(classifier, ced, bins, s.I_J, zero_coeffs=zero_coeffs), d / name)


def run_pipeline(image_dir, out_dir, config: TrainConfig, ced_config: TrainConfig | None = None, jobs: int = 1) -> dict:
    """Train everything on ``image_dir`` and evaluate on the held-out split.

    ``ced_config`` optionally overrides the config (e.g. epochs) for the
    encoder-decoder runs. Returns a JSON-serializable summary, also written
    to ``out_dir/summary.json``.
    """
    out = Path(out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    ced_config = ced_config or config
    (out / "config.txt").write_text(config.to_text())

    ds = build_dataset(image_dir, config, jobs=jobs)
    ds.bins.save(out / "bins.bin")
    log.info("dataset: %d train, %d held-out samples", len(ds.train), len(ds.heldout))

    cls = train_classifier(ds, config, out / "classifier.ckpt", out / "logs" / "classifier.csv")
    for mode in ("gt", "est", "ed"):
        train_ced(
            ds,
            ced_config,
            mode,
            classifier=cls.model,
            checkpoint_path=out / f"ced_{mode}.ckpt",
            log_path=out / "logs" / f"ced_{mode}.csv",
        )

    # evaluation always goes through the written checkpoints and their embedded bins
    classifier, bins, _ = checkpoint.load_checkpoint(out / "classifier.ckpt")
    ced = {mode: checkpoint.load_checkpoint(out / f"ced_{mode}.ckpt")[0] for mode in ("gt", "est", "ed")}

    held = out / "heldout"
    save_samples(ds.heldout, held / "reference", "I_G")
    save_samples(ds.heldout, held / "jpeg", "I_J")
    restore_samples(ds.heldout, classifier, ced["gt"], bins, held / "ced_gt")
    restore_samples(ds.heldout, classifier, ced["est"], bins, held / "ced_est")
    restore_samples(ds.heldout, classifier, ced["ed"], bins, held / "ed", zero_coeffs=True)

    summary = {
        "n_train": len(ds.train),
        "n_heldout": len(ds.heldout),
        "classifier_accuracy": cls.history[-1] if cls.history else {},
        # decoder first-layer weight mass on feature vs coefficient inputs
        "weight_mass": {mode: first_layer_weight_mass(ced[mode]) for mode in ("gt", "est")},
    }
    for key in ("jpeg", "ced_gt", "ced_est", "ed"):
        table = evaluate_dataset(held / key, held / "reference", jobs=jobs)["restored"]
        (out / f"metrics_{key}.csv").write_text(table.to_csv())
        m = table.means()
        images = [load_image(p) for p in sorted((held / key).iterdir())]
        summary[key] = {
            "psnr": m.psnr,
            "psnr_b": m.psnr_b,
            "ssim": m.ssim,
            "bef_over_mse": m.bef_over_mse,
            "bound": table.bound(),
            "std_77": float(np.std(frequency_samples(images, 8, (7, 7)))),
        }
    ref_images = [load_image(p) for p in sorted((held / "reference").iterdir())]
    summary["reference_std_77"] = float(np.std(frequency_samples(ref_images, 8, (7, 7))))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
