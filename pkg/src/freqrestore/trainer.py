"""Dataset construction, label generation and the two training procedures."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import checkpoint
from . import tensornet as tn
from .freqlab import (
    BinSpec,
    ClassMap,
    CoeffMap,
    class_to_coeff,
    coeff_to_class,
    fit_bins,
    patch_dct,
)
from .imgio import REAL, U8, ImageBuffer, ImageFormatError, laplacian, load_image, luma, save_image
from .jpegsim import jpeg_degrade
from .metrics import IMAGE_SUFFIXES, psnr
from .models import (
    CEDModel,
    ClassifierModel,
    Widths,
    classifier_loss,
    coeff_tensor,
    reconstruction_loss,
)

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    w_b: int = 4
    h_b: int = 4
    n_cl: int = 7
    T: int = 2
    quality_factor: int = 10
    crop: int = 96
    resize: bool = False
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    precision: str = "float32"
    q_source: str = "quantized"
    holdout_fraction: float = 0.1
    stem_width: int = 32
    n_f: int = 64
    stage_width: int = 128
    leaky_slope: float = 0.2
    global_skip: bool = True

    def __post_init__(self):
        lcm = math.lcm(self.w_b, 8)
        if self.crop % lcm or self.crop % self.h_b:
            raise ValueError(f"crop {self.crop} not divisible by lcm(w_b, 8) = {lcm}")
        if self.n_cl < 2:
            raise ValueError("n_cl must be >= 2")
        if self.q_source not in ("quantized", "raw"):
            raise ValueError(f"q_source must be 'quantized' or 'raw', got {self.q_source!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")

    @property
    def widths(self) -> Widths:
        return Widths(self.stem_width, self.n_f, self.stage_width, self.leaky_slope)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in self.as_dict().items())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_value(raw: str, kind):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw


def parse_config(text: str, overrides: dict | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment). Unknown keys are rejected."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(raw, types[key])
    for key, val in (overrides or {}).items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = val
    return TrainConfig(**values)


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), overrides)


# --- samples and labels ----------------------------------------------------------

@dataclass
class SamplePair:
    name: str
    flipped: bool
    I_G: ImageBuffer  # luma, Real domain, integer-valued
    I_J: ImageBuffer  # degraded luma, U8
    y: ClassMap
    q: CoeffMap


@dataclass
class Dataset:
    train: list
    heldout: list
    bins: BinSpec
    config: TrainConfig
    skipped: list = field(default_factory=list)


def make_labels(I_G, bins: BinSpec, w_b: int = 4, h_b: int = 4, q_source: str = "quantized"):
    """Classes and coefficient map of the target's Laplacian patch DCT."""
    raw = patch_dct(laplacian(I_G), w_b, h_b)
    y = coeff_to_class(raw, bins)
    if q_source == "quantized":
        q = class_to_coeff(y, bins, w_b, h_b)
    elif q_source == "raw":
        q = raw
    else:
        raise ValueError(f"unknown q_source {q_source!r}")
    return y, q


def is_heldout(name: str, fraction: float) -> bool:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2.0**64 < fraction


def _prepare_target(img: ImageBuffer, config: TrainConfig) -> ImageBuffer | None:
    y = luma(img).data
    size = config.crop
    if config.resize:
        y = ndimage.zoom(y, (size / y.shape[0], size / y.shape[1]), order=1, mode="nearest", grid_mode=True)
    else:
        if y.shape[0] < size or y.shape[1] < size:
            return None
        top = (y.shape[0] - size) // 2
        left = (y.shape[1] - size) // 2
        y = y[top : top + size, left : left + size]
    # the encoder sees 8-bit luma, so the target is the rounded luma
    return ImageBuffer(ImageBuffer(y, REAL).to_u8().data, REAL)


def list_images(image_dir) -> list:
    d = Path(image_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{image_dir} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def build_dataset(image_dir, config: TrainConfig, bins: BinSpec | None = None, jobs: int = 1) -> Dataset:
    """Load, crop, flip-augment and degrade images; fit bins on training targets; label.

    Pass ``bins`` to reuse a previously fitted BinSpec instead of fitting.
    """
    paths = list_images(image_dir)
    if len(paths) < 2:
        raise ValueError(f"{image_dir} must contain at least 2 images")

    def prepare(path):
        try:
            target = _prepare_target(load_image(path), config)
        except ImageFormatError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            return path, None
        if target is None:
            log.warning("skipping %s: smaller than %d", path.name, config.crop)
        return path, target

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            prepared = list(pool.map(prepare, paths))
    else:
        prepared = [prepare(p) for p in paths]

    entries, skipped = [], []
    for path, target in prepared:
        if target is None:
            skipped.append(path.name)
            continue
        for flipped in (False, True):
            g = ImageBuffer(target.data[:, ::-1].copy(), REAL) if flipped else target
            j = jpeg_degrade(g, config.quality_factor)
            entries.append((path.name, flipped, g, j))

    train_entries = [e for e in entries if not is_heldout(e[0], config.holdout_fraction)]
    held_entries = [e for e in entries if is_heldout(e[0], config.holdout_fraction)]
    if not train_entries:
        raise ValueError("no training images left after the held-out split")

    if bins is None:
        coeffs = [patch_dct(laplacian(g), config.w_b, config.h_b).values for _, _, g, _ in train_entries]
        samples = np.concatenate([c.reshape(-1, c.shape[-1]) for c in coeffs])
        bins = fit_bins(samples, config.n_cl)

    def pairs(group):
        out = []
        for name, flipped, g, j in group:
            y, q = make_labels(g, bins, config.w_b, config.h_b, config.q_source)
            out.append(SamplePair(name, flipped, g, j, y, q))
        return out

    return Dataset(pairs(train_entries), pairs(held_entries), bins, config, skipped)


# --- batching --------------------------------------------------------------------

def _images(samples, attr: str) -> np.ndarray:
    return np.stack([getattr(s, attr).data[None] / 255.0 for s in samples]).astype(tn.get_dtype())


def _labels(samples) -> np.ndarray:
    return np.stack([s.y.labels.transpose(2, 0, 1) for s in samples])


def _batches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check_finite(value: float, what: str, epoch: int):
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite {what} at epoch {epoch}")


@dataclass
class TrainResult:
    model: object
    bins: BinSpec
    history: list  # dict per epoch


def stage_accuracies(model: ClassifierModel, samples, batch_size: int = 8) -> list:
    """Per-stage fraction of (patch, channel) cells whose argmax equals the label."""
    if not samples:
        return [math.nan] * model.T
    hits = np.zeros(model.T)
    total = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = tn.Tensor(_images(chunk, "I_J"))
        y = _labels(chunk)
        n_cl = model.n_cl
        for t, out in enumerate(model.forward(x)):
            b, c, h, w = out.probs.shape
            pred = out.probs.data.reshape(b, c // n_cl, n_cl, h, w).argmax(axis=2)
            hits[t] += np.count_nonzero(pred == y)
        total += y.size
    return [float(a) for a in hits / total]


def _write_log(path, rows):
    if path is None or not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def train_classifier(dataset: Dataset, config: TrainConfig | None = None, checkpoint_path=None, log_path=None) -> TrainResult:
    """Minimize the stage-averaged cross entropy with Adam."""
    config = config or dataset.config
    with tn.precision(config.precision):
        rng = np.random.default_rng(config.seed)
        model = ClassifierModel(rng, config.widths, T=config.T, n_cl=config.n_cl, w_b=config.w_b, h_b=config.h_b)
        shuffle = np.random.default_rng([config.seed, 1])
        params = model.parameters()
        history = []
        for epoch in range(1, config.epochs + 1):
            total, count = 0.0, 0
            for idx in _batches(len(dataset.train), config.batch_size, shuffle):
                chunk = [dataset.train[i] for i in idx]
                loss = classifier_loss(model.forward(tn.Tensor(_images(chunk, "I_J"))), _labels(chunk))
                _check_finite(loss.item(), "classifier loss", epoch)
                loss.backward()
                tn.adam_step(params, config.learning_rate, config.beta1, config.beta2)
                total += loss.item() * len(idx)
                count += len(idx)
            acc = stage_accuracies(model, dataset.heldout, config.batch_size)
            row = {"epoch": epoch, "loss": total / count}
            row.update({f"acc_stage{t + 1}": a for t, a in enumerate(acc)})
            history.append(row)
            log.info("classifier epoch %d loss %.4f acc %s", epoch, row["loss"], ["%.4f" % a for a in acc])
        if checkpoint_path is not None:
            checkpoint.save_checkpoint(checkpoint_path, model, dataset.bins, config.as_dict())
        _write_log(log_path, history)
    return TrainResult(model, dataset.bins, history)


CED_MODES = ("gt", "est", "ed")


def _coeff_inputs(dataset: Dataset, samples, mode: str, classifier: ClassifierModel | None, batch_size: int):
    """Decoder coefficient inputs (normalized) for each sample under ``mode``."""
    n_h = dataset.config.crop // dataset.config.h_b
    n_w = dataset.config.crop // dataset.config.w_b
    n_ch = dataset.config.w_b * dataset.config.h_b
    if mode == "ed":
        return np.zeros((len(samples), n_ch, n_h, n_w), dtype=tn.get_dtype())
    if mode == "gt":
        return coeff_tensor([s.q for s in samples], dataset.bins)
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        _, labels = classifier.classify(tn.Tensor(_images(chunk, "I_J")))
        out.append(coeff_tensor([class_to_coeff(l, dataset.bins, dataset.config.w_b, dataset.config.h_b) for l in labels], dataset.bins))
    return np.concatenate(out) if out else np.zeros((0, n_ch, n_h, n_w), dtype=tn.get_dtype())


def train_ced(
    dataset: Dataset,
    config: TrainConfig | None = None,
    mode: str = "gt",
    classifier: ClassifierModel | None = None,
    checkpoint_path=None,
    log_path=None,
) -> TrainResult:
    """Minimize the reconstruction MSE.

    ``mode``: ``"gt"`` feeds the target's coefficient map, ``"est"`` the
    classifier's estimate (needs ``classifier``), ``"ed"`` a zero map.
    """
    config = config or dataset.config
    if mode not in CED_MODES:
        raise ValueError(f"mode must be one of {CED_MODES}")
    if mode == "est" and classifier is None:
        raise ValueError("mode 'est' requires a trained classifier")
    with tn.precision(config.precision):
        rng = np.random.default_rng(config.seed)
        model = CEDModel(rng, config.widths, n_ch=config.w_b * config.h_b, global_skip=config.global_skip)
        shuffle = np.random.default_rng([config.seed, 2])
        q_train = _coeff_inputs(dataset, dataset.train, mode, classifier, config.batch_size)
        q_held = _coeff_inputs(dataset, dataset.heldout, mode, classifier, config.batch_size)
        params = model.parameters()
        history = []
        for epoch in range(1, config.epochs + 1):
            total, count = 0.0, 0
            for idx in _batches(len(dataset.train), config.batch_size, shuffle):
                chunk = [dataset.train[i] for i in idx]
                loss = reconstruction_loss(
                    model, tn.Tensor(_images(chunk, "I_J")), q_train[idx], _images(chunk, "I_G")
                )
                _check_finite(loss.item(), "reconstruction loss", epoch)
                loss.backward()
                tn.adam_step(params, config.learning_rate, config.beta1, config.beta2)
                total += loss.item() * len(idx)
                count += len(idx)
            row = {"epoch": epoch, "loss": total / count, "val_psnr": _val_psnr(model, dataset.heldout, q_held, config.batch_size)}
            history.append(row)
            log.info("ced[%s] epoch %d loss %.6f val_psnr %.3f", mode, epoch, row["loss"], row["val_psnr"])
        if checkpoint_path is not None:
            cfg = config.as_dict()
            cfg["ced_mode"] = mode
            checkpoint.save_checkpoint(checkpoint_path, model, dataset.bins, cfg)
        _write_log(log_path, history)
    return TrainResult(model, dataset.bins, history)


def _val_psnr(model: CEDModel, samples, q: np.ndarray, batch_size: int) -> float:
    if not samples:
        return math.nan
    vals = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        out = model.reconstruct(tn.Tensor(_images(chunk, "I_J")), q[start : start + batch_size])
        for s, o in zip(chunk, out.data):
            vals.append(psnr(s.I_G, np.asarray(o[0], dtype=np.float64) * 255.0))
    finite = [v for v in vals if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def save_samples(samples, directory, attr: str) -> list:
    """Write ``attr`` ("I_G" or "I_J") of each sample as ``<stem>[_flip].png``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for s in samples:
        name = f"{Path(s.name).stem}{'_flip' if s.flipped else ''}.png"
        save_image(getattr(s, attr), d / name)
        names.append(name)
    return names
