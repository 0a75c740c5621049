import math

import numpy as np
import pytest

from freqrestore import tensornet as tn
from freqrestore.datasets import make_toy_corpus
from freqrestore.freqlab import coeff_to_class, fit_bins, patch_dct
from freqrestore.imgio import ImageBuffer, laplacian, save_image
from freqrestore.trainer import (
    DivergenceError,
    TrainConfig,
    build_dataset,
    is_heldout,
    load_config,
    make_labels,
    parse_config,
    stage_accuracies,
    train_ced,
    train_classifier,
)

SMALL = dict(crop=32, stem_width=4, n_f=8, stage_width=8, batch_size=4, holdout_fraction=0.3, learning_rate=1e-3)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    make_toy_corpus(d, n_images=8, size=40, seed=1)
    return d


@pytest.fixture(scope="module")
def dataset(corpus):
    return build_dataset(corpus, TrainConfig(**SMALL))


# --- config ------------------------------------------------------------------------

def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.w_b, cfg.h_b, cfg.n_cl, cfg.T, cfg.crop) == (4, 4, 7, 2, 96)
    with pytest.raises(ValueError):
        TrainConfig(crop=100)  # not a multiple of lcm(4, 8)
    with pytest.raises(ValueError):
        TrainConfig(n_cl=1)
    with pytest.raises(ValueError):
        TrainConfig(q_source="other")


def test_parse_config_roundtrip_and_overrides(tmp_path):
    text = "# desk run\nepochs = 3\nlearning_rate = 0.001  # faster\nresize = true\nq_source = raw\n"
    cfg = parse_config(text, {"seed": 5})
    assert (cfg.epochs, cfg.learning_rate, cfg.resize, cfg.q_source, cfg.seed) == (3, 1e-3, True, "raw", 5)
    (tmp_path / "c.txt").write_text(cfg.to_text())
    assert load_config(tmp_path / "c.txt") == cfg


@pytest.mark.parametrize("text", ["bogus = 1\n", "epochs 3\n", "resize = maybe\n", "epochs = 2.5\n"])
def test_parse_config_rejects(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_parse_config_rejects_unknown_override():
    with pytest.raises(ValueError):
        parse_config("", {"nope": 1})


# --- labels ------------------------------------------------------------------------

def _bins(natural_images):
    coeffs = [patch_dct(laplacian(img[:96, :96])).values.reshape(-1, 16) for img in natural_images]
    return fit_bins(np.concatenate(coeffs), 7)


def test_make_labels_shapes(natural_images):
    bins = _bins(natural_images)
    y, q = make_labels(ImageBuffer(natural_images[0][:96, :96]), bins)
    assert y.labels.shape == (24, 24, 16) and q.values.shape == (24, 24, 16)
    for c in range(16):
        np.testing.assert_array_equal(q.values[..., c], bins.representatives[c][y.labels[..., c]])
    _, raw = make_labels(ImageBuffer(natural_images[0][:96, :96]), bins, q_source="raw")
    np.testing.assert_allclose(raw.values, patch_dct(laplacian(natural_images[0][:96, :96])).values)
    with pytest.raises(ValueError):
        make_labels(ImageBuffer(natural_images[0][:96, :96]), bins, q_source="x")


def test_make_labels_constant_image(natural_images):
    bins = _bins(natural_images)
    y, _ = make_labels(ImageBuffer(np.full((16, 16), 77.0)), bins)
    zero_class = coeff_to_class(type(patch_dct(np.zeros((4, 4))))(np.zeros((1, 1, 16))), bins).labels[0, 0]
    for c in range(16):
        assert np.all(y.labels[..., c] == zero_class[c])


def test_label_histogram_near_uniform(natural_images):
    bins = _bins(natural_images)
    labels = np.concatenate([make_labels(ImageBuffer(img[:96, :96]), bins)[0].labels.reshape(-1, 16) for img in natural_images])
    n = labels.shape[0]
    for c in range(16):
        counts = np.bincount(labels[:, c], minlength=7)
        # coefficient ties (flat patches) keep this from the exact +-1 of distinct samples
        assert np.all(np.abs(counts - n / 7) <= 0.2 * n / 7)


# --- dataset -----------------------------------------------------------------------

def test_build_dataset_pairs_and_flips(corpus, dataset):
    samples = dataset.train + dataset.heldout
    assert len(samples) == 2 * 8
    by_key = {(s.name, s.flipped): s for s in samples}
    for (name, flipped), s in by_key.items():
        assert s.I_G.data.shape == s.I_J.data.shape == (32, 32)
        assert s.I_J.domain == "u8" and s.I_G.domain == "real"
        assert s.y.labels.shape == (8, 8, 16)
        if not flipped:
            np.testing.assert_array_equal(by_key[(name, True)].I_G.data, s.I_G.data[:, ::-1])
    names = [(s.name, s.flipped) for s in dataset.train]
    assert names == sorted(names)
    assert {s.name for s in dataset.train}.isdisjoint({s.name for s in dataset.heldout})
    assert all(is_heldout(s.name, 0.3) for s in dataset.heldout)


def test_build_dataset_bins_balanced_on_fitting_set(dataset):
    labels = np.concatenate([s.y.labels.reshape(-1, 16) for s in dataset.train])
    n = labels.shape[0]
    for c in range(16):
        counts = np.bincount(labels[:, c], minlength=7)
        assert np.all(np.abs(counts - n / 7) <= 0.2 * n / 7)


def test_build_dataset_deterministic_and_jobs(corpus, dataset):
    again = build_dataset(corpus, TrainConfig(**SMALL), jobs=3)
    assert again.bins.to_bytes() == dataset.bins.to_bytes()
    for a, b in zip(dataset.train, again.train):
        np.testing.assert_array_equal(a.I_J.data, b.I_J.data)


def test_build_dataset_skips_small_and_errors(tmp_path, corpus):
    d = tmp_path / "mixed"
    d.mkdir()
    for p in sorted(corpus.iterdir())[:3]:
        (d / p.name).write_bytes(p.read_bytes())
    save_image(ImageBuffer(np.zeros((8, 8)), "u8"), d / "tiny.png")
    (d / "broken.png").write_bytes(b"not an image")
    ds = build_dataset(d, TrainConfig(**{**SMALL, "holdout_fraction": 0.0}))
    assert sorted(ds.skipped) == ["broken.png", "tiny.png"]
    assert len(ds.train) == 6
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        build_dataset(empty, TrainConfig(**SMALL))
    with pytest.raises(FileNotFoundError):
        build_dataset(tmp_path / "missing", TrainConfig(**SMALL))


def test_heldout_hash_stable():
    assert is_heldout("a.png", 0.0) is False
    assert is_heldout("a.png", 0.999999) is True
    frac = np.mean([is_heldout(f"{i:04d}.png", 0.1) for i in range(4000)])
    assert abs(frac - 0.1) < 0.02


# --- training ----------------------------------------------------------------------

def test_untrained_accuracy_near_chance(dataset):
    from freqrestore.models import ClassifierModel

    model = ClassifierModel(np.random.default_rng(0), TrainConfig(**SMALL).widths)
    acc = stage_accuracies(model, dataset.train)
    assert all(abs(a - 1 / 7) <= 0.05 for a in acc)


def test_train_classifier_logs_and_checkpoint(tmp_path, dataset):
    cfg = TrainConfig(**{**SMALL, "epochs": 2})
    res = train_classifier(dataset, cfg, tmp_path / "c.ckpt", tmp_path / "c.csv")
    assert len(res.history) == 2
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "epoch,loss,acc_stage1,acc_stage2"
    assert (tmp_path / "c.ckpt").stat().st_size > 0


def test_train_ced_loss_decreases(dataset):
    cfg = TrainConfig(**{**SMALL, "epochs": 4, "learning_rate": 3e-4})
    res = train_ced(dataset, cfg, "gt")
    assert res.history[-1]["loss"] < res.history[0]["loss"]
    assert math.isfinite(res.history[-1]["val_psnr"])


def test_train_ced_modes(dataset):
    cfg = TrainConfig(**{**SMALL, "epochs": 1})
    with pytest.raises(ValueError):
        train_ced(dataset, cfg, "est")
    with pytest.raises(ValueError):
        train_ced(dataset, cfg, "bogus")
    clf = train_classifier(dataset, cfg).model
    assert len(train_ced(dataset, cfg, "est", classifier=clf).history) == 1
    assert len(train_ced(dataset, cfg, "ed").history) == 1


def test_divergence_guard(dataset):
    with pytest.raises(DivergenceError):
        with np.errstate(all="ignore"):
            train_ced(dataset, TrainConfig(**{**SMALL, "epochs": 3, "learning_rate": 1e30}), "gt")
