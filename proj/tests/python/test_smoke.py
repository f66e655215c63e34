import json
import math

import numpy as np
import pytest

import physiofuse as pf


def test_receptive_field():
    assert pf.receptive_field([65, 33, 17], [1, 1, 1]) == 113


def test_butterworth_sections_are_stable():
    sections = pf.butterworth("bandpass", 0.8, 50.0, 8, 256.0)
    assert len(sections) == 8
    for b0, b1, b2, a0, a1, a2 in sections:
        assert a0 == 1.0
        roots = np.roots([1.0, a1, a2])
        assert np.all(np.abs(roots) < 1.0)
    with pytest.raises(ValueError):
        pf.butterworth("notch", 1.0, 2.0, 4, 256.0)


def test_filter_rejects_out_of_band_tone():
    t = np.arange(4096) / 256.0
    x = np.sin(2 * np.pi * 100.0 * t)[None, :]
    y = pf.filter_signal("amigos-eeg", x, 256.0)
    assert y.shape == x.shape
    assert np.sqrt(np.mean(y[0, 2048:] ** 2)) < 0.01 * np.sqrt(np.mean(x[0] ** 2))


def test_mask_and_folds():
    mask = pf.sample_mask(1280, 10, 0.15, seed=3)
    assert mask.dtype == bool and mask.sum() == 190
    folds = pf.make_folds(57, 10, seed=1)
    tested = sorted(i for f in folds for i in f["test"])
    assert tested == list(range(57))


def test_metrics():
    m = pf.confusion_metrics([1, 1, 0, 0], [1, 0, 0, 0])
    assert m["accuracy"] == 0.75
    assert m["f1"] == pytest.approx(0.7333333333, abs=1e-9)
    assert pf.t_quantile(0.975, 9) == pytest.approx(2.262157, abs=1e-4)
    assert pf.t_interval([0.8] * 10) == (0.8, 0.0)


def test_model_round_trip(tmp_path):
    cfg = {"modality": "ecg", "kernels": [5, 3, 3], "conv_channels": [4, 4, 8], "hidden_size": 8,
           "num_layers": 1, "mvp_hidden": 8, "emotion_hidden": 4}
    model = pf.Model(cfg, seed=4)
    seg = np.random.default_rng(0).normal(size=(1, 32))
    assert model.reconstruct(seg).shape == (32, 1)
    logit = model.classify(seg)
    assert math.isfinite(logit)
    path = tmp_path / "m.ckpt"
    model.save(path)
    back = pf.Model.load(path)
    assert back.parameter_hash == model.parameter_hash
    assert back.classify(seg) == logit
    with pytest.raises(ValueError):
        pf.Model({"modality": "ecg", "hiden_size": 3})
    with pytest.raises(ValueError):
        model.classify(np.zeros((10, 32)))


def test_gradcheck():
    errors = pf.gradcheck(12)
    assert errors and max(errors.values()) < 1e-4


def test_evaluate_small(tmp_path):
    assert pf.generate_synthetic(tmp_path / "data", 2, {"subjects": 2, "trials_per_subject": 4,
                                                        "trial_seconds": 4}) == 8
    small = {"kernels": [5, 3, 3], "conv_channels": [4, 4, 8], "hidden_size": 8, "num_layers": 1,
             "mvp_hidden": 8, "emotion_hidden": 4}
    config = {
        "dataset": {"manifest": "data/manifest.json"},
        "preprocess": {"target_rate": 64, "segment_seconds": 2},
        "model": {"ecg": small, "eeg": small, "fusion": {"hidden": [4, 2]}},
        "pretrain": {"epochs": 1, "schedule": {"kind": "warmup_linear_decay", "peak": 1e-3,
                                               "warmup_epochs": 1, "total_epochs": 2}},
        "finetune": {"epochs": 1},
        "fuse": {"epochs": 1},
        "eval": {"folds": 4, "folds_to_run": [1], "targets": ["valence"]},
    }
    (tmp_path / "run.json").write_text(json.dumps(config))
    rows = pf.evaluate(tmp_path / "run.json", seed=5)
    assert len(rows) == 3 * 2
    assert {r["model"] for r in rows} == {"ecg", "eeg", "fused"}
    assert all(0.0 <= r["value"] <= 1.0 for r in rows)
