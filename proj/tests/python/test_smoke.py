import math

import numpy as np
import pytest

import mrdf


def test_flop_count():
    r = mrdf.flop_count(4, 196, 768, 7)
    assert r["msa_flops"] == 2793799680
    assert r["wmsa_flops"] == 1908695040


def test_sw_msa_single_window_is_global_attention():
    rng = np.random.default_rng(0)
    d = 4
    grid = rng.uniform(-1, 1, (2, 2, d))
    ws = [rng.uniform(-0.5, 0.5, (d, d)) for _ in range(4)]
    out, mults = mrdf.sw_msa(grid, *ws, heads=1, views=1, window=2)

    x = grid.reshape(4, d)
    q, k, v = x @ ws[0], x @ ws[1], x @ ws[2]
    s = q @ k.T / math.sqrt(d)
    a = np.exp(s - s.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    ref = (a @ v) @ ws[3]
    assert np.abs(out.reshape(4, d) - ref).max() < 1e-12
    assert mults == 4 * 4 * d


def test_mask_is_none_without_shift():
    assert mrdf.shifted_window_mask(4, 1, 2, 0) is None
    assert mrdf.shifted_window_mask(4, 1, 2, 1) is not None


def test_text_metrics():
    assert mrdf.bleu([["a", "a", "a"]], [[["a", "b"]]], 1) == pytest.approx(1 / 3)
    assert mrdf.rouge_l([["x", "y"]], [[["x", "y"]]]) == 1.0
    assert mrdf.cider([["a", "b"]], [[["a", "b"]]]) == 0.0


def test_classification_metrics():
    r = mrdf.classification_metrics([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert r["acc"] == 0.75


def test_dataset_is_deterministic():
    a = mrdf.generate_dataset(3, 4)
    b = mrdf.generate_dataset(3, 4)
    assert [s["label"] for s in a] == [s["label"] for s in b]
    assert np.array_equal(a[0]["cfp"], b[0]["cfp"])
    assert len(a[0]["ffa"]) == 4


def test_errors_carry_codes():
    with pytest.raises(mrdf.MrdfError, match="E_CONFIG"):
        mrdf.config_text({"window": 3})


def test_gradcheck_subset():
    results = mrdf.gradcheck(0, "softmax")
    assert results and all(r["pass"] for r in results)


def test_train_and_evaluate(tmp_path):
    cfg = {"train_samples": 16, "test_samples": 8, "epochs": 1}
    initial, losses = mrdf.train(cfg, str(tmp_path))
    assert len(losses) == 1 and math.isfinite(initial)
    report = mrdf.evaluate(cfg, str(tmp_path / "checkpoint.bin"))
    assert 0.0 <= report["classification"]["acc"] <= 1.0
