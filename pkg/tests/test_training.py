import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from wnet import metrics
from wnet.network import ModelConfig, create_model, load_checkpoint
from wnet.training import (
    CSV_COLUMNS,
    TrainConfig,
    TrainingDiverged,
    UndefinedLossError,
    dataset_size_ablation,
    make_optimizer,
    masked_cross_entropy,
    multi_seed_report,
    prepare_data,
    train,
    train_step,
)

TINY = ModelConfig(base_channels=2, rf_base_channels=1, rows=32, cols=16)


def config(data, out=None, **kw):
    return TrainConfig(data=data, model=kw.pop("model", TINY), out=out, **kw)


def test_uniform_logits_give_ln5():
    label = np.random.default_rng(0).integers(1, 6, (4, 4))
    assert masked_cross_entropy(torch.zeros(5, 4, 4, dtype=torch.float64), label).item() == pytest.approx(math.log(5))


def test_confident_logit_loss_is_tiny():
    logits = torch.zeros(1, 5, 1, 1, dtype=torch.float64)
    logits[0, 2] = 100.0
    loss = masked_cross_entropy(logits, np.array([[[3]]]))
    assert 0 <= loss.item() < 1e-40


def test_label_zero_pixels_are_masked():
    rng = np.random.default_rng(1)
    label = rng.integers(0, 6, (2, 8, 8))
    logits = torch.tensor(rng.standard_normal((2, 5, 8, 8)), requires_grad=True)
    loss = masked_cross_entropy(logits, label)
    pad = torch.as_tensor(label == 0)[:, None].expand(-1, 5, -1, -1)
    noisy = torch.where(pad, torch.as_tensor(rng.standard_normal((2, 5, 8, 8)) * 50), logits.detach())
    assert masked_cross_entropy(noisy, label).item() == loss.item()
    loss.backward()
    assert not logits.grad.permute(0, 2, 3, 1)[torch.as_tensor(label == 0)].any()


def test_masked_loss_matches_manual_mean():
    rng = np.random.default_rng(2)
    label = rng.integers(0, 6, (6, 6))
    logits = rng.standard_normal((5, 6, 6))
    terms = []
    for (i, j), t in np.ndenumerate(label):
        if t:
            z = logits[:, i, j]
            terms.append(-(z[t - 1] - np.log(np.exp(z).sum())))
    got = masked_cross_entropy(torch.as_tensor(logits), label).item()
    assert got == pytest.approx(np.mean(terms), rel=1e-12)


def test_loss_errors():
    with pytest.raises(UndefinedLossError):
        masked_cross_entropy(torch.zeros(5, 2, 2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        masked_cross_entropy(torch.zeros(5, 2, 2), np.ones((3, 2)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(data="x", batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(data="x", epochs=0)


def test_non_finite_loss_aborts():
    model = create_model(TINY, seed=0)
    opt = make_optimizer(model, TrainConfig(data="x"))
    x = torch.zeros(1, 1, 32, 16)
    label = torch.ones(1, 32, 16, dtype=torch.long)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    with pytest.raises(TrainingDiverged):
        train_step(model, opt, x, x, label, logits_hook=lambda z: z * float("nan"))
    after = model.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before if "running" not in k and "num_batches" not in k)


def test_one_epoch_step_count(tiny_dataset, tmp_path):
    rec = train(config(tiny_dataset, tmp_path / "run", epochs=1, batch_size=4))
    assert rec.steps == 2
    assert [r["epoch"] for r in rec.rows] == [1]
    csv = (tmp_path / "run" / "run.csv").read_text().splitlines()
    assert csv[0].split(",") == CSV_COLUMNS
    assert len(csv) == 2


def test_deterministic_runs_identical(tiny_dataset, tmp_path):
    a = train(config(tiny_dataset, tmp_path / "a", epochs=3, seed=5))
    b = train(config(tiny_dataset, tmp_path / "b", epochs=3, seed=5))
    assert (tmp_path / "a" / "run.csv").read_bytes() == (tmp_path / "b" / "run.csv").read_bytes()
    assert a.to_csv() == b.to_csv()


def test_loss_decreases(tiny_dataset):
    rec = train(config(tiny_dataset, epochs=16, seed=0))
    losses = [r["train_loss"] for r in rec.rows]
    assert np.median(losses[-5:]) < np.median(losses[:5])


def test_checkpoint_reproduces_recorded_metrics(tiny_dataset, tmp_path):
    rec = train(config(tiny_dataset, tmp_path / "run", epochs=3))
    model, meta = load_checkpoint(rec.last_checkpoint)
    assert meta["epoch"] == 3
    data = prepare_data(config(tiny_dataset))
    rep = metrics.evaluate_dataset(model, data.val)
    last = rec.rows[-1]
    assert rep["miou"] == last["val_miou"]
    assert rep["pixel_acc"] == last["val_pixel_acc"]
    best, _ = load_checkpoint(rec.best_checkpoint)
    assert metrics.evaluate_dataset(best, data.val)["miou"] == max(r["val_miou"] for r in rec.rows)


def test_padding_region_does_not_affect_step(tmp_path):
    """Noise in label-0 pixels is invisible to the loss when the logits there are replaced."""
    model_a = create_model(TINY, seed=1)
    model_b = create_model(TINY, seed=1)
    opt_a, opt_b = make_optimizer(model_a, TrainConfig(data="x")), make_optimizer(model_b, TrainConfig(data="x"))
    rng = np.random.default_rng(0)
    grey = torch.as_tensor(rng.uniform(0, 1, (2, 1, 32, 16)), dtype=torch.float32)
    rf = torch.as_tensor(rng.uniform(-1, 1, (2, 1, 32, 16)), dtype=torch.float32)
    label = torch.as_tensor(rng.integers(1, 6, (2, 32, 16)))
    label[:, 24:] = 0
    pad = (label == 0)[:, None].expand(-1, 5, -1, -1)
    noise = torch.as_tensor(rng.standard_normal((2, 5, 32, 16)) * 30, dtype=torch.float32)
    la = train_step(model_a, opt_a, grey, rf, label)
    lb = train_step(model_b, opt_b, grey, rf, label, logits_hook=lambda z: torch.where(pad, noise, z))
    assert la == lb
    pa, pb = model_a.parameter_set(), model_b.parameter_set()
    assert all(torch.equal(pa[k], pb[k]) for k in pa)


def test_split_by_source_then_augment(tiny_dataset):
    plain = prepare_data(config(tiny_dataset))
    aug = prepare_data(config(tiny_dataset, augment=True))
    assert len(aug.train) == 6 * len(plain.train)
    assert [s.id for s in aug.val] == [s.id for s in plain.val]
    src = {s.id.split("~")[0] for s in aug.train}
    assert src.isdisjoint({s.id for s in plain.val + plain.test})


def test_subset_is_seeded(tiny_dataset):
    a = prepare_data(config(tiny_dataset, subset_size=4, seed=3))
    b = prepare_data(config(tiny_dataset, subset_size=4, seed=3))
    assert [s.id for s in a.train] == [s.id for s in b.train]
    assert len(a.train) == 4
    with pytest.raises(ValueError):
        prepare_data(config(tiny_dataset, subset_size=99))


def test_multi_seed_report_identical_seeds_zero_std(tiny_dataset, tmp_path):
    res = multi_seed_report(config(tiny_dataset, epochs=2), [4, 4], tmp_path / "rep")
    agg = res["aggregate"]
    assert agg["miou"][1] == 0.0 and agg["pixel_acc"][1] == 0.0
    assert "±0.000" in res["table"]
    assert (tmp_path / "rep" / "report.txt").exists()
    with pytest.raises(ValueError):
        multi_seed_report(config(tiny_dataset), [1])


def test_multi_seed_report_marks_failed_seed(tiny_dataset, monkeypatch):
    import wnet.training as tr

    real = tr.train

    def flaky(cfg, data=None, progress=False):
        if cfg.seed == 2:
            raise TrainingDiverged("boom")
        return real(cfg, data, progress)

    monkeypatch.setattr(tr, "train", flaky)
    res = multi_seed_report(config(tiny_dataset, epochs=1), [1, 2, 3])
    status = [p["status"] for p in res["seeds"]]
    assert status[0] == "ok" and status[2] == "ok" and status[1].startswith("failed")
    assert "failed" in res["table"]
    assert "(n=2)" in res["table"]


def test_ablation_harness(tiny_dataset, tmp_path):
    res = dataset_size_ablation(config(tiny_dataset, epochs=1), [2, 4], tmp_path / "abl")
    assert [r["size"] for r in res["sizes"]] == [2, 4]
    assert res["table"].splitlines()[0].startswith("Train size")
    assert (tmp_path / "abl" / "ablation.json").exists()


def test_unet_variants_train(tiny_dataset):
    for m in ("unet-grey", "unet-grey-rf"):
        rec = train(config(tiny_dataset, model=replace(TINY, model=m), epochs=1))
        assert np.isfinite(rec.rows[0]["train_loss"])
