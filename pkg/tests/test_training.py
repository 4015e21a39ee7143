import numpy as np
import pytest

from dasgate.ablation import desk_model_config
from dasgate.data import DatasetSpec, augment_flip_crop, gen_synthetic, load_cifar100, load_dataset
from dasgate.gate import GateConfig
from dasgate.models import build_model
from dasgate.optim import SGD, TrainConfig, lr_at_epoch, sgd_update
from dasgate.training import evaluate, full_batch_losses, train


def _cifar_file(path, labels):
    rng = np.random.default_rng(0)
    recs = []
    for lab in labels:
        recs.append(bytes([0, lab]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes())
    path.write_bytes(b"".join(recs))
    return path


def test_cifar_layout(tmp_path):
    X, y = load_cifar100(_cifar_file(tmp_path / "five.bin", [42, 1, 2, 3, 99]))
    assert X.shape == (5, 3, 32, 32) and y.tolist() == [42, 1, 2, 3, 99]


def test_cifar_truncated(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(bytes(3073))
    with pytest.raises(ValueError, match="offset 0"):
        load_cifar100(p)


def test_cifar_label_range(tmp_path):
    with pytest.raises(ValueError, match="label 100"):
        load_cifar100(_cifar_file(tmp_path / "bad.bin", [1, 100]))


def test_cifar_pixels_standardized(tmp_path):
    raw = bytes([0, 7]) + bytes([255]) * 3072
    (tmp_path / "w.bin").write_bytes(raw)
    X, _ = load_cifar100(tmp_path / "w.bin", mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
    assert np.allclose(X, 1.0)


def test_synthetic_contract():
    spec = DatasetSpec(n_classes=3, n_samples=300)
    X1, y1 = gen_synthetic(spec, 5)
    X2, y2 = gen_synthetic(spec, 5)
    assert np.array_equal(X1, X2) and np.array_equal(y1, y2)
    assert np.bincount(y1).tolist() == [100, 100, 100]
    assert X1.min() >= 0 and X1.max() <= 1 and X1.shape == (300, 3, 32, 32)
    assert not np.array_equal(X1, gen_synthetic(spec, 6)[0])
    with pytest.raises(ValueError):
        gen_synthetic(DatasetSpec(n_classes=11), 0)


def test_load_dataset_dispatch():
    with pytest.raises(ValueError):
        load_dataset(DatasetSpec(kind="cifar100"))
    with pytest.raises(ValueError):
        load_dataset(DatasetSpec(kind="mnist"))


def test_augment_keeps_shape(rng):
    x = rng.uniform(size=(4, 3, 8, 8))
    assert augment_flip_crop(x, np.random.default_rng(0)).shape == x.shape


def test_lr_step_examples():
    cfg = TrainConfig(lr0=0.1, schedule="step", milestones=(30, 60, 90), gamma=0.1)
    assert lr_at_epoch(cfg, 0) == 0.1
    assert abs(lr_at_epoch(cfg, 30) - 0.01) < 1e-15
    assert abs(lr_at_epoch(cfg, 95) - 1e-4) < 1e-15


def test_lr_cosine_endpoints():
    cfg = TrainConfig(lr0=0.1, schedule="cosine", epochs=10, eta_min=0.001)
    assert lr_at_epoch(cfg, 0) == 0.1
    assert abs(lr_at_epoch(cfg, 10) - 0.001) < 1e-15
    lrs = [lr_at_epoch(cfg, e) for e in range(11)]
    assert lrs == sorted(lrs, reverse=True)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(milestones=(5, 5))
    assert TrainConfig.imagenet().milestones == (30, 60, 90)


def test_sgd_examples(rng):
    cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
    p, v = rng.normal(size=4), rng.normal(size=4)
    p0, v0 = p.copy(), v.copy()
    sgd_update([p], [np.zeros(4)], [v], 0.1, cfg)
    assert np.array_equal(p, p0 - 0.1 * 0.9 * v0) and np.allclose(v, 0.9 * v0)

    cfg0 = TrainConfig(momentum=0.0, weight_decay=0.0)
    p, g = rng.normal(size=4), rng.normal(size=4)
    p0 = p.copy()
    sgd_update([p], [g], [np.zeros(4)], 0.3, cfg0)
    assert np.array_equal(p, p0 - 0.3 * g)

    p, g, v = np.zeros(3), np.array([1.0, -2.0, 0.5]), np.zeros(3)
    for _ in range(2):
        sgd_update([p], [g], [v], 1.0, cfg)
    np.testing.assert_allclose(p, -2.9 * g, rtol=1e-15)


def test_sgd_zero_lr_is_noop(rng):
    p = rng.normal(size=5)
    p0 = p.copy()
    sgd_update([p], [rng.normal(size=5)], [np.zeros(5)], 0.0, TrainConfig())
    assert np.array_equal(p, p0)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_update([np.zeros(3)], [np.zeros(2)], [np.zeros(3)], 0.1, TrainConfig())


def _tiny_net(gated=True, width=4):
    return build_model(desk_model_config(3, GateConfig() if gated else None, width=width, seed=0))


def test_smoke_one_epoch():
    X, y = gen_synthetic(DatasetSpec(n_samples=8), 0)
    res = train(_tiny_net(), X, y, TrainConfig(batch_size=4, epochs=1, lr0=0.05))
    assert len(res.history) == 1
    assert 0 <= res.history[0].train_acc <= 1
    assert res.to_csv().count("\n") == 2


def test_same_seed_same_log():
    X, y = gen_synthetic(DatasetSpec(n_samples=12), 0)
    cfg = TrainConfig(batch_size=4, epochs=2, lr0=0.05, augment=True, schedule="cosine")
    a = train(_tiny_net(), X, y, cfg)
    b = train(_tiny_net(), X, y, cfg)
    assert a.to_csv() == b.to_csv()
    for (n, p), (_, q) in zip(a.net.named_parameters(), b.net.named_parameters()):
        assert np.array_equal(p.value, q.value), n


def test_full_batch_loss_decreases():
    X, y = gen_synthetic(DatasetSpec(n_samples=24), 0)
    losses = full_batch_losses(_tiny_net(width=8), X, y, lr=0.01, steps=6)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_label_range_checked():
    X, _ = gen_synthetic(DatasetSpec(n_samples=4), 0)
    with pytest.raises(ValueError):
        train(_tiny_net(), X, np.array([0, 1, 2, 3]), TrainConfig(epochs=1))


def test_divergence_aborts():
    X, y = gen_synthetic(DatasetSpec(n_samples=8), 0)
    with pytest.raises(FloatingPointError):
        with np.errstate(all="ignore"):
            train(_tiny_net(), X, y, TrainConfig(epochs=5, batch_size=4, lr0=1e200))


def test_non_finite_input_rejected():
    X, y = gen_synthetic(DatasetSpec(n_samples=4), 0)
    X[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        train(_tiny_net(), X, y, TrainConfig(epochs=1, batch_size=4))


def test_evaluate_empty():
    assert np.isnan(evaluate(_tiny_net(), np.zeros((0, 3, 32, 32)), np.zeros(0, dtype=int)))


def test_optimizer_buffers_named():
    net = _tiny_net()
    opt = SGD(dict(net.named_parameters()), TrainConfig())
    assert set(opt.momentum_buffers) == {n for n, _ in net.named_parameters()}
