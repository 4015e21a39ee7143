"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run alone with ``pytest tests/test_acceptance.py -s`` or as part of the full
suite; the verdict lines bypass output capture either way.
"""

import time

import numpy as np
import pytest

from dasgate import functional as F
from dasgate.ablation import ablation_csv, desk_model_config, run_ablation
from dasgate.analysis import RegionMask, count_macs, sfd_score
from dasgate.autodiff import Var, check_param_grads, finite_diff_check, sum_weighted
from dasgate.checkpoint import (
    BadMagicError, MissingTensorError, TruncatedCheckpointError, UnsupportedVersionError,
    load_checkpoint, restore, save_checkpoint,
)
from dasgate.data import DatasetSpec, gen_synthetic
from dasgate.gate import DASGate, GateConfig, Variant, das_forward, variant_forward
from dasgate.layers import (
    ConvLayer, DeformableConvLayer, DepthwiseSeparableConv, Linear, Norm, NormKind,
    activation, deformable_conv2d, pool,
)
from dasgate.models import ModelConfig, build_model
from dasgate.optim import SGD, TrainConfig
from dasgate.tensor import conv2d_ref
from dasgate.training import evaluate, full_batch_losses, train


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return emit


def _count(depth, gates="none", alpha=0.2, variant="c_das"):
    t = time.perf_counter()
    cfg = ModelConfig(depth=depth, gate_placement=gates, gate=GateConfig(alpha=alpha, variant=variant))
    rep = count_macs(build_model(cfg), (224, 224))
    return rep.total_params, rep.total_macs, time.perf_counter() - t


def test_structural_reproduction(verdict):
    p18, m18, t18 = _count(18)
    p50, m50, t50 = _count(50)
    ok = (p18 == 11_689_512 and abs(m18 / 1.82e9 - 1) <= 0.01 and t18 < 1
          and abs(p50 / 25.56e6 - 1) <= 1e-3 and abs(m50 / 4.12e9 - 1) <= 0.02 and t50 < 1)
    detail = (f"R18 {p18:,} params {m18 / 1e9:.4f} GMACs ({t18:.2f}s); "
              f"R50 {p50:,} params {m50 / 1e9:.4f} GMACs ({t50:.2f}s)")
    assert verdict("structural reproduction", ok, detail)


def test_das_overhead(verdict):
    p0, m0, _ = _count(18)
    p, m, _ = _count(18, "four")
    by_alpha = [_count(18, "four", a)[0] for a in (0.1, 0.2, 0.5, 1.0)]
    ok = 0 < p - p0 < 1.2e6 and m - m0 < 0.15e9 and by_alpha == sorted(set(by_alpha))
    detail = (f"+{p - p0:,} params, +{(m - m0) / 1e9:.4f} GMACs at alpha 0.2 "
              f"(reference +0.13M / +0.04G); params over alpha 0.1/0.2/0.5/1.0 = {by_alpha}")
    assert verdict("DAS overhead direction", ok, detail)


def test_reduction_oracle(verdict):
    rng = np.random.default_rng(2024)
    t = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        c_in, c_out = (int(v) for v in rng.integers(1, 9, size=2))
        h, w = (int(v) for v in rng.integers(3, 12, size=2))
        layer = DeformableConvLayer(c_in, c_out, rng=trial)
        layer.forced_modulation = 1.0
        x = rng.normal(size=(int(rng.integers(1, 4)), c_in, h, w))
        out = deformable_conv2d(Var(x), layer).value
        worst = max(worst, float(np.max(np.abs(out - conv2d_ref(x, layer.weight.value, 1, 1)))))
    ok = worst < 1e-9
    assert verdict("reduction oracle", ok, f"max abs diff {worst:.2e} over 100 trials "
                                          f"({time.perf_counter() - t:.1f}s)")


def _fd_module(module, x, rng):
    W = rng.normal(size=module(Var(x)).value.shape)
    e1, _ = finite_diff_check(lambda v: sum_weighted(module(v), W), x)
    xv = Var(x)
    e2, _ = check_param_grads(lambda: sum_weighted(module(xv), W), module.parameters())
    return max(e1, e2)


def _fd_fn(fn, x, rng):
    W = rng.normal(size=fn(Var(x)).value.shape)
    return finite_diff_check(lambda v: sum_weighted(fn(v), W), x)[0]


def _randomize_predictors(module, rng):
    for name, p in module.named_parameters():
        if "offset_predictor" in name or name.split(".")[0] == "grid":
            p.value[:] = 0.3 * rng.normal(size=p.value.shape)
    return module


def test_gradient_suite(verdict):
    rng = np.random.default_rng(7)
    t = time.perf_counter()
    x = rng.normal(size=(1, 4, 6, 6))
    errs = {}
    errs["conv3x3"] = _fd_module(ConvLayer(4, 3, 3, rng=0), x, rng)
    errs["conv_stride2"] = _fd_module(ConvLayer(4, 3, 3, 2, rng=0), x, rng)
    errs["conv1x1"] = _fd_module(ConvLayer(4, 3, 1, rng=0), x, rng)
    errs["depthwise"] = _fd_module(ConvLayer(4, 4, 3, groups=4, rng=0), x, rng)
    errs["dsc"] = _fd_module(DepthwiseSeparableConv(4, 3, rng=0), x, rng)
    errs["deformable"] = _fd_module(_randomize_predictors(DeformableConvLayer(4, 3, rng=0), rng), x, rng)
    for kind in NormKind:
        norm = Norm(kind, 4, affine=True)
        norm.weight.value[:] = rng.normal(size=4)
        xb = rng.normal(size=(2, 4, 6, 6)) if kind is NormKind.BATCH else x
        errs[f"norm_{kind.value}"] = _fd_module(norm, xb, rng)
    for act in ("gelu", "relu", "sigmoid"):
        errs[act] = _fd_fn(lambda v, a=act: activation(v, a), x, rng)
    errs["max_pool"] = _fd_fn(lambda v: pool(v, "max3s2p1"), x, rng)
    errs["global_avg"] = _fd_fn(lambda v: pool(v, "global_avg"), x, rng)
    errs["linear"] = _fd_module(Linear(4, 3, rng=0), rng.normal(size=(1, 4, 1, 1)), rng)

    off = rng.normal(size=(1, 18, 6, 6)) * 0.7
    mlog = rng.normal(size=(1, 9, 6, 6))
    wd = rng.normal(size=(3, 4, 3, 3))
    errs["deform_wrt_offsets"] = _fd_fn(lambda v: F.deform_conv2d(Var(x), Var(wd), v, F.sigmoid(Var(mlog))), off, rng)
    errs["deform_wrt_modulation"] = _fd_fn(lambda v: F.deform_conv2d(Var(x), Var(wd), Var(off), F.sigmoid(v)), mlog, rng)
    flow = rng.normal(size=(1, 2, 6, 6))
    errs["grid_sample"] = _fd_fn(lambda v: F.grid_sample(v, Var(flow)), x, rng)
    errs["grid_sample_wrt_flow"] = _fd_fn(lambda v: F.grid_sample(Var(x), v), flow, rng)

    das = _randomize_predictors(DASGate(8, GateConfig(alpha=0.25), rng=0), rng)
    errs["das_gate"] = _fd_module(type("G", (), {"__call__": lambda s, v: das_forward(v, das),
                                                 "parameters": lambda s: das.parameters()})(),
                                  rng.normal(size=(1, 8, 6, 6)), rng)
    for v in Variant:
        gate = _randomize_predictors(DASGate(4, GateConfig(alpha=0.5, variant=v), rng=0), rng)
        errs[f"variant_{v.value[0]}"] = _fd_module(gate, x, rng)
    elapsed = time.perf_counter() - t
    worst = max(errs, key=errs.get)
    ok = all(e < 1e-3 for e in errs.values()) and elapsed < 120
    failing = [k for k, e in errs.items() if e >= 1e-3]
    assert verdict("gradient suite", ok, f"{len(errs)} checks, worst {worst} rel err {errs[worst]:.2e}, "
                                         f"failing {failing or 'none'} ({elapsed:.1f}s)")


def test_gate_semantics(verdict):
    rng = np.random.default_rng(11)
    gate = _randomize_predictors(DASGate(8, GateConfig(), rng=0), rng)
    zero_ok = np.all(das_forward(Var(np.zeros((2, 8, 5, 5))), gate).value == 0)
    shape_ok = bound_ok = True
    for _ in range(1000):
        shape = (int(rng.integers(1, 3)), 8, int(rng.integers(2, 7)), int(rng.integers(2, 7)))
        x = rng.normal(scale=rng.uniform(0.01, 10), size=shape)
        out = das_forward(Var(x), gate).value
        shape_ok &= out.shape == x.shape
        bound_ok &= bool(np.all(np.abs(out) < np.abs(x)))
    ok = zero_ok and shape_ok and bound_ok
    assert verdict("gate semantics", ok, f"zero->zero {zero_ok}, shape {shape_ok}, "
                                         f"|out|<|in| {bound_ok} on 1000 inputs")


def test_sfd_metric(verdict):
    R = np.zeros((10, 10), dtype=bool)
    R[3:6, 3:6] = True
    B = np.zeros((10, 10), dtype=bool)
    B[1:8, 1:8] = True
    mask = RegionMask(R, B)
    s1 = sfd_score(R.astype(float), mask)
    s2 = sfd_score(B.astype(float), mask)
    s3 = sfd_score(np.where(R, 1.0, np.where(B, 0.5, 0.0)), mask)
    target = (np.e - 1) / ((np.e - 1) + (np.sqrt(np.e) - 1))
    examples_ok = abs(s1 - 1) <= 1e-6 and abs(s2 - 0.5) <= 1e-6 and abs(s3 - target) <= 1e-6
    rng = np.random.default_rng(5)
    ring = np.argwhere(B & ~R)
    mono = 0
    for _ in range(500):
        w = rng.uniform(0.05, 0.95, size=(10, 10))
        w[0, 0], w[4, 4] = 0.0, 1.0
        y, x = ring[rng.integers(len(ring))]
        before = sfd_score(w, mask)
        w[y, x] *= rng.uniform(0.0, 0.99)
        mono += sfd_score(w, mask) > before
    ok = examples_ok and mono == 500
    assert verdict("sfd metric", ok, f"examples {s1:.6f} / {s2:.6f} / {s3:.6f}; "
                                     f"monotone on {mono}/500 random maps")


DESK_DATA = DatasetSpec(n_classes=3, n_samples=150)
DESK_TRAIN = TrainConfig(batch_size=32, epochs=30, lr0=0.05, weight_decay=5e-4, schedule="cosine", seed=0)


def test_desk_training(verdict):
    t = time.perf_counter()
    X, y = gen_synthetic(DESK_DATA, 0)
    Xe, ye = gen_synthetic(DatasetSpec(n_classes=3, n_samples=60), 1)
    runs = {}
    for label, gate in (("baseline", None), ("das", GateConfig())):
        net = build_model(desk_model_config(3, gate, width=16, seed=0))
        runs[label] = train(net, X, y, DESK_TRAIN)
    reached = {k: next((r.epoch + 1 for r in v.history if r.train_acc >= 0.9), None) for k, v in runs.items()}
    acc_ok = all(e is not None and e <= 30 for e in reached.values())

    repeat = train(build_model(desk_model_config(3, None, width=16, seed=0)), X, y, DESK_TRAIN)
    same_log = repeat.to_csv() == runs["baseline"].to_csv()
    same_params = all(np.array_equal(p.value, q.value) for (_, p), (_, q) in
                      zip(repeat.net.named_parameters(), runs["baseline"].net.named_parameters()))

    Xf, yf = gen_synthetic(DatasetSpec(n_classes=3, n_samples=48), 0)
    losses = full_batch_losses(build_model(desk_model_config(3, GateConfig(), width=16, seed=0)),
                               Xf, yf, lr=0.01, steps=6)
    decreasing = all(b < a for a, b in zip(losses, losses[1:]))
    elapsed = time.perf_counter() - t
    ok = acc_ok and same_log and same_params and decreasing and elapsed < 900
    final = {k: v.history[-1].train_acc for k, v in runs.items()}
    comparison = {k: evaluate(v.net, Xe, ye) for k, v in runs.items()}
    assert verdict("desk-scale training", ok,
                   f">=90% train acc at epoch {reached} (final {final}); "
                   f"loss decreasing over 5 full-batch steps {decreasing}; "
                   f"bitwise reproducible {same_log and same_params} ({elapsed:.0f}s)")
    verdict("eval comparison (non-gating)", True,
            f"baseline {comparison['baseline']:.3f} vs das {comparison['das']:.3f} on 60 held-out images")


def test_ablation_harness(verdict, tmp_path):
    t = time.perf_counter()
    rows = run_ablation(list(Variant), epochs=2, data=DatasetSpec(n_classes=3, n_samples=90))
    text = ablation_csv(rows)
    (tmp_path / "ablation.csv").write_text(text)
    params = {r.variant: r.params for r in rows}
    complete = [r.variant for r in rows[1:]] == [v.value for v in Variant]
    finite = all(np.isfinite(r.train_acc) and np.isfinite(r.eval_acc) and r.macs > 0 for r in rows)
    order = params["b_gridsample_gated"] < params["c_das"] < params["a_gridsample_concat"]
    ok = complete and finite and order and text.count("\n") == len(Variant) + 2
    assert verdict("ablation harness", ok,
                   f"{len(rows) - 1} variants + baseline, params b {params['b_gridsample_gated']:,} "
                   f"< c {params['c_das']:,} < a {params['a_gridsample_concat']:,} "
                   f"({time.perf_counter() - t:.0f}s)")


def test_persistence(verdict, tmp_path):
    X, y = gen_synthetic(DatasetSpec(n_samples=16), 0)
    res = train(build_model(desk_model_config(3, GateConfig(), width=4)), X, y,
                TrainConfig(batch_size=8, epochs=1, lr0=0.05))
    path = tmp_path / "ck.bin"
    save_checkpoint(path, res.net, res.optimizer, epoch=1)
    fresh = build_model(desk_model_config(3, GateConfig(), width=4, seed=3))
    opt = SGD(dict(fresh.named_parameters()), TrainConfig())
    restore(fresh, load_checkpoint(path), opt)
    exact = all(p.value.tobytes() == q.value.tobytes() for (_, p), (_, q) in
                zip(res.net.named_parameters(), fresh.named_parameters()))
    exact &= all(res.optimizer.momentum_buffers[k].tobytes() == v.tobytes()
                 for k, v in opt.momentum_buffers.items())
    good = path.read_bytes()

    def raised(data, exc):
        path.write_bytes(data)
        try:
            load_checkpoint(path)
        except exc:
            return True
        except Exception:
            return False
        return False

    magic = raised(b"XXXXXXXX" + good[8:], BadMagicError)
    version = raised(good[:8] + (2).to_bytes(4, "little") + good[12:], UnsupportedVersionError)
    trunc = raised(good[: len(good) // 2], TruncatedCheckpointError)
    plain = tmp_path / "plain.bin"
    save_checkpoint(plain, build_model(desk_model_config(3, None, width=4)))
    try:
        restore(build_model(desk_model_config(3, GateConfig(), width=4)), load_checkpoint(plain))
        named = False
    except MissingTensorError as exc:
        named = "gate.layer1" in str(exc)
    ok = exact and magic and version and trunc and named
    assert verdict("persistence", ok, f"bit-exact {exact}; bad magic {magic}, version {version}, "
                                      f"truncated {trunc}; missing tensor named {named}")
