"""Acceptance criteria, one marked group per criterion.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion
is printed at the end of the session.
"""
import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cardiac_cascade import unet
from cardiac_cascade.losses import cross_entropy, dice_loss, one_hot, total_loss
from cardiac_cascade.metrics import dice, evaluate_case
from cardiac_cascade.phantom import PhantomConfig, generate_dataset
from cardiac_cascade.pipeline import (
    ClassifierRule,
    Diagnosis,
    classify,
    default_stage,
    make_folds,
    predict_stage,
    run_pipeline,
    train_stage,
)
from cardiac_cascade.preprocess import preprocess_image, preprocess_label, resample_image, resample_label, zscore
from cardiac_cascade.volume import LESION, WHOLE_LV, LabelMap, Spacing, Volume, label_mask, read_miv, write_miv

import oracles
from gradcheck import max_rel_error, numeric_grad

C1 = pytest.mark.criterion(1, "gradient correctness")
C2 = pytest.mark.criterion(2, "metric oracle equivalence")
C3 = pytest.mark.criterion(3, "preprocessing laws")
C4 = pytest.mark.criterion(4, "classification rule boundary")
C5 = pytest.mark.criterion(5, "end-to-end phantom run")
C6 = pytest.mark.criterion(6, "determinism")
C7 = pytest.mark.criterion(7, "ensemble sanity")
C8 = pytest.mark.criterion(8, "format round trip")


# -- 1 --------------------------------------------------------------------

@C1
def test_c1_network_gradients():
    t0 = time.perf_counter()
    cfg = unet.UNetConfig(num_classes=2, depth=2, base_channels=2)
    params = unet.init_params(cfg, 0, dtype=np.float64)
    rng = np.random.default_rng(1)
    # nonzero biases and affine shifts so no parameter sits at a symmetric point
    for v in params.tensors.values():
        v += 0.1 * rng.standard_normal(v.shape)
    x = rng.standard_normal((1, 1, 8, 8))
    target = one_hot(rng.integers(0, 2, (1, 8, 8)), 2)

    def loss():
        logits, _ = unet.forward(params, x)
        probs = unet.softmax(logits)
        return dice_loss(probs, target)[0] + cross_entropy(probs, target)[0]

    logits, cache = unet.forward(params, x)
    probs = unet.softmax(logits)
    _, g = total_loss(probs, target)
    grads, _ = unet.backward(params, cache, g)
    worst = {name: max_rel_error(grads[name], numeric_grad(loss, v, h=1e-4)) for name, v in params.items()}
    name = max(worst, key=worst.get)
    print(f"\nworst parameter {name}: relative error {worst[name]:.2e}")
    assert all(err < 1e-3 for err in worst.values()), worst
    assert time.perf_counter() - t0 < 60


@C1
def test_c1_loss_gradients():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((1, 2, 2, 2))
    target = one_hot(rng.integers(0, 2, (1, 2, 2)), 2)
    probs = unet.softmax(logits)
    _, gd = dice_loss(probs, target)
    assert max_rel_error(gd, numeric_grad(lambda: dice_loss(probs, target)[0], probs, h=1e-3, order=4)) < 1e-6
    _, gc = cross_entropy(probs, target)
    num = numeric_grad(lambda: cross_entropy(unet.softmax(logits), target)[0], logits, h=1e-3, order=4)
    assert max_rel_error(gc, num) < 1e-6


# -- 2 --------------------------------------------------------------------

@C2
def test_c2_brute_force_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 7)), int(rng.integers(1, 7)), int(rng.integers(1, 3)))
        present = rng.choice(5, size=int(rng.integers(1, 6)), replace=False)
        pred = rng.choice(present, size=shape).astype(np.uint8)
        gt = rng.choice(present, size=shape).astype(np.uint8)
        spacing = Spacing(*rng.uniform(0.5, 10, 3))
        report = evaluate_case(LabelMap(pred, spacing), LabelMap(gt, spacing), str(seed))
        expected = oracles.metrics(pred, gt, spacing.as_tuple())
        for target, fields in expected.items():
            for field, value in fields.items():
                got = getattr(report.targets[target], field)
                assert oracles.close(got, value, 1e-9), (seed, target, field, got, value)
                if not math.isnan(value):
                    worst = max(worst, abs(got - value))
    print(f"\nlargest absolute deviation {worst:.2e}")
    assert time.perf_counter() - t0 < 30


# -- 3 --------------------------------------------------------------------

@C3
def test_c3_shape_formula():
    rng = np.random.default_rng(3)
    for _ in range(50):
        shape = tuple(int(s) for s in rng.integers(1, 24, 3))
        old = Spacing(*rng.uniform(0.5, 12, 3))
        new = Spacing(*rng.uniform(0.5, 12, 3))
        out = resample_image(Volume(rng.standard_normal(shape), old), new)
        hand = tuple(max(1, math.floor(n * o / w + 0.5)) for n, o, w in zip(shape, old.as_tuple(), new.as_tuple()))
        assert out.shape == hand
        assert out.spacing == new


@C3
def test_c3_identity_is_bit_exact():
    rng = np.random.default_rng(4)
    for _ in range(20):
        shape = tuple(int(s) for s in rng.integers(1, 12, 3))
        sp = Spacing(*rng.uniform(0.5, 12, 3))
        vol = Volume(rng.standard_normal(shape), sp)
        assert resample_image(vol, sp).data.tobytes() == vol.data.tobytes()
        labels = LabelMap(rng.integers(0, 5, shape), sp)
        assert resample_label(labels, sp).data.tobytes() == labels.data.tobytes()


@C3
@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_c3_zscore(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(tuple(int(s) for s in rng.integers(2, 10, 3))) * rng.uniform(0.01, 100)
    out = zscore(Volume(x + rng.uniform(-100, 100), Spacing(1, 1, 1))).data.astype(np.float64)
    assert abs(out.mean()) < 1e-6
    assert abs(out.std() - 1) < 1e-6


@C3
def test_c3_labels_never_invented():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        shape = tuple(int(s) for s in rng.integers(1, 8, 3))
        present = rng.choice(5, size=int(rng.integers(1, 5)), replace=False)
        labels = LabelMap(rng.choice(present, size=shape).astype(np.uint8), Spacing(*rng.uniform(0.5, 4, 3)))
        out = resample_label(labels, Spacing(*rng.uniform(0.5, 4, 3)))
        assert set(np.unique(out.data)) <= set(np.unique(labels.data)), seed


# -- 4 --------------------------------------------------------------------

@C4
@pytest.mark.parametrize("count, expected", [
    (0, Diagnosis.NORMAL), (9, Diagnosis.NORMAL), (10, Diagnosis.PATHOLOGICAL),
])
def test_c4_boundary(count, expected):
    data = np.full((6, 8, 8), 2, np.uint8)
    rng = np.random.default_rng(count)
    idx = rng.choice(data.size, count, replace=False)
    data.reshape(-1)[idx] = rng.choice([3, 4], count)
    assert classify(LabelMap(data, Spacing(10, 1.458, 1.458)), ClassifierRule()) is expected


# -- 5 and 6 --------------------------------------------------------------

SEED = 42


def phantom_experiment():
    """Generate, preprocess, train both stages on folds 1-4, predict fold 0."""
    t0 = time.perf_counter()
    raw = generate_dataset(PhantomConfig(), 25, 0.67, SEED)
    folds = make_folds(raw, 5, SEED)
    cases = [
        replace(c, image=preprocess_image(c.image), labels=preprocess_label(c.labels), fold=folds[c.case_id])
        for c in raw
    ]
    s1 = train_stage(cases, default_stage(1), 0, SEED)
    s2 = train_stage(cases, default_stage(2), 0, SEED)
    held = [c for c in raw if folds[c.case_id] == 0]
    outputs = {c.case_id: run_pipeline(c.image, [s1.params], [s2.params]) for c in held}
    return {
        "held": held,
        "outputs": outputs,
        "traces": (s1.trace_lines(), s2.trace_lines()),
        "seconds": time.perf_counter() - t0,
    }


@pytest.fixture(scope="module")
def experiment():
    return phantom_experiment()


@pytest.mark.slow
@C5
def test_c5_phantom_run(experiment):
    whole, lesion, correct = [], [], 0
    for case in experiment["held"]:
        out = experiment["outputs"][case.case_id]
        whole.append(dice(label_mask(out.labels, WHOLE_LV), label_mask(case.labels, WHOLE_LV)))
        if case.pathological:
            lesion.append(dice(label_mask(out.labels, LESION), label_mask(case.labels, LESION)))
        truth = Diagnosis.PATHOLOGICAL if case.pathological else Diagnosis.NORMAL
        correct += out.diagnosis is truth
    acc = correct / len(experiment["held"])
    print(f"\nheld-out cases {len(whole)}: whole-LV Dice {np.mean(whole):.4f}, "
          f"lesion Dice {np.mean(lesion):.4f} over {len(lesion)} pathological, accuracy {acc:.2f}, "
          f"{experiment['seconds']:.0f} s")
    assert np.mean(whole) >= 0.90
    assert np.mean(lesion) >= 0.50
    assert acc >= 0.80
    assert experiment["seconds"] <= 15 * 60


@pytest.mark.slow
@C5
def test_c5_large_infarct_detected(experiment):
    big = [c for c in experiment["held"] if label_mask(c.labels, LESION).sum() >= 50]
    assert big
    for case in big:
        assert experiment["outputs"][case.case_id].diagnosis is Diagnosis.PATHOLOGICAL


@pytest.mark.slow
@C6
def test_c6_repeat_is_identical(experiment):
    again = phantom_experiment()
    assert again["traces"] == experiment["traces"]
    for cid, out in experiment["outputs"].items():
        other = again["outputs"][cid]
        assert other.labels.data.tobytes() == out.labels.data.tobytes()
        assert other.diagnosis is out.diagnosis


# -- 7 --------------------------------------------------------------------

@C7
def test_c7_ensemble():
    stage = default_stage(1)
    params = unet.init_params(stage.unet, 7, dtype=np.float32)
    rng = np.random.default_rng(7)
    image = Volume(rng.standard_normal((6, 64, 64)), Spacing(10, 1.458, 1.458))
    single = predict_stage([params], image, stage)
    five = predict_stage([params.copy() for _ in range(5)], image, stage)
    assert np.max(np.abs(five.data - single.data)) <= 1e-7
    assert np.max(np.abs(five.data.sum(axis=0) - 1)) <= 1e-5
    mixed = predict_stage([unet.init_params(stage.unet, s, dtype=np.float32) for s in range(5)], image, stage)
    assert np.max(np.abs(mixed.data.sum(axis=0) - 1)) <= 1e-5


# -- 8 --------------------------------------------------------------------

@C8
def test_c8_miv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    for i in range(100):
        shape = tuple(int(s) for s in rng.integers(1, 10, 3))
        sp = Spacing(*rng.uniform(0.1, 20, 3))
        grid = (Volume(rng.standard_normal(shape) * 100, sp) if i % 2
                else LabelMap(rng.integers(0, 5, shape), sp))
        path = tmp_path / f"{i}.miv"
        write_miv(grid, path)
        back = read_miv(path)
        assert type(back) is type(grid)
        assert back.spacing == grid.spacing and back.data.dtype == grid.data.dtype
        assert back.data.tobytes() == grid.data.tobytes()


@C8
def test_c8_checkpoint_after_training(tmp_path):
    cases = generate_dataset(PhantomConfig(), 2, 0.5, 1)
    cases = [replace(c, fold=i) for i, c in enumerate(cases)]
    stage = default_stage(1, hyper=replace(default_stage(1).hyper, max_epochs=1))
    result = train_stage(cases, stage, 0, 3, checkpoint_path=tmp_path / "m.ckpt")
    params, _ = unet.read_checkpoint(tmp_path / "m.ckpt")
    x = np.random.default_rng(0).standard_normal((2, 1, 64, 64)).astype(np.float32)
    assert unet.forward(params, x)[0].tobytes() == unet.forward(result.params, x)[0].tobytes()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
