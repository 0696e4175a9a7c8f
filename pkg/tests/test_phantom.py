import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from cardiac_cascade.phantom import (
    PhantomConfig,
    PhantomError,
    _make_case,
    case_seeds,
    generate_case,
    generate_dataset,
    threshold_whole_lv,
    write_dataset,
)
from cardiac_cascade.pipeline import ClassifierRule, Diagnosis, classify
from cardiac_cascade.volume import read_miv

CFG = PhantomConfig()
CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(CFG, 100, 0.67, 3)


def test_exact_pathological_count(dataset):
    flags = [c.pathological for c in dataset]
    assert sum(flags) == 67 and len(flags) == 100


def test_fraction_zero_and_one():
    assert not any(c.pathological for c in generate_dataset(CFG, 12, 0.0, 1))
    assert all(c.pathological for c in generate_dataset(CFG, 12, 1.0, 1))


def test_flags_match_ground_truth_rule(dataset):
    for case in dataset:
        lesion = int(np.isin(case.labels.data, (3, 4)).sum())
        expected = Diagnosis.PATHOLOGICAL if case.pathological else Diagnosis.NORMAL
        assert classify(case.labels, ClassifierRule()) is expected
        if case.pathological:
            assert lesion >= CFG.min_lesion_voxels
        else:
            assert lesion == 0


def test_lesions_sit_inside_the_myocardium():
    # the same seed renders the same anatomy with and without an infarct
    for seed in range(20):
        sick = _make_case(CFG, seed, True, "a").labels.data
        healthy = _make_case(CFG, seed, False, "b").labels.data
        lesion = np.isin(sick, (3, 4))
        assert np.all(healthy[lesion] == 2)
        np.testing.assert_array_equal(sick[~lesion], healthy[~lesion])


def test_no_reflow_inside_infarct_interior():
    found = 0
    for seed in range(40):
        labels = _make_case(CFG, seed, True, "a").labels.data
        for z in range(labels.shape[0]):
            core = labels[z] == 4
            if not core.any():
                continue
            found += 1
            lesion = np.isin(labels[z], (3, 4))
            interior = ndimage.binary_erosion(lesion, CROSS)
            assert np.all(interior[core])
    assert found > 0


def test_cavity_connected_and_labels_partition(dataset):
    for case in dataset[:20]:
        labels = case.labels.data
        assert set(np.unique(labels)) <= {0, 1, 2, 3, 4}
        for z in range(labels.shape[0]):
            _, n = ndimage.label(labels[z] == 1)
            assert n == 1


def test_slice_drift_is_bounded():
    for seed in range(10):
        labels = generate_case(CFG, seed).labels.data
        lv = labels > 0
        centres = np.array([ndimage.center_of_mass(lv[z]) for z in range(lv.shape[0])])
        # disk centroids move with the drawn centre; allow one voxel of rasterisation slack
        assert np.all(np.linalg.norm(np.diff(centres, axis=0), axis=1) <= 2 + 1)


def test_infarct_probability_zero():
    cfg = replace(CFG, infarct_probability=0.0)
    for seed in range(10):
        case = generate_case(cfg, seed)
        assert not case.pathological
        assert set(np.unique(case.labels.data)) <= {0, 1, 2}


def test_noise_free_intensities():
    cfg = replace(CFG, noise_sigma=0.0)
    case = _make_case(cfg, 5, True, "a")
    img, lab = case.image.data, case.labels.data
    means = cfg.intensity_means()
    for label in range(5):
        if (lab == label).any():
            assert np.all(img[lab == label] == np.float32(means[label]))
    gap = img[lab == 3][0] - img[lab == 2][0]
    assert gap == np.float32(cfg.infarct_mean) - np.float32(cfg.myocardium_mean)


def test_threshold_oracle_recovers_whole_lv():
    cfg = replace(CFG, noise_sigma=0.0)
    for case in generate_dataset(cfg, 10, 0.67, 9):
        # independent rule: anything not at the background intensity is LV
        own = case.image.data != np.float32(cfg.background_mean)
        np.testing.assert_array_equal(own, case.labels.data > 0)
        np.testing.assert_array_equal(threshold_whole_lv(case.image, cfg), case.labels.data > 0)


def test_determinism():
    a = generate_case(CFG, 11)
    b = generate_case(CFG, 11)
    assert a.image.data.tobytes() == b.image.data.tobytes()
    assert a.labels.data.tobytes() == b.labels.data.tobytes()
    d1 = generate_dataset(CFG, 5, 0.6, 2)
    d2 = generate_dataset(CFG, 5, 0.6, 2)
    assert all(x.image == y.image and x.labels == y.labels for x, y in zip(d1, d2))
    assert case_seeds(5, 2) == case_seeds(5, 2)


@pytest.mark.parametrize("kwargs", [
    {"infarct_probability": 1.5},
    {"no_reflow_probability": -0.1},
    {"noise_sigma": -1.0},
    {"cavity_radius": (20.0, 30.0)},
    {"shape": (6, 16, 16)},
    {"myo_thickness": (5.0, 2.0)},
])
def test_invalid_config(kwargs):
    with pytest.raises(PhantomError):
        PhantomConfig(**kwargs)


def test_invalid_fraction():
    with pytest.raises(PhantomError, match="pathological_fraction"):
        generate_dataset(CFG, 4, 1.5, 0)


def test_config_dict_round_trip():
    cfg = replace(CFG, noise_sigma=0.1, seed=4)
    assert PhantomConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_write_dataset(tmp_path):
    cases = generate_dataset(CFG, 3, 0.67, 1)
    seeds = dict(zip([c.case_id for c in cases], case_seeds(3, 1)))
    path = write_dataset(cases, tmp_path, extra={"seed": 1}, seeds=seeds)
    manifest = json.loads(path.read_text())
    assert manifest["seed"] == 1
    assert [e["case_id"] for e in manifest["cases"]] == [c.case_id for c in cases]
    for entry, case in zip(manifest["cases"], cases):
        assert entry["seed"] == seeds[case.case_id]
        assert entry["pathological"] == case.pathological
        assert read_miv(tmp_path / entry["image"]) == case.image
        assert read_miv(tmp_path / entry["label"]) == case.labels
