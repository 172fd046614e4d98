import numpy as np
import pytest
from scipy.ndimage import distance_transform_edt

from spiraldeblur.data import (AugmentParams, PhantomParams, augment_fieldmap, build_dataset,
                               cavity_mask, denormalize_frame, make_phantom_sequence,
                               make_protocol, normalize_frame, split_counts, training_pairs)
from spiraldeblur.metrics import psnr
from spiraldeblur.trajectory import LONG_READOUT, SHORT_READOUT


@pytest.fixture(scope="module")
def tiny_dataset():
    protos = [make_protocol("short", 84, SHORT_READOUT), make_protocol("long", 84, LONG_READOUT)]
    return build_dataset(3, PhantomParams(n_frames=3), protocols=protos, seed=7)


def test_param_validation():
    for bad in (dict(matrix=16), dict(n_frames=0), dict(tissue_range=(1.0, 0.5))):
        with pytest.raises(ValueError):
            PhantomParams(**bad)
    with pytest.raises(ValueError):
        AugmentParams(alpha_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        AugmentParams(beta_range=(0.0, np.inf))


def test_phantom_deterministic():
    a = make_phantom_sequence(PhantomParams(seed=3, n_frames=3))
    b = make_phantom_sequence(PhantomParams(seed=3, n_frames=3))
    c = make_phantom_sequence(PhantomParams(seed=4, n_frames=3))
    for (ia, fa), (ib, fb) in zip(a, b):
        assert ia.tobytes() == ib.tobytes() and fa.tobytes() == fb.tobytes()
    assert not np.array_equal(a[0][0], c[0][0])


@pytest.mark.parametrize("seed", range(4))
def test_phantom_structure(seed):
    p = PhantomParams(seed=seed, n_frames=2)
    img, fmap = make_phantom_sequence(p)[0]
    mag, phase = np.abs(img), np.angle(img)
    assert img.shape == fmap.shape == (84, 84)
    assert mag.max() <= 1.0 + 1e-12
    assert np.abs(phase[mag > 0.05]).max() <= np.pi / 2
    cav = cavity_mask(p, 0)
    assert cav.sum() > 20 and mag[cav].mean() < 0.1
    assert np.abs(fmap).max() == pytest.approx(p.peak_f)
    assert np.percentile(mag[mag > 0.2], 50) > 0.4 - 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_fieldmap_concentrates_at_boundary(seed):
    p = PhantomParams(seed=seed, n_frames=1)
    fmap = make_phantom_sequence(p)[0][1]
    cav = cavity_mask(p, 0)
    dist = distance_transform_edt(cav) + distance_transform_edt(~cav)
    peak = np.unravel_index(np.argmax(np.abs(fmap)), fmap.shape)
    assert dist[peak] <= 3
    assert np.abs(fmap[dist > 15]).max() < 0.1 * p.peak_f


@pytest.mark.parametrize("seed", range(4))
def test_adjacent_frames_move_smoothly(seed):
    seq = make_phantom_sequence(PhantomParams(seed=seed, n_frames=12))
    for (a, _), (b, _) in zip(seq, seq[1:]):
        d = np.linalg.norm(b - a) / np.linalg.norm(a)
        assert 0 < d < 0.2


def test_noise_flag():
    clean = make_phantom_sequence(PhantomParams(seed=1, n_frames=1))[0][0]
    noisy = make_phantom_sequence(PhantomParams(seed=1, n_frames=1, noise_std=0.01))[0][0]
    assert 0.005 < np.std(noisy - clean) < 0.02


def test_augment_examples(rng):
    f = rng.standard_normal((8, 8)) * 50
    np.testing.assert_array_equal(augment_fieldmap(f, 1, 0), f)
    assert np.all(augment_fieldmap(f, 0, 40) == 40)
    g = np.zeros((4, 4))
    g[1, 1] = 120
    assert augment_fieldmap(g, 1.5, -50).max() == 130
    with pytest.raises(ValueError):
        augment_fieldmap(f, np.nan, 0)


def test_normalize_examples(rng):
    x = 2 * np.exp(1j * rng.uniform(0, 6, (10, 10)))
    y, s = normalize_frame(x)
    assert s == pytest.approx(2) and np.allclose(np.abs(y), 1)
    img = make_phantom_sequence(PhantomParams(seed=2, n_frames=1))[0][0]
    y, s = normalize_frame(img)
    assert abs(np.percentile(np.abs(y), 98) - 1) < 1e-9
    assert np.max(np.abs(denormalize_frame(y, s) - img)) < 1e-12
    with pytest.raises(ValueError):
        normalize_frame(np.zeros((4, 4)))


def test_split_counts():
    assert split_counts(33) == (23, 5, 5)
    assert split_counts(7) == (5, 1, 1)
    assert split_counts(3) == (1, 1, 1)
    for n in range(3, 60):
        tr, va, te = split_counts(n)
        assert tr + va + te == n and min(tr, va, te) >= 1
        assert abs(va - n * 5 / 33) <= 1 and abs(te - n * 5 / 33) <= 1
    with pytest.raises(ValueError):
        split_counts(2)
    with pytest.raises(ValueError):
        build_dataset(2)


def test_dataset_records(tiny_dataset):
    ds = tiny_dataset
    assert len(ds.records) == 9
    assert sorted(sum(ds.splits.values(), [])) == [0, 1, 2]
    for name in ("train", "val", "test"):
        assert len(ds.split(name)) == 3
    a_lo, a_hi = AugmentParams().alpha_range
    b_lo, b_hi = AugmentParams().beta_range
    for r in ds.records:
        assert a_lo <= r.alpha <= a_hi and b_lo <= r.beta <= b_hi
        np.testing.assert_allclose(r.augmented, r.alpha * r.fieldmap + r.beta)
        assert set(r.blurred) == set(r.kspace) == set(r.scale) == {"short", "long"}
        for name in ("short", "long"):
            assert r.blurred[name].shape == r.truth.shape
            assert r.scale[name] == pytest.approx(np.percentile(np.abs(r.blurred[name]), 98))
    assert len({(r.alpha, r.beta) for r in ds.records}) == 9


def test_dataset_deterministic(tiny_dataset):
    again = build_dataset(3, PhantomParams(n_frames=3), protocols=tiny_dataset.protocols, seed=7,
                          threads=2)
    for a, b in zip(tiny_dataset.records, again.records):
        assert a.truth.tobytes() == b.truth.tobytes()
        assert a.kspace["long"].tobytes() == b.kspace["long"].tobytes()
        assert a.blurred["short"].tobytes() == b.blurred["short"].tobytes()


def test_per_subject_augmentation():
    protos = [make_protocol("short", 84, SHORT_READOUT)]
    ds = build_dataset(3, PhantomParams(n_frames=2), AugmentParams(per_frame=False), protos, seed=1)
    for s in range(3):
        draws = {(r.alpha, r.beta) for r in ds.records if r.subject == s}
        assert len(draws) == 1


def test_blur_severity_ordering(tiny_dataset):
    recs = tiny_dataset.records
    long_ = np.mean([psnr(r.blurred["long"], r.truth) for r in recs])
    short = np.mean([psnr(r.blurred["short"], r.truth) for r in recs])
    assert long_ < short


def test_training_pairs(tiny_dataset):
    recs = tiny_dataset.split("train")
    x, y = training_pairs(recs)
    assert x.shape == y.shape == (6, 2, 84, 84)
    x1, _ = training_pairs(recs, ["long"])
    assert x1.shape[0] == 3
    r = recs[0]
    np.testing.assert_allclose(x1[0, 0] + 1j * x1[0, 1], r.blurred["long"] / r.scale["long"])
    assert training_pairs([])[0].shape[0] == 0
