import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvfcn import data as D
from cvfcn.ctensor import FormatError, ShapeError

from conftest import crandn


def random_hermitian(rng):
    A = crandn(rng, (3, 3))
    return A @ A.conj().T


def test_coherency_single_vector():
    np.testing.assert_array_equal(D.coherency_from_scatter([[1, 0, 0]]), np.diag([1, 0, 0]))
    with pytest.raises(ValueError):
        D.coherency_from_scatter(np.zeros((0, 3)))


def test_coherency_hermitian_and_converges(rng):
    C = random_hermitian(rng)
    F = D.covariance_factor(C)
    u = crandn(rng, (10_000, 3)) / np.sqrt(2) @ F.T
    T = D.coherency_from_scatter(u)
    np.testing.assert_allclose(T, T.conj().T)
    assert np.all(np.diag(T).real >= 0)
    assert np.abs(T - C).max() < 0.05 * np.abs(C).max()


def test_input_and_real_vectors(rng):
    v = D.input_vector(np.eye(3))
    np.testing.assert_array_equal(v, [1, 1, 1, 0, 0, 0])
    np.testing.assert_array_equal(D.real_vector(np.eye(3)), [1, 1, 1, 0, 0, 0, 0, 0, 0])
    T = random_hermitian(rng)
    v = D.input_vector(T)
    assert np.all(v[:3].imag == 0)
    np.testing.assert_array_equal(v[3:], [T[0, 1], T[0, 2], T[1, 2]])
    r = D.real_vector(T)
    assert r[3] ** 2 + r[6] ** 2 == pytest.approx(abs(T[0, 1]) ** 2)
    np.testing.assert_array_equal(D.complex_to_real_cube(v[None].astype(np.complex128))[0], r)
    # only the upper triangle is read
    T2 = T.copy()
    T2[1, 0] = 99
    np.testing.assert_array_equal(D.input_vector(T2), v)


def test_covariance_factor_rejects_bad():
    with pytest.raises(D.CovarianceError):
        D.covariance_factor(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(D.CovarianceError):
        D.covariance_factor(np.array([[1, 1j, 0], [1j, 1, 0], [0, 0, 1]]))
    F = D.covariance_factor(np.diag([1.0, 0.0, 2.0]))
    np.testing.assert_allclose(F @ F.conj().T, np.diag([1.0, 0.0, 2.0]), atol=1e-12)


def test_synth_scene_deterministic_and_shaped():
    spec = D.demo_scene_spec(64, seed=4)
    a, b = D.synth_scene(spec), D.synth_scene(spec)
    assert a.cube.shape == (64, 64, 6) and a.K == 3
    assert a.cube.tobytes() == b.cube.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert set(np.unique(a.labels)) == {1, 2, 3}
    assert np.all(a.cube[..., :3].imag == 0) and np.all(a.cube[..., :3].real >= 0)


def test_synth_class_means_converge():
    covs = [np.diag([1.0, 0.5, 0.2]), np.array([[1, 0.3j, 0], [-0.3j, 1, 0], [0, 0, 1]])]
    spec = D.SceneSpec(covs, [D.Region(1, 0, 0, 32, 64), D.Region(2, 32, 0, 32, 64)], looks=64)
    ds = D.synth_scene(spec)
    for k, C in enumerate(covs, 1):
        mean = ds.cube[ds.labels == k].mean(0)
        np.testing.assert_allclose(mean, D.input_vector(C), atol=0.02)


def test_two_class_threshold_separability():
    spec = D.SceneSpec([np.diag([1, .1, .1]), np.diag([.1, 1, .1])],
                       [D.Region(1, 0, 0, 100, 100), D.Region(2, 100, 0, 100, 100)], looks=9)
    ds = D.synth_scene(spec)
    pred = np.where(ds.cube[..., 0].real > ds.cube[..., 1].real, 1, 2)
    assert np.mean(pred != ds.labels) < 0.01


def test_scene_spec_json_roundtrip(tmp_path):
    spec = D.demo_scene_spec(96, seed=2)
    spec.background_cov = np.eye(3) * 0.3
    p = tmp_path / "s.json"
    p.write_text(json.dumps(spec.to_json()))
    back = D.load_scene_spec(p)
    assert back.to_json() == spec.to_json()
    with pytest.raises(ValueError):
        D.SceneSpec.from_json({"classes": [{"cov": [[1, 0]]}], "layout": []})
    with pytest.raises(ValueError):
        D.SceneSpec([np.eye(3)], [D.Region(2, 0, 0, 4, 4)])


def test_background_pixels_unlabeled():
    spec = D.SceneSpec([np.eye(3)], [D.Region(1, 2, 2, 4, 4)], height=10, width=10)
    ds = D.synth_scene(spec)
    assert (ds.labels == 0).sum() == 100 - 16


def test_patch_offsets():
    assert len(D.patch_offsets(1020, 128, 40)) == 24
    assert len(D.patch_offsets(1024, 128, 40)) == 24
    assert D.patch_offsets(128, 128, 40) == [0]
    with pytest.raises(ShapeError):
        D.patch_offsets(100, 128, 40)


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 60), st.integers(8, 60), st.integers(1, 8), st.integers(1, 12))
def test_patches_cover_every_pixel(h, w, win, stride):
    # coverage needs stride <= window
    win = min(win, h, w)
    stride = min(stride, win)
    lab = np.arange(h * w).reshape(h, w)
    p = D.extract_patches(np.zeros((h, w, 6), np.complex64), lab, win, stride)
    seen = np.zeros((h, w), bool)
    for (r, c) in p.offsets:
        assert r + win <= h and c + win <= w
        seen[r:r + win, c:c + win] = True
    assert seen.all()
    np.testing.assert_array_equal(p.labels[-1], lab[h - win:, w - win:])


def test_augment_flips(rng):
    cube = crandn(rng, (12, 12, 6), np.complex64)
    lab = rng.integers(0, 4, size=(12, 12))
    p = D.extract_patches(cube, lab, 8, 4)
    a = D.augment_flips(p)
    n = len(p)
    assert len(a) == 3 * n
    np.testing.assert_array_equal(np.bincount(a.labels.ravel()), 3 * np.bincount(p.labels.ravel()))
    # sentinel: data and labels flip together
    assert a.data[n, 0, 0, 0] == p.data[0, 0, -1, 0] and a.labels[n, 0, 0] == p.labels[0, 0, -1]
    assert a.data[2 * n, 0, 0, 0] == p.data[0, -1, 0, 0]
    assert a.labels[2 * n, 0, 0] == p.labels[0, -1, 0]


def test_split_train_val():
    p = D.PatchSet(np.zeros((7, 1, 1, 6)), np.arange(7).reshape(7, 1, 1), np.zeros((7, 2)))
    tr, va = D.split_train_val(p, 0.9, seed=1)
    assert len(tr) == 7 and len(va) == 0
    p = D.PatchSet(np.zeros((25, 1, 1, 6)), np.arange(25).reshape(25, 1, 1), np.zeros((25, 2)))
    tr, va = D.split_train_val(p, 0.9, seed=1)
    assert (len(tr), len(va)) == (23, 2)
    assert not set(tr.labels.ravel()) & set(va.labels.ravel())
    tr2, _ = D.split_train_val(p, 0.9, seed=1)
    np.testing.assert_array_equal(tr.labels, tr2.labels)


def test_sample_labels(rng):
    lab = rng.integers(0, 4, size=(50, 50))
    np.testing.assert_array_equal(D.sample_labels(lab, 1.0), lab)
    s = D.sample_labels(lab, 0.05, seed=3)
    for k in (1, 2, 3):
        assert (s == k).sum() == np.ceil(0.05 * (lab == k).sum())
    assert np.all((s == 0) | (s == lab))
    with pytest.raises(ValueError):
        D.sample_labels(lab, 0.0)


def test_pgm_roundtrip_and_errors(tmp_path, rng):
    g = rng.integers(0, 6, size=(7, 9))
    p = tmp_path / "l.pgm"
    D.write_pgm(p, g, maxval=5)
    back, maxval = D.read_pgm(p)
    np.testing.assert_array_equal(back, g)
    assert maxval == 5
    assert p.read_bytes().startswith(b"P5\n9 7\n5\n")
    with pytest.raises(FormatError):
        D.write_pgm(p, g, maxval=3)
    with pytest.raises(FormatError):
        D.write_pgm(p, np.full((2, 2), 300))
    p.write_bytes(b"P5\n9 7\n5\n" + b"\0" * 10)
    with pytest.raises(FormatError):
        D.read_pgm(p)
    p.write_bytes(b"P2\n1 1\n5\n1")
    with pytest.raises(FormatError):
        D.read_pgm(p)


def test_ppm_and_palette(tmp_path):
    pal = D.palette(3)
    assert pal.shape == (4, 3) and np.all(pal[0] == 0)
    assert len({tuple(c) for c in pal}) == 4
    np.testing.assert_array_equal(D.palette(3), pal)
    big = D.palette(40)
    np.testing.assert_array_equal(big[:4], pal)
    rgb = D.colorize(np.array([[1, 2], [3, 0]]), 3)
    np.testing.assert_array_equal(rgb[0, 1], pal[2])
    D.write_ppm(tmp_path / "c.ppm", rgb)
    np.testing.assert_array_equal(D.read_ppm(tmp_path / "c.ppm"), rgb)


def test_dataset_roundtrip(tmp_path):
    ds = D.synth_scene(D.demo_scene_spec(48, seed=1))
    D.save_dataset(ds, tmp_path / "c.cvt", tmp_path / "l.pgm")
    back = D.load_dataset(tmp_path / "c.cvt", tmp_path / "l.pgm")
    assert back.cube.tobytes() == ds.cube.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.K == 3
    D.write_pgm(tmp_path / "bad.pgm", ds.labels[:-1], maxval=3)
    with pytest.raises(FormatError):
        D.load_dataset(tmp_path / "c.cvt", tmp_path / "bad.pgm")
