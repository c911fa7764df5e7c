import math

import numpy as np
import pytest

from promptrestore import metrics as M


# -- psnr ---------------------------------------------------------------------

def test_psnr_identical_is_infinite():
    img = np.random.default_rng(0).random((32, 32, 3))
    assert math.isinf(M.psnr(img, img))


def test_psnr_constant_offset_closed_form():
    a = np.full((16, 16, 3), 0.5)
    assert abs(M.psnr(a, a + 25 / 255) - 20.172) < 1e-3
    assert abs(M.psnr(a, a - 1.0) - 0.0) < 1e-12


def test_psnr_symmetric_and_monotone():
    rng = np.random.default_rng(1)
    a = rng.random((20, 20, 3))
    b = rng.random((20, 20, 3))
    assert M.psnr(a, b) == M.psnr(b, a)
    base = np.full((16, 16, 3), 0.4)
    values = [M.psnr(base, base + d) for d in (0.05, 0.1, 0.2)]
    assert values[0] > values[1] > values[2]


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        M.psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


# -- ssim ---------------------------------------------------------------------

def test_ssim_identical_is_one():
    img = np.random.default_rng(2).random((32, 32, 3))
    assert M.ssim(img, img) == 1.0


def test_ssim_anticorrelated_checkerboard_negative():
    yy, xx = np.mgrid[0:32, 0:32]
    board = ((yy // 4 + xx // 4) % 2).astype(float)[..., None].repeat(3, axis=2)
    assert M.ssim(board, 1.0 - board) < 0.0


def test_ssim_noise_monotonicity():
    from promptrestore.degrade import add_gaussian_noise, synthetic_clean_images

    clean = synthetic_clean_images(1, 64, np.random.default_rng(3))[0]
    s15 = M.ssim(add_gaussian_noise(clean, 15 / 255, np.random.default_rng(0)), clean)
    s50 = M.ssim(add_gaussian_noise(clean, 50 / 255, np.random.default_rng(0)), clean)
    assert s50 < s15


def test_ssim_matches_reference_implementation():
    from skimage.metrics import structural_similarity

    rng = np.random.default_rng(4)
    a = rng.random((40, 33, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ours = M.ssim(a, b)
    ref = structural_similarity(a, b, channel_axis=2, gaussian_weights=True,
                                sigma=1.5, use_sample_covariance=False, data_range=1.0)
    assert abs(ours - ref) < 1e-7


def test_ssim_small_image_rejected():
    with pytest.raises(ValueError):
        M.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_ssim_symmetric():
    rng = np.random.default_rng(5)
    a = rng.random((24, 24, 3))
    b = rng.random((24, 24, 3))
    assert abs(M.ssim(a, b) - M.ssim(b, a)) < 1e-12


# -- silhouette -----------------------------------------------------------------

def _blobs(rng, centers, n=20, scale=0.05):
    xs, labels = [], []
    for i, c in enumerate(centers):
        xs.append(np.asarray(c) + rng.normal(0, scale, (n, len(c))))
        labels += [i] * n
    return np.concatenate(xs), np.array(labels)


def test_cluster_score_separated_blobs():
    x, labels = _blobs(np.random.default_rng(6), [(0, 0), (10, 0), (0, 10)])
    assert M.cluster_score(x, labels) > 0.9


def test_cluster_score_matches_sklearn():
    from sklearn.metrics import silhouette_score

    x, labels = _blobs(np.random.default_rng(7), [(0, 0), (1.5, 0.5)], scale=0.6)
    assert abs(M.cluster_score(x, labels) - silhouette_score(x, labels)) < 1e-9


def test_cluster_score_rejects_singletons():
    with pytest.raises(ValueError):
        M.cluster_score(np.array([[0.0, 0], [1, 1]]), np.array([0, 1]))


def test_cluster_score_invariances():
    x, labels = _blobs(np.random.default_rng(8), [(0, 0), (5, 5)])
    base = M.cluster_score(x, labels)
    perm = {0: 1, 1: 0}
    assert abs(M.cluster_score(x, np.array([perm[l] for l in labels])) - base) < 1e-12
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert abs(M.cluster_score(x @ rot.T + 3.0, labels) - base) < 1e-9
    assert -1.0 <= base <= 1.0


# -- 2-D projection ----------------------------------------------------------------

def test_project_2d_preserves_count_and_axis_order():
    rng = np.random.default_rng(9)
    x = rng.normal(0, 1, (50, 16)) * np.linspace(3, 0.1, 16)
    p = M.project_2d(x)
    assert p.shape == (50, 2)
    assert p[:, 0].var() >= p[:, 1].var()


def test_project_2d_of_2d_input_is_rigid():
    rng = np.random.default_rng(10)
    x = rng.normal(0, 1, (30, 2))
    p = M.project_2d(x)
    dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
    dp = np.linalg.norm(p[:, None] - p[None], axis=-1)
    assert np.allclose(dx, dp)


def test_project_2d_deterministic():
    x = np.random.default_rng(11).normal(0, 1, (20, 8))
    assert np.array_equal(M.project_2d(x), M.project_2d(x))


def test_pca_basis_projects_like_project_2d():
    x = np.random.default_rng(12).normal(0, 1, (20, 8))
    mean, comps = M.pca_basis(x)
    assert np.allclose((x - mean) @ comps.T, M.project_2d(x))


# -- evaluate ---------------------------------------------------------------------

class _ZeroEncoder:
    def guidance_for_category(self, task, rng):
        rng.integers(10)  # consume like the real sampler
        return np.zeros(8, dtype=np.float32)


def _identity_model():
    import torch

    from promptrestore.backbone import BackboneConfig, RestorationBackbone

    cfg = BackboneConfig(base_channels=4, blocks_per_level=(1, 1), heads_per_level=(1, 1),
                         levels=2, d_text=8)
    model = RestorationBackbone(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "temperature" not in name:  # beta must stay positive
                p.zero_()
    return model


def test_evaluate_identical_pair_and_averaging():
    from promptrestore.degrade import ImagePair, add_gaussian_noise, synthetic_clean_images

    model = _identity_model()
    enc = _ZeroEncoder()
    clean = synthetic_clean_images(1, 24, np.random.default_rng(0))[0]
    rec = M.evaluate(model, enc, [ImagePair(clean.copy(), clean.copy())], "noise",
                     np.random.default_rng(0))
    assert math.isinf(rec.psnr) and rec.ssim == 1.0 and rec.n_images == 1

    pairs = [ImagePair(add_gaussian_noise(clean, s, np.random.default_rng(i)), clean)
             for i, s in enumerate((0.05, 0.1, 0.2))]
    rec = M.evaluate(model, enc, pairs, "noise", np.random.default_rng(0))
    # the zero model is the identity, so record equals a hand loop over inputs
    expect_psnr = np.mean([M.psnr(p.degraded, p.clean) for p in pairs])
    expect_ssim = np.mean([M.ssim(p.degraded, p.clean) for p in pairs])
    assert rec.n_images == 3
    assert abs(rec.psnr - expect_psnr) < 1e-9
    assert abs(rec.ssim - expect_ssim) < 1e-9
