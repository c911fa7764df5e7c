import math

import numpy as np
import pytest

from promptrestore import degrade as D
from promptrestore.corpus import generate_corpus
from promptrestore.metrics import psnr


@pytest.fixture(scope="module")
def clean():
    return D.synthetic_clean_images(1, 96, np.random.default_rng(5))[0]


# -- gaussian noise ----------------------------------------------------------

def test_noise_sigma_zero_is_identity(clean):
    out = D.add_gaussian_noise(clean, 0.0, np.random.default_rng(0))
    assert np.array_equal(out, clean)


def test_noise_negative_sigma_rejected(clean):
    with pytest.raises(ValueError):
        D.add_gaussian_noise(clean, -0.1, np.random.default_rng(0))


@pytest.mark.parametrize("sigma255, expected", [(25.0, 20.172), (15.0, 24.609)])
def test_noise_psnr_closed_form(sigma255, expected):
    # on mid-gray, clipping is negligible and PSNR = 20*log10(255/sigma)
    gray = np.full((256, 256, 3), 0.5)
    noisy = D.add_gaussian_noise(gray, sigma255 / 255.0, np.random.default_rng(1))
    assert abs(psnr(noisy, gray) - expected) < 0.1


def test_noise_deterministic_given_seed(clean):
    a = D.add_gaussian_noise(clean, 0.1, np.random.default_rng(3))
    b = D.add_gaussian_noise(clean, 0.1, np.random.default_rng(3))
    assert np.array_equal(a, b)


# -- rain ---------------------------------------------------------------------

def test_rain_degenerate_params_are_identity(clean):
    rng = np.random.default_rng(0)
    assert np.array_equal(D.add_rain(clean, D.RainParams(density=0), rng), clean)
    assert np.array_equal(D.add_rain(clean, D.RainParams(intensity=0), rng), clean)


def test_rain_only_brightens(clean):
    out = D.add_rain(clean, D.RainParams(), np.random.default_rng(2))
    assert np.all(out >= clean - 1e-12)
    assert out.max() <= 1.0 and out.min() >= 0.0


def test_rain_streak_count_matches_density():
    # 512x512 = 0.262144 Mpx, so expected seeds = 0.262144 * density
    density = 2000.0
    rng = np.random.default_rng(7)
    counts = [D.rain_streaks((512, 512), D.RainParams(density=density), rng)[1]
              for _ in range(50)]
    assert abs(np.mean(counts) / density - 0.262144) < 0.15 * 0.262144


def test_rain_changes_image(clean):
    out = D.add_rain(clean, D.RainParams(), np.random.default_rng(2))
    assert not np.array_equal(out, clean)


# -- haze ----------------------------------------------------------------------

def test_haze_beta_zero_is_identity(clean):
    out = D.add_haze(clean, D.HazeParams(beta=0.0), np.random.default_rng(0))
    assert np.array_equal(out, clean)


def test_haze_blend_endpoints(clean):
    airlight = 0.9
    out = D.haze_blend(clean, np.zeros(clean.shape[:2]), airlight)
    assert np.allclose(out, airlight)
    mid = D.haze_blend(np.full((8, 8, 3), 0.5), np.full((8, 8), 0.5), 0.9)
    assert np.allclose(mid, 0.7)


def test_haze_stays_in_range_without_clipping(clean):
    out = D.add_haze(clean, D.HazeParams(beta=2.5, airlight=1.0), np.random.default_rng(4))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_haze_invalid_airlight_rejected(clean):
    with pytest.raises(ValueError):
        D.add_haze(clean, D.HazeParams(airlight=1.5), np.random.default_rng(0))


def test_depth_field_range_and_smoothness():
    f = D.smooth_depth_field(64, 64, 4, np.random.default_rng(0))
    assert f.min() == 0.0 and f.max() == 1.0
    assert np.abs(np.diff(f, axis=0)).max() < 0.2  # band-limited


# -- composition ----------------------------------------------------------------

def test_compose_single_matches_direct(clean):
    spec = D.DegradationSpec.noise(0.1)
    a = D.compose(clean, [spec], np.random.default_rng(9))
    b = D.add_gaussian_noise(clean, 0.1, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_compose_order_matters(clean):
    specs_hn = [D.DegradationSpec.haze_spec(), D.DegradationSpec.noise(0.1)]
    specs_nh = [D.DegradationSpec.noise(0.1), D.DegradationSpec.haze_spec()]
    a = D.compose(clean, specs_hn, np.random.default_rng(1))
    b = D.compose(clean, specs_nh, np.random.default_rng(1))
    assert not np.array_equal(a, b)


def test_compose_identity_specs(clean):
    specs = [D.DegradationSpec.haze_spec(beta=0.0),
             D.DegradationSpec.rain_spec(density=0.0),
             D.DegradationSpec.noise(0.0)]
    out = D.compose(clean, specs, np.random.default_rng(0))
    assert np.array_equal(out, clean)


def test_compose_empty_rejected(clean):
    with pytest.raises(ValueError):
        D.compose(clean, [], np.random.default_rng(0))


def test_compose_seeded_subset_reproduces_remaining(clean):
    specs = [D.DegradationSpec.rain_spec(), D.DegradationSpec.noise(0.1)]
    seeds = [11, 22]
    target = D.compose_seeded(clean, [specs[0]], [seeds[0]])
    direct = D.add_rain(clean, specs[0].rain, np.random.default_rng(seeds[0]))
    assert np.array_equal(target, direct)


def test_spec_tagged_union_validation():
    with pytest.raises(ValueError):
        D.DegradationSpec("noise", rain=D.RainParams())
    with pytest.raises(ValueError):
        D.DegradationSpec("wind", noise_sigma=0.1)


# -- batches ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_setting():
    corpus = generate_corpus(3, 10)
    cleans = D.synthetic_clean_images(3, 48, np.random.default_rng(1))
    return corpus, cleans


def test_make_batch_single_task_mix(small_setting):
    corpus, cleans = small_setting
    pairs = D.make_batch(cleans, (1, 0, 0), corpus, 32, np.random.default_rng(0), 8)
    assert all(p.spec.kind == "noise" for p in pairs)
    assert all(p.instruction.category == "noise" for p in pairs)
    assert all(p.degraded.shape == (32, 32, 3) for p in pairs)


def test_make_batch_flips_applied_identically(small_setting):
    # rain is additive, so degraded >= clean survives only if both members
    # received the same flips
    corpus, cleans = small_setting
    pairs = D.make_batch(cleans, (0, 1, 0), corpus, 32, np.random.default_rng(1), 24)
    for p in pairs:
        assert np.all(p.degraded >= p.clean - 1e-12)


def test_make_batch_sigma_levels_uniform(small_setting):
    corpus, cleans = small_setting
    pairs = D.make_batch(cleans, (1, 0, 0), corpus, 16, np.random.default_rng(2), 3000)
    counts = {}
    for p in pairs:
        s = round(p.spec.noise_sigma * 255)
        counts[s] = counts.get(s, 0) + 1
    assert set(counts) == {15, 25, 50}
    for n in counts.values():
        assert abs(n - 1000) <= 100


def test_make_batch_patch_too_large(small_setting):
    corpus, cleans = small_setting
    with pytest.raises(ValueError):
        D.make_batch(cleans, (1, 0, 0), corpus, 128, np.random.default_rng(0), 1)


def test_make_batch_bad_mix(small_setting):
    corpus, cleans = small_setting
    with pytest.raises(ValueError):
        D.make_batch(cleans, (0.5, 0.2, 0.2), corpus, 16, np.random.default_rng(0), 1)


def test_synthetic_cleans_deterministic_and_in_range():
    a = D.synthetic_clean_images(2, 32, np.random.default_rng(8))
    b = D.synthetic_clean_images(2, 32, np.random.default_rng(8))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
        assert x.min() >= 0.0 and x.max() <= 1.0


# -- adapters ----------------------------------------------------------------------

def test_pair_directory_roundtrip(tmp_path, clean):
    from promptrestore.imgio import imwrite

    (tmp_path / "clean").mkdir()
    (tmp_path / "degraded").mkdir()
    noisy = D.add_gaussian_noise(clean, 0.1, np.random.default_rng(0))
    imwrite(tmp_path / "clean" / "a.png", clean)
    imwrite(tmp_path / "degraded" / "a.png", noisy)
    pairs = D.load_pair_directory(tmp_path)
    assert len(pairs) == 1
    assert np.abs(pairs[0].clean - clean).max() <= 1 / 255
    assert np.abs(pairs[0].degraded - noisy).max() <= 1 / 255


def test_manifest_roundtrip(tmp_path, small_setting):
    corpus, cleans = small_setting
    pairs = D.make_batch(cleans, (0, 0, 1), corpus, 32, np.random.default_rng(3), 2)
    path = tmp_path / "batch.jsonl"
    D.write_manifest(path, pairs, ["img0.png", "img1.png"])
    rows = D.read_manifest(path)
    assert len(rows) == 2
    assert rows[0]["kind"] == "haze"
    assert "beta" in rows[0]["params"]
    assert rows[0]["instruction"]
