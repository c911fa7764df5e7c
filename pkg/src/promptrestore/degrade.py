"""Synthetic degradation generators: gaussian noise, rain streaks, haze.

All generators take and return H x W x 3 float images in [0,1], are
deterministic given (input, params, rng seed), and reduce to exact
identities at degenerate parameters (sigma=0, density=0, beta=0).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path
import json

import numpy as np
from scipy.signal import fftconvolve

from .corpus import CATEGORIES, sample_instruction

# noise levels follow the 0-255 convention of the denoising literature
NOISE_SIGMAS_255 = (15.0, 25.0, 50.0)

# parameter ranges sampled by make_batch; rain density is streaks per
# megapixel, so small training patches need dense rain to see any streaks
TRAIN_PARAM_RANGES = {
    "rain": {"density": (1500.0, 4000.0), "angle": (-30.0, 30.0), "length": (7, 15), "intensity": (0.3, 0.8)},
    "haze": {"beta": (0.8, 2.0), "airlight": (0.7, 1.0)},
}


@dataclass(frozen=True)
class RainParams:
    density: float = 2500.0  # streaks per megapixel
    angle: float = 15.0      # degrees from vertical
    length: int = 11         # streak length in pixels
    intensity: float = 0.6   # additive amplitude


@dataclass(frozen=True)
class HazeParams:
    beta: float = 1.2            # scattering coefficient
    airlight: float = 0.9        # scalar or per-channel triple in [0,1]
    depth_grid: int = 4          # coarse grid size of the random depth field


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    noise_sigma: float | None = None
    rain: RainParams | None = None
    haze: HazeParams | None = None

    def __post_init__(self):
        if self.kind not in CATEGORIES:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        active = [self.noise_sigma is not None, self.rain is not None, self.haze is not None]
        if sum(active) != 1 or [("noise", "rain", "haze")[i] for i, a in enumerate(active) if a][0] != self.kind:
            raise ValueError("exactly the parameter block matching `kind` must be set")

    @classmethod
    def noise(cls, sigma: float) -> "DegradationSpec":
        return cls("noise", noise_sigma=sigma)

    @classmethod
    def rain_spec(cls, **kw) -> "DegradationSpec":
        return cls("rain", rain=RainParams(**kw))

    @classmethod
    def haze_spec(cls, **kw) -> "DegradationSpec":
        return cls("haze", haze=HazeParams(**kw))

    def params_dict(self) -> dict:
        if self.kind == "noise":
            return {"sigma": self.noise_sigma}
        if self.kind == "rain":
            return asdict(self.rain)
        return asdict(self.haze)


@dataclass
class ImagePair:
    degraded: np.ndarray
    clean: np.ndarray
    spec: object = None       # DegradationSpec or list of them
    instruction: object = None

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise ValueError("degraded and clean must share dimensions")


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    return img


def add_gaussian_noise(clean: np.ndarray, sigma: float, rng) -> np.ndarray:
    """i.i.d. zero-mean gaussian noise per pixel per channel, clipped to [0,1]."""
    clean = _check_image(clean)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return clean.copy()
    return np.clip(clean + rng.normal(0.0, sigma, clean.shape), 0.0, 1.0)


def _line_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Oriented line kernel, peak-normalized; angle measured from vertical."""
    size = int(length)
    size += 1 - size % 2  # odd
    k = np.zeros((size, size))
    c = (size - 1) / 2.0
    rad = np.deg2rad(angle_deg)
    dy, dx = np.cos(rad), np.sin(rad)
    for t in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, 4 * size):
        y, x = c + t * dy, c + t * dx
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for oy, wy in ((0, 1 - fy), (1, fy)):
            for ox, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = y0 + oy, x0 + ox
                if 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += wy * wx
    return k / k.max()


def rain_streaks(shape, params: RainParams, rng):
    """Sparse bright seeds convolved with an oriented line kernel.

    Returns (non-negative streak layer, number of seeded streaks).
    """
    h, w = shape
    n = int(rng.poisson(params.density * h * w / 1e6))
    if n == 0:
        return np.zeros((h, w)), 0
    seeds = np.zeros((h, w))
    ys = rng.integers(0, h, n)
    xs = rng.integers(0, w, n)
    amps = rng.uniform(0.5, 1.0, n)
    np.add.at(seeds, (ys, xs), amps)
    layer = fftconvolve(seeds, _line_kernel(params.length, params.angle), mode="same")
    return np.maximum(layer, 0.0) * params.intensity, n


def add_rain(clean: np.ndarray, params: RainParams, rng) -> np.ndarray:
    """Additive oriented streak layer; brightens, never darkens."""
    clean = _check_image(clean)
    if params.density < 0 or params.intensity < 0:
        raise ValueError("density and intensity must be >= 0")
    if params.density == 0 or params.intensity == 0 or params.length <= 0:
        return clean.copy()
    layer, _ = rain_streaks(clean.shape[:2], params, rng)
    return np.clip(clean + layer[..., None], 0.0, 1.0)


def smooth_depth_field(h: int, w: int, grid: int, rng) -> np.ndarray:
    """Band-limited random field, bilinearly upsampled, min-max scaled to [0,1]."""
    coarse = rng.standard_normal((grid, grid))
    yi = np.linspace(0, grid - 1, h)
    xi = np.linspace(0, grid - 1, w)
    y0 = np.minimum(np.floor(yi).astype(int), grid - 2)
    x0 = np.minimum(np.floor(xi).astype(int), grid - 2)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    f = (coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
         + coarse[np.ix_(y0 + 1, x0)] * fy * (1 - fx)
         + coarse[np.ix_(y0, x0 + 1)] * (1 - fy) * fx
         + coarse[np.ix_(y0 + 1, x0 + 1)] * fy * fx)
    lo, hi = f.min(), f.max()
    if hi - lo < 1e-12:
        return np.zeros((h, w))
    return (f - lo) / (hi - lo)


def haze_blend(clean: np.ndarray, transmission: np.ndarray, airlight) -> np.ndarray:
    """Atmospheric scattering blend L = H*t + A*(1-t); stays in [0,1]."""
    a = np.asarray(airlight, dtype=np.float64)
    t = transmission[..., None]
    return clean * t + a * (1.0 - t)


def add_haze(clean: np.ndarray, params: HazeParams, rng) -> np.ndarray:
    """Transmission from a smooth random depth field: t = exp(-beta * depth)."""
    clean = _check_image(clean)
    if params.beta < 0:
        raise ValueError(f"beta must be >= 0, got {params.beta}")
    if np.any(np.asarray(params.airlight) < 0) or np.any(np.asarray(params.airlight) > 1):
        raise ValueError("airlight must lie in [0,1]")
    if params.beta == 0:
        return clean.copy()
    depth = smooth_depth_field(clean.shape[0], clean.shape[1], params.depth_grid, rng)
    return haze_blend(clean, np.exp(-params.beta * depth), params.airlight)


def apply_spec(clean: np.ndarray, spec: DegradationSpec, rng) -> np.ndarray:
    if spec.kind == "noise":
        return add_gaussian_noise(clean, spec.noise_sigma, rng)
    if spec.kind == "rain":
        return add_rain(clean, spec.rain, rng)
    return add_haze(clean, spec.haze, rng)


def compose(clean: np.ndarray, specs, rng) -> np.ndarray:
    """Apply specs sequentially in list order (scene-to-sensor ordering is
    the caller's choice; default configs use haze -> rain -> noise)."""
    if not specs:
        raise ValueError("specs must be non-empty")
    out = _check_image(clean)
    for spec in specs:
        out = apply_spec(out, spec, rng)
    return out


def compose_seeded(clean: np.ndarray, specs, seeds) -> np.ndarray:
    """Like compose, but each spec gets its own seeded stream so any subset
    of specs reproduces the exact same per-spec degradations."""
    if len(seeds) != len(specs):
        raise ValueError("one seed per spec required")
    out = _check_image(clean)
    for spec, seed in zip(specs, seeds):
        out = apply_spec(out, spec, np.random.default_rng(seed))
    return out


def sample_spec(kind: str, rng) -> DegradationSpec:
    """Draw task parameters from the training ranges."""
    if kind == "noise":
        sigma = float(rng.choice(NOISE_SIGMAS_255)) / 255.0
        return DegradationSpec.noise(sigma)
    if kind == "rain":
        r = TRAIN_PARAM_RANGES["rain"]
        return DegradationSpec.rain_spec(
            density=float(rng.uniform(*r["density"])),
            angle=float(rng.uniform(*r["angle"])),
            length=int(rng.integers(r["length"][0], r["length"][1] + 1)),
            intensity=float(rng.uniform(*r["intensity"])),
        )
    h = TRAIN_PARAM_RANGES["haze"]
    return DegradationSpec.haze_spec(
        beta=float(rng.uniform(*h["beta"])),
        airlight=float(rng.uniform(*h["airlight"])),
    )


def make_batch(cleans, task_mix, corpus, patch: int, rng, batch_size: int = 1):
    """Sample training pairs: task by mix weights, params from ranges,
    random crop, identical horizontal/vertical flips, matching instruction."""
    weights = np.asarray(task_mix, dtype=np.float64)
    if weights.shape != (3,) or abs(weights.sum() - 1.0) > 1e-6 or np.any(weights < 0):
        raise ValueError("task_mix must be 3 non-negative weights summing to 1")
    if patch > min(min(im.shape[0], im.shape[1]) for im in cleans):
        raise ValueError("patch larger than the smallest image")
    pairs = []
    for _ in range(batch_size):
        kind = CATEGORIES[int(rng.choice(3, p=weights))]
        img = cleans[int(rng.integers(len(cleans)))]
        y = int(rng.integers(img.shape[0] - patch + 1))
        x = int(rng.integers(img.shape[1] - patch + 1))
        clean = np.array(img[y:y + patch, x:x + patch], dtype=np.float64)
        spec = sample_spec(kind, rng)
        degraded = apply_spec(clean, spec, rng)
        if rng.random() < 0.5:
            clean, degraded = clean[:, ::-1], degraded[:, ::-1]
        if rng.random() < 0.5:
            clean, degraded = clean[::-1], degraded[::-1]
        instruction = sample_instruction(corpus, kind, "train", rng)
        pairs.append(ImagePair(np.ascontiguousarray(degraded), np.ascontiguousarray(clean), spec, instruction))
    return pairs


def synthetic_clean_images(n: int, size: int, rng):
    """Deterministic stand-in for natural images: smooth color fields with a
    few soft geometric shapes for edges and texture."""
    images = []
    for _ in range(n):
        img = np.zeros((size, size, 3))
        for c in range(3):
            img[..., c] = 0.35 * smooth_depth_field(size, size, 3, rng) \
                        + 0.35 * smooth_depth_field(size, size, 7, rng)
        img += 0.15
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(int(rng.integers(3, 7))):
            color = rng.uniform(0.1, 0.9, 3)
            if rng.random() < 0.5:
                cy, cx = rng.uniform(0, size, 2)
                r = rng.uniform(size * 0.08, size * 0.3)
                mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
            else:
                y0, x0 = rng.integers(0, size, 2)
                hh, ww = rng.integers(size // 8, size // 2, 2)
                mask = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
            alpha = rng.uniform(0.4, 0.9)
            img[mask] = (1 - alpha) * img[mask] + alpha * color
        images.append(np.clip(img, 0.0, 1.0))
    return images


# -- directory-of-pairs adapter and batch manifests ------------------------

def load_pair_directory(root) -> list[ImagePair]:
    """Read `{root}/clean/NAME.png` + `{root}/degraded/NAME.png` pairs."""
    from .imgio import imread

    root = Path(root)
    pairs = []
    for clean_path in sorted((root / "clean").iterdir()):
        degraded_path = root / "degraded" / clean_path.name
        if not degraded_path.exists():
            raise FileNotFoundError(f"missing degraded pair for {clean_path.name}")
        pairs.append(ImagePair(imread(degraded_path), imread(clean_path)))
    return pairs


def write_manifest(path, pairs, clean_paths) -> None:
    """JSON-lines batch manifest: {clean_path, kind, params, instruction}."""
    with open(path, "w", encoding="utf-8") as f:
        for pair, clean_path in zip(pairs, clean_paths):
            f.write(json.dumps({
                "clean_path": str(clean_path),
                "kind": pair.spec.kind if pair.spec is not None else None,
                "params": pair.spec.params_dict() if pair.spec is not None else None,
                "instruction": pair.instruction.text if pair.instruction is not None else None,
            }) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
