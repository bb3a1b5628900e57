"""Procedural attributed-shapes dataset for desk-scale experiments.

Each domain is defined by three factors: a shape kind (circle, square,
triangle, ring, cross), a hue, and a stripe frequency.  Every sample of
a domain shares those factors; position, rotation, scale, and background
shade vary per sample.  The attribute vector of a domain is a fixed
deterministic encoding of its factors plus small per-sample noise, so
the attribute modality carries exactly the domain-level information and
nothing about the nuisance factors.

Rendering is pure numpy: signed distance functions with a smoothstep
edge, striped value modulation, HSV to RGB conversion.  Pixels are
quantized to the 8-bit grid at generation time so a PNG round trip is
bit exact.  The generator is a pure function of (spec, n_per_domain,
rng_seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DomainDataset, DomainSplit, Sample, _carve_test_indices
from .seeding import derive_seed

SHAPE_NAMES = ("circle", "square", "triangle", "ring", "cross")

# Width of the deterministic factor encoding before tiling: 5 shape
# indicator slots, hue as a point on the unit circle, frequency.
_BASE_ATTR_DIM = 8


@dataclass(frozen=True)
class SyntheticSpec:
    """Generation parameters for the attributed-shapes dataset."""

    n_domains: int = 12
    resolution: int = 32
    attr_dim: int = 32
    attr_noise_sigma: float = 0.02
    attr_margin: float = 0.25

    def validate(self) -> None:
        if self.n_domains < 3:
            raise ValueError("need n_domains >= 3 (at least 2 seen + 1 unseen)")
        if self.resolution <= 0 or self.resolution % 4 != 0:
            raise ValueError(
                f"resolution must be a positive multiple of 4, got {self.resolution}")
        if self.attr_dim < _BASE_ATTR_DIM:
            raise ValueError(f"attr_dim must be >= {_BASE_ATTR_DIM}")
        if self.attr_noise_sigma < 0:
            raise ValueError("attr_noise_sigma must be >= 0")

    def domain_factors(self, domain: int) -> dict:
        """Ground-truth factors of one domain."""
        return {
            "shape": domain % len(SHAPE_NAMES),
            "hue": domain / self.n_domains,
            "freq": 1 + (domain % 4),
        }

    def base_attribute(self, domain: int) -> np.ndarray:
        """Noiseless attribute encoding of one domain, tiled to attr_dim."""
        f = self.domain_factors(domain)
        base = np.zeros(_BASE_ATTR_DIM, dtype=np.float32)
        base[f["shape"]] = 1.0
        base[5] = np.cos(2 * np.pi * f["hue"])
        base[6] = np.sin(2 * np.pi * f["hue"])
        base[7] = f["freq"] / 4.0
        return np.resize(base, self.attr_dim).astype(np.float32)

    def unseen_domains(self) -> list[int]:
        """Every third domain is held out; 12 domains split 8 seen / 4 unseen."""
        return [d for d in range(self.n_domains) if d % 3 == 2]

    def class_name(self, domain: int) -> str:
        return f"domain_{domain:03d}"


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV to RGB; all inputs same shape, output (..., 3)."""
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = np.stack([v, q, p, p, t, v])
    choices_g = np.stack([t, v, v, q, p, p])
    choices_b = np.stack([p, p, t, v, v, q])
    idx = i[None, ...]
    r = np.take_along_axis(choices_r, idx, axis=0)[0]
    g = np.take_along_axis(choices_g, idx, axis=0)[0]
    b = np.take_along_axis(choices_b, idx, axis=0)[0]
    return np.stack([r, g, b], axis=-1)


def _smoothstep(edge0: float, edge1: float, x: np.ndarray) -> np.ndarray:
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _shape_sdf(shape: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed distance to the shape boundary (negative inside), in the
    shape's local frame where it spans roughly [-0.55, 0.55]."""
    if shape == 0:  # circle
        return np.hypot(x, y) - 0.55
    if shape == 1:  # square
        return np.maximum(np.abs(x), np.abs(y)) - 0.48
    if shape == 2:  # triangle, equilateral, pointing up, inradius r
        r = 0.32
        planes = [
            -(y + r),
            (0.5 * np.sqrt(3.0)) * x + 0.5 * y - r,
            -(0.5 * np.sqrt(3.0)) * x + 0.5 * y - r,
        ]
        return np.maximum.reduce(planes)
    if shape == 3:  # ring
        return np.abs(np.hypot(x, y) - 0.42) - 0.13
    if shape == 4:  # cross
        arm_a = np.maximum(np.abs(x) - 0.52, np.abs(y) - 0.18)
        arm_b = np.maximum(np.abs(x) - 0.18, np.abs(y) - 0.52)
        return np.minimum(arm_a, arm_b)
    raise ValueError(f"unknown shape id {shape}")


def render_sample(spec: SyntheticSpec, domain: int, nuisance: dict) -> np.ndarray:
    """Render one sample as (res, res, 3) float32 on the 8-bit grid."""
    res = spec.resolution
    f = spec.domain_factors(domain)
    half = (res - 1) / 2.0
    ys, xs = np.mgrid[0:res, 0:res]
    # pixel centers in [-1, 1], y pointing up
    x = (xs - half) / half
    y = (half - ys) / half
    # world -> shape local frame: undo translation, rotation, scale
    xt = x - nuisance["dx"]
    yt = y - nuisance["dy"]
    c, s = np.cos(-nuisance["rot"]), np.sin(-nuisance["rot"])
    xr = (c * xt - s * yt) / nuisance["scale"]
    yr = (s * xt + c * yt) / nuisance["scale"]
    sdf = _shape_sdf(f["shape"], xr, yr) * nuisance["scale"]

    aa = 1.5 * (2.0 / res)  # ~1.5 px anti-aliasing band
    mask = 1.0 - _smoothstep(-aa, aa, sdf)

    # striped value modulation in the local frame so stripes rotate with
    # the shape; frequency is the number of full cycles across the shape
    stripe = 0.5 + 0.5 * np.sin(2.0 * np.pi * f["freq"] * 0.75 * xr)
    value = 0.55 + 0.45 * stripe
    sat = np.full_like(value, 0.9)
    hue = np.full_like(value, f["hue"])
    fg = _hsv_to_rgb(hue, sat, value)

    bg = np.full((res, res, 3), nuisance["bg"], dtype=np.float64)
    img = mask[..., None] * fg + (1.0 - mask[..., None]) * bg
    img = np.clip(img, 0.0, 1.0)
    # quantize so PNG round trips are exact
    return (np.rint(img * 255.0) / 255.0).astype(np.float32)


def _draw_nuisance(rng: np.random.Generator) -> dict:
    return {
        "dx": float(rng.uniform(-0.18, 0.18)),
        "dy": float(rng.uniform(-0.18, 0.18)),
        "rot": float(rng.uniform(0.0, 2.0 * np.pi)),
        "scale": float(rng.uniform(0.8, 1.15)),
        "bg": float(rng.uniform(0.08, 0.3)),
    }


def validate_attribute_margin(spec: SyntheticSpec) -> None:
    """Check every domain pair differs by >= attr_margin in some coordinate
    of the noiseless encoding."""
    encodings = [spec.base_attribute(d) for d in range(spec.n_domains)]
    for i in range(spec.n_domains):
        for j in range(i + 1, spec.n_domains):
            gap = float(np.max(np.abs(encodings[i] - encodings[j])))
            if gap < spec.attr_margin:
                raise ValueError(
                    f"domains {i} and {j} separated by only {gap:.4f} "
                    f"< margin {spec.attr_margin}")


def make_synthetic(spec: SyntheticSpec, n_per_domain: int, rng_seed: int) -> DomainDataset:
    """Generate the dataset; pure function of (spec, n_per_domain, rng_seed).

    Label ids follow the standard convention: seen classes first.  The
    per-sample factor records (domain id plus all factor values) are
    attached for oracle tests and written to factors.jsonl on save.
    """
    spec.validate()
    if n_per_domain < 2:
        raise ValueError("need n_per_domain >= 2 (test carve needs a remainder)")
    validate_attribute_margin(spec)

    unseen = spec.unseen_domains()
    seen = [d for d in range(spec.n_domains) if d not in unseen]
    ordered_domains = seen + unseen
    class_names = tuple(spec.class_name(d) for d in ordered_domains)

    samples: list[Sample] = []
    factors: list[dict] = []
    test_indices: set[int] = set()
    file_names = [f"{j:05d}.png" for j in range(n_per_domain)]
    for label, domain in enumerate(ordered_domains):
        is_unseen = domain in unseen
        carve = (_carve_test_indices(file_names, spec.class_name(domain), 0.25)
                 if is_unseen else set())
        for j in range(n_per_domain):
            rng = np.random.default_rng(derive_seed(rng_seed, "synthetic", domain, j))
            nuisance = _draw_nuisance(rng)
            image = render_sample(spec, domain, nuisance)
            attribute = spec.base_attribute(domain)
            if spec.attr_noise_sigma > 0:
                attribute = attribute + rng.normal(
                    0.0, spec.attr_noise_sigma, size=attribute.shape).astype(np.float32)
            if j in carve:
                test_indices.add(len(samples))
            samples.append(Sample(image=image, label=label,
                                  attribute=attribute.astype(np.float32)))
            factors.append({
                "domain": domain,
                "class": spec.class_name(domain),
                "index": j,
                **spec.domain_factors(domain),
                **{k: round(v, 6) for k, v in nuisance.items()},
            })

    split = DomainSplit(
        seen_labels=tuple(range(len(seen))),
        unseen_labels=tuple(range(len(seen), spec.n_domains)),
        unseen_test_fraction=0.25,
    )
    return DomainDataset(samples, split, class_names, spec.resolution,
                         frozenset(test_indices), factors)
