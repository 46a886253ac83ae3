"""Procedural paired phantom volumes: one geometry, two synthetic modalities.

Each pair shares a single geometry field (nested ellipsoid shells plus a few
off-center lesion blobs) rendered through two different transfer functions.
The target additionally gets a per-volume style transform
v -> clip(offset + contrast * v**gamma), mimicking scanner-dependent style
variation. All randomness comes from numpy's PCG64 generator so a seed fully
determines the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .style_key import compute_style_key
from .volume import Volume, min_max_normalize

__all__ = [
    "StyleParams",
    "PhantomConfig",
    "FOREGROUND_THRESHOLD",
    "generate_pair",
    "generate_dataset",
    "sample_styles",
]

# Both rendered modalities keep all foreground voxels above this value after
# normalization, so thresholding here recovers the shared geometry mask.
FOREGROUND_THRESHOLD = 0.05

IDENTITY_STYLE_FLOOR = 0.25  # lowest pre-style foreground intensity


@dataclass(frozen=True)
class StyleParams:
    gamma: float = 1.0
    contrast: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.contrast <= 1:
            raise ValueError(f"contrast must be in (0, 1], got {self.contrast}")


@dataclass(frozen=True)
class PhantomConfig:
    size: tuple[int, int, int] = (32, 32, 32)
    n_shells: int = 3
    style: StyleParams = field(default_factory=StyleParams)
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if min(self.size) < 8:
            raise ValueError(f"each axis must be >= 8, got size {self.size}")
        if self.n_shells < 1:
            raise ValueError("n_shells must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _geometry(config: PhantomConfig, rng: np.random.Generator):
    """Shared geometry field g in [0, 1] and its foreground mask.

    The shape is a gently wobbling cylinder along z (an extruded ellipse
    whose radius is modulated by a slow sinusoid), filled with concentric
    rings and a few z-elongated lesion blobs. Adjacent axial slices are
    therefore nearly identical by construction: the slice-mean profile and
    adjacent-slice similarity of a faithful rendering sit close to their
    ideal values, so inter-slice inconsistency metrics measure sampling
    artifacts rather than anatomy.
    """
    zs, hs, ws = config.size
    z, y, x = np.meshgrid(np.linspace(-1, 1, zs),
                          np.linspace(-1, 1, hs),
                          np.linspace(-1, 1, ws), indexing="ij")
    axes = rng.uniform(0.65, 0.85, size=2)
    center = rng.uniform(-0.05, 0.05, size=2)
    freq = rng.uniform(0.5, 1.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wobble = 1.0 + 0.08 * np.sin(np.pi * freq * z + phase)
    r = np.sqrt(((y - center[0]) / axes[0]) ** 2
                + ((x - center[1]) / axes[1]) ** 2) * wobble
    mask = r < 1.0

    rings = 0.6 + 0.4 * np.cos(np.pi * config.n_shells * r) ** 2
    g = (1.0 - 0.85 * r) * rings

    for _ in range(int(rng.integers(2, 4))):
        c = rng.uniform(-0.45, 0.45, size=3)
        rad_z = rng.uniform(0.5, 0.9)  # elongated along z: slices stay alike
        rad = rng.uniform(0.1, 0.25, size=2)
        amp = rng.uniform(0.25, 0.5) * rng.choice([-1.0, 1.0])
        rho2 = (((z - c[0]) / rad_z) ** 2
                + (((y - c[1]) / rad[0]) ** 2
                   + ((x - c[2]) / rad[1]) ** 2))
        g = g + amp * np.exp(-3.0 * rho2)

    return np.clip(g, 0.0, 1.0), mask


def _render_source(g, mask, sigma, rng):
    # inverted tissue contrast relative to the target modality, so the
    # translation is a genuine cross-modality mapping
    floor, span = IDENTITY_STYLE_FLOOR, 1.0 - IDENTITY_STYLE_FLOOR
    v = floor + span * (1.0 - g) ** 0.7
    if sigma > 0:
        v = v + sigma * rng.standard_normal(g.shape)
    return np.where(mask, np.clip(v, 0.1, 1.5), 0.0)


def _render_target(g, mask, style: StyleParams):
    floor, span = IDENTITY_STYLE_FLOOR, 1.0 - IDENTITY_STYLE_FLOOR
    v = floor + span * (3.0 * g * g - 2.0 * g ** 3)  # smoothstep contrast curve
    styled = np.clip(style.offset + style.contrast * v ** style.gamma, 0.0, 1.5)
    return np.where(mask, styled, 0.0)


def generate_pair(config: PhantomConfig) -> tuple[Volume, Volume]:
    """Deterministically render a (source, target) pair from the config.

    Geometry and source noise are drawn from PCG64(seed); the style
    parameters affect the target only, so two configs differing only in
    style produce identical source volumes.
    """
    geom_rng = np.random.Generator(np.random.PCG64(config.seed))
    g, mask = _geometry(config, geom_rng)
    source = _render_source(g, mask, config.noise_sigma, geom_rng)
    target = _render_target(g, mask, config.style)
    return (min_max_normalize(Volume(source.astype(np.float32))),
            min_max_normalize(Volume(target.astype(np.float32))))


def sample_styles(n: int, style_seed: int) -> list[StyleParams]:
    """Seeded draw of n style parameter triples with a wide spread."""
    rng = np.random.Generator(np.random.PCG64(style_seed))
    styles = []
    for _ in range(n):
        styles.append(StyleParams(gamma=float(rng.uniform(0.5, 2.2)),
                                  contrast=float(rng.uniform(0.5, 1.0)),
                                  offset=float(rng.uniform(0.0, 0.25))))
    return styles


def generate_dataset(n: int, base_config: PhantomConfig, style_seed: int):
    """n phantom pairs with seeded style diversity.

    Returns a list of (source, target, style_key, config) tuples. Pair k
    uses geometry seed base_config.seed + k, so geometry and styles are
    independently reseedable.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    styles = sample_styles(n, style_seed)
    out = []
    for k in range(n):
        cfg = PhantomConfig(size=base_config.size,
                            n_shells=base_config.n_shells,
                            style=styles[k],
                            noise_sigma=base_config.noise_sigma,
                            seed=base_config.seed + k)
        source, target = generate_pair(cfg)
        out.append((source, target, compute_style_key(target), cfg))
    return out
