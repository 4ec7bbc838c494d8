"""Synthetic region-shifted land-cover tiles.

Every class has a global prototype spectrum (a unit vector over channels).
Each region perturbs every class prototype by a random offset whose expected
norm is ``shift``, so the same class looks different from region to region.
Tiles carry the region-specific class spectrum, a per-tile spectral jitter
(so a single example is a noisy view of its class), a smooth texture and
pixel noise. Class frequencies differ by region (Dirichlet(1) on top of a
guaranteed balanced floor, so every region can host evaluation tasks).
"""
from dataclasses import dataclass, replace

import numpy as np

from .tiles import META_TRAIN, LabeledTile, RegionDataset, assign_partitions, majority_label


class GeneratorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    num_regions: int = 20
    classes: int = 4
    tiles_per_region: int = 100
    shift: float = 2.0
    image_size: int = 16
    channels: int = 3
    jitter: float = 0.5
    noise: float = 0.5
    texture: float = 0.3
    balance: float = 0.8
    segmentation: bool = False
    support_fraction: float = 0.5
    season: str = "summer"

    def validate(self):
        if self.classes < 2:
            raise GeneratorConfigError(f"need at least 2 classes, got {self.classes}")
        if self.tiles_per_region < 4 * self.classes:
            raise GeneratorConfigError(
                f"tiles_per_region={self.tiles_per_region} < 4*classes={4 * self.classes}")
        if self.num_regions < 1 or self.image_size < 1 or self.channels < 1:
            raise GeneratorConfigError("num_regions, image_size and channels must be positive")
        if self.classes > 255:
            raise GeneratorConfigError("at most 255 classes fit the tile format")
        if min(self.shift, self.jitter, self.noise, self.texture) < 0:
            raise GeneratorConfigError("shift, jitter, noise and texture must be non-negative")
        if not 0.0 <= self.balance <= 1.0:
            raise GeneratorConfigError(f"balance must be in [0, 1], got {self.balance}")
        if not 0.0 < self.support_fraction < 1.0:
            raise GeneratorConfigError(f"support_fraction must be in (0, 1), got {self.support_fraction}")
        return self


def region_name(r):
    return f"r{r:03d}"


def class_counts(rng, cfg):
    """Per-class tile counts of one region: balanced floor plus Dirichlet remainder."""
    floor = int(cfg.balance * cfg.tiles_per_region) // cfg.classes
    rest = cfg.tiles_per_region - floor * cfg.classes
    freq = rng.dirichlet(np.ones(cfg.classes))
    return floor + rng.multinomial(rest, freq)


def _texture(rng, channels, size, amplitude):
    if amplitude == 0:
        return np.zeros((channels, size, size))
    yy, xx = np.mgrid[0:size, 0:size] / size
    field = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    field *= amplitude / np.sqrt(3.0)
    return field[None, :, :] * rng.uniform(0.5, 1.5, size=(channels, 1, 1))


def _blob_labels(rng, size, classes_in_tile):
    """Voronoi partition of the tile among 2-4 seed points."""
    m = len(classes_in_tile)
    pts = rng.uniform(0, size, size=(m, 2))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    d = (yy[None] - pts[:, 0, None, None]) ** 2 + (xx[None] - pts[:, 1, None, None]) ** 2
    return np.asarray(classes_in_tile)[np.argmin(d, axis=0)]


def class_means(prototypes, offsets, r):
    return prototypes + offsets[r]


def generate_synthetic_regions(cfg=None, seed=0, **overrides):
    """Build a :class:`RegionDataset` with all regions in meta-train.

    ``overrides`` replace fields of ``cfg`` (or of the default config), e.g.
    ``generate_synthetic_regions(num_regions=6, shift=0.0, seed=1)``.

    Pixel values are rounded to float32 so tiles roundtrip exactly through the
    on-disk format.
    """
    cfg = replace(cfg or SyntheticConfig(), **overrides).validate()
    rng = np.random.default_rng(seed)
    C, S, K = cfg.channels, cfg.image_size, cfg.classes
    prototypes = rng.normal(size=(K, C))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    offsets = rng.normal(scale=cfg.shift / np.sqrt(C), size=(cfg.num_regions, K, C))
    tiles = []
    for r in range(cfg.num_regions):
        means = class_means(prototypes, offsets, r)
        counts = class_counts(rng, cfg)
        freq = counts / counts.sum()
        labels = np.repeat(np.arange(K), counts)
        labels = labels[rng.permutation(len(labels))]
        for label in labels:
            label = int(label)
            pixel_labels = None
            if cfg.segmentation:
                extra = rng.choice(K, size=rng.integers(1, 4), p=freq)
                grid = _blob_labels(rng, S, [label] + [int(c) for c in extra])
                label = majority_label(grid)
                pixel_labels = grid.astype(np.int64)
                mean_img = means[grid].transpose(2, 0, 1)
            else:
                mean_img = np.broadcast_to(means[label][:, None, None], (C, S, S))
            mean_img = mean_img + rng.normal(scale=cfg.jitter, size=(C, 1, 1))
            px = mean_img + _texture(rng, C, S, cfg.texture) + rng.normal(scale=cfg.noise, size=(C, S, S))
            px = px.astype(np.float32).astype(np.float64)
            tiles.append(LabeledTile(px, label, region_name(r), cfg.season, pixel_labels))
    is_support = assign_partitions(tiles, cfg.support_fraction, seed=rng.integers(2 ** 63))
    split = {region_name(r): META_TRAIN for r in range(cfg.num_regions)}
    return RegionDataset(tuple(tiles), is_support, split, K)
