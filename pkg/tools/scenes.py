"""
Synthetic scene triplets for Refign

This module renders desk-scale stand-ins for the (source, target, reference)
image triplets used in domain adaptation:
- A clean scene of flat-coloured regions: sky and road split by a horizon,
  building blocks, thin poles, and dynamic blobs
- The target: the clean scene under a photometric corruption
- The reference: the same scene seen through a homography, with the dynamic
  blobs displaced, under clean conditions
- The source: a different clean scene with its labels

Scenes are analytic, so the reference is rendered exactly at the
homography-mapped coordinates rather than resampled.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.config import PALETTE, SCENE_CONFIG
from tools.fields import Homography, ImageField, LabelMap
from tools.grid import project_points, sample_homography
from tools.refine import ClassTaxonomy
from utils.helper import ContractViolation, DegenerateTaxonomyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneConfig:
    """Size, content and corruption settings of the synthetic scenes"""

    height: int = SCENE_CONFIG["height"]
    width: int = SCENE_CONFIG["width"]
    class_count: int = SCENE_CONFIG["class_count"]
    num_buildings: int = SCENE_CONFIG["num_buildings"]
    num_poles: int = SCENE_CONFIG["num_poles"]
    num_dynamic: int = SCENE_CONFIG["num_dynamic"]
    corruption: float = SCENE_CONFIG["corruption"]
    homography_strength: float = SCENE_CONFIG["homography_strength"]
    dynamic_shift: float = SCENE_CONFIG["dynamic_shift"]
    pool_size: int = SCENE_CONFIG["pool_size"]
    palette: Tuple[Tuple[float, float, float], ...] = field(default=tuple(PALETTE))

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ContractViolation(f"scenes need at least 2x2 pixels, got {self.height}x{self.width}")
        if self.class_count < 2:
            raise ContractViolation("scenes need at least two classes")
        for name in ("num_buildings", "num_poles", "num_dynamic"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be >= 0")
        if not 0.0 <= self.corruption <= 1.0:
            raise ContractViolation(f"corruption must lie in [0, 1], got {self.corruption}")
        if not 0.0 <= self.homography_strength <= 0.5:
            raise ContractViolation(f"homography_strength must lie in [0, 0.5], got {self.homography_strength}")
        if self.dynamic_shift < 0:
            raise ContractViolation("dynamic_shift must be >= 0")
        if self.pool_size < 1:
            raise ContractViolation("pool_size must be >= 1")
        if not self.palette:
            raise ContractViolation("palette must not be empty")


@dataclass(frozen=True)
class SceneTriplet:
    """
    One training sample

    target_labels is the hidden ground truth, used for evaluation only.
    true_ref_to_target_homography maps reference pixel coordinates to target
    pixel coordinates.
    """

    seed: int
    source: ImageField
    source_labels: LabelMap
    target: ImageField
    target_labels: LabelMap
    reference: ImageField
    true_ref_to_target_homography: Homography

    @property
    def shape(self) -> Tuple[int, int]:
        return self.target.shape


@dataclass(frozen=True)
class _Layout:
    horizon: float
    # (x0, x1, top, bottom, class, shade) per row
    buildings: np.ndarray
    poles: np.ndarray
    # (cx, cy, rx, ry, class, shade) per row
    blobs: np.ndarray
    # (dx, dy) per blob, applied in the reference view
    blob_shift: np.ndarray


def _roles(tax: ClassTaxonomy) -> Tuple[int, int, List[int], List[int], List[int]]:
    large = sorted(tax.large_static)
    if not large:
        raise DegenerateTaxonomyError("scenes need at least one large static class for the background")
    sky = large[0]
    ground = large[1] if len(large) > 1 else large[0]
    blocks = large[2:] or large
    return sky, ground, blocks, sorted(tax.small_static), sorted(tax.dynamic)


def _sample_layout(rng: np.random.Generator, cfg: SceneConfig, tax: ClassTaxonomy) -> _Layout:
    h, w = cfg.height, cfg.width
    _, _, blocks, small, dynamic = _roles(tax)
    horizon = rng.uniform(0.35, 0.55) * h

    buildings = np.zeros((cfg.num_buildings, 6))
    for i in range(cfg.num_buildings):
        width = rng.uniform(0.15, 0.35) * w
        x0 = rng.uniform(-0.1 * w, w - 0.5 * width)
        top = rng.uniform(0.1 * h, max(horizon - 0.1 * h, 0.1 * h))
        buildings[i] = [x0, x0 + width, top, horizon + 0.05 * h, blocks[i % len(blocks)], rng.uniform(0.85, 1.0)]

    pole_classes = small or blocks
    poles = np.zeros((cfg.num_poles, 6))
    for i in range(cfg.num_poles):
        cx = rng.uniform(0.05, 0.95) * w
        half = rng.uniform(0.6, 1.2)
        top = rng.uniform(0.1, 0.4) * h
        bottom = horizon + rng.uniform(0.05, 0.25) * h
        poles[i] = [cx - half, cx + half, top, bottom, pole_classes[i % len(pole_classes)], rng.uniform(0.85, 1.0)]

    blob_classes = dynamic or pole_classes
    blobs = np.zeros((cfg.num_dynamic, 6))
    shift = np.zeros((cfg.num_dynamic, 2))
    for i in range(cfg.num_dynamic):
        cx = rng.uniform(0.1, 0.9) * w
        cy = rng.uniform(horizon + 0.1 * h, 0.95 * h) if horizon + 0.1 * h < 0.95 * h else 0.95 * h
        rx = rng.uniform(0.06, 0.12) * w
        ry = rng.uniform(0.05, 0.10) * h
        blobs[i] = [cx, cy, rx, ry, blob_classes[i % len(blob_classes)], rng.uniform(0.85, 1.0)]
        angle = rng.uniform(0.0, 2.0 * np.pi)
        shift[i] = cfg.dynamic_shift * np.array([np.cos(angle), np.sin(angle)])

    return _Layout(horizon, buildings, poles, blobs, shift)


def _render(layout: _Layout, points: np.ndarray, cfg: SceneConfig, tax: ClassTaxonomy,
            displaced: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Paint the scene at continuous (x, y) points

    Returns (n,) class indices and (n, 3) colours. Layers are painted in
    order: background, buildings, poles, blobs.
    """
    sky, ground, _, _, _ = _roles(tax)
    x = points[:, 0]
    y = points[:, 1]
    labels = np.where(y < layout.horizon, sky, ground).astype(np.int64)
    shade = np.ones(points.shape[0])

    for x0, x1, top, bottom, cls, s in np.concatenate([layout.buildings, layout.poles]):
        inside = (x >= x0) & (x <= x1) & (y >= top) & (y <= bottom)
        labels[inside] = int(cls)
        shade[inside] = s

    offsets = layout.blob_shift if displaced else np.zeros_like(layout.blob_shift)
    for (cx, cy, rx, ry, cls, s), (dx, dy) in zip(layout.blobs, offsets):
        inside = ((x - cx - dx) / rx) ** 2 + ((y - cy - dy) / ry) ** 2 <= 1.0
        labels[inside] = int(cls)
        shade[inside] = s

    palette = np.asarray(cfg.palette, dtype=np.float64)
    colours = palette[labels % len(palette)] * shade[:, None]
    return labels, colours


def _pixel_grid(height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def corrupt(image: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """
    Adverse-condition corruption of a clean (h, w, 3) image

    Gamma exponent 1 + 2k, brightness 1 - 0.5k, a blue colour cast and
    Gaussian noise with sigma 0.08k, clipped to [0, 1]. k = 0 is the identity.
    """
    if strength == 0.0:
        return image.copy()
    cast = np.array([1.0 - 0.3 * strength, 1.0 - 0.15 * strength, 1.0])
    out = np.power(image, 1.0 + 2.0 * strength) * (1.0 - 0.5 * strength) * cast
    out = out + rng.normal(0.0, 0.08 * strength, size=image.shape)
    return np.clip(out, 0.0, 1.0)


def generate_triplet(rng_seed: int, scene_cfg: SceneConfig = SceneConfig(),
                     taxonomy: Optional[ClassTaxonomy] = None) -> SceneTriplet:
    """
    Render one (source, target, reference) triplet

    Parameters:
    -----------
    rng_seed : int
        Seed; equal seeds give identical triplets
    scene_cfg : SceneConfig
        Sizes, shape counts, corruption and homography strength
    taxonomy : ClassTaxonomy, optional
        Class roles; defaults to the built-in six-class taxonomy

    Returns:
    --------
    SceneTriplet
    """
    tax = taxonomy or ClassTaxonomy.default()
    if tax.class_count != scene_cfg.class_count:
        raise ContractViolation(
            f"taxonomy has {tax.class_count} classes but the scene config asks for {scene_cfg.class_count}"
        )
    h, w = scene_cfg.height, scene_cfg.width
    layout_rng, source_rng, warp_rng, noise_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(rng_seed).spawn(4)
    ]

    if scene_cfg.homography_strength > 0.0:
        ref_to_target = sample_homography(int(warp_rng.integers(2 ** 31)), scene_cfg.homography_strength, h, w)
    else:
        ref_to_target = Homography.identity()

    grid = _pixel_grid(h, w)
    layout = _sample_layout(layout_rng, scene_cfg, tax)
    target_labels, clean = _render(layout, grid, scene_cfg, tax)
    _, reference = _render(layout, project_points(ref_to_target, grid), scene_cfg, tax, displaced=True)

    source_layout = _sample_layout(source_rng, scene_cfg, tax)
    source_labels, source = _render(source_layout, grid, scene_cfg, tax)

    target = corrupt(clean.reshape(h, w, 3), scene_cfg.corruption, noise_rng)
    return SceneTriplet(
        seed=rng_seed,
        source=ImageField(source.reshape(h, w, 3)),
        source_labels=LabelMap(source_labels.reshape(h, w), tax.class_count),
        target=ImageField(target),
        target_labels=LabelMap(target_labels.reshape(h, w), tax.class_count),
        reference=ImageField(reference.reshape(h, w, 3)),
        true_ref_to_target_homography=ref_to_target,
    )


def pool_seeds(seed: int, pool_size: int) -> List[int]:
    """Deterministic per-triplet seeds derived from a base seed"""
    children = np.random.SeedSequence(seed).spawn(pool_size)
    return [int(child.generate_state(1)[0]) for child in children]


def generate_pool(seed: int, scene_cfg: SceneConfig = SceneConfig(),
                  taxonomy: Optional[ClassTaxonomy] = None) -> List[SceneTriplet]:
    """The fixed data stream of scene_cfg.pool_size triplets"""
    pool = [generate_triplet(s, scene_cfg, taxonomy) for s in pool_seeds(seed, scene_cfg.pool_size)]
    logger.info(f"Generated {len(pool)} scene triplets of {scene_cfg.height}x{scene_cfg.width}")
    return pool


def label_histogram(triplets: Sequence[SceneTriplet], class_count: int) -> np.ndarray:
    """Pixel counts per class over the targets' ground truth"""
    counts = np.zeros(class_count, dtype=np.int64)
    for t in triplets:
        counts += np.bincount(t.target_labels.data.ravel(), minlength=class_count)[:class_count]
    return counts
