"""
Deterministic synthetic shapes benchmark.

Each scene is a textured background with 1-3 colored shapes; every foreground class
has its own shape family (disk, square, triangle, ring) and a class-correlated but
jittered color, so a segmenter has to look at shape as well as color. A scene is a
pure function of (seed, index).
"""
import colorsys
from pathlib import Path
from typing import Callable, List, Tuple, Union

import numpy as np
import structlog
import torch

from ..shared.data import (
    SYNTH_SCHEME,
    derive_class_vector,
    save_image_png,
    save_mask_png,
    write_manifest,
)
from ..shared.models import BACKGROUND_CLASS, ManifestRecord, SceneSpec, SegmentationSample
from ..shared.utils import derive_seed


logger = structlog.get_logger(__name__)

SHAPE_FAMILIES = ("disk", "square", "triangle", "ring")
BACKGROUND_COLOR = np.array([0.45, 0.45, 0.45])


def shape_family(class_index: int) -> str:
    return SHAPE_FAMILIES[(class_index - 1) % len(SHAPE_FAMILIES)]


def class_color(class_index: int, num_classes: int) -> np.ndarray:
    """Base color of a foreground class: hues spread evenly over the color wheel."""
    hue = (class_index - 1) / max(1, num_classes - 1)
    return np.array(colorsys.hsv_to_rgb(hue, 0.75, 0.9))


def rasterize(family: str, cy: int, cx: int, radius: int,
              height: int, width: int) -> np.ndarray:
    """Boolean H x W mask of one shape."""
    yy, xx = np.mgrid[0:height, 0:width]
    dy, dx = yy - cy, xx - cx
    if family == "disk":
        return dy ** 2 + dx ** 2 <= radius ** 2
    if family == "square":
        half = max(1, int(round(radius * 0.8)))
        return (np.abs(dy) <= half) & (np.abs(dx) <= half)
    if family == "triangle":
        # apex at the top, base at cy + radius
        return (dy >= -radius) & (dy <= radius) & (np.abs(dx) * 2 <= dy + radius)
    if family == "ring":
        dist2 = dy ** 2 + dx ** 2
        return (dist2 <= radius ** 2) & (dist2 >= (0.55 * radius) ** 2)
    raise ValueError(f"Unknown shape family '{family}'")


def _render_mask(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    height, width = spec.resolution
    mask = np.zeros((height, width), dtype=np.int64)
    low, high = spec.shapes_per_scene
    for _ in range(int(rng.integers(low, high + 1))):
        cls = int(rng.integers(1, spec.num_classes))
        radius = int(rng.integers(spec.radius_range[0], spec.radius_range[1] + 1))
        cy = int(rng.integers(0, height))
        cx = int(rng.integers(0, width))
        mask[rasterize(shape_family(cls), cy, cx, radius, height, width)] = cls
    # occlusion and borders can leave slivers
    counts = np.bincount(mask.reshape(-1), minlength=spec.num_classes)
    for cls in range(1, spec.num_classes):
        if 0 < counts[cls] < spec.min_class_pixels:
            mask[mask == cls] = BACKGROUND_CLASS
    return mask


def _render_image(mask: np.ndarray, spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    height, width = mask.shape
    image = np.empty((height, width, 3), dtype=np.float64)
    image[:] = BACKGROUND_COLOR + rng.normal(0.0, spec.color_jitter, 3)
    for cls in range(1, spec.num_classes):
        color = class_color(cls, spec.num_classes) + rng.normal(0.0, spec.color_jitter, 3)
        image[mask == cls] = color
    image += rng.normal(0.0, spec.texture_sigma, image.shape)
    # uint8 quantization makes PNG persistence lossless
    return np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)


def scene_id(spec: SceneSpec, index: int) -> str:
    return f"synth-{spec.seed}-{index:06d}"


def generate_scene(spec: SceneSpec, index: int) -> SegmentationSample:
    if index < 0:
        raise ValueError(f"scene index must be nonnegative, got {index}")
    rng = np.random.default_rng(derive_seed(spec.seed, index))
    mask = _render_mask(spec, rng)
    pixels = _render_image(mask, spec, rng)
    mask_t = torch.from_numpy(mask)
    return SegmentationSample(
        sample_id=scene_id(spec, index),
        image=torch.from_numpy(pixels).permute(2, 0, 1).float() / 255.0,
        mask=mask_t,
        class_vector=derive_class_vector(mask_t, spec.num_classes),
    )


def generate_samples(spec: SceneSpec, n: int, start: int = 0) -> List[SegmentationSample]:
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    return [generate_scene(spec, index) for index in range(start, start + n)]


def generate_dataset(spec: SceneSpec, n: int) -> List[ManifestRecord]:
    """Manifest records for scenes 0..n-1, referencing the generator instead of files."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    records = []
    for index in range(n):
        sample = generate_scene(spec, index)
        records.append(ManifestRecord(
            id=sample.sample_id,
            image=f"{SYNTH_SCHEME}{spec.seed}/{index}",
            classes=sample.class_vector.tolist(),
        ))
    return records


def write_dataset(spec: SceneSpec, n: int, root: Union[str, Path]) -> Path:
    """Persist n scenes as PNG image/mask pairs plus manifest.jsonl; returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for sample in generate_samples(spec, n):
        image_rel = f"images/{sample.sample_id}.png"
        mask_rel = f"masks/{sample.sample_id}.png"
        save_image_png(sample.image, root / image_rel)
        save_mask_png(sample.mask, root / mask_rel)
        records.append(ManifestRecord(
            id=sample.sample_id, image=image_rel, mask=mask_rel,
            classes=sample.class_vector.tolist(),
        ))
    path = write_manifest(records, root / "manifest.jsonl")
    logger.info("dataset_written", root=str(root), samples=n, seed=spec.seed)
    return path


def parse_reference(reference: str) -> Tuple[int, int]:
    """'synth://<seed>/<index>' -> (seed, index)."""
    if not reference.startswith(SYNTH_SCHEME):
        raise ValueError(f"Not a generated-sample reference: '{reference}'")
    try:
        seed, index = reference[len(SYNTH_SCHEME):].split("/")
        return int(seed), int(index)
    except ValueError as e:
        raise ValueError(f"Malformed generated-sample reference: '{reference}'") from e


def make_resolver(spec: SceneSpec) -> Callable[[str], SegmentationSample]:
    """Resolver for load_samples: renders referenced scenes with `spec`'s other settings."""
    def resolve(reference: str) -> SegmentationSample:
        seed, index = parse_reference(reference)
        return generate_scene(spec.model_copy(update={"seed": seed}), index)
    return resolve
