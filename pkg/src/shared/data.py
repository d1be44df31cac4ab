"""
Dataset splitting, class vectors, augmentation and manifest persistence.
"""
import json
import math
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ClassIndexError, EmptyInputError
from .models import (
    BACKGROUND_CLASS,
    AugmentConfig,
    AugmentedPair,
    ManifestRecord,
    SegmentationSample,
    SplitPlan,
)
from .utils import Stream, derive_seed


logger = structlog.get_logger(__name__)

SYNTH_SCHEME = "synth://"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(dataset_ids: Sequence[str], ratio: float, seed: int,
               weak_fraction: float = 0.0) -> SplitPlan:
    """Randomly partition ids into labeled, weak (image-level only) and unlabeled lists."""
    n = len(dataset_ids)
    if n == 0:
        raise EmptyInputError("Cannot split an empty dataset")
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    if weak_fraction < 0 or weak_fraction > 1 - ratio + 1e-12:
        raise ValueError(f"weak_fraction must lie in [0, 1 - ratio], got {weak_fraction}")
    if len(set(dataset_ids)) != n:
        raise ValueError("dataset ids must be unique")

    n_labeled = max(1, _round_half_up(ratio * n))
    n_weak = min(_round_half_up(weak_fraction * n), n - n_labeled)

    order = np.random.default_rng(derive_seed(seed, Stream.SPLIT)).permutation(n)
    shuffled = [dataset_ids[i] for i in order]
    plan = SplitPlan(
        labeled_ids=shuffled[:n_labeled],
        weak_ids=shuffled[n_labeled:n_labeled + n_weak],
        unlabeled_ids=shuffled[n_labeled + n_weak:],
        ratio=ratio,
        weak_fraction=weak_fraction,
        seed=seed,
    )
    logger.info("split_created", total=n, labeled=len(plan.labeled_ids),
                weak=len(plan.weak_ids), unlabeled=len(plan.unlabeled_ids), seed=seed)
    return plan


def derive_class_vector(mask: torch.Tensor, num_classes: int) -> torch.Tensor:
    """Multi-hot presence vector of the classes in a mask; background is always present."""
    if mask.numel() and (int(mask.min()) < 0 or int(mask.max()) >= num_classes):
        raise ClassIndexError(
            f"mask holds class indices outside [0, {num_classes}): "
            f"min={int(mask.min())}, max={int(mask.max())}"
        )
    counts = torch.bincount(mask.reshape(-1).long(), minlength=num_classes)
    vector = (counts > 0).long()
    vector[BACKGROUND_CLASS] = 1
    return vector


def _random_crop_box(height: int, width: int, min_area: float,
                     generator: torch.Generator) -> Tuple[int, int, int, int]:
    area = min_area + (1.0 - min_area) * float(torch.rand(1, generator=generator))
    scale = math.sqrt(area)
    h = min(height, max(1, _round_half_up(height * scale)))
    w = min(width, max(1, _round_half_up(width * scale)))
    top = int(torch.randint(0, height - h + 1, (1,), generator=generator))
    left = int(torch.randint(0, width - w + 1, (1,), generator=generator))
    return top, left, h, w


def _crop_resize(x: torch.Tensor, box: Tuple[int, int, int, int], mode: str) -> torch.Tensor:
    top, left, h, w = box
    size = x.shape[-2:]
    cropped = x[..., top:top + h, left:left + w]
    if cropped.shape[-2:] == size:
        return cropped
    if mode == "nearest":
        resized = F.interpolate(cropped[None, None].float(), size=size, mode="nearest")
        return resized[0, 0].to(x.dtype)
    return F.interpolate(cropped[None], size=size, mode="bilinear", align_corners=False)[0]


def _perturb(image: torch.Tensor, config: AugmentConfig, generator: torch.Generator) -> torch.Tensor:
    view = image
    if config.crop:
        box = _random_crop_box(image.shape[1], image.shape[2], config.crop_min_area, generator)
        view = _crop_resize(view, box, mode="bilinear")
    if config.flip and float(torch.rand(1, generator=generator)) < 0.5:
        view = view.flip(-1)
    if config.noise_sigma > 0:
        noise = torch.randn(view.shape, generator=generator, dtype=view.dtype)
        view = (view + config.noise_sigma * noise).clamp(0.0, 1.0)
    return view.clone()


def augment_pair(sample: SegmentationSample, seed: int,
                 config: Optional[AugmentConfig] = None) -> AugmentedPair:
    """Two independently perturbed views of the same image (student, teacher)."""
    config = config or AugmentConfig()
    generator = torch.Generator().manual_seed(seed)
    view_a = _perturb(sample.image, config, generator)
    view_b = _perturb(sample.image, config, generator)
    return AugmentedPair(view_a=view_a, view_b=view_b, provenance=sample.sample_id)


def augment_segmentation(image: torch.Tensor, mask: Optional[torch.Tensor], seed: int,
                         flip: bool = True, crop: bool = True, min_area: float = 0.9
                         ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Joint crop-and-resize plus horizontal flip of an image and its mask."""
    generator = torch.Generator().manual_seed(seed)
    if crop:
        box = _random_crop_box(image.shape[1], image.shape[2], min_area, generator)
        image = _crop_resize(image, box, mode="bilinear")
        if mask is not None:
            mask = _crop_resize(mask, box, mode="nearest")
    if flip and float(torch.rand(1, generator=generator)) < 0.5:
        image = image.flip(-1)
        if mask is not None:
            mask = mask.flip(-1)
    return image, mask


class BatchCycler:
    """Cycles an id list in reshuffled epochs; batch k is a pure function of k."""

    def __init__(self, ids: Sequence[str], batch_size: int, seed: int, stream: int):
        if not ids:
            raise EmptyInputError("BatchCycler needs at least one id")
        self.ids = list(ids)
        self.batch_size = batch_size
        self.seed = seed
        self.stream = stream
        self._permutation = lru_cache(maxsize=4)(self._make_permutation)

    def _make_permutation(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, self.stream, epoch))
        return rng.permutation(len(self.ids))

    def batch(self, k: int) -> List[str]:
        n = len(self.ids)
        out = []
        for position in range(k * self.batch_size, (k + 1) * self.batch_size):
            epoch, offset = divmod(position, n)
            out.append(self.ids[int(self._permutation(epoch)[offset])])
        return out


def stack_images(samples: Sequence[SegmentationSample]) -> torch.Tensor:
    return torch.stack([s.image for s in samples])


def stack_masks(samples: Sequence[SegmentationSample]) -> torch.Tensor:
    if any(s.mask is None for s in samples):
        raise ValueError("every sample in a labeled batch needs a mask")
    return torch.stack([s.mask for s in samples])


# Manifest persistence

def save_image_png(image: torch.Tensor, path: Union[str, Path]) -> None:
    array = (image.clamp(0, 1) * 255).round().to(torch.uint8).permute(1, 2, 0).contiguous().numpy()
    Image.fromarray(array).save(path)


def save_mask_png(mask: torch.Tensor, path: Union[str, Path]) -> None:
    if mask.numel() and int(mask.max()) > 255:
        raise ClassIndexError("PNG masks hold at most 256 classes")
    Image.fromarray(mask.to(torch.uint8).numpy()).save(path)


def load_image_png(path: Union[str, Path]) -> torch.Tensor:
    array = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(array.copy()).permute(2, 0, 1).float() / 255.0


def load_mask_png(path: Union[str, Path]) -> torch.Tensor:
    array = np.asarray(Image.open(path), dtype=np.uint8)
    return torch.from_numpy(array.copy()).long()


def write_manifest(records: Sequence[ManifestRecord], path: Union[str, Path]) -> Path:
    """Write one JSON object per line with fields id, image, mask, classes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        for record in records:
            handle.write(json.dumps(record.model_dump(), separators=(",", ":")) + "\n")
    return path


def read_manifest(path: Union[str, Path]) -> List[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    records = []
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(ManifestRecord.model_validate_json(line))
        except ValueError as e:
            raise ValueError(f"{path}:{line_no}: invalid manifest record: {e}") from e
    return records


def load_samples(path: Union[str, Path], num_classes: int,
                 resolver: Optional[Callable[[str], SegmentationSample]] = None
                 ) -> List[SegmentationSample]:
    """Materialise manifest records; synth:// references are rendered by `resolver`."""
    path = Path(path)
    samples = []
    for record in read_manifest(path):
        if record.image.startswith(SYNTH_SCHEME):
            if resolver is None:
                raise ValueError(f"No resolver for generated sample '{record.image}'")
            generated = resolver(record.image)
            samples.append(generated.model_copy(update={"sample_id": record.id}))
            continue
        image = load_image_png(path.parent / record.image)
        mask = load_mask_png(path.parent / record.mask) if record.mask else None
        if record.classes is not None:
            class_vector = torch.tensor(record.classes, dtype=torch.long)
        elif mask is not None:
            class_vector = derive_class_vector(mask, num_classes)
        else:
            class_vector = None
        samples.append(SegmentationSample(
            sample_id=record.id, image=image, mask=mask, class_vector=class_vector,
        ))
    logger.info("manifest_loaded", path=str(path), samples=len(samples))
    return samples


def index_samples(samples: Sequence[SegmentationSample]) -> Dict[str, SegmentationSample]:
    return {s.sample_id: s for s in samples}
