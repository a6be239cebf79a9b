"""
Image loading, binarization and connected-component statistics
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage.filters import threshold_otsu, threshold_sauvola
from skimage.measure import label, regionprops

from errors import BoundsError, ConfigurationError, ImageFormatError
from models import BinarizationMethod
from schemas import ComponentStats, ConnectedComponent, ImagingConfig, PatchGeometry

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class DocumentImage:
    pixels: np.ndarray  # (height, width) float64 in [0, 1]
    source_id: str

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryImage:
    mask: np.ndarray  # (height, width) bool, True = ink

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray  # (size, size)
    source_id: str
    geometry: PatchGeometry


def make_document(pixels: np.ndarray, source_id: str) -> DocumentImage:
    """Wrap an in-memory array, validating the DocumentImage invariants"""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise ImageFormatError(f"{source_id}: expected a non-empty 2-D grid, got shape {pixels.shape}")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ImageFormatError(f"{source_id}: intensities must lie in [0, 1]")
    return DocumentImage(pixels=pixels, source_id=source_id)


def load_image(path: Union[str, Path], source_id: Optional[str] = None) -> DocumentImage:
    """
    Load a raster and convert it to luminance in [0, 1]
    """
    path = Path(path)
    source_id = source_id or path.stem
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("1", "L", "P", "RGB", "RGBA", "LA", "CMYK", "YCbCr"):
                arr = np.asarray(img.convert("RGB" if img.mode not in ("1", "L") else "L"), dtype=np.float64)
                scale = 255.0
            elif img.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.float64)
                scale = 65535.0
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64)
                scale = 255.0
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError) as e:
        raise ImageFormatError(f"Cannot decode image {path}: {e}") from e

    if arr.ndim == 3:
        arr = arr[..., :3] @ LUMA_WEIGHTS
    if arr.size == 0:
        raise ImageFormatError(f"Image {path} has zero dimension")
    return make_document(np.clip(arr / scale, 0.0, 1.0), source_id)


def load_labels(path: Union[str, Path]) -> np.ndarray:
    """Read an indexed label PNG (0 background, 1 main-text, 2 side-text)"""
    try:
        with Image.open(path) as img:
            labels = np.asarray(img if img.mode in ("P", "L") else img.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageFormatError(f"Cannot decode label image {path}: {e}") from e
    if labels.max(initial=0) > 2:
        raise ImageFormatError(f"Label image {path} contains values outside {{0, 1, 2}}")
    return labels.copy()


def otsu_level(img: DocumentImage) -> Optional[int]:
    """
    Otsu on the 256-level histogram of the quantized image.
    Returns the highest 8-bit level of the dark class, or None for a constant image.
    """
    levels = np.rint(img.pixels * 255).astype(np.int64)
    lo, hi = int(levels.min()), int(levels.max())
    if lo == hi:
        return None
    counts = np.bincount(levels.ravel() - lo, minlength=hi - lo + 1)
    centers = np.arange(lo, hi + 1, dtype=np.float64)
    return int(round(threshold_otsu(hist=(counts, centers))))


def binarize(img: DocumentImage, cfg: Optional[ImagingConfig] = None) -> BinaryImage:
    """
    Separate ink (dark) from paper. Pixels strictly below the threshold are foreground.
    """
    cfg = cfg or ImagingConfig()
    if cfg.method == BinarizationMethod.SAUVOLA:
        window = cfg.sauvola_window | 1
        thresh = threshold_sauvola(img.pixels, window_size=window, k=cfg.sauvola_k)
        return BinaryImage(mask=img.pixels < thresh)

    level = otsu_level(img)
    if level is None:
        return BinaryImage(mask=np.zeros(img.pixels.shape, dtype=bool))
    # Dark class is every level <= `level`, i.e. strictly below level + 1
    levels = np.rint(img.pixels * 255).astype(np.int64)
    return BinaryImage(mask=levels < level + 1)


def _components_of(mask: np.ndarray, min_area: int) -> List[ConnectedComponent]:
    labelled = label(mask, connectivity=2)
    components = []
    for region in regionprops(labelled):
        if region.area < min_area:
            continue
        min_row, min_col, max_row, max_col = region.bbox
        cy, cx = region.centroid
        components.append(ConnectedComponent(
            bbox=(int(min_col), int(min_row), int(max_col - min_col), int(max_row - min_row)),
            area=int(region.area),
            centroid=(float(cx), float(cy)),
        ))
    return components


def connected_components(bin: BinaryImage, min_area: int = 4) -> List[ConnectedComponent]:
    """8-connected components of the foreground, dropping those smaller than min_area"""
    if min_area < 1:
        raise ConfigurationError("min_area must be >= 1")
    return _components_of(bin.mask, min_area)


def check_region(region: PatchGeometry, width: int, height: int):
    if not region.fits(width, height):
        raise BoundsError(
            f"patch ({region.x}, {region.y}, size {region.size}) exceeds image bounds {width}x{height}"
        )


def stats_from_components(components: List[ConnectedComponent], foreground_count: int) -> ComponentStats:
    if not components:
        return ComponentStats(foreground_count=foreground_count)
    return ComponentStats(
        avg_height=float(np.mean([c.height for c in components])),
        avg_width=float(np.mean([c.width for c in components])),
        component_count=len(components),
        foreground_count=foreground_count,
    )


def component_stats(bin: BinaryImage, region: PatchGeometry, min_area: int = 4) -> ComponentStats:
    """
    Component statistics of one region. Components are labelled on the crop, so a
    component cut by the border counts with its clipped extent.
    """
    check_region(region, bin.width, bin.height)
    crop = bin.mask[region.y:region.y + region.size, region.x:region.x + region.size]
    return stats_from_components(_components_of(crop, min_area), int(crop.sum()))


def estimate_patch_size(docs: Iterable[DocumentImage], cfg: Optional[ImagingConfig] = None) -> int:
    """Four times the mean component height over the whole corpus"""
    cfg = cfg or ImagingConfig()
    heights: List[int] = []
    for doc in docs:
        heights.extend(c.height for c in connected_components(binarize(doc, cfg), cfg.min_area))
    if not heights:
        raise ConfigurationError(
            "No connected components found in the corpus; set the patch size explicitly (e.g. 200)"
        )
    size = int(round(4 * float(np.mean(heights))))
    logger.info(f"Estimated patch size {size}px from {len(heights)} components")
    return size


def crop_patch(img: DocumentImage, geom: PatchGeometry) -> Patch:
    check_region(geom, img.width, img.height)
    pixels = img.pixels[geom.y:geom.y + geom.size, geom.x:geom.x + geom.size]
    return Patch(pixels=pixels, source_id=img.source_id, geometry=geom)
