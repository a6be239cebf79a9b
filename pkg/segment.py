"""
Main-text / side-text segmentation from a dense feature map via PCA thresholding
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np
from skimage.filters import threshold_otsu
from sklearn.decomposition import PCA

from errors import ShapeError
from featmap import DenseFeatureMap, FeatureMap, densify, extract_feature_map
from imaging import BinaryImage, DocumentImage, binarize
from models import SegLabel, ThresholdMode
from schemas import ImagingConfig, SegmentationConfig, SlidingConfig

logger = logging.getLogger(__name__)

VARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing
    signs: np.ndarray  # (k,) +1 / -1 applied by canonicalization
    degenerate: bool = False
    sign_warning: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def flip(self, index: int) -> "PCAModel":
        components = self.components.copy()
        components[index] *= -1
        signs = self.signs.copy()
        signs[index] *= -1
        return replace(self, components=components, signs=signs)


@dataclass(frozen=True)
class MainTextMask:
    mask: np.ndarray  # (h, w) bool
    thresholds: Tuple[float, float] = (np.inf, np.inf)


@dataclass(frozen=True)
class PageSegmentation:
    labels: np.ndarray  # (h, w) uint8 in {0, 1, 2}


FeatureSource = Union[DenseFeatureMap, np.ndarray]


def _sample_vectors(source: FeatureSource, max_samples: int, seed: int) -> np.ndarray:
    if isinstance(source, np.ndarray):
        vectors = source.reshape(-1, source.shape[-1]).astype(np.float64)
        if len(vectors) > max_samples:
            idx = np.sort(np.random.default_rng(seed).choice(len(vectors), size=max_samples, replace=False))
            vectors = vectors[idx]
        return vectors
    h, w, _ = source.shape
    n = h * w
    if n > max_samples:
        flat = np.sort(np.random.default_rng(seed).choice(n, size=max_samples, replace=False))
    else:
        flat = np.arange(n)
    return source.sample(flat // w, flat % w)


def fit_pca(source: FeatureSource, k: int = 3, max_samples: int = 100_000, seed: int = 0) -> PCAModel:
    """
    Principal axes of the feature vectors. At most `max_samples` positions are
    drawn uniformly (seeded) from a dense map.
    """
    vectors = _sample_vectors(source, max_samples, seed)
    n, d = vectors.shape
    if n < 2:
        raise ShapeError("PCA needs at least two feature vectors")
    n_components = min(k, d, n)
    pca = PCA(n_components=n_components, svd_solver="full").fit(vectors)
    variance = np.clip(pca.explained_variance_, 0.0, None)

    rank = int(np.sum(variance > VARIANCE_TOL * max(variance.max(), VARIANCE_TOL)))
    degenerate = rank < k
    if degenerate:
        logger.warning(f"PCA is degenerate: {rank} non-zero variances for k={k}")
    return PCAModel(
        mean=pca.mean_.copy(),
        components=pca.components_.copy(),
        explained_variance=variance,
        signs=np.ones(n_components),
        degenerate=degenerate,
    )


def window_ink_ratio(fmap: FeatureMap, bin: BinaryImage) -> np.ndarray:
    """Foreground ratio inside every window of the strided grid -> (rows, cols)"""
    integral = np.pad(bin.mask.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    y0, x0 = np.meshgrid(fmap.ys, fmap.xs, indexing="ij")
    y1, x1 = y0 + fmap.window, x0 + fmap.window
    ink = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
    return ink / float(fmap.window * fmap.window)


def canonicalize_signs(pca: PCAModel, fmap: Union[DenseFeatureMap, FeatureMap], bin: BinaryImage,
                       low_ink_ratio: float = 0.01) -> PCAModel:
    """
    Orient every component so that blank (low-ink) windows score at least as high
    as inked windows; denser text then falls below the thresholds.
    """
    grid_map = fmap.source if isinstance(fmap, DenseFeatureMap) else fmap
    ratio = window_ink_ratio(grid_map, bin).ravel()
    low, high = ratio < low_ink_ratio, ratio >= low_ink_ratio
    if not low.any() or not high.any():
        logger.warning("No low-ink (or no inked) windows; principal component signs left unchanged")
        return replace(pca, sign_warning=True)

    vectors = grid_map.grid.reshape(-1, grid_map.channels).astype(np.float64)
    scores = (vectors - pca.mean) @ pca.components.T
    result = replace(pca, sign_warning=False)
    for i in range(pca.k):
        if scores[low, i].mean() < scores[high, i].mean():
            result = result.flip(i)
    return result


def project(pca: PCAModel, source: FeatureSource) -> np.ndarray:
    """
    PC_i(p) = components_i . (feature(p) - mean).
    A dense map gives (k, h, w); an (n, d) array gives (n, k).
    """
    d = pca.mean.shape[0]
    if isinstance(source, DenseFeatureMap):
        if source.source.channels != d:
            raise ShapeError(f"feature map has {source.source.channels} channels, PCA expects {d}")
        maps = source.map_grid(lambda g: (g - pca.mean) @ pca.components.T)
        return np.moveaxis(maps, -1, 0)
    source = np.asarray(source, dtype=np.float64)
    if source.shape[-1] != d:
        raise ShapeError(f"feature vectors have {source.shape[-1]} dimensions, PCA expects {d}")
    return (source - pca.mean) @ pca.components.T


def auto_threshold(values: np.ndarray) -> float:
    """Otsu threshold of a component map; a constant map gives no constraint"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or np.ptp(values) <= 0:
        return np.inf
    return float(threshold_otsu(values.ravel()))


def resolve_thresholds(pc1: np.ndarray, pc2: np.ndarray, cfg: SegmentationConfig) -> Tuple[float, float]:
    if cfg.threshold_mode == ThresholdMode.FIXED:
        return float(cfg.T1), float(cfg.T2)
    return auto_threshold(pc1), auto_threshold(pc2)


def threshold_main_text(pc1: np.ndarray, pc2: np.ndarray, cfg: SegmentationConfig) -> MainTextMask:
    if pc1.shape != pc2.shape:
        raise ShapeError(f"component maps differ in shape: {pc1.shape} vs {pc2.shape}")
    t1, t2 = resolve_thresholds(pc1, pc2, cfg)
    logger.debug(f"Main-text thresholds T1={t1:.4f} T2={t2:.4f}")
    return MainTextMask(mask=(pc1 < t1) & (pc2 < t2), thresholds=(t1, t2))


def assign_labels(mask: MainTextMask, bin: BinaryImage) -> PageSegmentation:
    if mask.mask.shape != bin.mask.shape:
        raise ShapeError(f"mask {mask.mask.shape} and binary image {bin.mask.shape} differ in shape")
    labels = np.zeros(bin.mask.shape, dtype=np.uint8)
    labels[bin.mask & mask.mask] = SegLabel.MAIN_TEXT
    labels[bin.mask & ~mask.mask] = SegLabel.SIDE_TEXT
    return PageSegmentation(labels=labels)


def to_rgb(components: np.ndarray) -> np.ndarray:
    """Min-max normalize each of the first three component maps into R, G, B"""
    h, w = components.shape[1:]
    rgb = np.full((h, w, 3), 128, dtype=np.uint8)
    for c in range(min(3, components.shape[0])):
        channel = components[c]
        lo, hi = channel.min(), channel.max()
        if hi > lo:
            rgb[..., c] = np.rint((channel - lo) / (hi - lo) * 255).astype(np.uint8)
    return rgb


def visualize_pca_rgb(pca: PCAModel, dense: DenseFeatureMap) -> np.ndarray:
    if pca.k < 3:
        raise ShapeError(f"RGB visualization needs 3 components, PCA has {pca.k}")
    return to_rgb(project(pca, dense)[:3])


@dataclass(frozen=True)
class SegmentationResult:
    feature_map: FeatureMap
    pca: PCAModel
    components: np.ndarray  # (k, h, w)
    thresholds: Tuple[float, float]
    mask: MainTextMask
    segmentation: PageSegmentation
    binary: BinaryImage

    @property
    def rgb(self) -> np.ndarray:
        return to_rgb(self.components[:3])


def segment_page(extractor, img: DocumentImage, sliding: Optional[SlidingConfig] = None,
                 cfg: Optional[SegmentationConfig] = None, imaging: Optional[ImagingConfig] = None,
                 workers: int = 1) -> SegmentationResult:
    """Input page -> feature map -> PCA -> main-text mask -> labels"""
    cfg = cfg or SegmentationConfig()
    fmap = extract_feature_map(extractor, img, sliding, workers=workers)
    return segment_feature_map(fmap, img, cfg, imaging)


def segment_feature_map(fmap: FeatureMap, img: DocumentImage, cfg: Optional[SegmentationConfig] = None,
                        imaging: Optional[ImagingConfig] = None) -> SegmentationResult:
    cfg = cfg or SegmentationConfig()
    bin = binarize(img, imaging)
    dense = densify(fmap)
    pca = fit_pca(dense, cfg.k, cfg.max_fit_samples, cfg.rng_seed)
    pca = canonicalize_signs(pca, dense, bin, cfg.low_ink_ratio)
    components = project(pca, dense)

    if pca.k > 1:
        mask = threshold_main_text(components[0], components[1], cfg)
    else:
        # Missing second component: its test is vacuous
        t1 = float(cfg.T1) if cfg.threshold_mode == ThresholdMode.FIXED else auto_threshold(components[0])
        mask = MainTextMask(mask=components[0] < t1, thresholds=(t1, np.inf))
    thresholds = mask.thresholds
    segmentation = assign_labels(mask, bin)
    logger.info(f"{img.source_id}: main-text mask covers {mask.mask.mean():.1%} of the page")
    return SegmentationResult(feature_map=fmap, pca=pca, components=components, thresholds=thresholds,
                              mask=mask, segmentation=segmentation, binary=bin)
