"""
Self-labelled pair generation.

Similar pairs come from spatial proximity; different pairs from three statistical
strategies (component size, foreground count, background vs. text).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from errors import ConfigurationError, SamplingError, SamplingExhaustedError, UndefinedStatisticError
from imaging import BinaryImage, DocumentImage, Patch, binarize, component_stats, crop_patch
from models import DIFFERENT_STRATEGIES, PairLabel, PairStrategy
from schemas import (
    ComponentStats,
    ImagingConfig,
    ManifestEntry,
    PairDatasetManifest,
    PatchGeometry,
    SamplerConfig,
)

logger = logging.getLogger(__name__)

NEIGHBOR_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (-1, -1), (0, -1), (1, -1),
    (-1, 0), (1, 0),
    (-1, 1), (0, 1), (1, 1),
)


@dataclass(frozen=True)
class PatchPair:
    patch_a: Patch
    patch_b: Patch
    label: PairLabel
    strategy: PairStrategy
    stats_a: Optional[ComponentStats] = None
    stats_b: Optional[ComponentStats] = None


# --- Similarity scores ---

def similarity_s1(stats1: ComponentStats, stats2: ComponentStats) -> float:
    """min(h1*w1, h2*w2) / max(h1*w1, h2*w2)"""
    if stats1.component_count == 0 or stats2.component_count == 0:
        raise UndefinedStatisticError("s1 is undefined for a patch without components")
    p1 = stats1.avg_height * stats1.avg_width
    p2 = stats2.avg_height * stats2.avg_width
    if p1 <= 0 or p2 <= 0:
        raise UndefinedStatisticError("s1 is undefined for a zero component-size product")
    return min(p1, p2) / max(p1, p2)


def similarity_s2(a1: int, a2: int) -> float:
    """min(a1, a2) / max(a1, a2)"""
    if a1 <= 0 or a2 <= 0:
        raise UndefinedStatisticError("s2 is undefined for a patch without foreground pixels")
    return min(a1, a2) / max(a1, a2)


def background_ratio_test(foreground_count: int, size: int, cfg: SamplerConfig) -> bool:
    return foreground_count / float(size * size) < cfg.bg_foreground_ratio


def is_background_patch(patch: Patch, bin: BinaryImage, cfg: SamplerConfig) -> bool:
    geom = patch.geometry
    count = int(bin.mask[geom.y:geom.y + geom.size, geom.x:geom.x + geom.size].sum())
    return background_ratio_test(count, geom.size, cfg)


def neighbor_geometry(p1: PatchGeometry, offset: Tuple[int, int], perturbation: Tuple[int, int]) -> PatchGeometry:
    """Position of the neighbouring patch before bounds checking"""
    s = p1.size
    return PatchGeometry(
        x=p1.x + offset[0] * s + perturbation[0],
        y=p1.y + offset[1] * s + perturbation[1],
        size=s,
    )


def satisfies_strategy(strategy: PairStrategy, stats_a: ComponentStats, stats_b: ComponentStats,
                       size: int, cfg: SamplerConfig) -> bool:
    """The defining condition of a 'different' strategy, evaluated on patch statistics"""
    bg_a = background_ratio_test(stats_a.foreground_count, size, cfg)
    bg_b = background_ratio_test(stats_b.foreground_count, size, cfg)
    if strategy == PairStrategy.BACKGROUND:
        return bg_a != bg_b
    if bg_a or bg_b:
        return False
    try:
        if strategy == PairStrategy.COMPONENT_SIZE:
            return similarity_s1(stats_a, stats_b) < cfg.s_threshold
        if strategy == PairStrategy.FOREGROUND_COUNT:
            return similarity_s2(stats_a.foreground_count, stats_b.foreground_count) < cfg.s_threshold
    except UndefinedStatisticError:
        return False
    raise ValueError(f"{strategy} is not a 'different' strategy")


class PairSampler:
    """
    Samples labelled patch pairs from a fixed set of documents.
    Binarized masks are computed once and shared by all strategies.
    """

    def __init__(self, docs: Sequence[DocumentImage], cfg: SamplerConfig,
                 imaging: Optional[ImagingConfig] = None, masks: Optional[Sequence[BinaryImage]] = None):
        if not docs:
            raise ConfigurationError("No documents available for pair sampling")
        self.docs = list(docs)
        self.cfg = cfg
        self.imaging = imaging or ImagingConfig(min_area=cfg.min_area)
        self.masks = list(masks) if masks is not None else [binarize(d, self.imaging) for d in self.docs]
        if len(self.masks) != len(self.docs):
            raise ConfigurationError("One binary mask per document is required")
        self._usable = [i for i, d in enumerate(self.docs)
                        if d.width >= cfg.patch_size and d.height >= cfg.patch_size]
        if not self._usable:
            raise SamplingError(f"No document is at least {cfg.patch_size}px in both dimensions")

    def _stats(self, doc_index: int, geom: PatchGeometry) -> ComponentStats:
        return component_stats(self.masks[doc_index], geom, self.cfg.min_area)

    def _random_geometry(self, doc: DocumentImage, rng: np.random.Generator) -> PatchGeometry:
        s = self.cfg.patch_size
        return PatchGeometry(x=int(rng.integers(0, doc.width - s + 1)),
                             y=int(rng.integers(0, doc.height - s + 1)), size=s)

    def _pair(self, doc_index: int, ga: PatchGeometry, gb: PatchGeometry, strategy: PairStrategy,
              stats_a: Optional[ComponentStats] = None, stats_b: Optional[ComponentStats] = None) -> PatchPair:
        doc = self.docs[doc_index]
        return PatchPair(
            patch_a=crop_patch(doc, ga),
            patch_b=crop_patch(doc, gb),
            label=strategy.label,
            strategy=strategy,
            stats_a=stats_a if stats_a is not None else self._stats(doc_index, ga),
            stats_b=stats_b if stats_b is not None else self._stats(doc_index, gb),
        )

    def sample_neighbor(self, rng: np.random.Generator, doc_index: Optional[int] = None) -> PatchPair:
        s = self.cfg.patch_size
        q = int(s * self.cfg.perturb_fraction)
        candidates = [i for i in self._usable
                      if self.docs[i].width >= 2 * s + q and self.docs[i].height >= 2 * s + q]
        if doc_index is None:
            if not candidates:
                raise SamplingError(
                    f"No document can host two adjacent {s}px patches with a {q}px perturbation margin"
                )
            doc_index = candidates[int(rng.integers(0, len(candidates)))]
        elif doc_index not in candidates:
            raise SamplingError(f"Document {self.docs[doc_index].source_id} is too small for neighbour sampling")
        doc = self.docs[doc_index]

        offset = NEIGHBOR_OFFSETS[int(rng.integers(0, len(NEIGHBOR_OFFSETS)))]
        perturbation = (int(rng.integers(-q, q + 1)), int(rng.integers(-q, q + 1)))
        # p1 is drawn uniformly from the positions that keep p2 inside the page
        dx = offset[0] * s + perturbation[0]
        dy = offset[1] * s + perturbation[1]
        x_lo, x_hi = max(0, -dx), min(doc.width - s, doc.width - s - dx)
        y_lo, y_hi = max(0, -dy), min(doc.height - s, doc.height - s - dy)
        p1 = PatchGeometry(x=int(rng.integers(x_lo, x_hi + 1)), y=int(rng.integers(y_lo, y_hi + 1)), size=s)
        p2 = neighbor_geometry(p1, offset, perturbation)
        return self._pair(doc_index, p1, p2, PairStrategy.PROXIMITY)

    def sample_different(self, strategy: PairStrategy, rng: np.random.Generator) -> PatchPair:
        """Rejection-sample a pair from one document until the strategy's condition holds"""
        if strategy not in DIFFERENT_STRATEGIES:
            raise ValueError(f"{strategy} is not a 'different' strategy")
        s = self.cfg.patch_size
        for _ in range(self.cfg.max_rejections):
            doc_index = self._usable[int(rng.integers(0, len(self._usable)))]
            doc = self.docs[doc_index]
            ga = self._random_geometry(doc, rng)
            gb = self._random_geometry(doc, rng)
            stats_a = self._stats(doc_index, ga)
            stats_b = self._stats(doc_index, gb)
            if satisfies_strategy(strategy, stats_a, stats_b, s, self.cfg):
                return self._pair(doc_index, ga, gb, strategy, stats_a, stats_b)
        raise SamplingExhaustedError(strategy.value, self.cfg.max_rejections)

    def sample(self, strategy: PairStrategy, rng: np.random.Generator) -> PatchPair:
        if strategy == PairStrategy.PROXIMITY:
            return self.sample_neighbor(rng)
        return self.sample_different(strategy, rng)

    def sample_many(self, strategy: PairStrategy, count: int, seed: np.random.SeedSequence,
                    progress: bool = False) -> List[PatchPair]:
        rng = np.random.default_rng(seed)
        pairs = []
        for _ in tqdm(range(count), desc=strategy.value, disable=not progress, leave=False):
            pairs.append(self.sample(strategy, rng))
        return pairs


# --- Spec-level operations ---

def sample_neighbor_pair(doc: DocumentImage, cfg: SamplerConfig, rng: np.random.Generator) -> PatchPair:
    return PairSampler([doc], cfg).sample_neighbor(rng, doc_index=0)


def sample_component_size_pair(docs: Sequence[DocumentImage], cfg: SamplerConfig,
                               rng: np.random.Generator) -> PatchPair:
    return PairSampler(docs, cfg).sample_different(PairStrategy.COMPONENT_SIZE, rng)


def sample_foreground_pair(docs: Sequence[DocumentImage], cfg: SamplerConfig,
                           rng: np.random.Generator) -> PatchPair:
    return PairSampler(docs, cfg).sample_different(PairStrategy.FOREGROUND_COUNT, rng)


def sample_background_pair(docs: Sequence[DocumentImage], cfg: SamplerConfig,
                           rng: np.random.Generator) -> PatchPair:
    return PairSampler(docs, cfg).sample_different(PairStrategy.BACKGROUND, rng)


def strategy_counts(total: int) -> Dict[PairStrategy, int]:
    """Half proximity; the other half split across the 'different' strategies (remainder to the first ones)"""
    if total <= 0 or total % 2:
        raise ConfigurationError(f"total pair count must be a positive even number, got {total}")
    half = total // 2
    base, extra = divmod(half, len(DIFFERENT_STRATEGIES))
    counts = {PairStrategy.PROXIMITY: half}
    for i, strategy in enumerate(DIFFERENT_STRATEGIES):
        counts[strategy] = base + (1 if i < extra else 0)
    return counts


def build_pair_dataset(docs: Sequence[DocumentImage], total: int, cfg: SamplerConfig,
                       rng: Union[np.random.SeedSequence, int, None] = None, workers: int = 1,
                       imaging: Optional[ImagingConfig] = None, progress: bool = False) -> PairDatasetManifest:
    """
    Build a balanced manifest. Each strategy samples from its own child seed, so
    the result does not depend on the number of workers.
    """
    counts = strategy_counts(total)
    sampler = PairSampler(docs, cfg, imaging=imaging)
    if isinstance(rng, np.random.SeedSequence):
        root = rng
    else:
        root = np.random.SeedSequence(cfg.rng_seed if rng is None else int(rng))
    seeds = dict(zip(counts, root.spawn(len(counts))))

    def run(strategy: PairStrategy) -> List[PatchPair]:
        logger.info(f"Sampling {counts[strategy]} '{strategy.value}' pairs")
        try:
            return sampler.sample_many(strategy, counts[strategy], seeds[strategy], progress=progress)
        except SamplingExhaustedError:
            logger.error(f"Pair sampling failed for strategy '{strategy.value}'")
            raise

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, counts))

    entries = []
    for pairs in results:
        for pair in pairs:
            entries.append(ManifestEntry(
                pair_id=len(entries),
                label=pair.label,
                strategy=pair.strategy,
                source_id_a=pair.patch_a.source_id,
                source_id_b=pair.patch_b.source_id,
                geometry_a=pair.patch_a.geometry,
                geometry_b=pair.patch_b.geometry,
                stats_a=pair.stats_a,
                stats_b=pair.stats_b,
            ))
    manifest = PairDatasetManifest(entries=entries, counts=counts, config=cfg)
    logger.info("Pair dataset: " + ", ".join(f"{k.value}={v}" for k, v in counts.items()))
    return manifest


def audit_manifest(manifest: PairDatasetManifest, docs: Sequence[DocumentImage],
                   imaging: Optional[ImagingConfig] = None) -> List[int]:
    """
    Recompute every entry's statistics from its geometries and return the ids of
    pairs whose strategy condition no longer holds.
    """
    cfg = manifest.config
    imaging = imaging or ImagingConfig(min_area=cfg.min_area)
    by_id = {d.source_id: d for d in docs}
    masks: Dict[str, BinaryImage] = {}
    failures = []
    for entry in manifest.entries:
        for sid in (entry.source_id_a, entry.source_id_b):
            if sid not in masks:
                if sid not in by_id:
                    raise ConfigurationError(f"Manifest references unknown document '{sid}'")
                masks[sid] = binarize(by_id[sid], imaging)
        stats_a = component_stats(masks[entry.source_id_a], entry.geometry_a, cfg.min_area)
        stats_b = component_stats(masks[entry.source_id_b], entry.geometry_b, cfg.min_area)

        if entry.strategy == PairStrategy.PROXIMITY:
            ok = entry.label == PairLabel.SIMILAR and proximity_holds(entry.geometry_a, entry.geometry_b, cfg)
        else:
            ok = entry.label == PairLabel.DIFFERENT and satisfies_strategy(
                entry.strategy, stats_a, stats_b, entry.geometry_a.size, cfg)
        if not ok or stats_a != entry.stats_a or stats_b != entry.stats_b:
            failures.append(entry.pair_id)
    if failures:
        logger.warning(f"Manifest audit: {len(failures)} of {len(manifest.entries)} pairs failed")
    return failures


def proximity_holds(a: PatchGeometry, b: PatchGeometry, cfg: SamplerConfig) -> bool:
    """The displacement matches one of the eight neighbour offsets within the perturbation range"""
    s = a.size
    q = int(s * cfg.perturb_fraction)
    dx, dy = b.x - a.x, b.y - a.y
    for ox, oy in NEIGHBOR_OFFSETS:
        if abs(dx - ox * s) <= q and abs(dy - oy * s) <= q:
            return True
    return False
