"""
Dense feature maps: strided sliding-window embeddings and their bilinear densification
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from errors import ImageFormatError, ShapeError
from imaging import DocumentImage
from schemas import SlidingConfig

logger = logging.getLogger(__name__)

FEATURE_MAP_VERSION = 1


def window_positions(length: int, window: int, stride: int) -> np.ndarray:
    """
    Top-left offsets along one axis. When (length - window) is not a multiple of
    stride, one extra window clamped to the far edge is appended.
    """
    if length < window:
        raise ShapeError(f"length {length} is smaller than window {window}")
    positions = list(range(0, length - window + 1, stride))
    if positions[-1] != length - window:
        positions.append(length - window)
    return np.asarray(positions, dtype=np.int64)


@dataclass(frozen=True)
class FeatureMap:
    """
    Strided grid of window embeddings. grid[i, j] is the embedding of the window
    whose top-left corner is (xs[j], ys[i]).
    """
    grid: np.ndarray  # (rows, cols, channels) float32
    xs: np.ndarray
    ys: np.ndarray
    stride: int
    window: int
    target_size: Tuple[int, int]  # (w, h) of the source image

    @property
    def origin(self) -> Tuple[int, int]:
        return int(self.xs[0]), int(self.ys[0])

    @property
    def channels(self) -> int:
        return self.grid.shape[2]

    @property
    def anchors(self) -> Tuple[np.ndarray, np.ndarray]:
        """Window centres in pixel coordinates (x, y)"""
        half = (self.window - 1) / 2.0
        return self.xs + half, self.ys + half


def extract_feature_map(extractor: Callable, img: DocumentImage, cfg: Optional[SlidingConfig] = None,
                        workers: int = 1, progress: bool = False) -> FeatureMap:
    """
    Run the extractor over every window position. `extractor` needs either an
    `embed_batch((N, s, s)) -> (N, d)` method or to be callable on one patch.
    """
    cfg = cfg or SlidingConfig()
    if img.width < cfg.window or img.height < cfg.window:
        raise ShapeError(
            f"{img.source_id}: image {img.width}x{img.height} is smaller than the {cfg.window}px window; "
            f"pad the image to at least {cfg.window}x{cfg.window}"
        )
    input_size = getattr(extractor, "input_size", cfg.window)
    if input_size != cfg.window:
        raise ShapeError(f"window {cfg.window} does not match the extractor input size {input_size}")

    xs = window_positions(img.width, cfg.window, cfg.stride)
    ys = window_positions(img.height, cfg.window, cfg.stride)
    corners = [(y, x) for y in ys for x in xs]
    batches = [corners[i:i + cfg.batch] for i in range(0, len(corners), cfg.batch)]

    def embed(batch: List[Tuple[int, int]]) -> np.ndarray:
        crops = np.stack([img.pixels[y:y + cfg.window, x:x + cfg.window] for y, x in batch])
        if hasattr(extractor, "embed_batch"):
            return np.asarray(extractor.embed_batch(crops), dtype=np.float32)
        return np.stack([np.asarray(extractor(c), dtype=np.float32) for c in crops])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        chunks = list(tqdm(pool.map(embed, batches), total=len(batches), desc=img.source_id,
                           disable=not progress, leave=False))
    features = np.concatenate(chunks, axis=0)
    if not np.all(np.isfinite(features)):
        raise ShapeError(f"{img.source_id}: extractor produced non-finite features")
    grid = features.reshape(len(ys), len(xs), -1)
    logger.debug(f"{img.source_id}: feature grid {grid.shape[0]}x{grid.shape[1]}x{grid.shape[2]}")
    return FeatureMap(grid=grid, xs=xs, ys=ys, stride=cfg.stride, window=cfg.window,
                      target_size=(img.width, img.height))


@dataclass(frozen=True)
class AxisWeights:
    """Per-pixel linear interpolation between two grid indices along one axis"""
    lo: np.ndarray
    hi: np.ndarray
    t: np.ndarray

    @classmethod
    def build(cls, anchors: np.ndarray, length: int) -> "AxisWeights":
        coords = np.arange(length, dtype=np.float64)
        if len(anchors) == 1:
            zeros = np.zeros(length, dtype=np.int64)
            return cls(lo=zeros, hi=zeros, t=np.zeros(length))
        # Clamp outside the anchor hull to the edge values
        clamped = np.clip(coords, anchors[0], anchors[-1])
        hi = np.clip(np.searchsorted(anchors, clamped, side="right"), 1, len(anchors) - 1)
        lo = hi - 1
        t = (clamped - anchors[lo]) / (anchors[hi] - anchors[lo])
        return cls(lo=lo, hi=hi, t=t)


def bilinear(grid: np.ndarray, wy: AxisWeights, wx: AxisWeights,
             rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Interpolated values at pixel positions (rows[n], cols[n]) -> (n, channels)"""
    ty = wy.t[rows][:, None]
    tx = wx.t[cols][:, None]
    r0, r1 = wy.lo[rows], wy.hi[rows]
    c0, c1 = wx.lo[cols], wx.hi[cols]
    top = grid[r0, c0] * (1 - tx) + grid[r0, c1] * tx
    bottom = grid[r1, c0] * (1 - tx) + grid[r1, c1] * tx
    return top * (1 - ty) + bottom * ty


def resize_bilinear(grid: np.ndarray, wy: AxisWeights, wx: AxisWeights) -> np.ndarray:
    """Full-resolution separable bilinear resize of a (rows, cols, channels) grid"""
    g = grid.astype(np.float64)
    ty = wy.t[:, None, None]
    g = g[wy.lo] * (1 - ty) + g[wy.hi] * ty
    tx = wx.t[None, :, None]
    return g[:, wx.lo] * (1 - tx) + g[:, wx.hi] * tx


@dataclass(frozen=True)
class DenseFeatureMap:
    """
    Feature map at image resolution (stride 1). Values are computed on demand
    from the strided grid; `values` materializes the full (h, w, channels) array.
    """
    source: FeatureMap
    wy: AxisWeights
    wx: AxisWeights

    stride = 1

    @property
    def target_size(self) -> Tuple[int, int]:
        return self.source.target_size

    @property
    def shape(self) -> Tuple[int, int, int]:
        w, h = self.target_size
        return h, w, self.source.channels

    @property
    def values(self) -> np.ndarray:
        return resize_bilinear(self.source.grid, self.wy, self.wx)

    def sample(self, rows: np.ndarray, cols: np.ndarray, chunk: int = 8192) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        grid = self.source.grid.astype(np.float64)
        out = np.empty((len(rows), self.source.channels), dtype=np.float64)
        for start in range(0, len(rows), chunk):
            sl = slice(start, start + chunk)
            out[sl] = bilinear(grid, self.wy, self.wx, rows[sl], cols[sl])
        return out

    def map_grid(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """
        Apply a per-vector affine map to the grid, then densify. Equal to applying
        it to every dense vector because the bilinear weights sum to one.
        """
        return resize_bilinear(fn(self.source.grid.astype(np.float64)), self.wy, self.wx)


def densify(fmap: FeatureMap) -> DenseFeatureMap:
    ax, ay = fmap.anchors
    w, h = fmap.target_size
    return DenseFeatureMap(source=fmap, wy=AxisWeights.build(ay, h), wx=AxisWeights.build(ax, w))


# --- Persistence ---

def save_feature_map(fmap: FeatureMap, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": FEATURE_MAP_VERSION,
        "dims": list(fmap.grid.shape),
        "stride": fmap.stride,
        "window": fmap.window,
        "origin": list(fmap.origin),
        "target_size": list(fmap.target_size),
        "dtype": str(fmap.grid.dtype),
    }
    with open(path, "wb") as fh:
        np.savez_compressed(fh, header=np.array(json.dumps(header)), grid=fmap.grid, xs=fmap.xs, ys=fmap.ys)


def load_feature_map(path: Union[str, Path]) -> FeatureMap:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            grid, xs, ys = data["grid"], data["xs"], data["ys"]
    except (OSError, KeyError, ValueError) as e:
        raise ImageFormatError(f"Cannot read feature map {path}: {e}") from e
    if header.get("version") != FEATURE_MAP_VERSION:
        raise ImageFormatError(f"Feature map {path} has unsupported version {header.get('version')}")
    if list(grid.shape) != header["dims"]:
        raise ShapeError(f"Feature map {path}: grid shape {grid.shape} does not match header {header['dims']}")
    return FeatureMap(grid=grid, xs=xs, ys=ys, stride=header["stride"], window=header["window"],
                      target_size=tuple(header["target_size"]))
