"""
Dataset directory and artifact persistence.

Dataset convention: images/<id>.<ext> and optional labels/<id>.png
(indexed PNG: 0 background, 1 main-text, 2 side-text).
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import yaml
from PIL import Image

from errors import ConfigurationError, DataError
from imaging import DocumentImage, crop_patch, load_image, load_labels
from models import SegLabel
from schemas import ManifestEntry, PairDatasetManifest, SamplerConfig, SplitConfig

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".tif", ".tiff", ".jpg", ".jpeg")
IMAGES_DIR = "images"
LABELS_DIR = "labels"
SPLITS_FILE = "splits.yaml"

# background white, main-text blue, side-text red
LABEL_PALETTE = [255, 255, 255, 0, 70, 200, 220, 40, 40]


PathLike = Union[str, Path]


# Dataset

def list_documents(root: PathLike) -> Dict[str, Path]:
    """Map document id -> image path"""
    images = Path(root) / IMAGES_DIR
    if not images.is_dir():
        raise DataError(f"Dataset root {root} has no '{IMAGES_DIR}/' directory")
    found = {}
    for path in sorted(images.iterdir()):
        if path.suffix.lower() in IMAGE_EXTENSIONS:
            found[path.stem] = path
    return found


def load_documents(root: PathLike, ids: Sequence[str]) -> List[DocumentImage]:
    """Load the given document ids"""
    available = list_documents(root)
    missing = [i for i in ids if i not in available]
    if missing:
        raise DataError(f"Documents not found under {root}: {', '.join(missing)}")
    return [load_image(available[i], source_id=i) for i in ids]


def label_path(root: PathLike, doc_id: str) -> Path:
    return Path(root) / LABELS_DIR / f"{doc_id}.png"


def load_ground_truth(root: PathLike, doc_id: str) -> Optional[np.ndarray]:
    """Ground-truth labels, or None when the document has none"""
    path = label_path(root, doc_id)
    return load_labels(path) if path.exists() else None


def write_document(root: PathLike, doc: DocumentImage, labels: Optional[np.ndarray] = None):
    """Write one page (and its labels) in the dataset convention"""
    root = Path(root)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    save_gray_png(doc.pixels, root / IMAGES_DIR / f"{doc.source_id}.png")
    if labels is not None:
        (root / LABELS_DIR).mkdir(parents=True, exist_ok=True)
        save_label_png(labels, root / LABELS_DIR / f"{doc.source_id}.png")


# Splits

def derive_splits(ids: Sequence[str], fractions=(0.7, 0.15, 0.15), val_count: Optional[int] = None,
                  test_count: Optional[int] = None) -> SplitConfig:
    """
    Deterministic split of sorted ids. Val and test sizes are fixed counts when given,
    otherwise rounded fractions; train takes the rest.
    """
    ids = sorted(ids)
    n = len(ids)
    n_val = val_count if val_count is not None else int(round(n * fractions[1]))
    n_test = test_count if test_count is not None else int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ConfigurationError(f"Cannot split {n} documents into {n_val} val and {n_test} test documents "
                                 f"with at least one left for training")
    return SplitConfig(train=ids[:n_train], val=ids[n_train:n_train + n_val],
                       test=ids[n_train + n_val:], fractions=fractions, val_count=val_count, test_count=test_count)


def split_documents(ids: Sequence[str], splits: SplitConfig) -> SplitConfig:
    return derive_splits(ids, splits.fractions, splits.val_count, splits.test_count)


def check_splits(splits: SplitConfig):
    """Splits must be pairwise disjoint"""
    parts = {"train": set(splits.train), "val": set(splits.val), "test": set(splits.test)}
    names = list(parts)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = parts[a] & parts[b]
            if shared:
                raise ConfigurationError(f"Splits '{a}' and '{b}' share documents: {sorted(shared)}")


def resolve_splits(root: PathLike, splits: SplitConfig) -> SplitConfig:
    """Explicit splits, else splits.yaml in the dataset, else derived from the image list"""
    if splits.train or splits.val or splits.test:
        check_splits(splits)
        return splits
    split_file = Path(root) / SPLITS_FILE
    if split_file.exists():
        resolved = SplitConfig.model_validate(yaml.safe_load(split_file.read_text()) or {})
    else:
        resolved = split_documents(list(list_documents(root)), splits)
    check_splits(resolved)
    return resolved


def write_splits(root: PathLike, splits: SplitConfig):
    """Persist splits beside the dataset"""
    path = Path(root) / SPLITS_FILE
    path.write_text(yaml.safe_dump(splits.model_dump(mode="json"), sort_keys=False))


# Manifest

def write_manifest(manifest: PairDatasetManifest, path: PathLike):
    """One JSON record per line plus a sidecar with counts and the sampler config"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in manifest.entries:
            fh.write(entry.model_dump_json() + "\n")
    meta = {
        "counts": {k.value: v for k, v in manifest.counts.items()},
        "config": manifest.config.model_dump(mode="json"),
    }
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def meta_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def read_manifest(path: PathLike) -> PairDatasetManifest:
    """Inverse of write_manifest"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Manifest {path} does not exist")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(ManifestEntry.model_validate_json(line))
    counts, config = {}, SamplerConfig()
    if meta_path(path).exists():
        meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
        counts = meta.get("counts", {})
        config = SamplerConfig.model_validate(meta.get("config", {}))
    return PairDatasetManifest(entries=entries, counts=counts, config=config)


def materialize_pairs(manifest: PairDatasetManifest, docs: Sequence[DocumentImage], out_dir: PathLike) -> int:
    """Write every pair as <pair_id>_a.png / <pair_id>_b.png"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {d.source_id: d for d in docs}
    for entry in manifest.entries:
        a = crop_patch(by_id[entry.source_id_a], entry.geometry_a)
        b = crop_patch(by_id[entry.source_id_b], entry.geometry_b)
        save_gray_png(a.pixels, out_dir / f"{entry.pair_id:06d}_a.png")
        save_gray_png(b.pixels, out_dir / f"{entry.pair_id:06d}_b.png")
    return len(manifest.entries)


# PNG writers

def save_gray_png(pixels: np.ndarray, path: PathLike):
    """[0, 1] intensities -> 8-bit grayscale PNG"""
    Image.fromarray(np.rint(np.clip(pixels, 0, 1) * 255).astype(np.uint8)).save(path)


def save_label_png(labels: np.ndarray, path: PathLike):
    """Indexed PNG with palette entries 0/1/2"""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    img = Image.frombytes("P", (labels.shape[1], labels.shape[0]), labels.tobytes())
    img.putpalette(LABEL_PALETTE)
    img.save(path)


def save_mask_png(mask: np.ndarray, path: PathLike):
    """Boolean mask -> black/white PNG (white = main-text region)"""
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def save_rgb_png(rgb: np.ndarray, path: PathLike):
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


def colorize_labels(labels: np.ndarray) -> np.ndarray:
    """Label map -> RGB using the label palette"""
    palette = np.asarray(LABEL_PALETTE, dtype=np.uint8).reshape(-1, 3)
    return palette[np.clip(labels, 0, len(SegLabel) - 1)]


def write_resolved_config(config, out_dir: PathLike):
    """Dump the effective configuration beside a command's outputs"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(
        yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False), encoding="utf-8")
