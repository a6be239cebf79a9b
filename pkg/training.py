"""
Siamese training engine, branch feature extractor and checkpoints
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from errors import CheckpointError, ConfigurationError, DivergenceError, IncompatibleCheckpointError, ShapeError
from imaging import DocumentImage, Patch, crop_patch
from models import BranchArchitecture, SiameseModel
from pairgen import PatchPair
from schemas import EpochRecord, PairDatasetManifest, TrainingConfig, TrainingHistory

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pageseg-checkpoint"
CHECKPOINT_VERSION = 1

PatchLike = Union[Patch, np.ndarray]


def _as_tensor(pixels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))


def patch_tensor(patch: PatchLike) -> torch.Tensor:
    """(size, size) intensities -> (1, 1, size, size) float tensor"""
    pixels = patch.pixels if isinstance(patch, Patch) else patch
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeError(f"patch must be a square 2-D grid, got shape {pixels.shape}")
    return _as_tensor(pixels)[None, None]


def branch_forward(model: SiameseModel, patch: PatchLike) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        with torch.inference_mode():
            param = next(model.parameters())
            out = model.branch(patch_tensor(patch).to(param.device, param.dtype))
    finally:
        model.train(was_training)
    return out[0].cpu().numpy()


def pair_forward(model: SiameseModel, pair: PatchPair) -> float:
    """Predicted probability that the pair is 'different' (label 1)"""
    was_training = model.training
    model.eval()
    try:
        with torch.inference_mode():
            param = next(model.parameters())
            x1 = patch_tensor(pair.patch_a).to(param.device, param.dtype)
            x2 = patch_tensor(pair.patch_b).to(param.device, param.dtype)
            logit = model(x1, x2)
    finally:
        model.train(was_training)
    return float(torch.sigmoid(logit.double())[0])


def pair_loss(model: SiameseModel, x1: torch.Tensor, x2: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy of the pair logits against 0/1 labels"""
    return nn.functional.binary_cross_entropy_with_logits(model(x1, x2), labels.to(x1.dtype))


class PairDataset(Dataset):
    """Re-crops manifest pairs from their source documents"""

    def __init__(self, manifest: PairDatasetManifest, docs: Mapping[str, DocumentImage]):
        missing = manifest.source_ids - set(docs)
        if missing:
            raise ConfigurationError(f"Manifest references unknown documents: {sorted(missing)}")
        self.entries = manifest.entries
        self.docs = docs

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int):
        entry = self.entries[index]
        a = crop_patch(self.docs[entry.source_id_a], entry.geometry_a).pixels
        b = crop_patch(self.docs[entry.source_id_b], entry.geometry_b).pixels
        return _as_tensor(a)[None], _as_tensor(b)[None], torch.tensor(float(entry.label.value))


class SiameseTrainer:
    """
    ADAM on binary cross-entropy with early stopping on validation loss.
    Keeps the parameters of the best validation epoch.
    """

    def __init__(self, cfg: TrainingConfig, device: str = "cpu", progress: bool = False):
        self.cfg = cfg
        self.device = torch.device(device)
        self.progress = progress

    def _loader(self, dataset: PairDataset, shuffle: bool) -> DataLoader:
        generator = torch.Generator()
        generator.manual_seed(self.cfg.rng_seed)
        return DataLoader(dataset, batch_size=self.cfg.batch_size, shuffle=shuffle, generator=generator)

    def _optimizer(self, model: SiameseModel) -> torch.optim.Optimizer:
        if self.cfg.optimizer.lower() != "adam":
            raise ConfigurationError(f"Unsupported optimizer '{self.cfg.optimizer}'")
        return torch.optim.Adam(model.parameters(), lr=self.cfg.learning_rate)

    def run_epoch(self, model: SiameseModel, loader: DataLoader, optimizer: torch.optim.Optimizer) -> float:
        model.train()
        total, seen = 0.0, 0
        for x1, x2, labels in loader:
            x1, x2, labels = x1.to(self.device), x2.to(self.device), labels.to(self.device)
            optimizer.zero_grad()
            loss = pair_loss(model, x1, x2, labels)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(labels)
            seen += len(labels)
        return total / max(seen, 1)

    def evaluate(self, model: SiameseModel, loader: DataLoader) -> Tuple[float, float]:
        """Mean loss and accuracy at probability 0.5"""
        model.eval()
        total, correct, seen = 0.0, 0, 0
        with torch.no_grad():
            for x1, x2, labels in loader:
                x1, x2, labels = x1.to(self.device), x2.to(self.device), labels.to(self.device)
                logits = model(x1, x2)
                total += float(nn.functional.binary_cross_entropy_with_logits(
                    logits, labels, reduction="sum"))
                correct += int(((logits > 0).float() == labels).sum())
                seen += len(labels)
        return total / max(seen, 1), correct / max(seen, 1)

    def fit(self, model: SiameseModel, train_pairs: PairDatasetManifest, val_pairs: PairDatasetManifest,
            docs: Mapping[str, DocumentImage]) -> Tuple[SiameseModel, TrainingHistory]:
        if not train_pairs.entries or not val_pairs.entries:
            raise ConfigurationError("Training and validation manifests must both be non-empty")
        overlap = train_pairs.source_ids & val_pairs.source_ids
        if overlap:
            raise ConfigurationError(f"Train and validation pairs share documents: {sorted(overlap)}")

        history = TrainingHistory()
        if self.cfg.max_epochs == 0:
            return model, history

        torch.manual_seed(self.cfg.rng_seed)
        model.to(self.device)
        train_loader = self._loader(PairDataset(train_pairs, docs), shuffle=True)
        val_loader = self._loader(PairDataset(val_pairs, docs), shuffle=False)
        optimizer = self._optimizer(model)

        best_state: Optional[Dict[str, torch.Tensor]] = None
        best_loss = math.inf
        stale = 0
        for epoch in tqdm(range(1, self.cfg.max_epochs + 1), desc="epochs", disable=not self.progress):
            train_loss = self.run_epoch(model, train_loader, optimizer)
            if not math.isfinite(train_loss):
                raise DivergenceError(epoch, train_loss)
            val_loss, val_acc = self.evaluate(model, val_loader)
            if not math.isfinite(val_loss):
                raise DivergenceError(epoch, val_loss)

            history.epochs.append(EpochRecord(epoch=epoch, train_loss=train_loss,
                                              val_loss=val_loss, val_accuracy=val_acc))
            logger.info(f"Epoch {epoch}: train_loss={train_loss:.4f} val_loss={val_loss:.4f} val_acc={val_acc:.3f}")

            if val_loss < best_loss:
                best_loss = val_loss
                best_state = copy.deepcopy(model.state_dict())
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= self.cfg.early_stop_patience:
                    logger.info(f"Early stopping after epoch {epoch} (best epoch {history.best_epoch})")
                    break

        if best_state is not None:
            model.load_state_dict(best_state)
        model.eval()
        return model, history


def build_model(arch: BranchArchitecture, cfg: TrainingConfig) -> SiameseModel:
    """Fresh model whose initial weights depend only on cfg.rng_seed"""
    torch.manual_seed(cfg.rng_seed)
    return SiameseModel(arch)


def train(model: SiameseModel, train_pairs: PairDatasetManifest, val_pairs: PairDatasetManifest,
          cfg: TrainingConfig, docs: Mapping[str, DocumentImage], device: str = "cpu",
          progress: bool = False) -> Tuple[SiameseModel, TrainingHistory]:
    return SiameseTrainer(cfg, device=device, progress=progress).fit(model, train_pairs, val_pairs, docs)


class FeatureExtractor:
    """
    Standalone copy of one trained branch: patch -> embedding.
    The copy is frozen in inference mode and safe to share between threads.
    """

    def __init__(self, branch: nn.Module, arch: BranchArchitecture):
        self.branch = copy.deepcopy(branch).eval()
        for p in self.branch.parameters():
            p.requires_grad_(False)
        self.arch = arch

    @property
    def input_size(self) -> int:
        return self.arch.input_size

    @property
    def embedding_dim(self) -> int:
        return self.arch.embedding_dim

    def __call__(self, patch: PatchLike) -> np.ndarray:
        param = next(self.branch.parameters())
        with torch.inference_mode():
            out = self.branch(patch_tensor(patch).to(param.device, param.dtype))
        return out[0].cpu().numpy()

    def embed_batch(self, pixels: np.ndarray) -> np.ndarray:
        """(N, size, size) -> (N, embedding_dim)"""
        param = next(self.branch.parameters())
        with torch.inference_mode():
            out = self.branch(_as_tensor(pixels)[:, None].to(param.device, param.dtype))
        return out.cpu().numpy()


def extract_branch(model: SiameseModel) -> FeatureExtractor:
    return FeatureExtractor(model.branch, model.arch)


# --- Checkpoints ---

@dataclass
class Checkpoint:
    model: SiameseModel
    history: TrainingHistory = field(default_factory=TrainingHistory)
    config: Optional[TrainingConfig] = None
    format_version: int = CHECKPOINT_VERSION


def save_checkpoint(model: SiameseModel, history: Optional[TrainingHistory], path: Union[str, Path],
                    config: Optional[TrainingConfig] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "architecture": model.arch.model_dump(mode="json"),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "history": (history or TrainingHistory()).model_dump(mode="json"),
        "config": config.model_dump(mode="json") if config else None,
    }
    torch.save(payload, path)
    logger.info(f"Checkpoint written to {path}")


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a pageseg checkpoint")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"Checkpoint {path} has format version {version}; this build reads version {CHECKPOINT_VERSION}"
        )
    try:
        model = SiameseModel(BranchArchitecture.model_validate(payload["architecture"]))
        model.load_state_dict(payload["state_dict"])
        history = TrainingHistory.model_validate(payload["history"])
        config = TrainingConfig.model_validate(payload["config"]) if payload.get("config") else None
    except Exception as e:
        raise CheckpointError(f"Checkpoint {path} is malformed: {e}") from e
    model.eval()
    return Checkpoint(model=model, history=history, config=config, format_version=version)


def load_checkpoint(path: Union[str, Path]) -> SiameseModel:
    return read_checkpoint(path).model
