from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models import BinarizationMethod, PairLabel, PairStrategy, ThresholdMode


# --- Geometry & statistics ---

class PatchGeometry(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: int = Field(ge=0)
    y: int = Field(ge=0)
    size: int = Field(gt=0)

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.size <= width and self.y + self.size <= height

    @property
    def center(self) -> Tuple[float, float]:
        half = (self.size - 1) / 2
        return self.x + half, self.y + half


class ConnectedComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    bbox: Tuple[int, int, int, int]  # x, y, w, h
    area: int
    centroid: Tuple[float, float]  # x, y

    @property
    def width(self) -> int:
        return self.bbox[2]

    @property
    def height(self) -> int:
        return self.bbox[3]


class ComponentStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    avg_height: float = 0.0
    avg_width: float = 0.0
    component_count: int = 0
    foreground_count: int = 0


# --- Configs ---

class ImagingConfig(BaseModel):
    method: BinarizationMethod = BinarizationMethod.OTSU
    min_area: int = Field(default=4, ge=1)
    sauvola_window: int = 25
    sauvola_k: float = 0.2


class SamplerConfig(BaseModel):
    patch_size: int = Field(default=200, gt=0)
    s_threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    bg_foreground_ratio: float = Field(default=0.01, ge=0.0, lt=0.5)
    perturb_fraction: float = Field(default=0.25, ge=0.0)
    max_rejections: int = Field(default=10000, ge=1)
    min_area: int = Field(default=4, ge=1)
    rng_seed: int = 0


class TrainingConfig(BaseModel):
    learning_rate: float = Field(default=1e-5, gt=0.0)
    optimizer: str = "adam"
    batch_size: int = Field(default=32, ge=1)
    max_epochs: int = Field(default=30, ge=0)
    early_stop_patience: int = Field(default=5, ge=1)
    rng_seed: int = 0


class SlidingConfig(BaseModel):
    window: int = Field(default=200, gt=0)
    stride: int = Field(default=50, gt=0)
    batch: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _stride_within_window(self):
        if self.stride > self.window:
            raise ValueError("stride must not exceed window")
        return self


class SegmentationConfig(BaseModel):
    k: int = Field(default=3, ge=2)
    threshold_mode: ThresholdMode = ThresholdMode.AUTO
    T1: Optional[float] = None
    T2: Optional[float] = None
    max_fit_samples: int = Field(default=100_000, ge=1)
    low_ink_ratio: float = 0.01
    rng_seed: int = 0

    @model_validator(mode="after")
    def _fixed_needs_thresholds(self):
        if self.threshold_mode == ThresholdMode.FIXED and (self.T1 is None or self.T2 is None):
            raise ValueError("fixed threshold mode requires T1 and T2")
        return self


class Rect(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: int = Field(ge=0)
    y: int = Field(ge=0)
    w: int = Field(gt=0)
    h: int = Field(gt=0)

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.x + self.w <= other.x or other.x + other.w <= self.x
            or self.y + self.h <= other.y or other.y + other.h <= self.y
        )


class SynthConfig(BaseModel):
    page_width: int = 1000
    page_height: int = 1200
    main_block: Rect = Rect(x=300, y=120, w=640, h=960)
    margin_blocks: List[Rect] = [Rect(x=30, y=200, w=230, h=700)]
    main_glyph_height: int = 28
    side_glyph_height: int = 10
    glyph_density: float = Field(default=0.8, gt=0.0, le=1.0)
    line_spacing: float = Field(default=1.8, ge=1.2)
    ink_range: Tuple[float, float] = (0.05, 0.25)
    paper_range: Tuple[float, float] = (0.85, 0.95)
    noise_level: float = Field(default=0.02, ge=0.0)
    geometry_jitter: int = Field(default=20, ge=0)
    rng_seed: int = 0


class SplitConfig(BaseModel):
    train: List[str] = []
    val: List[str] = []
    test: List[str] = []
    fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    # fixed val/test sizes override the fractions; train takes the rest
    val_count: Optional[int] = Field(default=None, ge=0)
    test_count: Optional[int] = Field(default=None, ge=0)


class PipelineConfig(BaseModel):
    dataset_root: Optional[str] = None
    output_dir: str = "runs/default"
    splits: SplitConfig = SplitConfig()
    imaging: ImagingConfig = ImagingConfig()
    sampler: SamplerConfig = SamplerConfig()
    total_pairs: int = 60000
    val_pairs: int = 6000
    training: TrainingConfig = TrainingConfig()
    sliding: SlidingConfig = SlidingConfig()
    segmentation: SegmentationConfig = SegmentationConfig()
    synth: SynthConfig = SynthConfig()
    synth_pages: int = 20
    architecture: str = "alexnet_like"
    workers: int = 1


# --- Pair manifest ---

class ManifestEntry(BaseModel):
    pair_id: int
    label: PairLabel
    strategy: PairStrategy
    source_id_a: str
    source_id_b: str
    geometry_a: PatchGeometry
    geometry_b: PatchGeometry
    stats_a: ComponentStats
    stats_b: ComponentStats


class PairDatasetManifest(BaseModel):
    entries: List[ManifestEntry] = []
    counts: Dict[PairStrategy, int] = {}
    config: SamplerConfig = SamplerConfig()

    @property
    def source_ids(self) -> set:
        ids = set()
        for entry in self.entries:
            ids.add(entry.source_id_a)
            ids.add(entry.source_id_b)
        return ids

    def label_counts(self) -> Dict[PairLabel, int]:
        counts = {PairLabel.SIMILAR: 0, PairLabel.DIFFERENT: 0}
        for entry in self.entries:
            counts[entry.label] += 1
        return counts


# --- Training history ---

class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: Optional[float] = None


class TrainingHistory(BaseModel):
    epochs: List[EpochRecord] = []
    best_epoch: Optional[int] = None

    @property
    def best_val_loss(self) -> Optional[float]:
        if self.best_epoch is None:
            return None
        return next(r.val_loss for r in self.epochs if r.epoch == self.best_epoch)


# --- Evaluation ---

class ClassCounts(BaseModel):
    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn)


class ConfusionCounts(BaseModel):
    main: ClassCounts = ClassCounts()
    side: ClassCounts = ClassCounts()

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(main=self.main + other.main, side=self.side + other.side)


class ClassScores(BaseModel):
    precision: float
    recall: float
    f_measure: float


class DocumentScores(BaseModel):
    doc_id: str
    counts: ConfusionCounts
    main: ClassScores
    side: ClassScores


class BaselineRow(BaseModel):
    method: str
    main_f: float
    side_f: float


class FMeasureReport(BaseModel):
    averaging: str = "micro (pooled pixel counts over foreground of gt or prediction)"
    documents: List[DocumentScores] = []
    aggregate_counts: ConfusionCounts = ConfusionCounts()
    main: ClassScores = ClassScores(precision=0.0, recall=0.0, f_measure=0.0)
    side: ClassScores = ClassScores(precision=0.0, recall=0.0, f_measure=0.0)
    missing: List[str] = []
    baselines: List[BaselineRow] = []
