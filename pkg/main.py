"""
pageseg command line: synth -> prepare-pairs -> train -> segment -> evaluate / visualize
"""
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click

import storage
from config import build_architecture, configure_logging, get_settings, load_pipeline_config
from errors import ConfigurationError, DataError, PagesegError
from evaluation import evaluate_corpus
from featmap import save_feature_map
from imaging import DocumentImage, estimate_patch_size, load_image
from models import PairLabel
from pairgen import audit_manifest, build_pair_dataset
from reports import comparison_strip, generate_history_csv, pair_gallery, plot_history, write_reports
from schemas import PipelineConfig, SlidingConfig
from segment import segment_page
from synthdoc import generate_corpus
from training import build_model, extract_branch, load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

PAIRS_DIR = "pairs"
SEGMENT_DIR = "segment"
EVAL_DIR = "eval"
VISUALIZE_DIR = "visualize"
CHECKPOINT_FILE = "model.pt"


# --- Helpers ---

def _config(ctx: click.Context, **overrides) -> PipelineConfig:
    obj = ctx.obj
    merged = dict(obj["overrides"])
    merged.update(overrides)
    return load_pipeline_config(obj["config_path"], merged, settings=obj["settings"])


def _dataset_root(config: PipelineConfig) -> Path:
    if not config.dataset_root:
        raise ConfigurationError("No dataset root: set dataset_root in the config, "
                                 "--dataset-root or PAGESEG_DATASET_ROOT")
    return Path(config.dataset_root)


def _docs_by_id(root: Path, ids: Sequence[str]) -> Dict[str, DocumentImage]:
    return {d.source_id: d for d in storage.load_documents(root, sorted(set(ids)))}


def _sliding_for(config: PipelineConfig, input_size: int) -> SlidingConfig:
    """The window always equals the trained patch size"""
    sliding = config.sliding
    if sliding.window != input_size:
        logger.info(f"Sliding window set to the model input size {input_size}px (config had {sliding.window})")
    return SlidingConfig(window=input_size, stride=min(sliding.stride, input_size), batch=sliding.batch)


def _pages(config: PipelineConfig, images: Sequence[str]) -> List[Tuple[str, Path]]:
    """(doc_id, path) for explicit image paths, else for the test split"""
    if images:
        return [(Path(p).stem, Path(p)) for p in images]
    root = _dataset_root(config)
    splits = storage.resolve_splits(root, config.splits)
    if not splits.test:
        raise ConfigurationError("Test split is empty and no images were given")
    available = storage.list_documents(root)
    # Unknown ids resolve to a missing path and fail per page
    return [(i, available.get(i, root / storage.IMAGES_DIR / f"{i}.png")) for i in splits.test]


def _checkpoint_path(config: PipelineConfig, checkpoint: Optional[str]) -> Path:
    return Path(checkpoint) if checkpoint else Path(config.output_dir) / CHECKPOINT_FILE


# --- CLI ---

@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Pipeline config (YAML)")
@click.option("--dataset-root", default=None, help="Dataset directory (images/, labels/)")
@click.option("--output-dir", default=None, help="Directory for every artifact of this run")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Cap on parallel workers")
@click.option("--seed", type=int, default=None, help="Seed for sampling, training, PCA and synth")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
@click.option("--progress/--no-progress", default=False, help="Show progress bars")
@click.pass_context
def cli(ctx, config_path, dataset_root, output_dir, workers, seed, log_level, progress):
    """Unsupervised main-text / side-text segmentation of handwritten pages."""
    settings = get_settings()
    configure_logging(log_level or settings.log_level)
    overrides = {"dataset_root": dataset_root, "output_dir": output_dir, "workers": workers}
    if seed is not None:
        for section in ("sampler", "training", "segmentation", "synth"):
            overrides[f"{section}.rng_seed"] = seed
    ctx.obj = {"config_path": config_path, "settings": settings, "overrides": overrides, "progress": progress}


@cli.command()
@click.option("--pages", type=int, default=None, help="Number of pages (default from config)")
@click.option("--overwrite", is_flag=True, help="Write into a dataset directory that already has images")
@click.pass_context
def synth(ctx, pages, overwrite):
    """Generate a synthetic dataset with ground truth and splits."""
    config = _config(ctx, synth_pages=pages)
    root = _dataset_root(config)
    images = root / storage.IMAGES_DIR
    if images.is_dir() and any(images.iterdir()) and not overwrite:
        raise ConfigurationError(f"{images} already contains files; pass --overwrite to replace them")

    corpus = generate_corpus(config.synth, config.synth_pages)
    for page in corpus:
        storage.write_document(root, page.image, page.labels)
    splits = storage.split_documents([p.image.source_id for p in corpus], config.splits)
    storage.write_splits(root, splits)
    storage.write_resolved_config(config, config.output_dir)
    click.echo(f"Wrote {len(corpus)} pages to {root} "
               f"(train={len(splits.train)} val={len(splits.val)} test={len(splits.test)})")


@cli.command("prepare-pairs")
@click.option("--total", type=int, default=None, help="Training pairs (even; default from config)")
@click.option("--val-total", type=int, default=None, help="Validation pairs (even; default from config)")
@click.option("--estimate-patch-size", "estimate", is_flag=True, help="Patch size = 4 x mean component height")
@click.option("--materialize", is_flag=True, help="Also write every pair as PNG files")
@click.pass_context
def prepare_pairs(ctx, total, val_total, estimate, materialize):
    """Sample the balanced pair dataset from the train (and val) split."""
    config = _config(ctx, total_pairs=total, val_pairs=val_total)
    root = _dataset_root(config)
    splits = storage.resolve_splits(root, config.splits)
    if not splits.train:
        raise ConfigurationError("Train split is empty")
    train_docs = storage.load_documents(root, splits.train)

    sampler_cfg = config.sampler
    if estimate:
        size = estimate_patch_size(train_docs, config.imaging)
        sampler_cfg = sampler_cfg.model_copy(update={"patch_size": size})
        config = config.model_copy(update={"sampler": sampler_cfg})

    out_dir = Path(config.output_dir) / PAIRS_DIR
    progress = ctx.obj["progress"]
    manifest = build_pair_dataset(train_docs, config.total_pairs, sampler_cfg, workers=config.workers,
                                  imaging=config.imaging, progress=progress)
    failures = audit_manifest(manifest, train_docs, config.imaging)
    if failures:
        raise DataError(f"{len(failures)} sampled pairs fail their strategy condition: {failures[:10]}")
    storage.write_manifest(manifest, out_dir / "train.jsonl")

    for strategy, count in manifest.counts.items():
        click.echo(f"{strategy.value}: {count}")
    labels = manifest.label_counts()
    click.echo(f"similar: {labels[PairLabel.SIMILAR]}  different: {labels[PairLabel.DIFFERENT]}")

    if splits.val and config.val_pairs > 0:
        val_docs = storage.load_documents(root, splits.val)
        val_cfg = sampler_cfg.model_copy(update={"rng_seed": sampler_cfg.rng_seed + 1})
        val_manifest = build_pair_dataset(val_docs, config.val_pairs, val_cfg, workers=config.workers,
                                          imaging=config.imaging, progress=progress)
        storage.write_manifest(val_manifest, out_dir / "val.jsonl")
        click.echo(f"validation pairs: {len(val_manifest.entries)}")
    else:
        logger.warning("No validation split; train will need a validation manifest")

    if materialize:
        written = storage.materialize_pairs(manifest, train_docs, out_dir / "train_png")
        click.echo(f"materialized {written} pairs")
    storage.write_resolved_config(config, out_dir)


@cli.command("train")
@click.option("--epochs", type=int, default=None, help="Maximum epochs (default from config)")
@click.option("--checkpoint", default=None, help="Where to write the checkpoint")
@click.pass_context
def train_cmd(ctx, epochs, checkpoint):
    """Train the siamese network on the prepared pairs."""
    config = _config(ctx, **{"training.max_epochs": epochs})
    root = _dataset_root(config)
    pairs_dir = Path(config.output_dir) / PAIRS_DIR
    train_manifest = storage.read_manifest(pairs_dir / "train.jsonl")
    val_path = pairs_dir / "val.jsonl"
    if not val_path.exists():
        raise ConfigurationError(f"Validation manifest {val_path} is missing; the val split must be non-empty")
    val_manifest = storage.read_manifest(val_path)

    docs = _docs_by_id(root, train_manifest.source_ids | val_manifest.source_ids)
    arch = build_architecture(config.architecture, train_manifest.config.patch_size)
    model = build_model(arch, config.training)
    model, history = train(model, train_manifest, val_manifest, config.training, docs,
                           device=ctx.obj["settings"].device, progress=ctx.obj["progress"])

    out_dir = Path(config.output_dir)
    save_checkpoint(model, history, _checkpoint_path(config, checkpoint), config.training)
    (out_dir / "history.csv").write_text(generate_history_csv(history), encoding="utf-8")
    if history.epochs:
        plot_history(history, out_dir / "loss_curve.png")
    storage.write_resolved_config(config, out_dir)
    click.echo(f"epochs: {len(history.epochs)}  best epoch: {history.best_epoch}  "
               f"best val loss: {history.best_val_loss}")


@cli.command("segment")
@click.argument("images", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--checkpoint", default=None, help="Trained checkpoint (default <output-dir>/model.pt)")
@click.option("--save-features", is_flag=True, help="Also write each strided feature map as <id>_features.npz")
@click.pass_context
def segment_cmd(ctx, images, checkpoint, save_features):
    """Segment pages (default: the test split) into main-text and side-text."""
    config = _config(ctx)
    extractor = extract_branch(load_checkpoint(_checkpoint_path(config, checkpoint)))
    sliding = _sliding_for(config, extractor.input_size)
    out_dir = Path(config.output_dir) / SEGMENT_DIR
    out_dir.mkdir(parents=True, exist_ok=True)

    failed = []
    for doc_id, path in _pages(config, images):
        try:
            img = load_image(path, source_id=doc_id)
            result = segment_page(extractor, img, sliding, config.segmentation, config.imaging,
                                  workers=config.workers)
        except (PagesegError, FileNotFoundError) as e:
            logger.error(f"{doc_id}: {e}")
            failed.append(doc_id)
            continue
        storage.save_rgb_png(result.rgb, out_dir / f"{doc_id}_pca.png")
        storage.save_mask_png(result.mask.mask, out_dir / f"{doc_id}_mask.png")
        storage.save_label_png(result.segmentation.labels, out_dir / f"{doc_id}_seg.png")
        if save_features:
            save_feature_map(result.feature_map, out_dir / f"{doc_id}_features.npz")
        click.echo(f"{doc_id}: T1={result.thresholds[0]:.4f} T2={result.thresholds[1]:.4f}")

    storage.write_resolved_config(config, out_dir)
    if failed:
        raise DataError(f"{len(failed)} page(s) could not be segmented: {', '.join(failed)}")


@cli.command("evaluate")
@click.option("--predictions", default=None, help="Directory of <id>_seg.png files")
@click.option("--pdf/--no-pdf", default=True, help="Also write a PDF report")
@click.pass_context
def evaluate_cmd(ctx, predictions, pdf):
    """Pixel-level F-measure of the test split against ground truth."""
    config = _config(ctx)
    root = _dataset_root(config)
    splits = storage.resolve_splits(root, config.splits)
    pred_dir = Path(predictions) if predictions else Path(config.output_dir) / SEGMENT_DIR

    gts, preds, no_gt = {}, {}, []
    for doc_id in splits.test:
        gt = storage.load_ground_truth(root, doc_id)
        if gt is None:
            logger.warning(f"{doc_id}: no ground truth; excluded")
            no_gt.append(doc_id)
            continue
        gts[doc_id] = gt
        path = pred_dir / f"{doc_id}_seg.png"
        if path.exists():
            preds[doc_id] = storage.load_labels(path)

    report = evaluate_corpus(preds, gts)
    report = report.model_copy(update={"missing": sorted(report.missing + no_gt)})
    out_dir = Path(config.output_dir) / EVAL_DIR
    write_reports(report, out_dir, pdf=pdf)
    storage.write_resolved_config(config, out_dir)
    click.echo((out_dir / "report.txt").read_text(encoding="utf-8"), nl=False)
    if report.missing:
        raise DataError(f"{len(report.missing)} test document(s) not evaluated: {', '.join(report.missing)}")


@cli.command()
@click.argument("images", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--checkpoint", default=None, help="Trained checkpoint (default <output-dir>/model.pt)")
@click.option("--pairs/--no-pairs", default=True, help="Render a gallery of the training pairs")
@click.pass_context
def visualize(ctx, images, checkpoint, pairs):
    """Comparison strips per page and a gallery of sampled pairs."""
    config = _config(ctx)
    out_dir = Path(config.output_dir) / VISUALIZE_DIR
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest_path = Path(config.output_dir) / PAIRS_DIR / "train.jsonl"
    if pairs and manifest_path.exists():
        manifest = storage.read_manifest(manifest_path)
        docs = _docs_by_id(_dataset_root(config), manifest.source_ids)
        pair_gallery(manifest, list(docs.values()), out_dir / "pair_gallery.png")

    extractor = extract_branch(load_checkpoint(_checkpoint_path(config, checkpoint)))
    sliding = _sliding_for(config, extractor.input_size)
    failed = []
    for doc_id, path in _pages(config, images):
        try:
            img = load_image(path, source_id=doc_id)
            result = segment_page(extractor, img, sliding, config.segmentation, config.imaging,
                                  workers=config.workers)
        except (PagesegError, FileNotFoundError) as e:
            logger.error(f"{doc_id}: {e}")
            failed.append(doc_id)
            continue
        gt = storage.load_ground_truth(config.dataset_root, doc_id) if config.dataset_root else None
        comparison_strip(img, result, out_dir / f"{doc_id}_strip.png", ground_truth=gt)
    storage.write_resolved_config(config, out_dir)
    if failed:
        raise DataError(f"{len(failed)} page(s) could not be visualized: {', '.join(failed)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and map failures to exit codes: 1 usage, 2 data, 3 divergence"""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="pageseg", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except PagesegError as e:
        logger.error(str(e))
        click.echo(f"Error: {e}", err=True)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
