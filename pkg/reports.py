"""
Evaluation reports (CSV, text table, PDF), training-history exports and figures
"""
import csv
import io
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from reportlab.lib import colors  # noqa: E402
from reportlab.lib.pagesizes import letter  # noqa: E402
from reportlab.lib.styles import getSampleStyleSheet  # noqa: E402
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle  # noqa: E402

from evaluation import summary_row  # noqa: E402
from imaging import DocumentImage, crop_patch  # noqa: E402
from schemas import FMeasureReport, PairDatasetManifest, TrainingHistory  # noqa: E402
from segment import SegmentationResult  # noqa: E402
from storage import colorize_labels  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _pct(value: float) -> str:
    return f"{100 * value:.2f}"


def _this_run(report: FMeasureReport) -> List[str]:
    row = summary_row(report)
    return ["This run", f"{row['main_f']:.2f}", f"{row['side_f']:.2f}"]


# --- Evaluation report ---

def generate_report_csv(report: FMeasureReport) -> str:
    """
    Generate CSV evaluation report
    """
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")

    writer.writerow(["Page segmentation evaluation"])
    writer.writerow(["Averaging", report.averaging])
    writer.writerow([])

    writer.writerow(["Document", "Main P", "Main R", "Main F", "Side P", "Side R", "Side F",
                     "Main TP", "Main FP", "Main FN", "Side TP", "Side FP", "Side FN"])
    for doc in report.documents:
        c = doc.counts
        writer.writerow([
            doc.doc_id,
            _pct(doc.main.precision), _pct(doc.main.recall), _pct(doc.main.f_measure),
            _pct(doc.side.precision), _pct(doc.side.recall), _pct(doc.side.f_measure),
            c.main.tp, c.main.fp, c.main.fn, c.side.tp, c.side.fp, c.side.fn,
        ])
    writer.writerow([
        "ALL",
        _pct(report.main.precision), _pct(report.main.recall), _pct(report.main.f_measure),
        _pct(report.side.precision), _pct(report.side.recall), _pct(report.side.f_measure),
    ])
    writer.writerow([])

    writer.writerow(["Method", "Main-text F", "Side-text F"])
    for row in report.baselines:
        writer.writerow([row.method, f"{row.main_f:.2f}", f"{row.side_f:.2f}"])
    writer.writerow(_this_run(report))

    if report.missing:
        writer.writerow([])
        writer.writerow(["Missing predictions"] + list(report.missing))
    return output.getvalue()


def generate_report_table(report: FMeasureReport) -> str:
    """Plain-text comparison table: published methods plus this run"""
    rows = [(row.method, f"{row.main_f:.2f}", f"{row.side_f:.2f}") for row in report.baselines]
    rows.append(tuple(_this_run(report)))
    width = max(len("Method"), *(len(r[0]) for r in rows))

    lines = [
        f"F-measure (%), {report.averaging}",
        f"{'Method':<{width}}  {'Main-text':>9}  {'Side-text':>9}",
        "-" * (width + 22),
    ]
    lines += [f"{m:<{width}}  {a:>9}  {b:>9}" for m, a, b in rows]
    lines.append(f"Documents evaluated: {len(report.documents)}")
    if report.missing:
        lines.append(f"Missing predictions: {', '.join(report.missing)}")
    return "\n".join(lines) + "\n"


def generate_report_pdf(report: FMeasureReport) -> io.BytesIO:
    """
    Generate PDF evaluation report
    """
    buffer = io.BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=letter, invariant=1)
    styles = getSampleStyleSheet()
    elements = []

    elements.append(Paragraph("Page Segmentation Report", styles['Title']))
    elements.append(Paragraph(f"Averaging: {report.averaging}", styles['Normal']))
    elements.append(Spacer(1, 20))

    data = [["Method", "Main-text F (%)", "Side-text F (%)"]]
    data += [[row.method, f"{row.main_f:.2f}", f"{row.side_f:.2f}"] for row in report.baselines]
    data.append(_this_run(report))
    t = Table(data, colWidths=[180, 120, 120])
    t.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
        ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('BOTTOMPADDING', (0, 0), (-1, 0), 12),
        ('BACKGROUND', (0, 1), (-1, -1), colors.beige),
        ('GRID', (0, 0), (-1, -1), 1, colors.black),
    ]))
    elements.append(t)
    elements.append(Spacer(1, 20))

    if report.documents:
        elements.append(Paragraph("Per-document scores", styles['Heading2']))
        doc_data = [["Document", "Main P", "Main R", "Main F", "Side P", "Side R", "Side F"]]
        for d in report.documents:
            doc_data.append([d.doc_id, _pct(d.main.precision), _pct(d.main.recall), _pct(d.main.f_measure),
                             _pct(d.side.precision), _pct(d.side.recall), _pct(d.side.f_measure)])
        t2 = Table(doc_data, colWidths=[120, 60, 60, 60, 60, 60, 60])
        t2.setStyle(TableStyle([
            ('BACKGROUND', (0, 0), (-1, 0), colors.darkblue),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
            ('GRID', (0, 0), (-1, -1), 1, colors.black),
        ]))
        elements.append(t2)

    if report.missing:
        elements.append(Spacer(1, 12))
        elements.append(Paragraph(f"Missing predictions: {', '.join(report.missing)}", styles['Normal']))

    doc.build(elements)
    buffer.seek(0)
    return buffer


def write_reports(report: FMeasureReport, out_dir: PathLike, pdf: bool = True) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(generate_report_csv(report), encoding="utf-8")
    (out_dir / "report.txt").write_text(generate_report_table(report), encoding="utf-8")
    (out_dir / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    if pdf:
        (out_dir / "report.pdf").write_bytes(generate_report_pdf(report).getvalue())
    logger.info(f"Reports written to {out_dir}")
    return out_dir


# --- Training history ---

def generate_history_csv(history: TrainingHistory) -> str:
    """One row per completed epoch"""
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
    for record in history.epochs:
        accuracy = "" if record.val_accuracy is None else f"{record.val_accuracy:.6f}"
        writer.writerow([record.epoch, f"{record.train_loss:.6f}", f"{record.val_loss:.6f}", accuracy])
    return output.getvalue()


def plot_history(history: TrainingHistory, path: PathLike):
    epochs = [r.epoch for r in history.epochs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_loss for r in history.epochs], marker="o", label="train")
    ax.plot(epochs, [r.val_loss for r in history.epochs], marker="o", label="validation")
    if history.best_epoch is not None:
        ax.axvline(history.best_epoch, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("binary cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# --- Figures ---

def pair_gallery(manifest: PairDatasetManifest, docs: Sequence[DocumentImage], path: PathLike,
                 per_strategy: int = 4):
    """One column per pair, grouped by strategy: patch A on top, patch B below"""
    by_id = {d.source_id: d for d in docs}
    chosen = []
    for strategy in manifest.counts or {}:
        picked = [e for e in manifest.entries if e.strategy == strategy][:per_strategy]
        chosen.extend(picked)
    if not chosen:
        chosen = manifest.entries[:per_strategy]
    if not chosen:
        logger.warning("Empty manifest; no pair gallery written")
        return

    fig, axes = plt.subplots(2, len(chosen), figsize=(1.6 * len(chosen), 3.6), squeeze=False)
    for col, entry in enumerate(chosen):
        a = crop_patch(by_id[entry.source_id_a], entry.geometry_a)
        b = crop_patch(by_id[entry.source_id_b], entry.geometry_b)
        for row, patch in enumerate((a, b)):
            ax = axes[row, col]
            ax.imshow(patch.pixels, cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
        axes[0, col].set_title(f"{entry.strategy.value}\n{entry.label.name.lower()}", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def comparison_strip(img: DocumentImage, result: SegmentationResult, path: PathLike,
                     ground_truth: Optional[np.ndarray] = None):
    """Input, PCA-RGB, main-text mask, prediction and (if present) ground truth side by side"""
    panels = [
        ("input", img.pixels, "gray"),
        ("PCA RGB", result.rgb, None),
        ("main-text mask", result.mask.mask, "gray"),
        ("prediction", colorize_labels(result.segmentation.labels), None),
    ]
    if ground_truth is not None:
        panels.append(("ground truth", colorize_labels(ground_truth), None))

    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.6), squeeze=False)
    for ax, (title, data, cmap) in zip(axes[0], panels):
        ax.imshow(data, cmap=cmap)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
