import csv
import logging
from datetime import datetime
from io import BytesIO
from pathlib import Path
from typing import Optional, Sequence, Union

from reportlab.lib import colors
from reportlab.lib.pagesizes import landscape, letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import KeepTogether, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from models.schemas import EpochLoss, EvalReport
from services.evaluation_service import selection_fractions

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Column order of the benchmark table; unknown categories follow alphabetically.
CATEGORY_ORDER = ["no_noise", "small_noise", "middle_noise", "large_noise", "gradient", "stripes"]
HEADER_COLOR = "#AEB877"
ROW_COLORS = ("#FFFBB1", "#D8E983")


def _ordered_categories(reports: Sequence[EvalReport]) -> list[str]:
    seen = {c for r in reports for c in r.per_category}
    known = [c for c in CATEGORY_ORDER if c in seen]
    return known + sorted(seen - set(known))


class ExportService:
    def __init__(self):
        self.styles = getSampleStyleSheet()
        self._setup_custom_styles()

    def _setup_custom_styles(self):
        self.styles.add(ParagraphStyle(
            name='ReportTitle',
            parent=self.styles['Heading1'],
            fontSize=20,
            spaceAfter=20,
            alignment=1,  # Center
            textColor=colors.HexColor(HEADER_COLOR)
        ))
        self.styles.add(ParagraphStyle(
            name='SectionHeading',
            parent=self.styles['Heading2'],
            fontSize=14,
            spaceBefore=16,
            spaceAfter=8,
            textColor=colors.HexColor(HEADER_COLOR)
        ))
        self.styles.add(ParagraphStyle(
            name='TableCell',
            parent=self.styles['Normal'],
            fontSize=8,
            leading=9,
            textColor=colors.HexColor('#374151'),
            wordWrap='LTR'
        ))
        self.styles.add(ParagraphStyle(
            name='TableCellHeader',
            parent=self.styles['Normal'],
            fontSize=8,
            leading=9,
            textColor=colors.white,
            fontName='Helvetica-Bold',
            wordWrap='LTR'
        ))

    # Rows ----------------------------------------------------------------------

    def table_rows(self, reports: Sequence[EvalReport]) -> list[list[str]]:
        """
        Benchmark layout: one row per estimator, one column per category plus
        the average. Without categories the columns are the shapes.
        """
        categories = _ordered_categories(reports)
        if categories:
            header = ["Estimator"] + categories + ["Average", "Excluded"]
            body = [
                [r.estimator]
                + [f"{r.per_category[c]:.2f}" if c in r.per_category else "-" for c in categories]
                + [f"{r.overall_average:.2f}", str(sum(r.exclusions.values()))]
                for r in reports
            ]
        else:
            shapes = sorted({s for r in reports for s in r.per_shape})
            header = ["Estimator"] + shapes + ["Average", "Excluded"]
            body = [
                [r.estimator]
                + [f"{r.per_shape[s]:.2f}" if s in r.per_shape else "-" for s in shapes]
                + [f"{r.overall_average:.2f}", str(sum(r.exclusions.values()))]
                for r in reports
            ]
        return [header] + body

    def scale_rows(self, report: EvalReport) -> list[list[str]]:
        """Points per scale with their share of the row, e.g. `120 (0.40)`."""
        if report.scale_histogram is None:
            return []
        n_scales = len(report.scale_histogram)
        header = ["Category"] + [f"scale {s}" for s in range(n_scales)]
        fractions = selection_fractions(report)
        counts = {**(report.scale_histogram_by_category or {}), "all": report.scale_histogram}
        rows = [header]
        for name, row in counts.items():
            rows.append([name] + [f"{c} ({f:.2f})" for c, f in zip(row, fractions[name])])
        return rows

    # Text ---------------------------------------------------------------------

    def render_table(self, rows: list[list[str]]) -> str:
        if not rows:
            return ""
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = []
        for n, row in enumerate(rows):
            cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def render_text_report(self, reports: Sequence[EvalReport]) -> str:
        """Aligned RMSE table (degrees); exclusion counts are always shown."""
        parts = ["RMSE angle error (degrees)", self.render_table(self.table_rows(reports))]
        for report in reports:
            scale_rows = self.scale_rows(report)
            if scale_rows:
                parts.append(f"\nScale selection ({report.estimator})")
                parts.append(self.render_table(scale_rows))
        return "\n".join(parts) + "\n"

    # Files ------------------------------------------------------------------------

    def write_csv(self, reports: Sequence[EvalReport], path: PathLike) -> None:
        """Long format: estimator, scope, name, rmse_deg, excluded."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["estimator", "scope", "name", "rmse_deg", "excluded"])
            for r in reports:
                for name, rmse in r.per_shape.items():
                    writer.writerow([r.estimator, "shape", name, f"{rmse:.6f}", r.exclusions.get(name, 0)])
                for name, rmse in r.per_category.items():
                    writer.writerow([r.estimator, "category", name, f"{rmse:.6f}", ""])
                writer.writerow([r.estimator, "overall", "average", f"{r.overall_average:.6f}", sum(r.exclusions.values())])
        logger.info("wrote CSV report to %s", path)

    def write_loss_history(self, history: Sequence[EpochLoss], path: PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "L_normal", "L_main", "L_total"])
            for h in history:
                writer.writerow([h.epoch, repr(h.l_normal), repr(h.l_main), repr(h.l_total)])
        logger.info("wrote loss history (%d epochs) to %s", len(history), path)

    def _create_wrapped_cell(self, text, style_name='TableCell'):
        """Create a Paragraph cell that wraps text"""
        if text is None:
            text = '-'
        text = str(text)
        # Escape special characters for ReportLab
        text = text.replace('&', '&amp;').replace('<', '&lt;').replace('>', '&gt;')
        return Paragraph(text, self.styles[style_name])

    def _styled_table(self, rows: list[list[str]], page_width: float, margins: float) -> Table:
        data = [[self._create_wrapped_cell(c, 'TableCellHeader') for c in rows[0]]]
        data += [[self._create_wrapped_cell(c) for c in row] for row in rows[1:]]
        available = page_width - 2 * margins
        # first column holds names
        ratios = [2.0] + [1.0] * (len(rows[0]) - 1)
        col_widths = [available * r / sum(ratios) for r in ratios]
        table = Table(data, colWidths=col_widths, repeatRows=1)
        style_list = [
            ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor(HEADER_COLOR)),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.HexColor('#A5C89E')),
            ('VALIGN', (0, 0), (-1, -1), 'TOP'),
            ('LEFTPADDING', (0, 0), (-1, -1), 4),
            ('RIGHTPADDING', (0, 0), (-1, -1), 4),
        ]
        for i in range(1, len(data)):
            style_list.append(('BACKGROUND', (0, i), (-1, i), colors.HexColor(ROW_COLORS[(i - 1) % 2])))
        table.setStyle(TableStyle(style_list))
        return table

    def create_pdf_report(self, reports: Sequence[EvalReport], title: str = "Normal Estimation Report",
                          generated: Optional[datetime] = None) -> BytesIO:
        buffer = BytesIO()
        page_width = landscape(letter)[0]
        margins = 40
        doc = SimpleDocTemplate(buffer, pagesize=landscape(letter), rightMargin=margins, leftMargin=margins,
                                topMargin=40, bottomMargin=40)
        story = []

        story.append(Paragraph(title, self.styles['ReportTitle']))
        stamp = (generated or datetime.now()).strftime('%B %d, %Y')
        story.append(Paragraph(f"Generated on {stamp}", self.styles['Normal']))
        story.append(Spacer(1, 0.3 * inch))

        story.append(Paragraph("RMSE angle error (degrees)", self.styles['SectionHeading']))
        story.append(KeepTogether(self._styled_table(self.table_rows(reports), page_width, margins)))

        for report in reports:
            scale_rows = self.scale_rows(report)
            if scale_rows:
                story.append(Paragraph(f"Scale selection: {report.estimator}", self.styles['SectionHeading']))
                story.append(KeepTogether(self._styled_table(scale_rows, page_width, margins)))

        doc.build(story)
        buffer.seek(0)
        return buffer

    def write_pdf(self, reports: Sequence[EvalReport], path: PathLike, **kwargs) -> None:
        Path(path).write_bytes(self.create_pdf_report(reports, **kwargs).getvalue())
        logger.info("wrote PDF report to %s", path)


export_service = ExportService()
