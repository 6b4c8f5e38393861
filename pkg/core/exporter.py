import csv
from io import BytesIO, StringIO
from pathlib import Path
from typing import List, Optional

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from presets.tables import get_ablation_description, get_ablation_name
from .evaluate import EvalReport

CRITERIA_HEADER = ["distance_m", "yaw_deg", "successes", "episodes", "success_rate_pct",
                   "mean_time_s", "final_success_rate_pct"]
EPISODE_HEADER = ["index", "seed", "outcome", "final_distance_m", "final_yaw_deg", "duration_s",
                  "yaw_offset_deg", "first_success_times_s"]


class ReportExporter:
    """Export evaluation reports to CSV tables and a one-page PDF summary"""

    def __init__(self):
        self.accent = colors.HexColor('#5B21B6')
        self.grid = colors.HexColor('#E5E7EB')
        self.stripe = colors.HexColor('#F9FAFB')

    def criteria_rows(self, report: EvalReport) -> List[List[str]]:
        rows = []
        for c in report.criteria:
            rows.append([
                f"{c.distance:g}", f"{c.yaw_deg:g}", str(c.successes), str(report.episodes),
                f"{c.success_rate:.1f}", self._fmt(c.mean_time), f"{c.final_success_rate:.1f}",
            ])
        return rows

    def export_to_csv(self, report: EvalReport) -> str:
        """Criteria table: one row per (distance, yaw) criterion"""
        out = StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CRITERIA_HEADER)
        writer.writerows(self.criteria_rows(report))
        return out.getvalue()

    def export_episodes_to_csv(self, report: EvalReport) -> str:
        out = StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(EPISODE_HEADER)
        for r in report.records:
            writer.writerow([
                r.index, r.seed, r.outcome, f"{r.final_distance:.6f}", f"{r.final_yaw_deg:.4f}",
                f"{r.duration:.2f}", self._fmt(r.yaw_offset_deg),
                ";".join(self._fmt(t) for t in r.first_success_times),
            ])
        return out.getvalue()

    def write_csv(self, report: EvalReport, out_dir) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        criteria_path = out_dir / "criteria.csv"
        episodes_path = out_dir / "episodes.csv"
        criteria_path.write_text(self.export_to_csv(report), encoding="utf-8")
        episodes_path.write_text(self.export_episodes_to_csv(report), encoding="utf-8")
        return [criteria_path, episodes_path]

    def export_to_pdf(self, report: EvalReport, title: str = "Push Policy Evaluation") -> BytesIO:
        """Summary header plus the criteria table"""
        buffer = BytesIO()
        doc = SimpleDocTemplate(
            buffer,
            pagesize=letter,
            rightMargin=50,
            leftMargin=50,
            topMargin=50,
            bottomMargin=50
        )
        styles = getSampleStyleSheet()
        title_style = ParagraphStyle(
            'ReportTitle',
            parent=styles['Heading1'],
            fontSize=22,
            textColor=self.accent,
            spaceAfter=20,
            alignment=TA_CENTER,
            fontName='Helvetica-Bold'
        )
        body_style = ParagraphStyle('ReportBody', parent=styles['BodyText'], fontSize=10, leading=14)

        elements = [Paragraph(self._escape(title), title_style)]
        info = (
            f"<b>Controller:</b> {self._escape(report.controller)}<br/>"
            f"<b>Encoder:</b> {self._escape(report.encoder or 'n/a')}<br/>"
            f"<b>Protocol:</b> {self._escape(report.protocol)}<br/>"
            f"<b>Ablation:</b> {self._escape(get_ablation_name(report.ablation))} "
            f"({self._escape(get_ablation_description(report.ablation))})<br/>"
            f"<b>Episodes:</b> {report.episodes}"
        )
        elements.append(Paragraph(info, body_style))
        elements.append(Spacer(1, 0.3 * inch))

        table = Table([["d (m)", "θ (deg)", "Success", "Episodes", "Rate (%)", "Time (s)", "Final (%)"]]
                      + self.criteria_rows(report))
        table.setStyle(TableStyle([
            ('BACKGROUND', (0, 0), (-1, 0), self.accent),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 10),
            ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
            ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, self.stripe]),
            ('GRID', (0, 0), (-1, -1), 0.5, self.grid),
            ('TOPPADDING', (0, 0), (-1, -1), 6),
            ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
        ]))
        elements.append(table)

        doc.build(elements)
        buffer.seek(0)
        return buffer

    @staticmethod
    def _fmt(value: Optional[float]) -> str:
        return "" if value is None else f"{value:.2f}"

    def _escape(self, text: str) -> str:
        """Escape XML characters for reportlab"""
        if not text:
            return ""
        text = str(text)
        text = text.replace('&', '&amp;')
        text = text.replace('<', '&lt;')
        text = text.replace('>', '&gt;')
        return text
