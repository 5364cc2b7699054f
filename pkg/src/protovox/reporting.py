"""Result tables as fixed-width text and delimited records.

Every rate renders with four decimals; absent cells render as an em dash
so absence never reads as zero. Layout follows the usual one-label-column,
speakers-across-the-top shape.
"""

from __future__ import annotations

from dataclasses import dataclass

ABSENT = "—"


@dataclass(frozen=True)
class ReportTable:
    label_header: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float | None, ...]], ...]
    title: str = ""


def _cell(value: float | None) -> str:
    return ABSENT if value is None else f"{value:.4f}"


def render_fixed_width(table: ReportTable) -> str:
    label_width = max(
        [len(table.label_header)] + [len(label) for label, _ in table.rows]
    )
    formatted = [
        [_cell(v) for v in values] for _, values in table.rows
    ]
    widths = [
        max([len(col)] + [len(row[i]) for row in formatted])
        for i, col in enumerate(table.columns)
    ]
    lines = []
    if table.title:
        lines.append(table.title)
    header = table.label_header.ljust(label_width)
    for col, w in zip(table.columns, widths):
        header += "  " + col.rjust(w)
    lines.append(header)
    lines.append("-" * len(header))
    for (label, _), cells in zip(table.rows, formatted):
        line = label.ljust(label_width)
        for cell, w in zip(cells, widths):
            line += "  " + cell.rjust(w)
        lines.append(line)
    return "\n".join(lines) + "\n"


def render_delimited(table: ReportTable, sep: str = "\t") -> str:
    lines = [sep.join((table.label_header,) + table.columns)]
    for label, values in table.rows:
        lines.append(sep.join([label] + [_cell(v) for v in values]))
    return "\n".join(lines) + "\n"


def render_report(tables: list[ReportTable] | ReportTable) -> dict[str, str]:
    """Render tables to both formats, concatenated with blank-line separators."""
    if isinstance(tables, ReportTable):
        tables = [tables]
    return {
        "fixed": "\n".join(render_fixed_width(t) for t in tables),
        "delimited": "\n".join(render_delimited(t) for t in tables),
    }


# -- builders for the three experiment shapes -------------------------------------


def sweep_table(result, label_prefix: str = "ASR") -> ReportTable:
    """Ratio-ladder WER table: one row per ratio, one column per speaker."""
    speakers = tuple(sorted({s for cells in result.wer.values() for s in cells}))
    rows = []
    for ratio in result.ratios:
        label = f"{label_prefix} + {round(ratio * 100)}%"
        cells = result.wer.get(ratio, {})
        rows.append((label, tuple(cells.get(s) for s in speakers)))
    return ReportTable(
        label_header="Training Setting",
        columns=speakers,
        rows=tuple(rows),
        title="WER by augmentation ratio",
    )


def substitution_table(result) -> ReportTable:
    """Adaptation-condition table: WER and PER means plus per-speaker WER."""
    speakers = tuple(sorted({s for cells in result.wer.values() for s in cells}))
    rows = []
    for condition in result.CONDITIONS:
        wer_cells = result.wer.get(condition, {})
        per_cells = result.per.get(condition, {})
        mean_wer = result.mean_wer(condition) if wer_cells else None
        mean_per = result.mean_per(condition) if per_cells else None
        rows.append(
            (condition, (mean_wer, mean_per) + tuple(wer_cells.get(s) for s in speakers))
        )
    return ReportTable(
        label_header="Condition",
        columns=("mean WER", "mean PER") + speakers,
        rows=tuple(rows),
        title="Recognizer adaptation: real vs synthetic training data",
    )


def similarity_table(
    method_rows: list[tuple[str, dict[str, float | None]]],
    speakers: tuple[str, ...],
) -> ReportTable:
    """Speaker-similarity table: one row per method, one column per speaker."""
    rows = tuple(
        (label, tuple(cells.get(s) for s in speakers)) for label, cells in method_rows
    )
    return ReportTable(
        label_header="Method",
        columns=speakers,
        rows=rows,
        title="Speaker similarity of reconstructions (mean cosine)",
    )


# -- machine-readable per-cell records ---------------------------------------------


def sweep_records(result, sep: str = "\t") -> str:
    lines = [sep.join(("ratio", "speaker", "wer"))]
    for ratio in result.ratios:
        for speaker, wer in sorted(result.wer.get(ratio, {}).items()):
            lines.append(sep.join((f"{ratio:.1f}", speaker, f"{wer:.4f}")))
    return "\n".join(lines) + "\n"


def substitution_records(result, sep: str = "\t") -> str:
    lines = [sep.join(("condition", "speaker", "wer", "per"))]
    for condition in result.CONDITIONS:
        wer_cells = result.wer.get(condition, {})
        per_cells = result.per.get(condition, {})
        for speaker in sorted(wer_cells):
            lines.append(
                sep.join(
                    (
                        condition,
                        speaker,
                        _cell(wer_cells.get(speaker)),
                        _cell(per_cells.get(speaker)),
                    )
                )
            )
    return "\n".join(lines) + "\n"
