"""Schedule visualization as a standalone SVG Gantt chart.

One horizontal lane per layer duplicate, one bar per scheduled set. Pure
string assembly, deterministic for identical input.
"""
from __future__ import annotations

from .mapping import MappingPlan
from .scheduling import Schedule

_LANE_H = 14
_LANE_GAP = 4
_LEFT = 200
_RIGHT = 20
_TOP = 34
_BOTTOM = 30
_CHART_W = 840

_PALETTE = (
    "#4E79A7", "#F28E2B", "#E15759", "#76B7B2", "#59A14F", "#EDC948",
    "#B07AA1", "#FF9DA7", "#9C755F", "#BAB0AC",
)


def _fmt(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".")


def emit_gantt(schedule: Schedule, mapping: MappingPlan | None = None,
               title: str = "") -> str:
    lanes: list[tuple[str, int]] = []
    lane_index: dict[tuple[str, int], int] = {}
    lane_pes: dict[tuple[str, int], str] = {}
    for entry in schedule.entries:
        key = (entry.origin, entry.duplicate)
        if key not in lane_index:
            lane_index[key] = len(lanes)
            lanes.append(key)
            if mapping and entry.node in mapping.layers:
                lm = mapping.layers[entry.node]
                lane_pes[key] = f" [pe {lm.pe_start}..{lm.pe_end - 1}]"

    span = max(schedule.makespan, 1)
    height = _TOP + _BOTTOM + max(len(lanes), 1) * (_LANE_H + _LANE_GAP)
    width = _LEFT + _CHART_W + _RIGHT
    scale = _CHART_W / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="Helvetica, Arial, sans-serif" font-size="10">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{_LEFT}" y="16" font-size="12">{title or "schedule"}</text>',
    ]

    # cycle axis with ~8 ticks
    axis_y = height - _BOTTOM + 6
    tick = max(1, span // 8)
    parts.append(
        f'<line x1="{_LEFT}" y1="{axis_y}" x2="{_LEFT + _CHART_W}" y2="{axis_y}" '
        f'stroke="#555" stroke-width="1"/>'
    )
    t = 0
    while t <= span:
        x = _LEFT + t * scale
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{axis_y}" x2="{_fmt(x)}" y2="{axis_y + 4}" '
            f'stroke="#555"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{axis_y + 16}" text-anchor="middle">{t}</text>'
        )
        t += tick
    parts.append(
        f'<text x="{_LEFT + _CHART_W}" y="{axis_y + 16}" text-anchor="end" '
        f'fill="#555">cycles</text>'
    )

    for (origin, dup), idx in lane_index.items():
        y = _TOP + idx * (_LANE_H + _LANE_GAP)
        label = origin if dup == 0 else f"{origin} #{dup}"
        label += lane_pes.get((origin, dup), "")
        parts.append(
            f'<text x="{_LEFT - 6}" y="{y + _LANE_H - 3}" text-anchor="end">{label}</text>'
        )
        parts.append(
            f'<line x1="{_LEFT}" y1="{y + _LANE_H}" x2="{_LEFT + _CHART_W}" '
            f'y2="{y + _LANE_H}" stroke="#eee"/>'
        )

    for entry in schedule.entries:
        idx = lane_index[(entry.origin, entry.duplicate)]
        y = _TOP + idx * (_LANE_H + _LANE_GAP)
        x = _LEFT + entry.start * scale
        w = max((entry.end - entry.start) * scale, 0.5)
        color = _PALETTE[idx % len(_PALETTE)]
        parts.append(
            f'<rect x="{_fmt(x)}" y="{y}" width="{_fmt(w)}" height="{_LANE_H - 2}" '
            f'fill="{color}" stroke="white" stroke-width="0.4">'
            f"<title>{entry.node} set {entry.set_index} "
            f"[{entry.start}, {entry.end})</title></rect>"
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
