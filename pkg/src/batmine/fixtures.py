"""Deterministic ground-truth cycle plots for the digitizer.

Renders fixture specs into raster images plus exact annotation sidecars and
returns the truth series verbatim, so the render -> digitize round trip can be
scored. Tick labels are abstract dark blobs (no fonts, OCR is out of scope);
the numeric tick values live in the annotation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import GraphMetadata
from .digitizer import CycleSeries, PlotAnnotation, PlotImage
from .errors import SpecInvalid

FRAME_COLOR = (0, 0, 0)
BLOB_COLOR = (40, 40, 40)
LABEL_BLOB_COLOR = (60, 60, 60)

# deterministic near-color jitter used when antialias is on; every offset is
# well inside the DBSCAN radius so jittered pixels stay in their cluster
_JITTER = ((4, -3, 2), (-5, 4, -2), (3, 5, -4), (-2, -4, 5), (6, 1, -3), (-4, 2, 4), (2, -5, -5), (-3, 3, 3))


@dataclass(frozen=True)
class FixtureSeries:
    label: str
    rgb: tuple[int, int, int]
    points: tuple[tuple[int, float], ...]
    axis: str = "left"
    in_legend: bool = True


@dataclass
class FixtureSpec:
    name: str
    series: list[FixtureSeries]
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    y_right_range: tuple[float, float] | None = None
    width: int = 640
    height: int = 480
    x_tick_count: int = 6
    y_tick_count: int = 5
    legend_pos: str | None = "ne"
    antialias: bool = False
    expect_ambiguous: bool = False
    seed: int = 0
    provenance: GraphMetadata | None = None

    def validate(self) -> None:
        if not self.series:
            raise SpecInvalid("fixture needs at least one series")
        if self.x_range[0] >= self.x_range[1] or self.y_range[0] >= self.y_range[1]:
            raise SpecInvalid("degenerate axis range")
        if self.y_right_range is not None and self.y_right_range[0] >= self.y_right_range[1]:
            raise SpecInvalid("degenerate right axis range")
        if any(s.axis == "right" for s in self.series) and self.y_right_range is None:
            raise SpecInvalid("right-axis series without a right axis range")
        if not self.expect_ambiguous:
            for i in range(len(self.series)):
                for j in range(i + 1, len(self.series)):
                    a = np.array(self.series[i].rgb, dtype=float)
                    b = np.array(self.series[j].rgb, dtype=float)
                    if np.linalg.norm(a - b) < 30:
                        raise SpecInvalid(
                            f"colors of {self.series[i].label!r} and {self.series[j].label!r} too close"
                        )
        if self.x_tick_count < 2 or self.y_tick_count < 2:
            raise SpecInvalid("need at least 2 ticks per axis")


@dataclass
class _Layout:
    x0: int
    y0: int
    x1: int
    y1: int
    dx0: float
    dx1: float
    dy0: float
    dy1: float


def _layout(spec: FixtureSpec) -> _Layout:
    right_margin = 70 if spec.y_right_range is not None else 30
    x0, y0 = 70, 30
    x1, y1 = spec.width - right_margin - 1, spec.height - 50 - 1
    return _Layout(x0, y0, x1, y1, x0 + 6.0, x1 - 6.0, y0 + 6.0, y1 - 6.0)


def _x_to_px(spec: FixtureSpec, lay: _Layout, v: float) -> float:
    lo, hi = spec.x_range
    return lay.dx0 + (v - lo) * (lay.dx1 - lay.dx0) / (hi - lo)


def _y_to_px(spec: FixtureSpec, lay: _Layout, v: float, axis: str) -> float:
    lo, hi = spec.y_range if axis == "left" else spec.y_right_range
    return lay.dy1 - (v - lo) * (lay.dy1 - lay.dy0) / (hi - lo)


def _draw_box(canvas: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    canvas[max(0, y0):y1 + 1, max(0, x0):x1 + 1] = color


def _segment_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Bresenham between two integer points, inclusive."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pts.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return pts


def _draw_series(canvas: np.ndarray, pts_px: list[tuple[float, float]], rgb, antialias: bool) -> None:
    core: set[tuple[int, int]] = set()
    for (ax, ay), (bx, by) in zip(pts_px, pts_px[1:]):
        for x, y in _segment_pixels(int(round(ax)), int(round(ay)), int(round(bx)), int(round(by))):
            for ox, oy in ((0, 0), (1, 0), (0, 1), (1, 1)):  # 2 px brush
                core.add((x + ox, y + oy))
    h, w = canvas.shape[:2]
    color = np.array(rgb, dtype=np.int16)
    for i, (x, y) in enumerate(sorted(core)):
        if 0 <= x < w and 0 <= y < h:
            if antialias and i % 9 == 0:
                off = _JITTER[(x * 7 + y * 13) % len(_JITTER)]
                canvas[y, x] = np.clip(color + np.array(off, dtype=np.int16), 0, 255).astype(np.uint8)
            else:
                canvas[y, x] = rgb


def _scatter_speckles(canvas: np.ndarray, pts_px: list[tuple[float, float]], rgb, count: int = 8) -> None:
    """A few half-blended edge speckles; too sparse to form a cluster, too far
    in RGB to be adopted, so the digitizer drops them."""
    blend = tuple((np.array(rgb, dtype=np.int16) + 255) // 2)
    h, w = canvas.shape[:2]
    step = max(1, len(pts_px) // (count + 1))
    for k in range(1, count + 1):
        px, py = pts_px[min(len(pts_px) - 1, k * step)]
        x, y = int(round(px)) + (2 if k % 2 else -2), int(round(py)) - 2
        if 0 <= x < w and 0 <= y < h and tuple(canvas[y, x]) == (255, 255, 255):
            canvas[y, x] = blend


def render_fixture(spec: FixtureSpec) -> tuple[PlotImage, PlotAnnotation, list[CycleSeries]]:
    """Render spec into (image, exact annotation, ground-truth series)."""
    spec.validate()
    lay = _layout(spec)
    canvas = np.full((spec.height, spec.width, 3), 255, dtype=np.uint8)
    ann = PlotAnnotation(plot_box=(lay.x0, lay.y0, lay.x1, lay.y1))
    ann.right_axis_present = spec.y_right_range is not None

    # frame, 2 px
    canvas[lay.y0:lay.y0 + 2, lay.x0:lay.x1 + 1] = FRAME_COLOR
    canvas[lay.y1 - 1:lay.y1 + 1, lay.x0:lay.x1 + 1] = FRAME_COLOR
    canvas[lay.y0:lay.y1 + 1, lay.x0:lay.x0 + 2] = FRAME_COLOR
    canvas[lay.y0:lay.y1 + 1, lay.x1 - 1:lay.x1 + 1] = FRAME_COLOR

    # ticks and abstract label blobs
    for v in np.linspace(spec.x_range[0], spec.x_range[1], spec.x_tick_count):
        fpx = _x_to_px(spec, lay, float(v))
        p = int(round(fpx))
        canvas[lay.y1 + 1:lay.y1 + 5, p:p + 1] = FRAME_COLOR
        ann.tick_values.append(("x", fpx, float(v)))
        ann.object_boxes.append(("axis_tick", p - 1, lay.y1 + 1, p + 1, lay.y1 + 5))
        _draw_box(canvas, p - 3, lay.y1 + 8, p + 3, lay.y1 + 12, BLOB_COLOR)
        ann.object_boxes.append(("text", p - 3, lay.y1 + 8, p + 3, lay.y1 + 12))
    for v in np.linspace(spec.y_range[0], spec.y_range[1], spec.y_tick_count):
        fpx = _y_to_px(spec, lay, float(v), "left")
        p = int(round(fpx))
        canvas[p:p + 1, lay.x0 - 4:lay.x0] = FRAME_COLOR
        ann.tick_values.append(("y_left", fpx, float(v)))
        ann.object_boxes.append(("axis_tick", lay.x0 - 4, p - 1, lay.x0 - 1, p + 1))
        _draw_box(canvas, lay.x0 - 18, p - 2, lay.x0 - 7, p + 2, BLOB_COLOR)
        ann.object_boxes.append(("text", lay.x0 - 18, p - 2, lay.x0 - 7, p + 2))
    if spec.y_right_range is not None:
        for v in np.linspace(spec.y_right_range[0], spec.y_right_range[1], spec.y_tick_count):
            fpx = _y_to_px(spec, lay, float(v), "right")
            p = int(round(fpx))
            canvas[p:p + 1, lay.x1 + 1:lay.x1 + 5] = FRAME_COLOR
            ann.tick_values.append(("y_right", fpx, float(v)))
            ann.object_boxes.append(("axis_tick", lay.x1 + 1, p - 1, lay.x1 + 4, p + 1))
            _draw_box(canvas, lay.x1 + 7, p - 2, lay.x1 + 18, p + 2, BLOB_COLOR)
            ann.object_boxes.append(("text", lay.x1 + 7, p - 2, lay.x1 + 18, p + 2))

    # axis label blobs
    mid_x = (lay.x0 + lay.x1) // 2
    mid_y = (lay.y0 + lay.y1) // 2
    _draw_box(canvas, mid_x - 30, lay.y1 + 16, mid_x + 30, lay.y1 + 22, BLOB_COLOR)
    ann.object_boxes.append(("axis_label", mid_x - 30, lay.y1 + 16, mid_x + 30, lay.y1 + 22))
    _draw_box(canvas, lay.x0 - 32, mid_y - 25, lay.x0 - 26, mid_y + 25, BLOB_COLOR)
    ann.object_boxes.append(("axis_label", lay.x0 - 32, mid_y - 25, lay.x0 - 26, mid_y + 25))
    if spec.y_right_range is not None:
        _draw_box(canvas, lay.x1 + 26, mid_y - 25, lay.x1 + 32, mid_y + 25, BLOB_COLOR)
        ann.object_boxes.append(("axis_label", lay.x1 + 26, mid_y - 25, lay.x1 + 32, mid_y + 25))

    # data lines
    truth = []
    for s in spec.series:
        pts_px = [
            (_x_to_px(spec, lay, float(c)), _y_to_px(spec, lay, float(v), s.axis)) for c, v in s.points
        ]
        _draw_series(canvas, pts_px, s.rgb, spec.antialias)
        if spec.antialias:
            _scatter_speckles(canvas, pts_px, s.rgb)
        truth.append(CycleSeries(label=s.label, points=tuple(s.points), axis=s.axis))

    # legend (drawn last so it occludes lines, exactly like published figures)
    legend_series = [s for s in spec.series if s.in_legend]
    if spec.legend_pos and legend_series:
        width = 22 + max(len(s.label) for s in legend_series) * 5
        width = min(width, 150)
        height = 8 + 12 * len(legend_series)
        pad = 12
        pos = {
            "ne": (lay.x1 - pad - width, lay.y0 + pad),
            "nw": (lay.x0 + pad, lay.y0 + pad),
            "se": (lay.x1 - pad - width, lay.y1 - pad - height),
            "sw": (lay.x0 + pad, lay.y1 - pad - height),
        }[spec.legend_pos]
        lx0, ly0 = pos
        lx1, ly1 = lx0 + width, ly0 + height
        _draw_box(canvas, lx0, ly0, lx1, ly1, (255, 255, 255))
        canvas[ly0, lx0:lx1 + 1] = FRAME_COLOR
        canvas[ly1, lx0:lx1 + 1] = FRAME_COLOR
        canvas[ly0:ly1 + 1, lx0] = FRAME_COLOR
        canvas[ly0:ly1 + 1, lx1] = FRAME_COLOR
        for i, s in enumerate(legend_series):
            row = ly0 + 7 + 12 * i
            _draw_box(canvas, lx0 + 4, row, lx0 + 16, row + 2, s.rgb)
            _draw_box(canvas, lx0 + 20, row - 1, lx1 - 4, row + 3, LABEL_BLOB_COLOR)
            ann.legend_entries.append((s.label, s.rgb))
        ann.object_boxes.append(("legend", lx0, ly0, lx1, ly1))
    else:
        for s in legend_series:
            ann.legend_entries.append((s.label, s.rgb))

    image = PlotImage(canvas, provenance=spec.provenance)
    ann.validate(canvas.shape[:2])
    return image, ann, truth


# ---------------------------------------------------------------------------
# fixture suites
# ---------------------------------------------------------------------------

PALETTE = (
    (220, 30, 30),
    (30, 60, 220),
    (20, 150, 60),
    (240, 150, 30),
    (140, 60, 180),
    (30, 30, 30),
)
CE_COLOR = (90, 170, 230)


def decay_points(
    c0: float, retention: float, tau: float, n_cycles: int, rng: np.random.Generator | None = None,
    wiggle: float = 0.0,
) -> tuple[tuple[int, float], ...]:
    """Exponential capacity fade sampled at every cycle."""
    cycles = np.arange(1, n_cycles + 1)
    caps = c0 * (retention + (1.0 - retention) * np.exp(-cycles / tau))
    if rng is not None and wiggle > 0:
        caps = caps + rng.normal(0.0, wiggle * c0, size=caps.shape)
    caps = np.maximum(caps, 0.0)
    return tuple((int(c), float(v)) for c, v in zip(cycles, caps))


def ce_points(n_cycles: int, settle: float = 99.4) -> tuple[tuple[int, float], ...]:
    """Coulombic-efficiency profile: short burn-in, then flat near 100%."""
    pts = []
    for c in range(1, n_cycles + 1):
        if c <= 5:
            v = 90.0 + (settle - 90.0) * c / 5.0
        else:
            v = settle + 0.25 * ((c * 7) % 3 - 1)
        pts.append((c, float(v)))
    return tuple(pts)


def build_acceptance_suite(count: int = 56, seed: int = 20240601) -> list[FixtureSpec]:
    """Mixed suite: plain 1-4 series plots, CE overlays (labelled and
    unlabelled), and same-color adversarial cases."""
    specs = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        kind = i % 7
        n_cycles = int(rng.integers(80, 121))
        y_max = float(rng.choice([200.0, 260.0, 1400.0]))
        antialias = i % 2 == 1

        def mk_series(n, palette_offset=0):
            out = []
            for k in range(n):
                c0 = float(rng.uniform(0.55, 0.85)) * y_max
                retention = float(rng.uniform(0.55, 0.95))
                tau = float(rng.uniform(25.0, 60.0))
                out.append(
                    FixtureSeries(
                        label=f"cell-{k + 1}",
                        rgb=PALETTE[(k + palette_offset) % len(PALETTE)],
                        points=decay_points(c0, retention, tau, n_cycles, rng, wiggle=0.002),
                    )
                )
            return out

        if kind == 6:
            series = mk_series(1)
            twin = FixtureSeries(
                label="cell-2",
                rgb=series[0].rgb,
                points=decay_points(0.5 * y_max, 0.7, 40.0, n_cycles),
            )
            specs.append(
                FixtureSpec(
                    name=f"acc-{i:03d}-samecolor",
                    series=series + [twin],
                    x_range=(0.0, float(n_cycles)),
                    y_range=(0.0, y_max),
                    antialias=antialias,
                    expect_ambiguous=True,
                    seed=i,
                )
            )
            continue

        if kind in (4, 5):
            # capacity curves stay below the top stripe where the CE band
            # (95-101% of a 0-120% right axis) lives, as in published figures
            labelled = kind == 4
            series = []
            for k in range(int(rng.integers(1, 3))):
                c0 = float(rng.uniform(0.45, 0.68)) * y_max
                retention = float(rng.uniform(0.55, 0.95))
                tau = float(rng.uniform(25.0, 60.0))
                series.append(
                    FixtureSeries(
                        label=f"cell-{k + 1}",
                        rgb=PALETTE[k % len(PALETTE)],
                        points=decay_points(c0, retention, tau, n_cycles, rng, wiggle=0.002),
                    )
                )
            series.append(
                FixtureSeries(
                    label="Coulombic efficiency" if labelled else "",
                    rgb=CE_COLOR,
                    points=ce_points(n_cycles),
                    axis="right",
                    in_legend=labelled,
                )
            )
            specs.append(
                FixtureSpec(
                    name=f"acc-{i:03d}-ce",
                    series=series,
                    x_range=(0.0, float(n_cycles)),
                    y_range=(0.0, y_max),
                    y_right_range=(0.0, 120.0),
                    antialias=antialias,
                    seed=i,
                )
            )
            continue

        specs.append(
            FixtureSpec(
                name=f"acc-{i:03d}-plain",
                series=mk_series(kind + 1),
                x_range=(0.0, float(n_cycles)),
                y_range=(0.0, y_max),
                antialias=antialias,
                legend_pos=("ne", "nw", "se")[i % 3],
                seed=i,
            )
        )
    return specs


# the five demo-corpus graphs; provenance must line up with the bundled papers
_DEMO_DOIS = ("10.0000/demo.0001", "10.0000/demo.0002", "10.0000/demo.0003")


def build_demo_suite() -> list[FixtureSpec]:
    d1, d2, d3 = _DEMO_DOIS
    specs = [
        FixtureSpec(
            name="demo-p1-fig2a",
            provenance=GraphMetadata(d1, "Fig. 2", "a"),
            series=[
                FixtureSeries("NCM523 baseline", PALETTE[0], decay_points(165.0, 0.75, 40.0, 120)),
                FixtureSeries("NCM523-FEC", PALETTE[1], decay_points(170.0, 0.92, 50.0, 120)),
            ],
            x_range=(0.0, 120.0),
            y_range=(0.0, 200.0),
        ),
        FixtureSpec(
            name="demo-p1-fig2b",
            provenance=GraphMetadata(d1, "Fig. 2", "b"),
            series=[
                FixtureSeries("LFP-1M", PALETTE[0], decay_points(150.0, 0.9, 60.0, 100)),
                FixtureSeries("LFP-2M", PALETTE[1], decay_points(155.0, 0.85, 50.0, 100)),
                FixtureSeries("LFP-4M", PALETTE[2], decay_points(158.0, 0.8, 45.0, 100)),
                FixtureSeries("Coulombic efficiency", CE_COLOR, ce_points(100), axis="right"),
            ],
            x_range=(0.0, 100.0),
            y_range=(0.0, 220.0),
            y_right_range=(0.0, 120.0),
        ),
        FixtureSpec(
            name="demo-p2-fig1a",
            provenance=GraphMetadata(d2, "Fig. 1", "a"),
            series=[
                FixtureSeries("bare Li", PALETTE[5], decay_points(175.0, 0.6, 35.0, 150)),
                FixtureSeries("LiF coated Li", PALETTE[0], decay_points(180.0, 0.93, 60.0, 150)),
            ],
            x_range=(0.0, 150.0),
            y_range=(0.0, 220.0),
            antialias=True,
        ),
        FixtureSpec(
            name="demo-p2-fig3c",
            provenance=GraphMetadata(d2, "Fig. 3", "c"),
            series=[
                FixtureSeries("NCM622 baseline", PALETTE[1], decay_points(172.0, 0.8, 55.0, 120)),
                FixtureSeries("NCM622 + LiNO3", PALETTE[2], decay_points(176.0, 0.9, 60.0, 120)),
                FixtureSeries("", CE_COLOR, ce_points(120), axis="right", in_legend=False),
            ],
            x_range=(0.0, 120.0),
            y_range=(0.0, 260.0),
            y_right_range=(0.0, 120.0),
        ),
        FixtureSpec(
            name="demo-p3-fig2",
            provenance=GraphMetadata(d3, "Fig. 2", ""),
            series=[
                FixtureSeries("S/C-SP", PALETTE[0], decay_points(1150.0, 0.55, 30.0, 100)),
                FixtureSeries("S/C-CNT", PALETTE[1], decay_points(1250.0, 0.7, 45.0, 100)),
                FixtureSeries("S/C-KB", PALETTE[2], decay_points(1050.0, 0.62, 40.0, 100)),
            ],
            x_range=(0.0, 100.0),
            y_range=(0.0, 1400.0),
        ),
    ]
    return specs


def build_smoke_suite() -> list[FixtureSpec]:
    flat = tuple((c, 120.0) for c in range(1, 51))
    return [
        FixtureSpec(
            name="smoke-flat",
            series=[FixtureSeries("flat", PALETTE[1], flat)],
            x_range=(0.0, 50.0),
            y_range=(0.0, 200.0),
        ),
        FixtureSpec(
            name="smoke-two",
            series=[
                FixtureSeries("a", PALETTE[0], decay_points(160.0, 0.8, 40.0, 80)),
                FixtureSeries("b", PALETTE[1], decay_points(140.0, 0.9, 50.0, 80)),
            ],
            x_range=(0.0, 80.0),
            y_range=(0.0, 200.0),
        ),
    ]


SUITES = {
    "demo": build_demo_suite,
    "acceptance": build_acceptance_suite,
    "smoke": build_smoke_suite,
}


def get_suite(name: str) -> list[FixtureSpec]:
    if name not in SUITES:
        raise SpecInvalid(f"unknown fixture suite {name!r} (have {sorted(SUITES)})")
    return SUITES[name]()


# ---------------------------------------------------------------------------
# disk I/O
# ---------------------------------------------------------------------------


def save_fixture(directory: str | Path, spec: FixtureSpec) -> dict[str, Path]:
    """Write {name}.png, {name}.annotation.json, {name}.truth.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image, ann, truth = render_fixture(spec)
    png = directory / f"{spec.name}.png"
    Image.fromarray(image.pixels).save(png)
    ann_path = directory / f"{spec.name}.annotation.json"
    ann_path.write_text(json.dumps(ann.to_json_dict(), sort_keys=True, indent=2) + "\n", "utf-8")
    truth_payload = {
        "doi": spec.provenance.doi if spec.provenance else None,
        "figure": spec.provenance.figure_id if spec.provenance else None,
        "panel": spec.provenance.panel_label if spec.provenance else None,
        "series": [
            {"label": s.label, "axis": s.axis, "points": [[int(c), float(v)] for c, v in s.points]}
            for s in truth
        ],
    }
    truth_path = directory / f"{spec.name}.truth.json"
    truth_path.write_text(json.dumps(truth_payload, sort_keys=True, indent=2) + "\n", "utf-8")
    paths = {"png": png, "annotation": ann_path, "truth": truth_path}
    if spec.provenance is not None:
        meta_path = directory / f"{spec.name}.meta.json"
        meta = {
            "doi": spec.provenance.doi,
            "figure": spec.provenance.figure_id,
            "panel": spec.provenance.panel_label,
        }
        meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", "utf-8")
        paths["meta"] = meta_path
    return paths


def load_plot_image(path: str | Path, provenance: GraphMetadata | None = None) -> PlotImage:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
    return PlotImage(arr, provenance=provenance)
