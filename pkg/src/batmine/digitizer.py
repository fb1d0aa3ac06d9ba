"""Convert cycle-graph raster images into per-cell cycle series.

Stages: strip annotated plot objects, calibrate axes from tick positions,
separate data lines by DBSCAN over RGB color, trace points column by column,
and remove Coulombic-efficiency overlays. Graphs whose line colors cannot be
told apart are excluded rather than mis-traced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .corpus import GraphMetadata
from .errors import (
    CalibrationResidual,
    ColorAmbiguity,
    DegenerateTicks,
    DetectorUnavailable,
    NoAxesFound,
    NoDataPixels,
    SeriesTooShort,
    TooFewPoints,
    Unextractable,
)

OBJECT_KINDS = ("text", "legend", "marker", "arrow", "axis_tick", "axis_label")
AXES = ("x", "y_left", "y_right")

WHITE = 255


@dataclass
class DigitizerConfig:
    """Tunables for color separation and CE removal (paper gives no values)."""

    eps: float = 24.0               # DBSCAN radius in RGB space
    min_pts: int = 12               # DBSCAN core weight
    background_min_channel: int = 245
    min_cluster_pixels: int = 50
    ambiguity_threshold: float = 16.0   # centroid / legend-swatch distance
    ce_burn_in_cycles: int = 5
    ce_band: tuple[float, float] = (95.0, 101.0)
    ce_band_fraction: float = 0.9
    frame_inset: int = 3            # pixels trimmed inside the plot frame


@dataclass(frozen=True)
class CycleSeries:
    """Ordered (cycle, specific capacity mAh/g) points for one cell."""

    label: str
    points: tuple[tuple[int, float], ...]
    axis: str = "left"

    def __post_init__(self):
        if len(self.points) < 2:
            raise SeriesTooShort(f"series {self.label!r} has {len(self.points)} point(s)")
        cycles = [c for c, _ in self.points]
        if any(b <= a for a, b in zip(cycles, cycles[1:])):
            raise ValueError("cycles must be strictly increasing")
        if any(c < 1 for c in cycles):
            raise ValueError("cycles must be positive")
        if any(v < 0 for _, v in self.points):
            raise ValueError("capacities must be non-negative")

    def cycles(self) -> np.ndarray:
        return np.array([c for c, _ in self.points], dtype=np.int64)

    def capacities(self) -> np.ndarray:
        return np.array([v for _, v in self.points], dtype=np.float64)


@dataclass
class PlotImage:
    pixels: np.ndarray  # H x W x 3 uint8
    provenance: GraphMetadata | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 64 or px.shape[1] < 64:
            raise ValueError("image must be HxWx3 with H, W >= 64")
        self.pixels = px

    def copy(self) -> "PlotImage":
        return PlotImage(self.pixels.copy(), self.provenance)


@dataclass
class PlotAnnotation:
    """Detected plot objects, tick values and legend entries for one image."""

    object_boxes: list[tuple[str, int, int, int, int]] = field(default_factory=list)
    tick_values: list[tuple[str, float, float]] = field(default_factory=list)  # (axis, px, value)
    legend_entries: list[tuple[str, tuple[int, int, int]]] = field(default_factory=list)
    right_axis_present: bool = False
    plot_box: tuple[int, int, int, int] | None = None  # outer frame rect x0,y0,x1,y1

    def validate(self, shape: tuple[int, int] | None = None) -> None:
        for kind, x0, y0, x1, y1 in self.object_boxes:
            if kind not in OBJECT_KINDS:
                raise ValueError(f"unknown object kind {kind!r}")
            if x0 > x1 or y0 > y1:
                raise ValueError("box corners out of order")
            if shape is not None:
                h, w = shape
                if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                    raise ValueError("box outside image bounds")
        for axis in AXES:
            ticks = self.axis_ticks(axis)
            if not ticks:
                continue
            if len(ticks) < 2:
                raise ValueError(f"axis {axis} referenced with fewer than 2 ticks")
            vals = [v for _, v in sorted(ticks)]
            if not (all(a < b for a, b in zip(vals, vals[1:])) or all(a > b for a, b in zip(vals, vals[1:]))):
                raise ValueError(f"tick values on {axis} are not strictly monotone")

    def axis_ticks(self, axis: str) -> list[tuple[float, float]]:
        return [(px, v) for ax, px, v in self.tick_values if ax == axis]

    def to_json_dict(self) -> dict:
        return {
            "object_boxes": [list(b) for b in self.object_boxes],
            "tick_values": [list(t) for t in self.tick_values],
            "legend_entries": [[label, list(rgb)] for label, rgb in self.legend_entries],
            "right_axis_present": self.right_axis_present,
            "plot_box": list(self.plot_box) if self.plot_box else None,
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "PlotAnnotation":
        return cls(
            object_boxes=[(b[0], int(b[1]), int(b[2]), int(b[3]), int(b[4])) for b in raw["object_boxes"]],
            tick_values=[(t[0], float(t[1]), float(t[2])) for t in raw["tick_values"]],
            legend_entries=[(e[0], tuple(int(c) for c in e[1])) for e in raw["legend_entries"]],
            right_axis_present=bool(raw["right_axis_present"]),
            plot_box=tuple(int(v) for v in raw["plot_box"]) if raw.get("plot_box") else None,
        )


# ---------------------------------------------------------------------------
# object detection backends
# ---------------------------------------------------------------------------


class AnnotationFileDetector:
    """Loads the sidecar annotation JSON written next to the image."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def detect(self, image: PlotImage) -> PlotAnnotation:
        if not self.path.exists():
            raise DetectorUnavailable(f"annotation file {self.path} not found")
        ann = PlotAnnotation.from_json_dict(json.loads(self.path.read_text("utf-8")))
        ann.validate(image.pixels.shape[:2])
        return ann


class RuleBasedDetector:
    """OCR-free baseline: frame from longest dark straight runs, ticks from
    perpendicular stubs just outside it, text blobs from connected components.

    Tick numeric values cannot be read without OCR; they are filled in only
    when ``axis_hints`` supplies the value sequence per axis (ascending along
    x, descending along screen-y).
    """

    def __init__(self, dark_threshold: int = 100, axis_hints: dict[str, list[float]] | None = None):
        self.dark_threshold = dark_threshold
        self.axis_hints = axis_hints or {}

    def detect(self, image: PlotImage) -> PlotAnnotation:
        px = image.pixels
        dark = px.max(axis=2) < self.dark_threshold
        h, w = dark.shape
        row_runs = _longest_runs(dark, axis=1)
        col_runs = _longest_runs(dark, axis=0)
        frame_rows = [i for i in range(h) if row_runs[i] >= 0.5 * w]
        frame_cols = [j for j in range(w) if col_runs[j] >= 0.5 * h]
        if len(frame_rows) < 2 or len(frame_cols) < 2:
            raise NoAxesFound("no axis frame detected")
        y0, y1 = min(frame_rows), max(frame_rows)
        x0, x1 = min(frame_cols), max(frame_cols)
        ann = PlotAnnotation(plot_box=(x0, y0, x1, y1))

        x_ticks = _stub_positions(dark, band=(y1 + 1, min(h, y1 + 8)), span=(x0, x1), axis=0)
        left_ticks = _stub_positions(dark, band=(max(0, x0 - 7), x0), span=(y0, y1), axis=1)
        right_ticks = _stub_positions(dark, band=(x1 + 1, min(w, x1 + 8)), span=(y0, y1), axis=1)
        for pos in x_ticks:
            ann.object_boxes.append(("axis_tick", pos - 1, y1 + 1, pos + 1, min(h, y1 + 6)))
        for pos in left_ticks:
            ann.object_boxes.append(("axis_tick", max(0, x0 - 6), pos - 1, x0, pos + 1))
        for pos in right_ticks:
            ann.object_boxes.append(("axis_tick", x1 + 1, pos - 1, min(w, x1 + 6), pos + 1))
        ann.right_axis_present = len(right_ticks) >= 2

        for axis, positions in (("x", x_ticks), ("y_left", left_ticks), ("y_right", right_ticks)):
            hints = self.axis_hints.get(axis)
            if hints and len(hints) == len(positions):
                for pos, value in zip(positions, hints):
                    ann.tick_values.append((axis, float(pos), float(value)))

        for box in _text_blobs(dark, (x0, y0, x1, y1)):
            ann.object_boxes.append(("text",) + box)
        ann.validate(px.shape[:2])
        return ann


def _longest_runs(mask: np.ndarray, axis: int) -> np.ndarray:
    """Longest consecutive True run per row (axis=1) or column (axis=0)."""
    m = mask if axis == 1 else mask.T
    out = np.zeros(m.shape[0], dtype=np.int64)
    for i in range(m.shape[0]):
        row = m[i]
        best = run = 0
        for v in row:
            run = run + 1 if v else 0
            best = max(best, run)
        out[i] = best
    return out


def _stub_positions(dark: np.ndarray, band: tuple[int, int], span: tuple[int, int], axis: int) -> list[int]:
    """Centers of short dark stubs inside a thin band bordering the frame."""
    lo, hi = band
    if lo >= hi:
        return []
    sub = dark[lo:hi, span[0]:span[1] + 1] if axis == 0 else dark[span[0]:span[1] + 1, lo:hi]
    hit = sub.any(axis=0) if axis == 0 else sub.any(axis=1)
    positions = []
    start = None
    for i, v in enumerate(hit):
        if v and start is None:
            start = i
        elif not v and start is not None:
            positions.append(span[0] + (start + i - 1) // 2)
            start = None
    if start is not None:
        positions.append(span[0] + (start + len(hit) - 1) // 2)
    return positions


def _text_blobs(dark: np.ndarray, frame: tuple[int, int, int, int]) -> list[tuple[int, int, int, int]]:
    """Connected dark components outside the frame, filtered by size/aspect."""
    x0, y0, x1, y1 = frame
    h, w = dark.shape
    outside = dark.copy()
    outside[y0:y1 + 1, x0:x1 + 1] = False
    seen = np.zeros_like(outside, dtype=bool)
    blobs = []
    ys, xs = np.nonzero(outside)
    for y, x in zip(ys.tolist(), xs.tolist()):
        if seen[y, x]:
            continue
        stack = [(y, x)]
        seen[y, x] = True
        min_y = max_y = y
        min_x = max_x = x
        count = 0
        while stack:
            cy, cx = stack.pop()
            count += 1
            min_y, max_y = min(min_y, cy), max(max_y, cy)
            min_x, max_x = min(min_x, cx), max(max_x, cx)
            for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                if 0 <= ny < h and 0 <= nx < w and outside[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
        bw, bh = max_x - min_x + 1, max_y - min_y + 1
        if count >= 6 and bw <= 120 and bh <= 40 and bw >= bh:
            blobs.append((min_x, min_y, max_x, max_y))
    return sorted(blobs)


def detect_objects(image: PlotImage, backend=None) -> PlotAnnotation:
    """Run the configured detector backend (annotation loader by default needs
    an explicit path, so the rule-based baseline is the fallback)."""
    backend = backend or RuleBasedDetector()
    return backend.detect(image)


# ---------------------------------------------------------------------------
# stripping and axis calibration
# ---------------------------------------------------------------------------


def strip_objects(image: PlotImage, annotation: PlotAnnotation) -> PlotImage:
    """White out every annotated object box; pixels outside the union are
    untouched. Idempotent under overlapping boxes."""
    out = image.copy()
    h, w = out.pixels.shape[:2]
    for _, x0, y0, x1, y1 in annotation.object_boxes:
        out.pixels[max(0, y0):min(h, y1 + 1), max(0, x0):min(w, x1 + 1)] = WHITE
    return out


def isolate_plot_interior(image: PlotImage, plot_box: tuple[int, int, int, int], inset: int = 3) -> PlotImage:
    """White out everything at or outside the frame so only data lines remain."""
    out = image.copy()
    x0, y0, x1, y1 = plot_box
    h, w = out.pixels.shape[:2]
    ix0, iy0 = max(0, x0 + inset), max(0, y0 + inset)
    ix1, iy1 = min(w - 1, x1 - inset), min(h - 1, y1 - inset)
    mask = np.ones((h, w), dtype=bool)
    if ix0 <= ix1 and iy0 <= iy1:
        mask[iy0:iy1 + 1, ix0:ix1 + 1] = False
    out.pixels[mask] = WHITE
    return out


@dataclass(frozen=True)
class AffineMap:
    """Least-squares pixel->value map for one axis."""

    slope: float
    intercept: float
    residual_px: float

    def to_value(self, pixel):
        return self.slope * np.asarray(pixel, dtype=np.float64) + self.intercept

    def to_pixel(self, value):
        return (np.asarray(value, dtype=np.float64) - self.intercept) / self.slope


@dataclass(frozen=True)
class AxisCalibration:
    x: AffineMap
    y_left: AffineMap
    y_right: AffineMap | None = None


def _fit_axis(ticks: list[tuple[float, float]], max_residual_px: float = 0.5) -> AffineMap:
    if len(ticks) < 2:
        raise DegenerateTicks(f"need at least 2 ticks, got {len(ticks)}")
    px = np.array([p for p, _ in ticks], dtype=np.float64)
    vals = np.array([v for _, v in ticks], dtype=np.float64)
    if np.ptp(px) == 0:
        raise DegenerateTicks("tick pixel positions coincide")
    slope, intercept = np.polyfit(px, vals, 1)
    if slope == 0:
        raise DegenerateTicks("tick values coincide")
    resid_px = float(np.max(np.abs((vals - (slope * px + intercept)) / slope)))
    if resid_px >= max_residual_px:
        raise CalibrationResidual(f"axis fit misses its ticks by {resid_px:.3f} px")
    return AffineMap(float(slope), float(intercept), resid_px)


def calibrate_axes(annotation: PlotAnnotation) -> AxisCalibration:
    """Fit pixel->value affine maps for x, y_left and (if present) y_right."""
    x = _fit_axis(annotation.axis_ticks("x"))
    y_left = _fit_axis(annotation.axis_ticks("y_left"))
    y_right = None
    if annotation.axis_ticks("y_right"):
        y_right = _fit_axis(annotation.axis_ticks("y_right"))
    return AxisCalibration(x=x, y_left=y_left, y_right=y_right)


# ---------------------------------------------------------------------------
# color separation and tracing
# ---------------------------------------------------------------------------


@dataclass
class SeriesCluster:
    centroid: tuple[float, float, float]
    rows: np.ndarray
    cols: np.ndarray
    label: str = ""

    @property
    def pixel_count(self) -> int:
        return int(self.rows.size)


def separate_series(
    stripped: PlotImage,
    config: DigitizerConfig | None = None,
    legend_swatches: list[tuple[int, int, int]] | None = None,
) -> list[SeriesCluster]:
    """DBSCAN the foreground pixels by RGB; raise :class:`ColorAmbiguity` when
    legend swatches or cluster centroids are too close to separate."""
    cfg = config or DigitizerConfig()
    if legend_swatches:
        sw = np.array(legend_swatches, dtype=np.float64)
        for i in range(len(sw)):
            for j in range(i + 1, len(sw)):
                if np.linalg.norm(sw[i] - sw[j]) < cfg.ambiguity_threshold:
                    raise ColorAmbiguity(
                        f"legend colors {tuple(sw[i].astype(int))} and {tuple(sw[j].astype(int))} too close"
                    )
    px = stripped.pixels
    foreground = px.min(axis=2) < cfg.background_min_channel
    rows, cols = np.nonzero(foreground)
    if rows.size == 0:
        raise NoDataPixels("nothing left after background removal")
    rgb = px[rows, cols].astype(np.float64)
    colors, inverse, counts = np.unique(rgb, axis=0, return_inverse=True, return_counts=True)
    labels = kernels.dbscan_unique_colors(colors, counts, cfg.eps, cfg.min_pts)

    n_clusters = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    if n_clusters == 0:
        raise NoDataPixels("no core colors at the configured density")

    centroids = np.zeros((n_clusters, 3), dtype=np.float64)
    for k in range(n_clusters):
        members = labels == k
        weights = counts[members].astype(np.float64)
        centroids[k] = (colors[members] * weights[:, None]).sum(axis=0) / weights.sum()

    # anti-aliased edge colors: nearest centroid within eps, else dropped
    color_cluster = labels.copy()
    for i in np.nonzero(labels == -1)[0]:
        d = np.linalg.norm(centroids - colors[i], axis=1)
        k = int(np.argmin(d))
        if d[k] <= cfg.eps:
            color_cluster[i] = k

    clusters = []
    pixel_labels = color_cluster[inverse]
    for k in range(n_clusters):
        sel = pixel_labels == k
        if int(sel.sum()) < cfg.min_cluster_pixels:
            continue
        clusters.append(
            SeriesCluster(centroid=tuple(centroids[k]), rows=rows[sel], cols=cols[sel])
        )
    if not clusters:
        raise NoDataPixels("all clusters below the minimum pixel count")
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            dist = float(np.linalg.norm(np.subtract(clusters[i].centroid, clusters[j].centroid)))
            if dist < cfg.ambiguity_threshold:
                raise ColorAmbiguity(f"cluster centroids {dist:.1f} apart (< {cfg.ambiguity_threshold})")
    return clusters


def label_clusters(clusters: list[SeriesCluster], annotation: PlotAnnotation, config: DigitizerConfig) -> None:
    """Attach legend labels to clusters by nearest swatch color (in place)."""
    if not annotation.legend_entries:
        for i, c in enumerate(clusters):
            c.label = f"series-{i + 1}"
        return
    swatches = np.array([rgb for _, rgb in annotation.legend_entries], dtype=np.float64)
    names = [label for label, _ in annotation.legend_entries]
    taken = set()
    for i, c in enumerate(clusters):
        d = np.linalg.norm(swatches - np.array(c.centroid), axis=1)
        order = np.argsort(d, kind="stable")
        c.label = f"series-{i + 1}"
        for j in order:
            if d[j] <= max(config.eps, config.ambiguity_threshold) and int(j) not in taken:
                c.label = names[int(j)]
                taken.add(int(j))
                break


def trace_series(
    cluster: SeriesCluster,
    calibration: AxisCalibration,
    axis: str = "left",
    label: str | None = None,
) -> CycleSeries:
    """Median-per-column trace of a pixel cluster into (cycle, value) points."""
    if np.unique(cluster.cols).size < 2:
        raise TooFewPoints("cluster spans fewer than 2 pixel columns")
    y_map = calibration.y_right if axis == "right" and calibration.y_right else calibration.y_left
    order = np.argsort(cluster.cols, kind="stable")
    cols = cluster.cols[order]
    rows = cluster.rows[order]
    uniq_cols, starts = np.unique(cols, return_index=True)
    col_medians = np.array(
        [np.median(rows[s:e]) for s, e in zip(starts, np.append(starts[1:], cols.size))]
    )
    values = y_map.to_value(col_medians)
    cycles = np.rint(calibration.x.to_value(uniq_cols)).astype(np.int64)

    by_cycle: dict[int, list[float]] = {}
    for c, v in zip(cycles.tolist(), values.tolist()):
        if c < 1 or v < 0:
            continue
        by_cycle.setdefault(c, []).append(v)
    points = tuple((c, float(np.median(vs))) for c, vs in sorted(by_cycle.items()))
    if len(points) < 2:
        raise TooFewPoints("fewer than 2 cycles after collapsing columns")
    return CycleSeries(label=label if label is not None else cluster.label, points=points, axis=axis)


# ---------------------------------------------------------------------------
# CE removal and end-to-end digitization
# ---------------------------------------------------------------------------

_CE_LABEL_TOKENS = ("coulombic", "efficiency")


def _looks_like_ce_label(label: str) -> bool:
    low = label.lower()
    if any(tok in low for tok in _CE_LABEL_TOKENS):
        return True
    return any(part == "ce" for part in low.replace("-", " ").replace("_", " ").split())


def remove_ce(
    series: list[CycleSeries],
    annotation: PlotAnnotation,
    calibration: AxisCalibration | None = None,
    config: DigitizerConfig | None = None,
) -> list[CycleSeries]:
    """Drop Coulombic-efficiency series.

    Labelled CE series are removed outright. Otherwise, with a right axis
    present, a series is removed when after the burn-in cycles at least 90% of
    its points sit in the CE band of the right-axis scale and its value span
    stays within the band width.
    """
    cfg = config or DigitizerConfig()
    kept = []
    for s in series:
        if _looks_like_ce_label(s.label):
            continue
        if annotation.right_axis_present and calibration is not None and calibration.y_right is not None:
            caps = s.capacities()
            cycles = s.cycles()
            post = caps[cycles > cfg.ce_burn_in_cycles]
            if post.size:
                right_vals = calibration.y_right.to_value(calibration.y_left.to_pixel(post))
                lo, hi = cfg.ce_band
                frac = float(np.mean((right_vals >= lo) & (right_vals <= hi)))
                span = float(np.ptp(right_vals))
                if frac >= cfg.ce_band_fraction and span <= (hi - lo):
                    continue
        kept.append(s)
    return kept


def digitize(
    image: PlotImage,
    annotation: PlotAnnotation,
    config: DigitizerConfig | None = None,
) -> list[CycleSeries]:
    """strip -> calibrate -> separate -> trace -> remove CE.

    Raises :class:`Unextractable` wrapping the causal error when the graph
    cannot be digitized (the exclusion policy for ambiguous colors etc.).
    """
    cfg = config or DigitizerConfig()
    try:
        annotation.validate(image.pixels.shape[:2])
        stripped = strip_objects(image, annotation)
        if annotation.plot_box:
            stripped = isolate_plot_interior(stripped, annotation.plot_box, cfg.frame_inset)
        calibration = calibrate_axes(annotation)
        swatches = [rgb for _, rgb in annotation.legend_entries]
        clusters = separate_series(stripped, cfg, legend_swatches=swatches or None)
        label_clusters(clusters, annotation, cfg)
        traced = []
        for cluster in clusters:
            try:
                traced.append(trace_series(cluster, calibration, axis="left"))
            except TooFewPoints:
                continue
        if not traced:
            raise NoDataPixels("no traceable clusters")
        return remove_ce(traced, annotation, calibration, cfg)
    except (ColorAmbiguity, NoDataPixels, DegenerateTicks, CalibrationResidual, NoAxesFound) as exc:
        raise Unextractable(exc) from exc


def series_to_json_dict(meta: GraphMetadata, series: list[CycleSeries]) -> dict:
    """Per-graph output: {doi, figure, panel, series: [{label, points}]}"""
    return {
        "doi": meta.doi,
        "figure": meta.figure_id,
        "panel": meta.panel_label,
        "series": [
            {"label": s.label, "axis": s.axis, "points": [[int(c), float(v)] for c, v in s.points]}
            for s in series
        ],
    }


def series_from_json_dict(raw: dict) -> tuple[GraphMetadata, list[CycleSeries]]:
    meta = GraphMetadata(raw["doi"], raw["figure"], raw["panel"])
    out = []
    for s in raw["series"]:
        out.append(
            CycleSeries(
                label=s["label"],
                points=tuple((int(c), float(v)) for c, v in s["points"]),
                axis=s.get("axis", "left"),
            )
        )
    return meta, out
