"""Parse publisher-markup papers into sections and figure metadata.

The supported input dialect is a small XML format used by the bundled
corpus::

    <paper doi="10.0000/demo.0001">
      <figure id="Fig. 1">
        <caption panels="a,b">(a) SEM image. (b) Cycling performance ...</caption>
      </figure>
      <section kind="result"><p>...</p><p>...</p></section>
      <section kind="method"><p>...</p></section>
    </paper>

Real publisher schemas can be added later by implementing another
:class:`DialectAdapter`.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Protocol

from .errors import MalformedMarkup, MissingDoi, UnknownFigure


@dataclass(frozen=True)
class FigureRef:
    figure_id: str
    panel_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class Caption:
    figure_id: str
    panel_labels: tuple[str, ...]
    text: str


@dataclass(frozen=True)
class Paragraph:
    id: str
    section: str  # "result" | "method"
    text: str


@dataclass(frozen=True)
class GraphMetadata:
    """Identity of one cycle-graph panel: (doi, figure, panel)."""

    doi: str
    figure_id: str
    panel_label: str

    def key(self) -> tuple[str, str, str]:
        return (self.doi, _figure_key(self.figure_id), self.panel_label)


@dataclass
class Document:
    doi: str
    captions: list[Caption] = field(default_factory=list)
    result_paragraphs: list[Paragraph] = field(default_factory=list)
    method_paragraphs: list[Paragraph] = field(default_factory=list)
    figures: list[FigureRef] = field(default_factory=list)

    def __post_init__(self):
        if not self.doi:
            raise MissingDoi("document has no DOI")
        fig_ids = [c.figure_id for c in self.captions]
        if len(set(fig_ids)) != len(fig_ids):
            raise MalformedMarkup("duplicate caption figure ids")
        known = {f.figure_id for f in self.figures}
        for cap in self.captions:
            if cap.figure_id not in known:
                raise MalformedMarkup(f"caption for unknown figure {cap.figure_id!r}")
            if len(set(cap.panel_labels)) != len(cap.panel_labels):
                raise MalformedMarkup(f"duplicate panel labels in {cap.figure_id!r}")
        ids = [p.id for p in self.result_paragraphs + self.method_paragraphs]
        if len(set(ids)) != len(ids):
            raise MalformedMarkup("paragraph ids are not unique")

    def paragraph(self, pid: str) -> Paragraph:
        for p in self.result_paragraphs + self.method_paragraphs:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def to_json_dict(self) -> dict:
        return {
            "doi": self.doi,
            "captions": [
                {"figure_id": c.figure_id, "panel_labels": list(c.panel_labels), "text": c.text}
                for c in self.captions
            ],
            "result_paragraphs": [
                {"id": p.id, "section": p.section, "text": p.text} for p in self.result_paragraphs
            ],
            "method_paragraphs": [
                {"id": p.id, "section": p.section, "text": p.text} for p in self.method_paragraphs
            ],
            "figures": [
                {"figure_id": f.figure_id, "panel_labels": list(f.panel_labels)} for f in self.figures
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Document":
        raw = json.loads(text)
        return cls(
            doi=raw["doi"],
            captions=[
                Caption(c["figure_id"], tuple(c["panel_labels"]), c["text"]) for c in raw["captions"]
            ],
            result_paragraphs=[
                Paragraph(p["id"], p["section"], p["text"]) for p in raw["result_paragraphs"]
            ],
            method_paragraphs=[
                Paragraph(p["id"], p["section"], p["text"]) for p in raw["method_paragraphs"]
            ],
            figures=[FigureRef(f["figure_id"], tuple(f["panel_labels"])) for f in raw["figures"]],
        )


class DialectAdapter(Protocol):
    def parse(self, raw: str) -> dict: ...


class FixtureXmlDialect:
    """Adapter for the bundled <paper> XML dialect."""

    def parse(self, raw: str) -> dict:
        try:
            root = ET.fromstring(raw)
        except ET.ParseError as exc:
            raise MalformedMarkup(str(exc)) from exc
        if root.tag != "paper":
            raise MalformedMarkup(f"expected <paper> root, got <{root.tag}>")
        captions = []
        figures = []
        for fig in root.findall("figure"):
            fig_id = (fig.get("id") or "").strip()
            if not fig_id:
                raise MalformedMarkup("<figure> without id")
            cap = fig.find("caption")
            if cap is None or not _clean(cap.text):
                raise MalformedMarkup(f"<figure id={fig_id!r}> without caption text")
            panels = tuple(p.strip() for p in (cap.get("panels") or "").split(",") if p.strip())
            figures.append({"figure_id": fig_id, "panel_labels": panels})
            captions.append({"figure_id": fig_id, "panel_labels": panels, "text": _clean(cap.text)})
        paragraphs = {"result": [], "method": []}
        for sec in root.findall("section"):
            kind = sec.get("kind")
            if kind not in paragraphs:
                raise MalformedMarkup(f"unknown section kind {kind!r}")
            for p in sec.findall("p"):
                text = _clean(p.text)
                if text:
                    paragraphs[kind].append(text)
        return {
            "doi": (root.get("doi") or "").strip(),
            "captions": captions,
            "figures": figures,
            "result": paragraphs["result"],
            "method": paragraphs["method"],
        }


def _clean(text: str | None) -> str:
    return re.sub(r"\s+", " ", text or "").strip()


def parse_document(raw: str, doi: str = "", dialect: DialectAdapter | None = None) -> Document:
    """Parse markup into a :class:`Document`.

    ``doi`` overrides any DOI carried by the markup; if both are empty,
    :class:`MissingDoi` is raised.
    """
    parts = (dialect or FixtureXmlDialect()).parse(raw)
    doi = doi or parts["doi"]
    if not doi:
        raise MissingDoi("no DOI given and none found in markup")
    return Document(
        doi=doi,
        captions=[Caption(**c) for c in parts["captions"]],
        result_paragraphs=[
            Paragraph(f"res-{i}", "result", t) for i, t in enumerate(parts["result"], start=1)
        ],
        method_paragraphs=[
            Paragraph(f"met-{i}", "method", t) for i, t in enumerate(parts["method"], start=1)
        ],
        figures=[FigureRef(**f) for f in parts["figures"]],
    )


# --- figure-mention matching -------------------------------------------------

_MENTION_RE = re.compile(
    r"\bfig(?:ure)?s?\s*\.?\s*(\d+)\s*(?:\(\s*([a-z])\s*\)|([a-z])(?![a-z0-9]))?",
    re.IGNORECASE,
)

_FIGKEY_RE = re.compile(r"(\d+)")


def _figure_key(figure_id: str) -> str:
    m = _FIGKEY_RE.search(figure_id)
    return m.group(1) if m else figure_id.strip().lower()


def figure_mentions(text: str) -> list[tuple[str, str | None]]:
    """All (figure number, panel letter or None) mentions in ``text``.

    Matching is case- and punctuation-insensitive: "FIG 3(A)", "Figure 3(a)"
    and "fig. 3a" all yield ("3", "a").
    """
    out = []
    for m in _MENTION_RE.finditer(text):
        panel = m.group(2) or m.group(3)
        out.append((m.group(1), panel.lower() if panel else None))
    return out


def locate_related_paragraphs(doc: Document, meta: GraphMetadata) -> list[str]:
    """Ids of result paragraphs mentioning the panel, in document order.

    A panel-less mention ("Fig. 3") matches every panel of that figure, and a
    panel-less ``meta`` matches any mention of the figure.
    """
    fig_key = _figure_key(meta.figure_id)
    if fig_key not in {_figure_key(f.figure_id) for f in doc.figures}:
        raise UnknownFigure(f"{meta.figure_id!r} not in {doc.doi}")
    panel = meta.panel_label.lower()
    hits = []
    for p in doc.result_paragraphs:
        for num, mention_panel in figure_mentions(p.text):
            if num != fig_key:
                continue
            if mention_panel is None or panel == "" or mention_panel == panel:
                hits.append(p.id)
                break
    return hits


def doi_to_filename(doi: str) -> str:
    """Corpus files are named after the DOI with '/' replaced by '_'."""
    return doi.replace("/", "_")
