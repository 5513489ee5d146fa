"""Reader for i2b2-2014-style de-identification XML.

Each file holds the note in ``<TEXT>`` and one element per PHI span under
``<TAGS>``, e.g. ``<NAME id="P0" start="16" end="26" text="..." TYPE="PATIENT"/>``.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

from .errors import SpanFileError
from .evaluation import SpanLabel


def parse_i2b2(source: str | Path, doc_id: str | None = None, use_subtype: bool = False) -> tuple[str, list[SpanLabel]]:
    """Return ``(text, spans)``. Span types are the tag name (``NAME``, ``AGE``...)
    or, with ``use_subtype``, the ``TYPE`` attribute."""
    path = Path(source)
    try:
        root = ET.parse(path).getroot()
    except (OSError, ET.ParseError) as exc:
        raise SpanFileError(f"{path}: not readable i2b2 XML ({exc})") from None
    text_el = root.find("TEXT")
    text = (text_el.text or "") if text_el is not None else ""
    doc = doc_id or path.stem
    spans = []
    tags = root.find("TAGS")
    for el in list(tags) if tags is not None else []:
        try:
            start, end = int(el.get("start")), int(el.get("end"))
        except (TypeError, ValueError):
            raise SpanFileError(f"{path}: tag {el.tag} without integer offsets") from None
        etype = el.get("TYPE") if use_subtype and el.get("TYPE") else el.tag
        spans.append(SpanLabel(doc, start, end, el.get("text") or text[start:end], etype))
    return text, spans


def read_i2b2_dir(directory: str | Path, use_subtype: bool = False) -> list[SpanLabel]:
    out: list[SpanLabel] = []
    for p in sorted(Path(directory).glob("*.xml")):
        out.extend(parse_i2b2(p, use_subtype=use_subtype)[1])
    return out
