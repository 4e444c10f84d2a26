"""On-disk corpus: ``images/<id>.ppm``, ``annotations.json``, ``manifest.json``.

``manifest.json``::

    {"schema_version": "aacp-corpus/1", "count": int, "image_size": int | null,
     "ids": [str, ...], "split": null | {"seed", "bins", "fractions", "subsets"}}

``annotations.json``::

    {"schema_version": "aacp-annotations/1",
     "records": [{"id": str, "provenance": {...},
                  "annotations": [{"brightness": float, ... 8 keys}, ...]}, ...]}
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .. import pnm
from .attributes import AttributeVector
from .records import PaintingRecord
from .split import SplitManifest

CORPUS_SCHEMA = "aacp-corpus/1"
ANNOTATION_SCHEMA = "aacp-annotations/1"
_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class CorpusError(ValueError):
    """Malformed corpus directory; ``record_id`` names the offending record."""

    def __init__(self, message: str, record_id: str | None = None):
        prefix = f"record {record_id!r}: " if record_id else ""
        super().__init__(prefix + message)
        self.record_id = record_id


@dataclass
class Corpus:
    records: list[PaintingRecord] = field(default_factory=list)
    split: SplitManifest | None = None

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate record ids")
        self._index = {r.id: i for i, r in enumerate(self.records)}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PaintingRecord]:
        return iter(self.records)

    def __getitem__(self, rid: str) -> PaintingRecord:
        return self.records[self._index[rid]]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def subset(self, name: str | None) -> list[PaintingRecord]:
        """Records of a split subset, or all records for ``None``."""
        if name is None:
            return list(self.records)
        if self.split is None:
            raise KeyError(f"corpus has no split; cannot select subset {name!r}")
        if name not in self.split.subsets:
            raise KeyError(f"unknown subset {name!r}; have {sorted(self.split.subsets)}")
        return [self[rid] for rid in self.split.subsets[name]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        same_split = (self.split.to_dict() if self.split else None) == (other.split.to_dict() if other.split else None)
        return self.records == other.records and same_split


def save_corpus(corpus: Corpus, path) -> None:
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    sizes = {r.image.shape[0] for r in corpus}
    for rec in corpus:
        if not _ID_RE.match(rec.id):
            raise CorpusError("id is not filesystem safe", rec.id)
        pnm.write(root / "images" / f"{rec.id}.ppm", rec.image)
    annotations = {
        "schema_version": ANNOTATION_SCHEMA,
        "records": [
            {"id": r.id, "provenance": r.provenance, "annotations": [a.to_dict() for a in r.annotations]}
            for r in corpus
        ],
    }
    manifest = {
        "schema_version": CORPUS_SCHEMA,
        "count": len(corpus),
        "image_size": sizes.pop() if len(sizes) == 1 else None,
        "ids": corpus.ids,
        "split": corpus.split.to_dict() if corpus.split else None,
    }
    _write_json(root / "annotations.json", annotations)
    _write_json(root / "manifest.json", manifest)


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _read_json(path: Path, schema: str) -> dict:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path.name} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != schema:
        raise CorpusError(f"{path.name}: schema_version {doc.get('schema_version') if isinstance(doc, dict) else None!r} != {schema!r}")
    return doc


def load_corpus(path, image_size: int | None = None) -> Corpus:
    """Load a corpus directory; an empty or missing-files directory gives an empty corpus."""
    root = Path(path)
    mpath, apath = root / "manifest.json", root / "annotations.json"
    if not mpath.exists() and not apath.exists():
        return Corpus()
    if not mpath.exists() or not apath.exists():
        raise CorpusError(f"{root}: manifest.json and annotations.json must both exist")
    manifest = _read_json(mpath, CORPUS_SCHEMA)
    ann_doc = _read_json(apath, ANNOTATION_SCHEMA)

    by_id: dict[str, dict] = {}
    for row in ann_doc.get("records", []):
        rid = row.get("id") if isinstance(row, dict) else None
        if not isinstance(rid, str):
            raise CorpusError(f"annotation row without a string id: {row!r}")
        by_id[rid] = row

    records = []
    for rid in manifest.get("ids", []):
        row = by_id.get(rid)
        if row is None:
            raise CorpusError("listed in manifest but missing from annotations.json", rid)
        try:
            annotations = [AttributeVector.from_dict(a) for a in row["annotations"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"bad annotation row: {exc}", rid) from None
        try:
            image = pnm.read(root / "images" / f"{rid}.ppm")
        except (OSError, pnm.PnmError) as exc:
            raise CorpusError(f"unreadable image: {exc}", rid) from None
        if image.ndim != 3:
            raise CorpusError("image is not RGB", rid)
        if image_size is not None and image.shape[:2] != (image_size, image_size):
            raise CorpusError(f"image is {image.shape[1]}x{image.shape[0]}, expected {image_size}x{image_size}", rid)
        try:
            records.append(PaintingRecord(id=rid, image=image, annotations=annotations,
                                          provenance=row.get("provenance", {"kind": "real"})))
        except ValueError as exc:
            raise CorpusError(str(exc), rid) from None
    if manifest.get("count", len(records)) != len(records):
        raise CorpusError(f"manifest count {manifest.get('count')} != {len(records)} listed ids")
    split = SplitManifest.from_dict(manifest["split"]) if manifest.get("split") else None
    return Corpus(records=records, split=split)
