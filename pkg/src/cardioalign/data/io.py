"""On-disk dataset layout.

::

    <root>/schema.json
    <root>/subjects/<id>/meta.json        shapes, spacing, plane metadata, seed
    <root>/subjects/<id>/images.f32       little-endian float32, row-major
    <root>/subjects/<id>/masks.u8         uint8 labels, same shape
    <root>/subjects/<id>/tabular.json     values + missing flags
    <root>/subjects/<id>/labels.json      disease flags + ICD-10 codes
    <root>/subjects/<id>/phenotypes.json
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .icd10 import DiseaseLabels
from .phantom import CmrStack, PhantomParams, PhenotypeSet, PlaneMeta, SegMask, Subject
from .schema import TabularRecord, TabularSchema

FORMAT_VERSION = 1


class DatasetError(IOError):
    pass


@dataclass
class Dataset:
    schema: TabularSchema
    subjects: list[Subject] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.subjects)

    def by_id(self) -> dict[str, Subject]:
        return {s.id: s for s in self.subjects}


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


def write_dataset(subjects: list[Subject], root, schema: TabularSchema) -> Path:
    root = Path(root)
    (root / "subjects").mkdir(parents=True, exist_ok=True)
    _dump(root / "schema.json", {"format_version": FORMAT_VERSION, **schema.to_dict()})
    for s in subjects:
        s.record.validate(schema)
        d = root / "subjects" / s.id
        d.mkdir(parents=True, exist_ok=True)
        img = np.ascontiguousarray(s.stack.images, dtype="<f4")
        msk = np.ascontiguousarray(s.mask.labels, dtype=np.uint8)
        if img.shape != msk.shape:
            raise DatasetError(f"subject {s.id}: image {img.shape} and mask {msk.shape} differ")
        (d / "images.f32").write_bytes(img.tobytes())
        (d / "masks.u8").write_bytes(msk.tobytes())
        _dump(d / "meta.json", {
            "format_version": FORMAT_VERSION, "id": s.id, "shape": list(img.shape),
            "spacing": s.stack.spacing, "seed": s.seed,
            "planes": [asdict(p) for p in s.stack.planes],
            "params": None if s.params is None else s.params.to_dict(),
        })
        _dump(d / "tabular.json", {
            "values": [None if m else float(v) for v, m in zip(s.record.values, s.record.missing)],
            "missing": [bool(m) for m in s.record.missing],
        })
        _dump(d / "labels.json", {"flags": s.labels.to_dict(), "icd10": list(s.icd10)})
        _dump(d / "phenotypes.json", s.phenotypes.to_dict())
    return root


def _read_blob(path: Path, dtype, shape) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing blob {path}")
    raw = path.read_bytes()
    n = int(np.prod(shape))
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != n * itemsize:
        raise DatasetError(f"corrupt blob {path}: {len(raw)} bytes, expected {n * itemsize}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _check_version(meta: dict, where) -> None:
    v = meta.get("format_version")
    if v != FORMAT_VERSION:
        raise DatasetError(f"{where}: format version {v}, reader supports {FORMAT_VERSION}")


def read_subject(d: Path, schema: TabularSchema) -> Subject:
    meta = json.loads((d / "meta.json").read_text())
    _check_version(meta, d / "meta.json")
    shape = tuple(meta["shape"])
    images = _read_blob(d / "images.f32", "<f4", shape).astype(np.float32)
    masks = _read_blob(d / "masks.u8", np.uint8, shape)
    tab = json.loads((d / "tabular.json").read_text())
    missing = np.asarray(tab["missing"], dtype=bool)
    values = np.array([0.0 if v is None else v for v in tab["values"]], dtype=np.float64)
    if len(values) != len(schema):
        raise DatasetError(f"{d / 'tabular.json'}: {len(values)} values, schema has {len(schema)}")
    record = TabularRecord(values, missing)
    record.validate(schema)
    lab = json.loads((d / "labels.json").read_text())
    ph = PhenotypeSet(**json.loads((d / "phenotypes.json").read_text()))
    planes = [PlaneMeta(p["view"], p["index"], p["position"], tuple(p["origin"]), tuple(p["u"]),
                        tuple(p["v"])) for p in meta["planes"]]
    params = None if meta.get("params") is None else PhantomParams.from_dict(meta["params"])
    return Subject(meta["id"], CmrStack(images, planes, meta["spacing"]), SegMask(masks), record,
                   ph, DiseaseLabels(**lab["flags"]), list(lab["icd10"]), meta["seed"], params)


def read_dataset(root, ids: list[str] | None = None) -> Dataset:
    root = Path(root)
    if not (root / "schema.json").exists():
        raise DatasetError(f"{root} has no schema.json")
    sd = json.loads((root / "schema.json").read_text())
    _check_version(sd, root / "schema.json")
    schema = TabularSchema.from_dict(sd)
    sub = root / "subjects"
    names = sorted(os.listdir(sub)) if sub.exists() else []
    if ids is not None:
        wanted = set(ids)
        names = [n for n in names if n in wanted]
    return Dataset(schema, [read_subject(sub / n, schema) for n in names])
