"""Study manifest: one scan per line as ``patient_id, visit, image, label, center``."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union


@dataclass(frozen=True)
class ManifestRecord:
    patient_id: str
    visit: int
    image_path: Path
    label_path: Path
    center_tag: str

    @property
    def scan_id(self) -> str:
        return f"{self.patient_id}_v{self.visit}"

    @property
    def body_mask_path(self) -> Path:
        """Sibling file holding the precomputed body mask (may not exist)."""
        return body_mask_path(self.image_path)


def body_mask_path(image_path: Union[str, os.PathLike]) -> Path:
    p = Path(image_path)
    return p.with_name(p.name.removesuffix(".mvf") + ".body.mvf")


def load_manifest(path: Union[str, os.PathLike], check_files: bool = True) -> List[ManifestRecord]:
    """Parse a manifest; relative file paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    records: List[ManifestRecord] = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 5 or not all(fields):
                raise ValueError(f"{path}:{lineno}: expected 5 comma-separated fields, got {len(fields)}")
            pid, visit, image, label, center = fields
            try:
                visit_no = int(visit)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: visit must be an integer, got {visit!r}") from None
            key = (pid, visit_no)
            if key in seen:
                raise ValueError(f"{path}:{lineno}: duplicate patient/visit {key}, first seen on line {seen[key]}")
            seen[key] = lineno
            rec = ManifestRecord(pid, visit_no, base / image, base / label, center)
            if check_files:
                for f in (rec.image_path, rec.label_path):
                    if not f.is_file():
                        raise FileNotFoundError(f"{path}:{lineno}: missing file {f}")
            records.append(rec)
    return records


def write_manifest(path: Union[str, os.PathLike], records: Sequence[ManifestRecord]) -> None:
    path = Path(path)
    base = path.parent
    lines = ["# patient_id, visit, image_path, label_path, center_tag"]
    for r in records:
        image = os.path.relpath(r.image_path, base)
        label = os.path.relpath(r.label_path, base)
        lines.append(f"{r.patient_id}, {r.visit}, {image}, {label}, {r.center_tag}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
