"""Verified loading of simulator outputs.

Every file is checked against the run manifest before use, so figures can
never silently drift out of sync with the data that produced them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import pathlib

KNOWN_SCHEMAS = {
    "manifest": "run-manifest-v1",
    "ensemble": "ensemble-v1",
    "sweep": "sweep-v1",
    "rates": "rates-v1",
}


class FigureInputError(ValueError):
    """Missing, corrupt or schema-incompatible input."""


def _sha256(path: pathlib.Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDirectory:
    """A simulator output directory with manifest verification."""

    def __init__(self, path: str | pathlib.Path):
        self.path = pathlib.Path(path)
        manifest_path = self.path / "manifest.json"
        if not manifest_path.exists():
            raise FigureInputError(f"no manifest.json in {self.path}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("schema") != KNOWN_SCHEMAS["manifest"]:
            raise FigureInputError(
                f"unsupported manifest schema {self.manifest.get('schema')!r}")

    def file(self, name: str) -> pathlib.Path:
        p = self.path / name
        if not p.exists():
            raise FigureInputError(f"{name} not found in {self.path}")
        listed = self.manifest.get("outputs", {}).get(name)
        if listed is None:
            raise FigureInputError(f"{name} is not listed in the manifest")
        actual = _sha256(p)
        if actual != listed:
            raise FigureInputError(
                f"checksum mismatch for {name}: manifest {listed[:12]}..., "
                f"file {actual[:12]}... (stale or edited output)")
        return p

    def json(self, name: str, schema_key: str | None = None) -> dict:
        data = json.loads(self.file(name).read_text())
        if schema_key is not None:
            expected = KNOWN_SCHEMAS[schema_key]
            if data.get("schema") != expected:
                raise FigureInputError(
                    f"{name}: schema {data.get('schema')!r}, expected {expected!r}")
        return data

    def csv(self, name: str) -> tuple[list[str], list[list[str]]]:
        with open(self.file(name)) as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        if not rows:
            raise FigureInputError(f"{name}: empty file")
        header, body = rows[0], rows[1:]
        if not body:
            raise FigureInputError(f"{name}: no data rows")
        return header, body


def columns(header: list[str], body: list[list[str]], names: list[str]):
    import numpy as np

    idx = []
    for n in names:
        if n not in header:
            raise FigureInputError(f"missing column {n!r}")
        idx.append(header.index(n))
    arr = np.array([[float(row[i]) for i in idx] for row in body])
    return [arr[:, j] for j in range(len(names))]
