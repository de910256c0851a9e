"""OFF and JSON interchange for :class:`SurfaceMesh`.

Coordinates are written with ``repr`` so an export/import round trip
reproduces every double bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .mesh import MeshError, SurfaceMesh, check

FORMATS = ("off", "json")


def _format_of(path: Path, fmt: Optional[str]) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise MeshError(f"unsupported mesh format {fmt!r}; expected one of {FORMATS}")
    return fmt


def export_mesh(mesh: SurfaceMesh, path, fmt: Optional[str] = None) -> Path:
    """Write ``mesh`` to ``path`` as OFF or JSON (inferred from the suffix)."""
    path = Path(path)
    fmt = _format_of(path, fmt)
    if fmt == "off":
        lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
        lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
        lines += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
        path.write_text("\n".join(lines) + "\n")
    else:
        doc = {
            "vertices": mesh.vertices.tolist(),
            "triangles": mesh.triangles.tolist(),
            "surface": _surface_to_json(mesh.surface),
        }
        path.write_text(json.dumps(doc))
    return path


def import_mesh(path, fmt: Optional[str] = None, validate: bool = True) -> SurfaceMesh:
    """Read an OFF or JSON mesh and (by default) check every invariant.

    Raises
    ------
    MeshError
        On malformed content, an open or non-manifold surface, inconsistent
        orientation or degenerate triangles.  Messages name the offending
        line, edge or triangle.
    """
    path = Path(path)
    fmt = _format_of(path, fmt)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"cannot read {path}: {exc}") from exc
    if fmt == "off":
        mesh = _parse_off(text)
    else:
        mesh = _parse_json(text)
    return check(mesh) if validate else mesh


def _parse_off(text: str) -> SurfaceMesh:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line))
    if not rows or not rows[0][1].startswith("OFF"):
        raise MeshError("malformed OFF: missing 'OFF' header")
    head = rows[0][1][3:].split()
    body = rows[1:]
    if not head:
        if not body:
            raise MeshError("malformed OFF: missing counts line")
        head = body[0][1].split()
        body = body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise MeshError("malformed OFF: counts line must hold vertex and face counts") from None
    if len(body) < nv + nf:
        raise MeshError(f"malformed OFF: expected {nv} vertices and {nf} faces, file is truncated")
    verts = np.empty((nv, 3))
    for i, (lineno, line) in enumerate(body[:nv]):
        parts = line.split()
        try:
            verts[i] = [float(x) for x in parts[:3]]
        except ValueError:
            raise MeshError(f"malformed OFF: bad vertex on line {lineno}") from None
        if len(parts) < 3:
            raise MeshError(f"malformed OFF: bad vertex on line {lineno}")
    tris = np.empty((nf, 3), dtype=np.int64)
    for i, (lineno, line) in enumerate(body[nv:nv + nf]):
        try:
            parts = [int(x) for x in line.split()]
        except ValueError:
            raise MeshError(f"malformed OFF: bad face on line {lineno}") from None
        if len(parts) < 4 or parts[0] != 3:
            raise MeshError(f"malformed OFF: face {i} on line {lineno} is not a triangle")
        tris[i] = parts[1:4]
    return SurfaceMesh(verts, tris)


def _parse_json(text: str) -> SurfaceMesh:
    try:
        doc = json.loads(text)
        verts = np.asarray(doc["vertices"], dtype=float)
        tris = np.asarray(doc["triangles"], dtype=np.int64)
    except (ValueError, KeyError, TypeError) as exc:
        raise MeshError(f"malformed JSON mesh: {exc}") from None
    if verts.size == 0:
        verts = verts.reshape(0, 3)
    return SurfaceMesh(verts, tris, _surface_from_json(doc.get("surface")))


def _surface_to_json(surface):
    if surface is None:
        return None
    return {k: (list(v) if isinstance(v, (tuple, list, np.ndarray)) else v) for k, v in surface.items()}


def _surface_from_json(surface):
    if not surface:
        return None
    out = {k: (tuple(v) if isinstance(v, list) else v) for k, v in surface.items()}
    if out.get("type") not in ("sphere", "ellipsoid"):
        raise MeshError(f"unknown surface type {out.get('type')!r}")
    return out
