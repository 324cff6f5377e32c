"""Persistence: flat binary fields with JSON sidecars, CSV traces, run manifests.

Binary layout (little endian): the 8-byte magic ``FRACOBS1``, ``uint32``
``n, nx, ny``, ``float64`` ``s, x_box, y_max, hx, hy``, then the nodal
values as row-major doubles of shape ``(nx, [nx,] ny)``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import struct
from pathlib import Path

import numpy as np

from .domain import ObstacleSpec, SolutionField, build_grid

MAGIC = b"FRACOBS1"
HEADER = struct.Struct("<8s3I5d")
SIDECAR_SCHEMA = 1


class ArtifactError(ValueError):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def field_bytes(field_: SolutionField) -> bytes:
    g = field_.grid
    head = HEADER.pack(MAGIC, g.n, g.nx, g.ny, g.s, g.x_box, g.y_max, g.hx, g.hy)
    return head + np.ascontiguousarray(field_.values, dtype="<f8").tobytes()


def write_field(path, field_: SolutionField, obstacle: ObstacleSpec | None = None, extra: dict | None = None):
    """Write ``path`` (binary) and ``path.json`` (sidecar); return both paths."""
    path = Path(path)
    data = field_bytes(field_)
    path.write_bytes(data)
    side = {
        "schema_version": SIDECAR_SCHEMA,
        "binary": path.name,
        "sha256": hashlib.sha256(data).hexdigest(),
        "grid": field_.grid.to_dict(),
        "converged": field_.converged,
        "residual_norm": field_.residual_norm,
        "iterations": field_.iterations,
        "obstacle": obstacle.to_dict() if obstacle is not None else None,
        **(extra or {}),
    }
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def read_field(path) -> tuple[SolutionField, dict]:
    """Read a field from its binary file or its sidecar."""
    path = Path(path)
    if path.suffix == ".json":
        side = json.loads(path.read_text())
        path = path.with_name(side["binary"])
    else:
        sidecar = path.with_suffix(path.suffix + ".json")
        side = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    if not path.exists():
        raise ArtifactError(f"missing field file {path}")
    if side and side.get("schema_version") != SIDECAR_SCHEMA:
        raise ArtifactError(f"unsupported sidecar schema {side.get('schema_version')!r}")
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise ArtifactError("truncated field file")
    magic, n, nx, ny, s, x_box, y_max, _, _ = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArtifactError("not a field file")
    grid = build_grid(n, s, x_box, y_max, nx, ny)
    values = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(grid.shape).astype(float)
    values.setflags(write=False)
    field_ = SolutionField(
        grid,
        values,
        bool(side.get("converged", True)),
        float(side.get("residual_norm", 0.0)),
        int(side.get("iterations", 0)),
    )
    return field_, side


def trace_csv(field_: SolutionField, obstacle: ObstacleSpec | None = None) -> str:
    g = field_.grid
    pts = g.trace_points().reshape(-1, g.n)
    u = field_.trace.ravel()
    phi = obstacle.eval_phi(pts) if obstacle is not None else np.full(len(u), np.nan)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k}" for k in range(g.n)] + ["u", "phi", "gap"])
    for p, uu, ph in zip(pts, u, phi):
        w.writerow([repr(float(c)) for c in p] + [repr(float(uu)), repr(float(ph)), repr(float(uu - ph))])
    return buf.getvalue()


def versions() -> dict:
    import numba
    import scipy
    import sympy

    from . import __version__

    return {
        "fracobs": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "sympy": sympy.__version__,
    }


def write_manifest(out_dir, command: str, config: dict, seed: int, outputs, threads: int | None = None) -> Path:
    """Manifest with config hash, versions, seeds and output checksums."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "threads": threads,
        "versions": versions(),
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
