"""Bit-stable CSV and manifest output.

Floats are rendered with ``repr`` (shortest round-trip), so identical
numerical results produce identical bytes.  Every CSV ends with a checksum
line ``# sha256=<hex>`` over the header and data rows.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__


def _fmt(x) -> str:
    if hasattr(x, "item") and type(x) not in (bool, int, float, str):
        x = x.item()                # numpy scalars subclass python types
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    body = ("\n".join(lines) + "\n").encode()
    digest = hashlib.sha256(body).hexdigest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + f"# sha256={digest}\n".encode())


def verify_csv(path: Path) -> bool:
    """Re-checks the trailing checksum line."""
    data = Path(path).read_bytes()
    body, _, trailer = data.rpartition(b"# sha256=")
    return hashlib.sha256(body).hexdigest().encode() == trailer.strip()


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return __version__


def write_manifest(out_dir: Path, experiment: str, config: dict, seed: int,
                   wall_seconds: float) -> Path:
    manifest = {
        "experiment": experiment,
        "config": config,
        "seed": seed,
        "version": _version(),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "wall_seconds": round(wall_seconds, 3),
    }
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
