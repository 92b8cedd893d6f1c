"""Checkpoint archives: a zip of named float32 ``.npy`` arrays plus ``manifest.json``.

Manifest keys:

    format      "onestep-sr-ckpt/1"
    step        completed training steps
    stage       1 or 2
    config      flat key/value echo of the run configuration
    arrays      sorted list of array names in the archive

Entries are written with a fixed timestamp so identical states produce
identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT = "onestep-sr-ckpt/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(path, arrays: dict[str, np.ndarray], *, step: int, stage: int, config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT,
        "step": int(step),
        "stage": int(stage),
        "config": config,
        "arrays": sorted(arrays),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.array(arrays[name], dtype=np.float32, order="C"), allow_pickle=False)
            zf.writestr(_entry(f"{name}.npy"), buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_config: dict | None = None):
    """Returns ``(arrays, manifest)``; a config echo that differs from
    ``expected_config`` raises :class:`CheckpointError`."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
        arrays = {
            name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            for name in manifest["arrays"]
        }
    if expected_config is not None and manifest["config"] != expected_config:
        diff = sorted(
            k for k in set(manifest["config"]) | set(expected_config)
            if manifest["config"].get(k) != expected_config.get(k)
        )
        raise CheckpointError(f"checkpoint config mismatch on keys: {', '.join(diff)}")
    return arrays, manifest
