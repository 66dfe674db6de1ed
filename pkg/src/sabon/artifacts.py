"""Deterministic on-disk artifacts: array container, CSV, SVG, manifests.

The array container is a custom single-file format because zip-based
containers embed timestamps and would break bit-exact reproducibility.
Layout: magic, version, JSON header (sorted keys), then named npy blobs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SBNC"
VERSION = 1


def save_arrays(path, header, arrays):
    """Write a versioned header plus named arrays; bit-identical per content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            blob = io.BytesIO()
            np.save(blob, np.ascontiguousarray(arrays[name]))
            payload = blob.getvalue()
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_arrays(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not an array container")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (payload_len,) = struct.unpack("<Q", fh.read(8))
            arrays[name] = np.load(io.BytesIO(fh.read(payload_len)))
    return header, arrays


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def format_value(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, headers, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def write_manifest(path, config_hash, artifact_paths, extra=None):
    """Line-oriented key/value manifest with per-artifact checksums."""
    path = Path(path)
    lines = [f"schema = {VERSION}", f"config_hash = {config_hash}"]
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key} = {format_value(value)}")
    for artifact in sorted(artifact_paths, key=lambda p: Path(p).name):
        artifact = Path(artifact)
        lines.append(f"artifact {artifact.name} = {sha256_file(artifact)}")
    path.write_text("\n".join(lines) + "\n")
    return path


# --- minimal SVG plotting -------------------------------------------------

_DIVERGING = [
    (0.231, 0.298, 0.753),
    (0.552, 0.690, 0.996),
    (0.866, 0.866, 0.866),
    (0.956, 0.604, 0.486),
    (0.706, 0.016, 0.150),
]


def _lerp_color(stops, t):
    t = min(max(t, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(t), len(stops) - 2)
    f = t - i
    rgb = [stops[i][c] * (1 - f) + stops[i + 1][c] * f for c in range(3)]
    return "#%02x%02x%02x" % tuple(int(round(255 * v)) for v in rgb)


def write_heatmap_svg(path, values, title="", size=480):
    """Self-contained SVG heatmap of a square field (row index = x)."""
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    cell = size / m
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{size}" height="{size + 24}">',
        f'<text x="4" y="14" font-size="12" font-family="monospace">{title} '
        f"[{lo:.3g}, {hi:.3g}]</text>",
    ]
    for i in range(m):
        for j in range(m):
            color = _lerp_color(_DIVERGING, (values[i, j] - lo) / span)
            x = round(i * cell, 2)
            y = round(size + 24 - (j + 1) * cell, 2)
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell:.2f}" height="{cell:.2f}" '
                f'fill="{color}"/>'
            )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
    return path


def write_eigenvalue_svg(path, eigenvalues, title="", size=480, reference_angles=None):
    """Eigenvalue scatter in the complex plane with a unit-circle overlay."""
    eigenvalues = np.asarray(eigenvalues)
    radius = max(1.1, float(np.max(np.abs(eigenvalues))) * 1.05 if eigenvalues.size else 1.1)
    half = size / 2.0
    scale = half / radius

    def to_px(z):
        return half + z.real * scale, half - z.imag * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{size}" height="{size + 24}">',
        f'<text x="4" y="14" font-size="12" font-family="monospace">{title}</text>',
        f'<g transform="translate(0,24)">',
        f'<line x1="0" y1="{half:.1f}" x2="{size}" y2="{half:.1f}" stroke="#999"/>',
        f'<line x1="{half:.1f}" y1="0" x2="{half:.1f}" y2="{size}" stroke="#999"/>',
        f'<circle cx="{half:.1f}" cy="{half:.1f}" r="{scale:.2f}" stroke="#2a7" '
        f'fill="none" stroke-dasharray="4 3"/>',
    ]
    for angle in reference_angles or []:
        z = np.exp(1j * angle)
        x, y = to_px(z)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="5" stroke="#0a0" fill="none"/>')
    for value in eigenvalues:
        x, y = to_px(complex(value))
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="#d33"/>')
    parts.append("</g></svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
    return path
