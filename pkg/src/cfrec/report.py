"""Deterministic experiment artifacts: CSV/JSON reports, sweep charts, and
run manifests. No timestamps anywhere, so identical runs write identical
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import scipy


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(path, reports):
    """One row per explainer and K: explainer,K,esp,aes,mse."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["explainer", "K", "esp", "aes", "mse"])
        for report in reports:
            for k in sorted(report.per_k):
                esp_val, aes_val = report.per_k[k]
                writer.writerow([report.label, k, _fmt(esp_val),
                                 _fmt(aes_val), _fmt(report.mse)])


def write_report_json(path, reports, details):
    """Aggregate rows plus the full per-user verification records."""
    payload = {
        "reports": [
            {
                "label": r.label,
                "mse": r.mse,
                "per_k": {str(k): {"esp": v[0], "aes": v[1]}
                          for k, v in sorted(r.per_k.items())},
                "num_users_sampled": r.num_users_sampled,
                "seeds": list(r.seeds),
            }
            for r in reports
        ],
        "per_user": details,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "mse", "esp", "aes"])
        for d, mse_val, esp_val, aes_val in rows:
            writer.writerow([d, _fmt(mse_val), _fmt(esp_val), _fmt(aes_val)])


def _panel(x_vals, y_vals, x0, y0, width, height, title, color):
    """One framed line panel; returns SVG fragments."""
    xs = np.asarray(x_vals, dtype=float)
    ys = np.asarray(y_vals, dtype=float)
    x_min, x_max = xs.min(), xs.max()
    y_min, y_max = ys.min(), ys.max()
    x_span = (x_max - x_min) or 1.0
    y_span = (y_max - y_min) or 1.0
    pad = 10.0
    px = x0 + pad + (xs - x_min) / x_span * (width - 2 * pad)
    py = y0 + height - pad - (ys - y_min) / y_span * (height - 2 * pad)
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    parts = [
        f'<rect x="{x0}" y="{y0}" width="{width}" height="{height}" '
        'fill="none" stroke="#999"/>',
        f'<text x="{x0 + 4}" y="{y0 + 14}" font-size="12">{title}</text>',
        f'<text x="{x0 + 4}" y="{y0 + 28}" font-size="10" fill="#555">'
        f'y: {y_min:.4g} to {y_max:.4g}, x: {x_min:g} to {x_max:g}</text>',
        f'<polyline points="{points}" fill="none" stroke="{color}" '
        'stroke-width="1.5"/>',
    ]
    parts += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>'
              for x, y in zip(px, py)]
    return parts


def write_sweep_svg(path, rows):
    """Two stacked panels: training MSE vs d and ESP vs d."""
    dims = [r[0] for r in rows]
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="480" height="420" '
        'font-family="sans-serif">',
    ]
    parts += _panel(dims, [r[1] for r in rows], 20, 20, 440, 180,
                    "training MSE vs embedding dimension", "#1f77b4")
    parts += _panel(dims, [r[2] for r in rows], 20, 220, 440, 180,
                    "ESP (%) vs embedding dimension", "#d62728")
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, config, output_files):
    """Record versions, the resolved configuration, and output digests."""
    out_dir = Path(out_dir)
    manifest = {
        "tool": {"name": "cfrec", "version": "0.1.0"},
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__},
        "config": config,
        "outputs": {name: sha256_file(out_dir / name)
                    for name in sorted(output_files)},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir / "manifest.json"
