"""On-disk formats: frame sequences, flow dumps, beta tables, metric records."""

import json
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .flow import FlowField

__all__ = [
    "read_frame",
    "write_frame",
    "read_sequence",
    "write_sequence",
    "write_flow",
    "read_flow",
    "write_beta_table",
    "read_beta_table",
    "write_metric_records",
    "read_metric_records",
    "format_runtime_table",
    "write_runtime_table",
]

_FRAME_RE = re.compile(r"^(?P<prefix>.+)_(?P<index>\d{5})\.(png|tif|tiff)$", re.IGNORECASE)


def read_frame(path):
    """Grayscale frame in [0, 1]; 8- and 16-bit rasters, colour goes to luminance."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L"):
            return np.asarray(im, dtype=np.uint16).astype(np.float64) / 65535.0
        if im.mode == "I":
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode not in ("L", "F"):
            # ITU-R 601 luma, as Pillow's "L" conversion
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.float64)
        return arr if im.mode == "F" else arr / 255.0


def write_frame(path, frame, bits=16):
    """Write a [0, 1] frame as an 8- or 16-bit grayscale PNG."""
    f = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        Image.fromarray(np.round(f * 65535.0).astype(np.uint16)).save(path)
    elif bits == 8:
        Image.fromarray(np.round(f * 255.0).astype(np.uint8)).save(path)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")


def _frame_files(directory, prefix=None):
    files = {}
    for p in Path(directory).iterdir():
        m = _FRAME_RE.match(p.name)
        if m and (prefix is None or m.group("prefix") == prefix):
            key = (m.group("prefix"), int(m.group("index")))
            files[key] = p
    if not files:
        raise FileNotFoundError(f"no <prefix>_%05d frames in {directory}")
    prefixes = {k[0] for k in files}
    if len(prefixes) > 1:
        raise ValueError(f"several frame prefixes in {directory}: {sorted(prefixes)}")
    return [files[k] for k in sorted(files)], sorted(k[1] for k in files)


def read_sequence(directory, prefix=None):
    """Read ``<prefix>_00000.png, <prefix>_00001.png, ...`` into (T, H, W).

    Raises on gaps in the numbering or frames of differing size, naming the
    first offending index.
    """
    paths, indices = _frame_files(directory, prefix)
    for expect, got in enumerate(indices):
        if got != expect:
            raise ValueError(f"frame {expect:05d} is missing from {directory}")
    frames = []
    for i, p in enumerate(paths):
        f = read_frame(p)
        if frames and f.shape != frames[0].shape:
            raise ValueError(f"frame {i} has shape {f.shape}, expected {frames[0].shape}")
        frames.append(f)
    return np.stack(frames)


def write_sequence(seq, directory, prefix="frame", bits=16):
    """Write (T, H, W) frames as ``<prefix>_%05d.png``; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, f in enumerate(np.asarray(seq)):
        p = d / f"{prefix}_{t:05d}.png"
        write_frame(p, f, bits)
        paths.append(p)
    return paths


_FLOW_HEADER = struct.Struct("<4sII")


def write_flow(path, flow):
    """``FLOW`` magic, u32 width, u32 height, then u and v planes as float32."""
    h, w = flow.shape
    with open(path, "wb") as f:
        f.write(_FLOW_HEADER.pack(b"FLOW", w, h))
        f.write(np.ascontiguousarray(flow.u, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(flow.v, dtype="<f4").tobytes())


def read_flow(path):
    data = Path(path).read_bytes()
    magic, w, h = _FLOW_HEADER.unpack_from(data)
    if magic != b"FLOW":
        raise ValueError(f"{path}: bad magic {magic!r}")
    planes = np.frombuffer(data, dtype="<f4", offset=_FLOW_HEADER.size)
    if planes.size != 2 * w * h:
        raise ValueError(f"{path}: expected {2 * w * h} values, found {planes.size}")
    planes = planes.astype(np.float64)
    return FlowField(planes[:w * h].reshape(h, w), planes[w * h:].reshape(h, w))


def write_beta_table(path, dr0, beta):
    """Two whitespace-separated columns ``dr0 beta`` with a comment header."""
    rows = np.column_stack([np.asarray(dr0, float), np.asarray(beta, float)])
    np.savetxt(path, rows, fmt="%.17g", header="dr0 beta")


def read_beta_table(path):
    rows = np.atleast_2d(np.loadtxt(path, comments="#"))
    if rows.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {rows.shape[1]}")
    return rows[:, 0], rows[:, 1]


def _json_value(v):
    if isinstance(v, (float, np.floating)) and not np.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_metric_records(path, records):
    """One JSON object per line, e.g. ``{"index": 0, "psnr_db": 24.1, ...}``."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps({k: _json_value(v) for k, v in rec.items()}) + "\n")


def read_metric_records(path):
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                for k, v in rec.items():
                    if v in ("inf", "-inf", "nan"):
                        rec[k] = float(v)
                out.append(rec)
    return out


def format_runtime_table(timings):
    """Stage / seconds table with an ``Overall`` row."""
    width = max([len(k) for k in timings] + [len("Overall")])
    lines = [f"{'Stage':<{width}}  {'Seconds':>10}"]
    for stage, sec in timings.items():
        lines.append(f"{stage:<{width}}  {sec:>10.2f}")
    lines.append(f"{'Overall':<{width}}  {sum(timings.values()):>10.2f}")
    return "\n".join(lines) + "\n"


def write_runtime_table(path, timings):
    Path(path).write_text(format_runtime_table(timings))
