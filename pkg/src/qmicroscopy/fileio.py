"""On-disk formats: calibration records, CSV tables, graymaps, checksums."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from pathlib import Path

import numpy as np

from .fock import parse_state
from .sampling import CalibrationCurve

CALIBRATION_FORMAT = "qmicroscopy-calibration"
CALIBRATION_VERSION = 1
#: default phase window mapped onto the gray range
GRAY_RANGE = (0.0, 0.6)


def fmt(x) -> str:
    """Fixed textual form of a number: 17 significant digits, ``inf``/``nan`` tokens."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_calibration(path, curve: CalibrationCurve, extra: dict | None = None):
    lines = [
        f"# {CALIBRATION_FORMAT}",
        f"format_version = {CALIBRATION_VERSION}",
        f"state = {curve.input.label}",
        f"scale = {fmt(curve.scale)}",
        f"offset = {fmt(curve.offset)}",
        f"theta_dark = {fmt(curve.theta_dark)}",
        f"residual_rms = {fmt(curve.residual_rms)}",
        f"n_points = {curve.n_points}",
        f"scale_se = {fmt(curve.scale_se)}",
        f"offset_se = {fmt(curve.offset_se)}",
    ]
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val if isinstance(val, str) else fmt(val)}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_calibration(path) -> CalibrationCurve:
    fields = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        fields[key.strip()] = val.strip()
    version = int(fields.get("format_version", -1))
    if version != CALIBRATION_VERSION:
        raise ValueError(f"unsupported calibration record version {version}")
    return CalibrationCurve(
        input=parse_state(fields["state"]),
        scale=float(fields["scale"]),
        offset=float(fields["offset"]),
        theta_dark=float(fields["theta_dark"]),
        residual_rms=float(fields["residual_rms"]),
        n_points=int(fields["n_points"]),
        scale_se=float(fields["scale_se"]),
        offset_se=float(fields["offset_se"]),
    )


def phase_to_gray(values, lo=GRAY_RANGE[0], hi=GRAY_RANGE[1], maxval=255):
    """Linear map of ``[lo, hi]`` rad onto ``[0, maxval]``; NaN becomes 0."""
    v = np.nan_to_num(np.asarray(values, dtype=float), nan=lo)
    g = np.rint((v - lo) / (hi - lo) * maxval)
    return np.clip(g, 0, maxval).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, values, lo=GRAY_RANGE[0], hi=GRAY_RANGE[1], maxval=255, binary=False):
    """Write a phase image as a P2 (text) or P5 (binary) graymap.

    The phase window is recorded in a header comment.  Row 0 of ``values``
    becomes the first image row.
    """
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    gray = phase_to_gray(values, lo, hi, maxval)
    h, w = gray.shape
    header = f"{'P5' if binary else 'P2'}\n# phase_min={fmt(lo)} phase_max={fmt(hi)} unit=rad\n{w} {h}\n{maxval}\n"
    path = Path(path)
    if binary:
        payload = gray.astype(">u2").tobytes() if maxval > 255 else gray.tobytes()
        path.write_bytes(header.encode("ascii") + payload)
    else:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in gray)
        path.write_text(header + body + "\n", encoding="ascii")
    return path


def read_pgm(path):
    """Return ``(gray, (phase_min, phase_max))`` from a file written by :func:`write_pgm`."""
    raw = Path(path).read_bytes()
    tokens = []
    window = None
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(raw, pos)
        if m is None:
            raise ValueError("truncated PGM header")
        tok = m.group(1)
        pos = m.end()
        if tok.startswith(b"#"):
            found = re.search(rb"phase_min=(\S+) phase_max=(\S+)", tok)
            if found:
                window = (float(found.group(1)), float(found.group(2)))
            continue
        tokens.append(tok)
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P2":
        vals = np.array(raw[pos:].split(), dtype=np.int64)
    elif magic == b"P5":
        pos += 1
        dtype = ">u2" if maxval > 255 else "u1"
        vals = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).astype(np.int64)
    else:
        raise ValueError(f"not a graymap: {magic!r}")
    return vals.reshape(h, w), window


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
