"""PNG image I/O.

Images travel through the pipeline as H x W x 3 float arrays in [0, 1],
RGB order. 8-bit is the storage default (decode v/255, encode round(v*255));
a 16-bit mode is available for precision experiments. All writes go through
a temp file + rename so failures never leave partial outputs.
"""

from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError

PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 6]


def load_image(path) -> np.ndarray:
    """Read a PNG into float32 RGB in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"unreadable image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return (rgb.astype(np.float32) / scale).clip(0.0, 1.0)


def save_image(path, img: np.ndarray, bits: int = 8):
    """Write float [0, 1] RGB (or single-channel) as PNG, atomically."""
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    arr = np.clip(img, 0.0, 1.0)
    if bits == 8:
        encoded = np.rint(arr * 255.0).astype(np.uint8)
    elif bits == 16:
        encoded = np.rint(arr * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"unsupported bit depth: {bits}")
    bgr = cv2.cvtColor(encoded, cv2.COLOR_RGB2BGR)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    ok, buf = cv2.imencode(".png", bgr, PNG_PARAMS)
    if not ok:
        raise DataError(f"PNG encode failed for {path}")
    tmp.write_bytes(buf.tobytes())
    os.replace(tmp, path)


def save_gray(path, values: np.ndarray, bits: int = 8):
    """Write a single-channel [0, 1] map as grayscale PNG."""
    arr = np.clip(values, 0.0, 1.0)
    if bits == 8:
        encoded = np.rint(arr * 255.0).astype(np.uint8)
    else:
        encoded = np.rint(arr * 65535.0).astype(np.uint16)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    ok, buf = cv2.imencode(".png", encoded, PNG_PARAMS)
    if not ok:
        raise DataError(f"PNG encode failed for {path}")
    tmp.write_bytes(buf.tobytes())
    os.replace(tmp, path)


_HEAT_ANCHORS = np.array(
    [
        [0.0, 0.0, 0.3],
        [0.0, 0.4, 1.0],
        [0.0, 0.9, 0.9],
        [1.0, 0.9, 0.0],
        [0.9, 0.1, 0.0],
    ],
    dtype=np.float32,
)


def heatmap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values onto a blue-cyan-yellow-red ramp."""
    v = np.clip(values, 0.0, 1.0) * (len(_HEAT_ANCHORS) - 1)
    lo = np.floor(v).astype(int)
    hi = np.minimum(lo + 1, len(_HEAT_ANCHORS) - 1)
    frac = (v - lo)[..., None]
    return _HEAT_ANCHORS[lo] * (1.0 - frac) + _HEAT_ANCHORS[hi] * frac
