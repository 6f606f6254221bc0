"""Polynomial color mappings between white-balance settings, and blending.

A scene is represented by one high-resolution image rendered at the daylight
setting plus smaller companions re-rendered at other settings through fitted
polynomial mappings. The corrected image is the per-pixel weighted sum of
those renderings.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DimensionError, SingularFitError
from .tensor import _resize_matrix

CANONICAL_ORDER = ("t", "f", "d", "c", "s")

KELVIN_BY_TAG = {"t": 2850, "f": 3800, "d": 5500, "c": 6500, "s": 7500}

ALLOWED_SETTING_SETS = (("t", "d", "s"), ("t", "f", "d", "c", "s"))


@dataclass(frozen=True)
class WbSetting:
    tag: str
    kelvin: int

    @classmethod
    def from_tag(cls, tag: str) -> "WbSetting":
        if tag not in KELVIN_BY_TAG:
            raise ValueError(f"unknown WB setting tag {tag!r}")
        return cls(tag, KELVIN_BY_TAG[tag])


def canonical_settings(tags: Sequence[str]) -> Tuple[str, ...]:
    """Validate a setting set and return it in canonical (t,f,d,c,s) order."""
    unique = set(tags)
    if len(unique) != len(list(tags)):
        raise ValueError(f"duplicate WB settings in {tags!r}")
    ordered = tuple(t for t in CANONICAL_ORDER if t in unique)
    if len(ordered) != len(unique):
        unknown = unique - set(CANONICAL_ORDER)
        raise ValueError(f"unknown WB setting tags {sorted(unknown)!r}")
    if ordered not in ALLOWED_SETTING_SETS:
        raise ValueError(f"setting set {ordered!r} not supported; use (t,d,s) or (t,f,d,c,s)")
    return ordered


# ------------------------------------------------------------------ kernel

# R, G, B, RG, RB, GB, R^2, G^2, B^2, RGB, 1 as (r,g,b) exponent triples
DEFAULT_KERNEL_TERMS: Tuple[Tuple[int, int, int], ...] = (
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 1, 0),
    (1, 0, 1),
    (0, 1, 1),
    (2, 0, 0),
    (0, 2, 0),
    (0, 0, 2),
    (1, 1, 1),
    (0, 0, 0),
)


@dataclass(frozen=True)
class PolyKernelSpec:
    """Ordered monomial exponents over (R, G, B)."""

    terms: Tuple[Tuple[int, int, int], ...] = DEFAULT_KERNEL_TERMS

    def __len__(self) -> int:
        return len(self.terms)

    def features(self, pixels: np.ndarray) -> np.ndarray:
        """Monomial features for (..., 3) pixel arrays -> (..., n_terms)."""
        pixels = np.asarray(pixels, dtype=np.float64)
        r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]
        cols = [(r**er) * (g**eg) * (b**eb) for er, eg, eb in self.terms]
        return np.stack(cols, axis=-1)


def poly_features(rgb, kernel: PolyKernelSpec = PolyKernelSpec()) -> np.ndarray:
    """Kernel feature vector of one RGB triple."""
    return kernel.features(np.asarray(rgb, dtype=np.float64))


# ------------------------------------------------------------------ mapping

@dataclass
class PolyMapping:
    """3 x n_terms matrix mapping kernelized source colors to a WB setting."""

    setting: WbSetting
    matrix: np.ndarray
    kernel: PolyKernelSpec = field(default_factory=PolyKernelSpec)
    residual_rmse: Optional[float] = None
    source_id: str = ""
    target_id: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (3, len(self.kernel)):
            raise DimensionError(
                f"mapping matrix shape {self.matrix.shape} does not match kernel size {len(self.kernel)}"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("mapping matrix contains non-finite values")

    @classmethod
    def identity(cls, setting: WbSetting, kernel: PolyKernelSpec = PolyKernelSpec()) -> "PolyMapping":
        m = np.zeros((3, len(kernel)))
        for row, want in enumerate(((1, 0, 0), (0, 1, 0), (0, 0, 1))):
            m[row, kernel.terms.index(want)] = 1.0
        return cls(setting, m, kernel)


RIDGE = 1e-8
_RANK_TOL = 1e-10


def fit_mapping(
    source: np.ndarray,
    target: np.ndarray,
    kernel: PolyKernelSpec = PolyKernelSpec(),
    setting: WbSetting = WbSetting.from_tag("d"),
    source_id: str = "",
    target_id: str = "",
) -> PolyMapping:
    """Least-squares mapping taking kernelized source colors onto target colors.

    Solved via ridge-stabilized normal equations; raises SingularFitError when
    the pre-ridge design matrix is rank deficient (e.g. constant-color source).
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape:
        raise DimensionError(f"source/target shapes differ: {source.shape} vs {target.shape}")
    phi = kernel.features(source.reshape(-1, 3))
    t = target.reshape(-1, 3)
    k = len(kernel)
    if phi.shape[0] < k:
        raise SingularFitError(f"need at least {k} pixels to fit, got {phi.shape[0]}")
    a = phi.T @ phi
    eigvals = np.linalg.eigvalsh(a)
    if eigvals[0] < _RANK_TOL * max(eigvals[-1], 1.0):
        raise SingularFitError("design matrix is rank deficient (degenerate color distribution)")
    m = np.linalg.solve(a + RIDGE * np.eye(k), phi.T @ t).T
    resid = t - phi @ m.T
    rmse = float(np.sqrt(np.mean(resid**2)))
    return PolyMapping(setting, m, kernel, residual_rmse=rmse, source_id=source_id, target_id=target_id)


def apply_mapping(mapping: PolyMapping, img: np.ndarray) -> np.ndarray:
    """Per-pixel clamp01(M . phi(pixel))."""
    img = np.asarray(img)
    phi = mapping.kernel.features(img.reshape(-1, 3))
    out = phi @ mapping.matrix.T
    return np.clip(out.reshape(img.shape), 0.0, 1.0).astype(np.float32)


def save_mapping(mapping: PolyMapping, path):
    payload = {
        "setting": mapping.setting.tag,
        "kelvin": mapping.setting.kelvin,
        "kernel_terms": [list(t) for t in mapping.kernel.terms],
        "source_id": mapping.source_id,
        "target_id": mapping.target_id,
        "residual_rmse": mapping.residual_rmse,
        "matrix": [[float(v) for v in row] for row in mapping.matrix],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, path)


def load_mapping(path) -> PolyMapping:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"unreadable mapping file {path}: {e}") from e
    kernel = PolyKernelSpec(tuple(tuple(t) for t in payload["kernel_terms"]))
    return PolyMapping(
        WbSetting.from_tag(payload["setting"]),
        np.asarray(payload["matrix"], dtype=np.float64),
        kernel,
        residual_rmse=payload.get("residual_rmse"),
        source_id=payload.get("source_id", ""),
        target_id=payload.get("target_id", ""),
    )


# ------------------------------------------------------------------ rendering

@dataclass
class RenderedSet:
    """Per-setting renderings of one scene, in canonical setting order."""

    settings: Tuple[str, ...]
    images: List[np.ndarray]

    def __post_init__(self):
        if len(self.settings) != len(self.images):
            raise DimensionError("settings and images count mismatch")
        if len(self.settings) < 2:
            raise ValueError("a rendered set needs at least 2 settings")
        if len(set(self.settings)) != len(self.settings):
            raise ValueError(f"duplicate settings in rendered set: {self.settings}")
        expected = tuple(t for t in CANONICAL_ORDER if t in self.settings)
        if tuple(self.settings) != expected:
            raise ValueError(f"settings must follow canonical order {expected}, got {tuple(self.settings)}")
        base = self.images[0].shape
        for img in self.images:
            if img.shape != base:
                raise DimensionError("all renderings must share dimensions")

    @property
    def height(self) -> int:
        return self.images[0].shape[0]

    @property
    def width(self) -> int:
        return self.images[0].shape[1]

    def image_for(self, tag: str) -> np.ndarray:
        return self.images[self.settings.index(tag)]


@dataclass
class WeightMaps:
    """One single-channel map per WB setting, order mirroring the RenderedSet."""

    settings: Tuple[str, ...]
    maps: List[np.ndarray]

    def __post_init__(self):
        if len(self.settings) != len(self.maps):
            raise DimensionError("settings and maps count mismatch")
        base = self.maps[0].shape
        for m in self.maps:
            if m.shape != base:
                raise DimensionError("all weighting maps must share dimensions")


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an H x W x C image (same convention as the tensor op)."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if out_h == h and out_w == w:
        return img.copy()
    ry = _resize_matrix(h, out_h, np.float64)
    rx = _resize_matrix(w, out_w, np.float64)
    tmp = np.tensordot(ry, img, axes=([1], [0]))  # (out_h, W, C)
    out = np.tensordot(tmp, rx, axes=([1], [1]))  # (out_h, C, out_w)
    return np.ascontiguousarray(out.transpose(0, 2, 1)).astype(img.dtype, copy=False)


def render_wb_set(
    init: np.ndarray,
    mappings: Sequence[PolyMapping],
    small_size: int,
    settings: Sequence[str] = ("t", "d", "s"),
) -> RenderedSet:
    """Resize the daylight base to small_size^2 and re-render per setting.

    The daylight entry is the resized base itself; a daylight mapping, if
    supplied, is ignored in favor of the identity.
    """
    if small_size < 16:
        raise ValueError("small_size must be >= 16")
    tags = canonical_settings(settings)
    by_tag = {}
    for m in mappings:
        if m.setting.tag in by_tag:
            raise ValueError(f"duplicate mapping for setting {m.setting.tag!r}")
        by_tag[m.setting.tag] = m
    missing = [t for t in tags if t != "d" and t not in by_tag]
    if missing:
        raise DataError(f"missing mappings for settings: {missing}")
    small = resize_image(init, small_size, small_size)
    images = []
    for tag in tags:
        if tag == "d":
            images.append(small.astype(np.float32, copy=True))
        else:
            images.append(apply_mapping(by_tag[tag], small))
    return RenderedSet(tags, images)


def blend(maps: WeightMaps, renders: RenderedSet) -> np.ndarray:
    """clamp01(sum_i W_i (*) I_i), weights broadcast over the 3 channels."""
    if tuple(maps.settings) != tuple(renders.settings):
        raise ValueError(f"setting order mismatch: maps {maps.settings} vs renders {renders.settings}")
    h, w = renders.height, renders.width
    if maps.maps[0].shape != (h, w):
        raise DimensionError(f"map dims {maps.maps[0].shape} do not match render dims {(h, w)}")
    out = np.zeros((h, w, 3), dtype=np.float64)
    for weight, img in zip(maps.maps, renders.images):
        out += weight[:, :, None].astype(np.float64) * img.astype(np.float64)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def clamp_maps(maps: WeightMaps) -> WeightMaps:
    """Elementwise clamp of every map to [0, 1]."""
    return WeightMaps(maps.settings, [np.clip(m, 0.0, 1.0) for m in maps.maps])
