"""Adaptive per-grain boundary weighting and the selective weighted
cross-entropy evaluator.

Each interior grain gets its own Gaussian scale sigma_i = max_dis_i / gamma,
where max_dis_i is the grain's deepest interior distance, so small grains get
fast-decaying (protective) weights. Background weight peaks at the grain
center, object weight peaks on the boundary; the loss picks one branch per
pixel depending on whether the pixel lies inside the dilated boundary band.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .io import read_gsr, write_gsr
from .model import (
    BoundaryGrid,
    ConsistencyError,
    FormatError,
    ParameterError,
    ProbabilityGrid,
    ResolutionError,
    ValidationError,
)
from .morphology import connected_components, dilate, distance_transform

PROBABILITY_CLAMP = 1e-12  # floor applied to the selected branch before log

_BALANCE_POLICIES = ("frequency", "none")


@dataclass(frozen=True)
class WeightParams:
    w0: float = 10.0              # Gaussian amplitude
    gamma: float = 2.58           # sigma divisor: sigma_i = max_dis_i / gamma
    dilate_radius: float = 2.0    # half-width of the boundary band m_d, pixels
    class_balance: str = "frequency"  # w_c policy: "frequency" or "none"

    def __post_init__(self) -> None:
        if self.w0 < 0:
            raise ParameterError(f"w0 must be ≥ 0, got {self.w0}")
        if self.gamma <= 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if self.dilate_radius < 0:
            raise ParameterError(f"dilate_radius must be ≥ 0, got {self.dilate_radius}")
        if self.class_balance not in _BALANCE_POLICIES:
            raise ParameterError(
                f"class_balance must be one of {_BALANCE_POLICIES}, got {self.class_balance!r}"
            )


@dataclass(frozen=True)
class WeightField:
    """Per-pixel weights plus the per-grain scales that produced them."""

    w_bck: np.ndarray   # (h, w) float64 background weight
    w_obj: np.ndarray   # (h, w) float64 object (boundary) weight
    m_d: np.ndarray     # (h, w) uint8 dilated-mask indicator
    params: WeightParams
    per_grain: dict[int, tuple[float, float]] = field(repr=False)  # id -> (max_dis, sigma)

    def __post_init__(self) -> None:
        for name in ("w_bck", "w_obj", "m_d"):
            arr = getattr(self, name)
            if arr.ndim != 2:
                raise ValidationError(f"WeightField.{name} must be 2-D")
        if not (self.w_bck.shape == self.w_obj.shape == self.m_d.shape):
            raise ConsistencyError("WeightField channel shapes disagree")
        wb = np.ascontiguousarray(self.w_bck, dtype=np.float64)
        wo = np.ascontiguousarray(self.w_obj, dtype=np.float64)
        md = np.ascontiguousarray(self.m_d, dtype=np.uint8)
        if (md > 1).any():
            raise ValidationError("m_d values must be 0 or 1")
        for arr in (wb, wo, md):
            arr.flags.writeable = False
        object.__setattr__(self, "w_bck", wb)
        object.__setattr__(self, "w_obj", wo)
        object.__setattr__(self, "m_d", md)

    @property
    def height(self) -> int:
        return self.w_bck.shape[0]

    @property
    def width(self) -> int:
        return self.w_bck.shape[1]


@dataclass(frozen=True)
class LossResult:
    total: float                      # E = -sum of terms, nonnegative
    terms: np.ndarray                 # (h, w) float64: selected w(x) * log p(x)
    background_branch: np.ndarray     # (h, w) bool: True where background branch fired
    clamped: int                      # pixels whose selected probability hit the clamp


# --------------------------------------------------------------------------- w_c

def class_balance_weights(mask: BoundaryGrid) -> np.ndarray:
    """Frequency-balancing w_c: each pixel gets N / (K * count(its class)), K=2.

    The rarer class (normally boundary ink) receives the larger weight.
    """
    n = mask.data.size
    n_boundary = mask.count()
    n_interior = n - n_boundary
    if n_boundary == 0 or n_interior == 0:
        raise ValidationError("class balancing needs both boundary and interior pixels")
    w_boundary = n / (2.0 * n_boundary)
    w_interior = n / (2.0 * n_interior)
    return np.where(mask.data == 1, w_boundary, w_interior).astype(np.float64)


# --------------------------------------------------------------------------- grain map

@njit(cache=True)
def _nearest_grain_ids(
    labels: np.ndarray,   # (h, w) int64 interior grain ids, 0 on boundary
    ys: np.ndarray,       # boundary pixel rows
    xs: np.ndarray,       # boundary pixel cols
    r2s: np.ndarray,      # exact squared distance to the nearest interior pixel
) -> np.ndarray:
    """Smallest interior grain id among all pixels at the exact minimum
    squared distance from each boundary pixel."""
    h, w = labels.shape
    out = np.zeros(len(ys), dtype=np.int64)
    for k in range(len(ys)):
        y = ys[k]
        x = xs[k]
        r2 = r2s[k]
        best = np.int64(0)
        rmax = np.int64(np.floor(np.sqrt(np.float64(r2)))) + 1
        while rmax * rmax > r2:
            rmax -= 1
        for dy in range(-rmax, rmax + 1):
            rem = r2 - dy * dy
            if rem < 0:
                continue
            dx = np.int64(np.floor(np.sqrt(np.float64(rem))))
            while dx * dx > rem:
                dx -= 1
            if dx * dx != rem:
                continue
            for sx in (-dx, dx):
                yy = y + dy
                xx = x + sx
                if 0 <= yy < h and 0 <= xx < w:
                    v = labels[yy, xx]
                    if v > 0 and (best == 0 or v < best):
                        best = v
                if dx == 0:
                    break
        out[k] = best
    return out


def _grain_assignment(mask: BoundaryGrid, labels: np.ndarray) -> np.ndarray:
    """Per-pixel grain id: interior pixels keep their component id; boundary
    pixels adopt the nearest interior grain (ties -> smallest id)."""
    from scipy import ndimage

    grain_of = labels.astype(np.int64)
    boundary = mask.data == 1
    if not boundary.any():
        return grain_of
    # indices of the nearest interior pixel, exact integer squared distances
    _, (iy, ix) = ndimage.distance_transform_edt(labels == 0, return_indices=True)
    ys, xs = np.nonzero(boundary)
    r2 = (ys - iy[ys, xs]).astype(np.int64) ** 2 + (xs - ix[ys, xs]).astype(np.int64) ** 2
    ids = _nearest_grain_ids(grain_of, ys.astype(np.int64), xs.astype(np.int64), r2)
    grain_of[ys, xs] = ids
    return grain_of


# --------------------------------------------------------------------------- field

def compute_weight_field(mask: BoundaryGrid, params: WeightParams) -> WeightField:
    """Build (w_bck, w_obj, m_d) for a single-pixel-wide boundary mask.

    Per grain i: max_dis_i = deepest interior distance, sigma_i = max_dis_i /
    gamma. w_bck peaks (w_c + w0) at the grain's deepest pixel, w_obj peaks on
    the boundary. Boundary pixels take the nearest grain's scales (ties to the
    smaller id). m_d = dilate(mask, dilate_radius).
    """
    if mask.count() == 0:
        raise ValidationError("weight field needs a nonempty boundary mask")
    label_grid = connected_components(mask, connectivity=4)
    labels = label_grid.data.astype(np.int64)
    n_grains = int(labels.max())
    if n_grains == 0:
        raise ValidationError("mask has no interior pixels")

    from scipy import ndimage

    dist = distance_transform(mask).data
    ids = np.arange(1, n_grains + 1)
    max_dis = np.asarray(
        ndimage.maximum(dist, labels=labels, index=ids), dtype=np.float64
    )
    sigma = np.where(max_dis > 0, max_dis, 1.0) / params.gamma  # 1-px-grain guard

    grain_of = _grain_assignment(mask, labels)
    md_px = max_dis[grain_of - 1]   # per-pixel max_dis of the owning grain
    sg_px = sigma[grain_of - 1]

    if params.class_balance == "frequency":
        w_c = class_balance_weights(mask)
    else:
        w_c = np.ones(mask.data.shape, dtype=np.float64)

    w_bck = w_c + params.w0 * np.exp(-((md_px - dist) ** 2) / (2.0 * sg_px**2))
    w_obj = w_c + params.w0 * np.exp(-(dist**2) / (2.0 * sg_px**2))
    m_d = dilate(mask, params.dilate_radius).data

    per_grain = {
        int(i): (float(max_dis[i - 1]), float(sigma[i - 1])) for i in ids
    }
    return WeightField(w_bck=w_bck, w_obj=w_obj, m_d=m_d, params=params, per_grain=per_grain)


# --------------------------------------------------------------------------- loss

def evaluate_loss(pred: ProbabilityGrid, field: WeightField) -> LossResult:
    """Selective weighted cross-entropy.

    Per pixel: background branch w_bck * log p_0 when w_bck ≥ w_obj * m_d
    (always outside the dilated band, where m_d = 0), else object branch
    w_obj * log p_1. Total E = -sum of terms, summed in row-major order so the
    result is bit-reproducible.
    """
    if pred.channels != 2:
        raise ValidationError(f"loss needs a 2-channel probability grid, got {pred.channels}")
    if (pred.height, pred.width) != (field.height, field.width):
        raise ConsistencyError(
            f"probability grid {pred.width}x{pred.height} vs weight field "
            f"{field.width}x{field.height}"
        )
    p0 = pred.data[:, :, 0].astype(np.float64)
    p1 = pred.data[:, :, 1].astype(np.float64)
    background = field.w_bck >= field.w_obj * field.m_d
    weight = np.where(background, field.w_bck, field.w_obj)
    p_sel = np.where(background, p0, p1)
    clamped = int((p_sel < PROBABILITY_CLAMP).sum())
    terms = weight * np.log(np.maximum(p_sel, PROBABILITY_CLAMP))
    total = float(-np.sum(terms) + 0.0)  # + 0.0 normalizes -0.0
    return LossResult(
        total=total, terms=terms, background_branch=background, clamped=clamped
    )


# --------------------------------------------------------------------------- serialization

_SIDECAR_KEYS = {"w0", "gamma", "dilate_radius", "class_balance", "per_grain"}


def sidecar_path(gsr_path: str | Path) -> Path:
    return Path(gsr_path).with_suffix(".json")


def save_weight_field(field_: WeightField, path: str | Path) -> None:
    """Write a 3-channel .gsr (w_bck, w_obj, m_d as float32) plus JSON sidecar."""
    path = Path(path)
    stack = np.stack(
        [
            field_.w_bck.astype(np.float32),
            field_.w_obj.astype(np.float32),
            field_.m_d.astype(np.float32),
        ],
        axis=2,
    )
    write_gsr(stack, path)
    doc = {
        "w0": field_.params.w0,
        "gamma": field_.params.gamma,
        "dilate_radius": field_.params.dilate_radius,
        "class_balance": field_.params.class_balance,
        "per_grain": {
            str(i): [md, sg] for i, (md, sg) in sorted(field_.per_grain.items())
        },
    }
    with open(sidecar_path(path), "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_weight_field(path: str | Path) -> WeightField:
    """Inverse of save_weight_field (weights come back at float32 precision)."""
    path = Path(path)
    raw = read_gsr(path)
    if raw.shape[2] != 3:
        raise FormatError(f"{path}: weight raster must have 3 channels, got {raw.shape[2]}")
    side = sidecar_path(path)
    if not side.is_file():
        raise ResolutionError(f"weight sidecar not found: {side}")
    try:
        doc = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or set(doc.keys()) != _SIDECAR_KEYS:
        raise FormatError(f"{side}: sidecar keys must be exactly {sorted(_SIDECAR_KEYS)}")
    params = WeightParams(
        w0=float(doc["w0"]),
        gamma=float(doc["gamma"]),
        dilate_radius=float(doc["dilate_radius"]),
        class_balance=str(doc["class_balance"]),
    )
    per_grain = {
        int(k): (float(v[0]), float(v[1])) for k, v in doc["per_grain"].items()
    }
    md = raw[:, :, 2]
    if not np.isin(md, (0.0, 1.0)).all():
        raise ValidationError(f"{path}: m_d channel must be exactly 0 or 1")
    return WeightField(
        w_bck=raw[:, :, 0].astype(np.float64),
        w_obj=raw[:, :, 1].astype(np.float64),
        m_d=md.astype(np.uint8),
        params=params,
        per_grain=per_grain,
    )
