"""Region-based segmentation metrics.

Variation of Information is reported in bits and decomposed into a merge part
(ground-truth regions fused in the prediction, i.e. missed boundaries) and a
split part (predicted over-segmentation). ARI uses the standard pair-counting
correction. Mean average precision sweeps IoU thresholds 0.50:0.05:0.95 with
greedy one-to-one instance matching.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConsistencyError, LabelGrid, ValidationError

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def _as_array(grid) -> np.ndarray:
    if isinstance(grid, LabelGrid):
        return grid.data
    arr = np.asarray(grid)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"label data must be integer, got {arr.dtype}")
    return arr


# --------------------------------------------------------------------------- table

@dataclass(frozen=True)
class ContingencyTable:
    """Co-occurrence counts between predicted rows and ground-truth columns."""

    counts: np.ndarray    # (rows, cols) int64
    pred_ids: np.ndarray  # (rows,) int64, sorted
    gt_ids: np.ndarray    # (cols,) int64, sorted

    def __post_init__(self) -> None:
        if self.counts.ndim != 2:
            raise ValidationError("contingency counts must be 2-D")
        if self.counts.shape != (len(self.pred_ids), len(self.gt_ids)):
            raise ConsistencyError("contingency id lists do not match counts shape")
        for name in ("counts", "pred_ids", "gt_ids"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def contingency(pred, gt, ignore_boundary: bool = True) -> ContingencyTable:
    """Count label co-occurrences pixel by pixel.

    With ignore_boundary (default) pixels whose ground-truth id is 0 are
    excluded: boundary ink is a class, not a region.
    """
    pv = _as_array(pred).ravel().astype(np.int64)
    gv = _as_array(gt).ravel().astype(np.int64)
    if pv.shape != gv.shape:
        raise ConsistencyError(
            f"label shapes disagree: {_as_array(pred).shape} vs {_as_array(gt).shape}"
        )
    if ignore_boundary:
        keep = gv != 0
        pv = pv[keep]
        gv = gv[keep]
    pred_ids, pi = np.unique(pv, return_inverse=True)
    gt_ids, gi = np.unique(gv, return_inverse=True)
    rows = len(pred_ids)
    cols = len(gt_ids)
    if rows == 0 or cols == 0:
        return ContingencyTable(
            counts=np.zeros((rows, cols), dtype=np.int64),
            pred_ids=pred_ids,
            gt_ids=gt_ids,
        )
    flat = np.bincount(pi * cols + gi, minlength=rows * cols)
    return ContingencyTable(
        counts=flat.reshape(rows, cols), pred_ids=pred_ids, gt_ids=gt_ids
    )


# --------------------------------------------------------------------------- vi / ari

def variation_of_information(table: ContingencyTable) -> tuple[float, float, float]:
    """(vi, vi_split, vi_merge) in bits.

    vi_split = H(Pred | GT): over-segmentation, spurious boundaries.
    vi_merge = H(GT | Pred): under-segmentation, missed boundaries.
    """
    n = table.total
    if n == 0:
        raise ValidationError("variation of information needs a nonempty table")
    counts = table.counts
    nz = counts > 0
    p_ij = counts[nz].astype(np.float64) / n
    row = np.broadcast_to(table.row_totals[:, None], counts.shape)[nz].astype(np.float64) / n
    col = np.broadcast_to(table.col_totals[None, :], counts.shape)[nz].astype(np.float64) / n
    vi_split = max(0.0, float(-np.sum(p_ij * np.log2(p_ij / col))))
    vi_merge = max(0.0, float(-np.sum(p_ij * np.log2(p_ij / row))))
    return vi_split + vi_merge, vi_split, vi_merge


def _partitions_identical(table: ContingencyTable) -> bool:
    if len(table.pred_ids) != len(table.gt_ids):
        return False
    nz = table.counts > 0
    return bool((nz.sum(axis=0) == 1).all() and (nz.sum(axis=1) == 1).all())


def adjusted_rand_index(table: ContingencyTable) -> float:
    """Pair-counting agreement corrected for chance, in [-1, 1]."""
    n = table.total
    if n < 2:
        raise ValidationError(f"adjusted rand index needs ≥ 2 pixels, got {n}")

    def comb2(x: np.ndarray) -> np.ndarray:
        x = x.astype(np.float64)
        return x * (x - 1.0) / 2.0

    sum_ij = float(comb2(table.counts).sum())
    sum_a = float(comb2(table.row_totals).sum())
    sum_b = float(comb2(table.col_totals).sum())
    c_n = n * (n - 1.0) / 2.0
    expected = sum_a * sum_b / c_n
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:  # both partitions trivial
        return 1.0 if _partitions_identical(table) else 0.0
    return (sum_ij - expected) / denom


# --------------------------------------------------------------------------- mAP

def _instance_stats(pred: np.ndarray, gt: np.ndarray):
    """Areas per nonzero id on each side plus exact pairwise intersections."""
    pv = pred.ravel().astype(np.int64)
    gv = gt.ravel().astype(np.int64)
    pred_ids, p_counts = np.unique(pv[pv > 0], return_counts=True)
    gt_ids, g_counts = np.unique(gv[gv > 0], return_counts=True)
    both = (pv > 0) & (gv > 0)
    inter: dict[tuple[int, int], int] = {}
    if both.any():
        pb = np.searchsorted(pred_ids, pv[both])
        gb = np.searchsorted(gt_ids, gv[both])
        flat = np.bincount(pb * len(gt_ids) + gb, minlength=len(pred_ids) * len(gt_ids))
        for k in np.nonzero(flat)[0]:
            inter[(int(pred_ids[k // len(gt_ids)]), int(gt_ids[k % len(gt_ids)]))] = int(
                flat[k]
            )
    areas_p = dict(zip(pred_ids.tolist(), p_counts.tolist()))
    areas_g = dict(zip(gt_ids.tolist(), g_counts.tolist()))
    return areas_p, areas_g, inter


def mean_average_precision(
    pred, gt, thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
) -> tuple[float, tuple[tuple[float, float], ...]]:
    """Instance-matching AP averaged over IoU thresholds.

    Per threshold t: predicted and ground-truth instances are matched greedily
    by descending IoU, one-to-one, a pair counting only when IoU > t;
    AP(t) = TP / (TP + FP + FN).
    """
    pa = _as_array(pred)
    ga = _as_array(gt)
    if pa.shape != ga.shape:
        raise ConsistencyError(f"label shapes disagree: {pa.shape} vs {ga.shape}")
    if not thresholds:
        raise ValidationError("at least one IoU threshold required")
    areas_p, areas_g, inter = _instance_stats(pa, ga)
    if not areas_g:
        raise ValidationError("ground truth has no instances (all ids are 0)")
    candidates = sorted(
        (
            (inter_px / (areas_p[i] + areas_g[j] - inter_px), i, j)
            for (i, j), inter_px in inter.items()
        ),
        key=lambda c: (-c[0], c[1], c[2]),
    )
    n_pred = len(areas_p)
    n_gt = len(areas_g)
    per_threshold: list[tuple[float, float]] = []
    for t in thresholds:
        used_p: set[int] = set()
        used_g: set[int] = set()
        tp = 0
        for iou, i, j in candidates:
            if iou <= t:
                break  # sorted descending; nothing later can match
            if i in used_p or j in used_g:
                continue
            used_p.add(i)
            used_g.add(j)
            tp += 1
        ap = tp / (n_pred + n_gt - tp)
        per_threshold.append((float(t), float(ap)))
    mean_ap = float(np.mean([ap for _, ap in per_threshold]))
    return mean_ap, tuple(per_threshold)


# --------------------------------------------------------------------------- report

@dataclass(frozen=True)
class MetricReport:
    vi: float
    vi_merge: float
    vi_split: float
    ari: float
    map: float
    per_threshold_ap: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if self.vi < 0 or self.vi_merge < 0 or self.vi_split < 0:
            raise ValidationError("VI components must be nonnegative")
        if abs(self.vi - (self.vi_merge + self.vi_split)) > 1e-12:
            raise ValidationError("vi must equal vi_merge + vi_split within 1e-12")
        if not -1.0 <= self.ari <= 1.0:
            raise ValidationError(f"ari out of [-1, 1]: {self.ari}")
        if not 0.0 <= self.map <= 1.0:
            raise ValidationError(f"map out of [0, 1]: {self.map}")

    def to_dict(self) -> dict:
        return {
            "vi": self.vi,
            "vi_merge": self.vi_merge,
            "vi_split": self.vi_split,
            "ari": self.ari,
            "map": self.map,
            "per_threshold_ap": [[t, ap] for t, ap in self.per_threshold_ap],
        }


def compute_report(
    pred,
    gt,
    ignore_boundary: bool = True,
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
) -> MetricReport:
    """VI + ARI on the (boundary-excluded) contingency plus instance mAP.

    Boundary ink is class, not region, on either side: with ignore_boundary
    the VI/ARI table drops pixels that are id 0 in the prediction as well as
    in the ground truth, so a partition carved out of a thinned boundary map
    is compared region-to-region.  mAP needs no such masking — instances are
    nonzero-id pixel sets and intersections already skip ink.
    """
    pred_flat = _as_array(pred).reshape(-1)
    gt_flat = _as_array(gt).reshape(-1)
    if pred_flat.shape != gt_flat.shape:
        raise ConsistencyError(
            f"partition sizes differ: {pred_flat.shape[0]} vs {gt_flat.shape[0]} pixels"
        )
    if ignore_boundary:
        keep = pred_flat != 0
        table = contingency(pred_flat[keep], gt_flat[keep], ignore_boundary=True)
    else:
        table = contingency(pred_flat, gt_flat, ignore_boundary=False)
    vi, vi_split, vi_merge = variation_of_information(table)
    ari = adjusted_rand_index(table)
    mean_ap, per_t = mean_average_precision(pred, gt, thresholds)
    return MetricReport(
        vi=vi,
        vi_merge=vi_merge,
        vi_split=vi_split,
        ari=ari,
        map=mean_ap,
        per_threshold_ap=per_t,
    )
