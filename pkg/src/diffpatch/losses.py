"""Training objectives: Chamfer data term, conformality terms, overlap hinge.

The metric-tensor terms and the overlap hinge are written with plain
arithmetic, so they accept numpy arrays for evaluation and tape ``Var``
objects for training alike.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import neighbors
from .tape import Var


class DegenerateInputError(ValueError):
    """A patch area vanished, i.e. a collapse happened before regularisation acted."""


@dataclass(frozen=True)
class LossWeights:
    alpha_def: float = 1e-3
    alpha_ol: float = 0.0
    alpha_E: float = 1.0
    alpha_G: float = 1.0
    alpha_sk: float = 1.0
    alpha_str: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def scaled(self, s: float) -> "LossWeights":
        return LossWeights(**{k: v * s for k, v in asdict(self).items()})


# alpha_def / alpha_ol and the four sub-weights for every configuration the
# experiments use. "collapse-study" is the setting of the normals/curvature and
# number-of-patches experiments (overlap ignored).
PRESETS = {
    "basic": LossWeights(0.0, 0.0, 1.0, 1.0, 1.0, 1.0),
    "collapse-study": LossWeights(1e-3, 0.0, 1.0, 1.0, 1.0, 1.0),
    "ours": LossWeights(1e-3, 1e2, 1.0, 1.0, 1.0, 1.0),
    "ours-pcae": LossWeights(1e-3, 1e2, 1.0, 1.0, 1.0, 0.0),
    "ours-strict": LossWeights(1e-3, 1e2, 1.0, 1.0, 1.0, 1.0),
    "ablation:free": LossWeights(1e-3, 1e2, 0.0, 0.0, 0.0, 0.0),
    "ablation:no-collapse": LossWeights(1e-3, 1e2, 1.0, 1.0, 0.0, 0.0),
    "ablation:no-skew": LossWeights(1e-3, 1e2, 1.0, 1.0, 1.0, 0.0),
    "ablation:no-stretch": LossWeights(1e-3, 1e2, 1.0, 1.0, 0.0, 1.0),
    "ablation:full": LossWeights(1e-3, 1e2, 1.0, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class LossReport:
    chd: float
    l_E: float
    l_G: float
    l_sk: float
    l_str: float
    l_def: float
    l_ol: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Chamfer distance


def _stack_patches(pred) -> tuple[np.ndarray, int, int]:
    arrs = [np.asarray(p, dtype=np.float64).reshape(-1, 3) for p in pred]
    if not arrs or any(len(a) == 0 for a in arrs):
        raise ValueError("every patch must contribute at least one point")
    return np.concatenate(arrs), len(arrs), len(arrs[0])


@dataclass(frozen=True)
class ChamferMatches:
    """Nearest-neighbour assignments in both directions."""

    pred_to_gt: np.ndarray  # (K*M,) indices into gt
    pred_d2: np.ndarray
    gt_to_pred: np.ndarray  # (N,) indices into the stacked prediction
    gt_d2: np.ndarray

    @property
    def value(self) -> float:
        return float(self.pred_d2.sum() / len(self.pred_d2) + self.gt_d2.sum() / len(self.gt_d2))


def chamfer_matches(pred_points, gt_points, gt_index=None) -> ChamferMatches:
    """Match stacked predictions ``(KM, 3)`` and GT ``(N, 3)`` both ways."""
    pred_points = np.asarray(pred_points, dtype=np.float64)
    gt_points = np.asarray(gt_points, dtype=np.float64)
    if len(pred_points) == 0 or len(gt_points) == 0:
        raise ValueError("Chamfer distance needs non-empty point sets")
    if gt_index is None:
        gt_index = neighbors.build(gt_points)
    p2g, pd2 = gt_index.nearest_batch(pred_points)
    g2p, gd2 = neighbors.build(pred_points).nearest_batch(gt_points)
    return ChamferMatches(p2g, pd2, g2p, gd2)


def chamfer(pred, gt, gt_index=None) -> float:
    """Two-sided Chamfer distance between K patch point lists and a GT cloud.

    Each patch must hold the same number of points M; the first sum is
    normalised by K*M, the second by N.
    """
    P, K, M = _stack_patches(pred)
    if any(len(np.asarray(p).reshape(-1, 3)) != M for p in pred):
        raise ValueError("all patches must contribute the same number of points")
    Q = np.asarray(getattr(gt, "points", gt), dtype=np.float64)
    return chamfer_matches(P, Q, gt_index).value


def chamfer_brute(pred, gt) -> float:
    """O(NM) reference evaluation using a dense distance matrix."""
    P, _, _ = _stack_patches(pred)
    Q = np.asarray(getattr(gt, "points", gt), dtype=np.float64)
    dx = P[:, None, 0] - Q[None, :, 0]
    dy = P[:, None, 1] - Q[None, :, 1]
    dz = P[:, None, 2] - Q[None, :, 2]
    D = dx * dx + dy * dy + dz * dz
    a = D.min(axis=1)
    b = D.min(axis=0)
    return float(a.sum() / len(a) + b.sum() / len(b))


def chamfer_traced(pred: Var, gt_points: np.ndarray, matches: ChamferMatches) -> Var:
    """Chamfer value on the tape; gradients flow through the matched pairs only."""
    a = pred - gt_points[matches.pred_to_gt]
    b = pred[matches.gt_to_pred] - gt_points
    return (a * a).sum() * (1.0 / len(matches.pred_to_gt)) + (b * b).sum() * (
        1.0 / len(matches.gt_to_pred)
    )


# --------------------------------------------------------------------------
# conformality and overlap


def _check_areas(areas):
    vals = areas.value if isinstance(areas, Var) else np.asarray(areas)
    if np.any(np.asarray(vals) <= 1e-12):
        k = int(np.argmin(vals))
        raise DegenerateInputError(f"patch {k} has (near) zero area {float(np.ravel(vals)[k]):.3g}")


def conformal_terms(E, F, G, areas):
    """(L_E, L_G, L_sk, L_str) for per-point metrics of shape ``(K, M)``.

    ``areas`` holds one area per patch, shape ``(K,)``. mu_E and mu_G are
    global means over all patches and points.
    """
    _check_areas(areas)
    if isinstance(areas, Var):
        A = areas.reshape(-1, 1)
    else:
        A = np.asarray(areas, dtype=np.float64).reshape(-1, 1)
    mu_E = E.mean()
    mu_G = G.mean()
    rE = (E - mu_E) / A
    rG = (G - mu_G) / A
    rF = F / A
    rS = (E - G) / A
    return (rE * rE).mean(), (rG * rG).mean(), (rF * rF).mean(), (rS * rS).mean()


def overlap_loss(areas, gt_area: float):
    """max(0, sum_k A_k - A_hat)^2."""
    if gt_area <= 0:
        raise ValueError("ground-truth area must be positive")
    if isinstance(areas, Var):
        h = (areas.sum() - gt_area).relu()
        return h * h
    h = max(0.0, float(np.sum(areas)) - gt_area)
    return h * h


def deformation_loss(terms, w: LossWeights):
    l_E, l_G, l_sk, l_str = terms
    return w.alpha_E * l_E + w.alpha_G * l_G + w.alpha_sk * l_sk + w.alpha_str * l_str


def total_loss(chd, terms, l_ol, w: LossWeights) -> LossReport:
    l_E, l_G, l_sk, l_str = (float(t) for t in terms)
    l_def = deformation_loss((l_E, l_G, l_sk, l_str), w)
    total = float(chd) + w.alpha_def * l_def + w.alpha_ol * float(l_ol)
    return LossReport(float(chd), l_E, l_G, l_sk, l_str, l_def, float(l_ol), total)
