"""Evaluation metrics for fitted patch atlases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, neighbors
from .data import PointCloud
from .losses import chamfer_matches
from .surface import sample_uv

C_A = 1e-3
OLAP_THRESHOLDS = (0.01, 0.05, 0.1)


class EstimateUnavailable(ValueError):
    """Not enough data for the requested estimate."""


@dataclass
class MetricsReport:
    chd: float
    m_ae: float
    m_H: float
    m_K: float
    m_col: int
    m_olap: dict  # threshold -> mean patch multiplicity
    n_degenerate: int = 0
    patch_areas: list = field(default_factory=list)

    def row(self) -> dict:
        out = {"chd": self.chd, "m_ae": self.m_ae, "m_H": self.m_H, "m_K": self.m_K,
               "m_col": self.m_col}
        for t, v in sorted(self.m_olap.items()):
            out[f"m_olap@{t:g}"] = v
        out["n_degenerate"] = self.n_degenerate
        return out


# --------------------------------------------------------------------------
# individual metrics


def angular_error(pred: PointCloud, gt: PointCloud, gt_index=None) -> float:
    """Mean arccos|n . n_hat| in degrees, n_hat the normal of the nearest GT point."""
    if pred.normals is None or gt.normals is None:
        raise ValueError("angular error needs normals on both clouds")
    if gt_index is None:
        gt_index = neighbors.build(gt.points)
    idx, _ = gt_index.nearest_batch(pred.points)
    dots = np.abs(np.sum(pred.normals * gt.normals[idx], axis=1))
    return float(np.degrees(np.arccos(np.clip(dots, -1.0, 1.0))).mean())


def collapse_count(areas, c_A: float = C_A) -> int:
    """Patches with area below c_A times the mean patch area.

    If every area is zero the threshold degenerates to zero and all K patches
    are reported collapsed.
    """
    areas = np.asarray(areas, dtype=np.float64)
    if areas.size < 1:
        raise ValueError("need at least one patch")
    mu = areas.mean()
    if mu <= 0:
        return int(areas.size)
    return int(np.count_nonzero(areas < c_A * mu))


def overlap_counts(patch_points, gt, thresholds) -> dict:
    """For each GT point, number of patches with at least one point within t; averaged."""
    Q = np.asarray(getattr(gt, "points", gt), dtype=np.float64)
    nearest = np.stack([neighbors.build(p).nearest_batch(Q)[1] for p in patch_points])
    out = {}
    for t in thresholds:
        if t <= 0:
            raise ValueError("overlap threshold must be positive")
        out[float(t)] = float((nearest <= t * t).sum(axis=0).mean())
    return out


def overlap_count(patch_points, gt, t: float) -> float:
    return overlap_counts(patch_points, gt, [t])[float(t)]


def curvature_stats(points) -> tuple[float, float, int]:
    """(mean |c_mean|, mean |c_gauss|, excluded degenerate count)."""
    if isinstance(points, geometry.SurfacePoints):
        points = [points]
    H = np.concatenate([np.ravel(p.c_mean) for p in points])
    K = np.concatenate([np.ravel(p.c_gauss) for p in points])
    deg = np.concatenate([np.ravel(p.degenerate) for p in points])
    if deg.all():
        raise EstimateUnavailable("all evaluation points are degenerate")
    ok = ~deg
    return float(np.abs(H[ok]).mean()), float(np.abs(K[ok]).mean()), int(deg.sum())


def quadric_curvature_oracle(cloud, query, radius: float, index=None):
    """Curvatures from a least-squares quadric in a local PCA frame.

    Fits z = a x^2 + b xy + c y^2 + d x + e y + f to the neighbours within
    ``radius`` and returns (c_mean, c_gauss) of that height field at the
    query. The frame normal follows the cloud normals when present, so the
    sign of c_mean is only meaningful in that case.
    """
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    q = np.asarray(query, dtype=np.float64).reshape(3)
    if index is None:
        index = neighbors.build(pts)
    nb = index.query_radius(q, radius)
    if len(nb) < 6:
        raise EstimateUnavailable(f"{len(nb)} neighbours within {radius}, need 6")
    P = pts[nb]
    C = np.cov((P - P.mean(axis=0)).T)
    _, vecs = np.linalg.eigh(C)
    n = vecs[:, 0]
    normals = getattr(cloud, "normals", None)
    if normals is not None and np.dot(normals[nb].sum(axis=0), n) < 0:
        n = -n
    t1 = vecs[:, 2]
    t2 = np.cross(n, t1)
    rel = P - q
    x, y, z = rel @ t1, rel @ t2, rel @ n
    A = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    a, b, c, d, e, _ = coef
    hxx, hxy, hyy = 2 * a, b, 2 * c
    w = 1.0 + d * d + e * e
    c_gauss = (hxx * hyy - hxy * hxy) / (w * w)
    # sign chosen to match the mapping convention: a surface bending away from
    # the normal (z = -r^2 / 2R) has positive mean curvature
    c_mean = -((1 + e * e) * hxx - 2 * d * e * hxy + (1 + d * d) * hyy) / (2 * w ** 1.5)
    return float(c_mean), float(c_gauss)


@dataclass(frozen=True)
class DistortionMap:
    """Per-point summands of the four conformality terms on a UV grid."""

    D_E: np.ndarray
    D_G: np.ndarray
    D_sk: np.ndarray
    D_str: np.ndarray
    degenerate: np.ndarray

    def items(self):
        return {"D_E": self.D_E, "D_G": self.D_G, "D_sk": self.D_sk, "D_str": self.D_str}.items()


def _grid(resolution):
    if resolution < 2:
        raise ValueError("distortion map resolution must be at least 2")
    return sample_uv(resolution * resolution, "grid")


def distortion_maps(mappings, codes, resolution: int) -> list:
    """Distortion maps of several patches; mu_E, mu_G are pooled over all of them."""
    uv = _grid(resolution)
    sps = [geometry.evaluate(m, d, uv) for m, d in zip(mappings, codes)]
    E = np.stack([sp.metric.E for sp in sps])
    G = np.stack([sp.metric.G for sp in sps])
    muE, muG = E.mean(), G.mean()
    maps = []
    for sp in sps:
        A = sp.area_element.mean()
        deg = sp.degenerate.reshape(resolution, resolution)
        if A <= 1e-12:
            z = np.zeros((resolution, resolution))
            maps.append(DistortionMap(z, z, z, z, np.ones_like(deg)))
            continue
        m = sp.metric

        def cell(x):
            return (x / A) ** 2

        maps.append(DistortionMap(
            cell(m.E - muE).reshape(resolution, resolution),
            cell(m.G - muG).reshape(resolution, resolution),
            cell(m.F).reshape(resolution, resolution),
            cell(m.E - m.G).reshape(resolution, resolution),
            deg,
        ))
    return maps


def distortion_map(mapping, d, resolution: int) -> DistortionMap:
    return distortion_maps([mapping], [d], resolution)[0]


# --------------------------------------------------------------------------
# whole-model evaluation


def evaluate_atlas(atlas, gt: PointCloud, shape: int = 0, n_eval: int | None = None,
                   thresholds=OLAP_THRESHOLDS, c_A: float = C_A, gt_index=None):
    """Metrics for one shape on a fixed UV grid of ``n_eval`` points per patch.

    Returns ``(MetricsReport, per-patch SurfacePoints)``. Without ``n_eval``
    the patches jointly predict as many points as the GT cloud holds.
    """
    K = atlas.n_patches
    if n_eval is None:
        n_eval = max(1, len(gt) // K)
    uv = sample_uv(n_eval, "grid")
    sps = [geometry.evaluate(atlas.patch(k, shape), None, uv) for k in range(K)]
    if gt_index is None:
        gt_index = neighbors.build(gt.points)

    stacked = np.concatenate([sp.position for sp in sps])
    chd = chamfer_matches(stacked, gt.points, gt_index).value

    areas = [float(sp.area_element.mean()) for sp in sps]
    ok = ~np.concatenate([sp.degenerate for sp in sps])
    n_deg = int((~ok).sum())

    m_ae = math.nan
    if gt.normals is not None and ok.any():
        normals = np.concatenate([sp.normal for sp in sps])[ok]
        m_ae = angular_error(PointCloud(stacked[ok], normals), gt, gt_index)
    try:
        m_H, m_K, _ = curvature_stats(sps)
    except EstimateUnavailable:
        m_H = m_K = math.nan

    report = MetricsReport(
        chd=chd,
        m_ae=m_ae,
        m_H=m_H,
        m_K=m_K,
        m_col=collapse_count(areas, c_A),
        m_olap=overlap_counts([sp.position for sp in sps], gt, thresholds),
        n_degenerate=n_deg,
        patch_areas=areas,
    )
    return report, sps
