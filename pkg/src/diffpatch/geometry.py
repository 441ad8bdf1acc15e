"""Normals, first fundamental form, curvatures and areas from mapping jets.

All functions are vectorised: a jet whose slots have shape ``(..., 3)``
produces fields of shape ``(...)`` or ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jets import Jet2

# threshold on det g = EG - F^2 below which a point counts as degenerate
EPS_DEG = 1e-12


@dataclass(frozen=True)
class MetricTensor:
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray

    @property
    def det(self):
        return self.E * self.G - self.F * self.F


@dataclass(frozen=True)
class SurfacePoints:
    """Differential properties at a batch of surface points.

    ``normal``, ``c_mean`` and ``c_gauss`` are zero wherever ``degenerate`` is
    set; callers must consult the mask instead of testing for NaN.
    """

    position: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    metric: MetricTensor
    normal: np.ndarray
    c_mean: np.ndarray
    c_gauss: np.ndarray
    area_element: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return int(np.prod(self.area_element.shape))


def _dot(a, b):
    return (a * b).sum(axis=-1)


def metric_tensor(jet: Jet2) -> MetricTensor:
    """E, F, G = f_u.f_u, f_u.f_v, f_v.f_v. Works on tape-traced slots too."""
    fu, fv = jet.du, jet.dv
    return MetricTensor(_dot(fu, fu), _dot(fu, fv), _dot(fv, fv))


def area_element(m: MetricTensor):
    det = np.maximum(m.det, 0.0)
    return np.sqrt(det)


def surface_point(jet: Jet2) -> SurfacePoints:
    """Full differential-geometry bundle from second-order jets."""
    if jet.order < 2:
        raise ValueError("curvatures need second-order jets")
    shape = np.shape(jet.val)
    fu = np.broadcast_to(jet.du, shape)
    fv = np.broadcast_to(jet.dv, shape)
    fuu = np.broadcast_to(jet.duu, shape)
    fuv = np.broadcast_to(jet.duv, shape)
    fvv = np.broadcast_to(jet.dvv, shape)

    m = MetricTensor(_dot(fu, fu), _dot(fu, fv), _dot(fv, fv))
    det = m.det
    degenerate = det <= EPS_DEG
    safe_det = np.where(degenerate, 1.0, det)

    cross = np.cross(fu, fv)
    norm = np.linalg.norm(cross, axis=-1)
    safe_norm = np.where(degenerate | (norm == 0), 1.0, norm)
    normal = np.where(degenerate[..., None], 0.0, cross / safe_norm[..., None])

    L = _dot(fuu, normal)
    M = _dot(fuv, normal)
    N = _dot(fvv, normal)
    c_mean = -(L * m.G - 2.0 * M * m.F + N * m.E) / (2.0 * safe_det)
    c_gauss = (L * N - M * M) / safe_det
    c_mean = np.where(degenerate, 0.0, c_mean)
    c_gauss = np.where(degenerate, 0.0, c_gauss)

    return SurfacePoints(
        position=np.asarray(jet.val),
        fu=fu,
        fv=fv,
        metric=m,
        normal=normal,
        c_mean=c_mean,
        c_gauss=c_gauss,
        area_element=np.sqrt(np.maximum(det, 0.0)),
        degenerate=degenerate,
    )


def evaluate(mapping, d, samples) -> SurfacePoints:
    return surface_point(mapping(d, samples, order=2))


def normals_batch(mapping, d, samples):
    """Unit normals from first-order slots; returns ``(normals, degenerate)``."""
    jet = mapping(d, samples, order=1)
    shape = np.shape(jet.val)
    fu = np.broadcast_to(jet.du, shape)
    fv = np.broadcast_to(jet.dv, shape)
    det = _dot(fu, fu) * _dot(fv, fv) - _dot(fu, fv) ** 2
    degenerate = det <= EPS_DEG
    cross = np.cross(fu, fv)
    norm = np.linalg.norm(cross, axis=-1)
    safe = np.where(degenerate | (norm == 0), 1.0, norm)
    return np.where(degenerate[..., None], 0.0, cross / safe[..., None]), degenerate


def patch_area(mapping, d, samples, domain_area: float = 1.0) -> float:
    """Monte-Carlo / quadrature estimate: |D_f| times the mean area element."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("patch_area needs at least one UV sample")
    jet = mapping(d, samples, order=1)
    m = metric_tensor(Jet2(jet.val, np.broadcast_to(jet.du, np.shape(jet.val)),
                           np.broadcast_to(jet.dv, np.shape(jet.val)), None, None, None))
    return float(domain_area * np.mean(area_element(m)))


def midpoint_area(mapping, d=None, resolution: int = 512) -> float:
    """Midpoint-rule area over the unit square on a ``resolution^2`` grid."""
    t = (np.arange(resolution) + 0.5) / resolution
    uu, vv = np.meshgrid(t, t, indexing="ij")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    return patch_area(mapping, d, uv)
