"""Point clouds, synthetic ground truth and triangulated areas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .surface import CylinderMapping, PlaneMapping, WavyClothMapping

NORMAL_TOL = 1e-9


@dataclass
class PointCloud:
    """Ordered 3D points with optional unit normals, patch labels and extras.

    ``extras`` maps property names (e.g. ``"c_mean"``) to per-point arrays;
    ``info`` carries loader bookkeeping such as skipped OBJ directives.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    patch_ids: np.ndarray | None = None
    extras: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError(f"{len(self.normals)} normals for {n} points")
            lengths = np.linalg.norm(self.normals, axis=1)
            if n and np.max(np.abs(lengths - 1.0)) > NORMAL_TOL:
                raise ValueError("normals must have unit length")
        if self.patch_ids is not None:
            self.patch_ids = np.asarray(self.patch_ids, dtype=np.int64).reshape(-1)
            if len(self.patch_ids) != n:
                raise ValueError(f"{len(self.patch_ids)} patch ids for {n} points")
        for name, values in self.extras.items():
            values = np.asarray(values, dtype=np.float64).reshape(-1)
            if len(values) != n:
                raise ValueError(f"extra property {name!r} has {len(values)} values for {n} points")
            self.extras[name] = values

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# synthetic surfaces

KINDS = ("plane", "sphere-cap", "cylinder", "wavy-cloth")


@dataclass(frozen=True)
class SyntheticSurfaceSpec:
    """Desk-scale ground-truth surface.

    plane: unit square in z=0. sphere-cap: cap of a sphere of ``radius``
    around +z with polar half-angle ``cap_angle``. cylinder: ``radius``,
    ``angle`` radians of arc, unit height. wavy-cloth:
    (u, v, a sin(2 pi f u) sin(2 pi f v)) over the unit square.
    """

    kind: str = "wavy-cloth"
    n: int = 8000
    noise: float = 0.0
    seed: int = 0
    amplitude: float = 0.1
    frequency: float = 1.0
    radius: float = 1.0
    cap_angle: float = math.pi / 6
    angle: float = math.pi / 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.n < 1:
            raise ValueError("sample count must be positive")
        if self.amplitude < 0 or self.noise < 0:
            raise ValueError("amplitude and noise must be non-negative")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def mapping(self):
        """Generating mapping over the unit square (None for the sphere cap)."""
        if self.kind == "plane":
            return PlaneMapping()
        if self.kind == "wavy-cloth":
            return WavyClothMapping(self.amplitude, self.frequency)
        if self.kind == "cylinder":
            return CylinderMapping(self.radius, self.angle, 1.0)
        return None


def _area_uniform_uv(mapping, n, rng, max_element):
    """Rejection-sample UV so points are uniform by surface area."""
    out = []
    need = n
    while need > 0:
        uv = rng.uniform(0.0, 1.0, size=(max(2 * need, 64), 2))
        jet = mapping(None, uv, order=1)
        a = geometry.area_element(geometry.metric_tensor(jet))
        keep = rng.uniform(0.0, max_element, size=len(uv)) < a
        out.append(uv[keep][:need])
        need -= len(out[-1])
    return np.concatenate(out)


def generate(spec: SyntheticSurfaceSpec) -> tuple[PointCloud, float]:
    """Sample a GT cloud with exact normals and curvatures; returns (cloud, area)."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "sphere-cap":
        R, th = spec.radius, spec.cap_angle
        z = rng.uniform(math.cos(th), 1.0, size=spec.n)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=spec.n)
        r = np.sqrt(1.0 - z * z)
        normals = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        normals = unit(normals)
        points = R * normals
        c_mean = np.full(spec.n, 1.0 / R)
        c_gauss = np.full(spec.n, 1.0 / R ** 2)
        area = 2.0 * math.pi * R * R * (1.0 - math.cos(th))
    else:
        mapping = spec.mapping()
        if spec.kind == "wavy-cloth":
            w = 2.0 * math.pi * spec.frequency * spec.amplitude
            bound = math.sqrt(1.0 + 2.0 * w * w)
            uv = _area_uniform_uv(mapping, spec.n, rng, bound)
            area = geometry.midpoint_area(mapping, None, 512)
        else:
            uv = rng.uniform(0.0, 1.0, size=(spec.n, 2))
            area = 1.0 if spec.kind == "plane" else spec.radius * spec.angle
        sp = geometry.surface_point(mapping(None, uv, order=2))
        points, normals = sp.position, sp.normal
        c_mean, c_gauss = sp.c_mean, sp.c_gauss
    if spec.noise > 0:
        points = points + rng.normal(0.0, spec.noise, size=points.shape)
    cloud = PointCloud(points, normals, extras={"c_mean": c_mean, "c_gauss": c_gauss})
    return cloud, float(area)


# --------------------------------------------------------------------------
# meshes


def triangulated_area(vertices, triangles) -> float:
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    T = np.asarray(triangles)
    if T.size == 0:
        return 0.0
    T = T.reshape(-1, 3)
    if not np.issubdtype(T.dtype, np.integer):
        raise ValueError("triangle indices must be integers")
    if T.min() < 0 or T.max() >= len(V):
        raise ValueError(f"triangle index out of range for {len(V)} vertices")
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    return float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())


def icosphere(subdivisions: int = 0):
    """Unit icosphere as (vertices, triangles)."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [tuple(unit(v)) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                V.append(tuple(unit((np.array(V[i]) + np.array(V[j])) / 2.0)))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(V), np.array(faces, dtype=np.int64)
