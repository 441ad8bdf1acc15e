"""Patch mappings from the unit UV square to R^3.

Every mapping is a callable ``mapping(d, uv, order=2) -> Jet2`` whose slots
carry a trailing axis of length 3 (x, y, z). ``uv`` is an ``(M, 2)`` array (or
a single ``(2,)`` point) inside ``[0, 1]^2``; ``d`` is the codeword and is
ignored by the closed-form test surfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .jets import (
    Jet2,
    compose,
    constant,
    jet_cos,
    jet_matmul,
    jet_sin,
    jet_softplus,
    jet_stack,
    seed_u,
    seed_v,
)
from .tape import Tape, Var

UV_MIN, UV_MAX = 0.0, 1.0
# widening of the first-layer UV weights at init (see init_decoder)
UV_INIT_SCALE = 2.0


def _split_uv(uv):
    uv = np.asarray(uv, dtype=np.float64)
    if uv.shape[-1] != 2:
        raise ValueError(f"UV points need a trailing axis of 2, got shape {uv.shape}")
    return uv[..., 0], uv[..., 1]


def check_uv(uv) -> None:
    uv = np.asarray(uv)
    if np.any(uv < UV_MIN) or np.any(uv > UV_MAX):
        raise ValueError("UV samples outside the unit square")


# --------------------------------------------------------------------------
# MLP decoder


@dataclass
class PatchDecoder:
    """Softplus MLP ``(d, u, v) -> R^3`` with a linear output layer.

    ``weights[0]`` has shape ``(D + 2, W)``; rows ``D`` and ``D + 1`` act on u
    and v. Hidden layers are ``(W, W)`` and the output layer ``(W, 3)``.
    """

    weights: list
    biases: list
    k: int = 0

    @property
    def latent_dim(self) -> int:
        return self.weights[0].shape[0] - 2

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[1]

    def n_weights(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def parameters(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"p{self.k}.w{i}"] = w
            out[f"p{self.k}.b{i}"] = b
        return out

    def traced(self, tape: Tape) -> "PatchDecoder":
        """Copy whose arrays are registered as parameters on ``tape``."""
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            ws.append(tape.param(f"p{self.k}.w{i}", w))
            bs.append(tape.param(f"p{self.k}.b{i}", b))
        return PatchDecoder(ws, bs, self.k)

    def __call__(self, d, uv, order: int = 2) -> Jet2:
        return decode(self, d, uv, order)


def n_weights(D: int, H: int, W: int) -> int:
    return (D + 2 + 1) * W + (H - 1) * (W + 1) * W + (W + 1) * 3


def init_decoder(seed, D: int = 64, H: int = 3, W: int = 128, k: int = 0,
                 uv_scale: float = UV_INIT_SCALE) -> PatchDecoder:
    """Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)).

    The codeword is constant over a patch, so only u and v vary across it: the
    two UV rows of the first layer are drawn with fan-in 2 and widened by
    ``uv_scale``, and each first-layer bias puts that unit's softplus kink
    through a random point of the unit square. Other biases start at zero.
    """
    if D < 0 or H < 1 or W < 1:
        raise ValueError(f"invalid decoder shape D={D} H={H} W={W}")
    rng = np.random.default_rng(seed)
    sizes = [D + 2] + [W] * H + [3]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    uv_bound = uv_scale * math.sqrt(6.0 / 2.0)
    w_uv = rng.uniform(-uv_bound, uv_bound, size=(2, W))
    weights[0][D:] = w_uv
    biases[0] = -(w_uv * rng.uniform(0.0, 1.0, size=(2, W))).sum(axis=0)
    return PatchDecoder(weights, biases, k)


def decode(dec: PatchDecoder, d, uv, order: int = 2) -> Jet2:
    """Evaluate a decoder with exact UV derivatives.

    Works both on plain arrays and on tape-traced decoders/codewords; the
    first layer is expanded by hand so the codeword product is computed once.
    """
    D = dec.latent_dim
    if isinstance(d, Var):
        d_shape = d.shape
    else:
        d = np.asarray(d, dtype=np.float64)
        d_shape = d.shape
    if d_shape != (D,):
        raise ValueError(f"codeword has shape {d_shape}, decoder expects ({D},)")
    u, v = _split_uv(uv)
    u = u[..., None]
    v = v[..., None]

    w0, b0 = dec.weights[0], dec.biases[0]
    if D > 0:
        base = d @ w0[:D] + b0
    else:
        base = b0
    wu, wv = w0[D], w0[D + 1]
    z = 0.0 if order == 2 else None
    pre = Jet2(u * wu + v * wv + base, wu, wv, z, z, z)

    h = jet_softplus(pre)
    for w, b in zip(dec.weights[1:-1], dec.biases[1:-1]):
        h = jet_softplus(jet_matmul(h, w, b))
    return jet_matmul(h, dec.weights[-1], dec.biases[-1])


# --------------------------------------------------------------------------
# model: K decoders + per-shape codewords


@dataclass
class PatchAtlas:
    """K independent patch decoders sharing per-shape codewords (auto-decoder)."""

    decoders: list
    codewords: np.ndarray  # (S, D)

    @property
    def n_patches(self) -> int:
        return len(self.decoders)

    @property
    def n_shapes(self) -> int:
        return self.codewords.shape[0]

    @property
    def shape_tuple(self) -> tuple:
        dec = self.decoders[0]
        return (self.n_patches, dec.latent_dim, dec.hidden_layers, dec.width)

    def parameters(self) -> dict:
        out = {}
        for dec in self.decoders:
            out.update(dec.parameters())
        out["codewords"] = self.codewords
        return out

    def load_parameters(self, params: dict) -> None:
        for dec in self.decoders:
            for i in range(len(dec.weights)):
                dec.weights[i] = params[f"p{dec.k}.w{i}"]
                dec.biases[i] = params[f"p{dec.k}.b{i}"]
        self.codewords = params["codewords"]

    def patch(self, k: int, shape: int = 0):
        """Mapping for patch ``k`` bound to the codeword of ``shape``."""
        dec, d = self.decoders[k], self.codewords[shape]
        return lambda _d, uv, order=2: dec(d, uv, order)


def init_atlas(seed: int, K: int, D: int = 64, H: int = 3, W: int = 128,
               n_shapes: int = 1, code_std: float = 0.01) -> PatchAtlas:
    seeds = np.random.SeedSequence(seed).spawn(K + 1)
    decoders = [init_decoder(seeds[k], D, H, W, k) for k in range(K)]
    codewords = np.random.default_rng(seeds[K]).normal(0.0, code_std, size=(n_shapes, D))
    return PatchAtlas(decoders, codewords)


# --------------------------------------------------------------------------
# closed-form mappings


def _uv_jets(uv, order):
    u, v = _split_uv(uv)
    return seed_u(u, order), seed_v(v, order)


def _zero_like(u: Jet2, order):
    return constant(np.zeros_like(np.asarray(u.val, dtype=float)), order)


@dataclass(frozen=True)
class PlaneMapping:
    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        return jet_stack([u, v, _zero_like(u, order)])


@dataclass(frozen=True)
class LinearMapping:
    """f(u, v) = A @ (u, v) + offset for a 3x2 matrix A."""

    matrix: tuple = ((1.0, 0.0), (0.0, 1.0), (0.0, 0.0))
    offset: tuple = (0.0, 0.0, 0.0)

    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        comps = [u * row[0] + v * row[1] + c for row, c in zip(self.matrix, self.offset)]
        return jet_stack(comps)


@dataclass(frozen=True)
class SphereMapping:
    """f = R (cos u cos v, sin u cos v, sin v), u and v in radians."""

    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        cu, su, cv, sv = jet_cos(u), jet_sin(u), jet_cos(v), jet_sin(v)
        R = self.radius
        return jet_stack([cu * cv * R, su * cv * R, sv * R])


@dataclass(frozen=True)
class SaddleMapping:
    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        return jet_stack([u, v, u * u - v * v])


@dataclass(frozen=True)
class WavyClothMapping:
    """f = (u, v, a sin(2 pi f u) sin(2 pi f v))."""

    amplitude: float = 0.1
    frequency: float = 1.0

    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        w = 2.0 * math.pi * self.frequency
        z = jet_sin(u * w) * jet_sin(v * w) * self.amplitude
        return jet_stack([u, v, z])


@dataclass(frozen=True)
class CylinderMapping:
    """Cylinder of radius R about the y axis; u sweeps ``angle`` radians, v the height."""

    radius: float = 1.0
    angle: float = math.pi / 2
    height: float = 1.0

    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        t = u * self.angle - self.angle / 2
        return jet_stack([jet_sin(t) * self.radius, v * self.height, jet_cos(t) * self.radius])


@dataclass(frozen=True)
class SphereCapMapping:
    """Spherical cap around +z, parameterised by a square in the tangent plane.

    (u, v) in [0,1]^2 maps to x, y in [-h, h] and z = sqrt(R^2 - x^2 - y^2);
    ``half_width`` must keep the square inside the sphere.
    """

    radius: float = 1.0
    half_width: float = 0.5

    def __call__(self, d, uv, order: int = 2) -> Jet2:
        u, v = _uv_jets(uv, order)
        h = self.half_width
        x = u * (2 * h) - h
        y = v * (2 * h) - h
        r2 = x * x + y * y
        q = self.radius ** 2 - np.asarray(r2.val)
        s = np.sqrt(q)
        # z = sqrt(R^2 - r2): chain rule with f' = -1/(2 sqrt(q)), f'' = -1/(4 q^{3/2})
        z = compose(r2, s, -0.5 / s, -0.25 / (s * q)) if order == 2 else compose(r2, s, -0.5 / s)
        return jet_stack([x, y, z])


def analytic_plane() -> PlaneMapping:
    return PlaneMapping()


def analytic_sphere(R: float = 1.0) -> SphereMapping:
    return SphereMapping(R)


def analytic_saddle() -> SaddleMapping:
    return SaddleMapping()


# --------------------------------------------------------------------------
# UV sampling


def sample_uv(n: int, mode: str = "grid", seed=None) -> np.ndarray:
    """UV samples in the unit square as an ``(n', 2)`` array.

    ``grid`` returns the corner-inclusive ``ceil(sqrt(n))^2`` lattice (u-major);
    ``random`` draws ``n`` uniform points from ``default_rng(seed)``.
    """
    if n < 1:
        raise ValueError("need at least one UV sample")
    if mode == "grid":
        m = math.isqrt(n - 1) + 1
        t = np.linspace(UV_MIN, UV_MAX, m) if m > 1 else np.array([0.5])
        uu, vv = np.meshgrid(t, t, indexing="ij")
        return np.stack([uu.ravel(), vv.ravel()], axis=-1)
    if mode == "random":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return rng.uniform(UV_MIN, UV_MAX, size=(n, 2))
    raise ValueError(f"unknown sampling mode {mode!r}")


def lattice_uv(cells: int) -> np.ndarray:
    """Corner-inclusive lattice with ``cells`` intervals per side, (cells+1)^2 points.

    Lattices nest: every point of ``lattice_uv(r)`` appears in ``lattice_uv(r * j)``.
    """
    if cells < 1:
        raise ValueError("lattice needs at least one cell per side")
    t = np.arange(cells + 1) / cells
    uu, vv = np.meshgrid(t, t, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)
