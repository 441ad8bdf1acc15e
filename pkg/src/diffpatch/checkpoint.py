"""Versioned binary checkpoints.

Layout (little endian)::

    magic    4 bytes  b"DPCK"
    version  uint32   1
    K, D, H, W, S     uint32 x 5   patches, latent dim, hidden layers, width, shapes
    has_opt  uint32   1 if optimiser moments follow
    step     uint64   optimiser step counter (0 without moments)
    params   float64  every decoder array patch by patch (w0, b0, w1, b1, ...),
                      then the (S, D) codewords
    moments  float64  first moments then second moments, same order as params

Arrays are stored row-major with no per-array headers; shapes follow from
the header.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .surface import PatchAtlas, PatchDecoder

MAGIC = b"DPCK"
VERSION = 1
_HEADER = struct.Struct("<4sI5IIQ")


class CheckpointError(ValueError):
    pass


def _shapes(K, D, H, W, S):
    sizes = [D + 2] + [W] * H + [3]
    out = []
    for k in range(K):
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            out.append((f"p{k}.w{i}", (a, b)))
            out.append((f"p{k}.b{i}", (b,)))
    out.append(("codewords", (S, D)))
    return out


def save_checkpoint(path, atlas: PatchAtlas, state=None) -> None:
    K, D, H, W = atlas.shape_tuple
    S = atlas.n_shapes
    params = atlas.parameters()
    has_opt = state is not None
    chunks = [_HEADER.pack(MAGIC, VERSION, K, D, H, W, S, int(has_opt),
                           state.step if has_opt else 0)]
    layout = _shapes(K, D, H, W, S)
    for name, _ in layout:
        chunks.append(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    if has_opt:
        for moments in (state.m, state.v):
            for name, _ in layout:
                chunks.append(np.ascontiguousarray(moments[name], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_header(path) -> dict:
    raw = Path(path).read_bytes()[: _HEADER.size]
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, K, D, H, W, S, has_opt, step = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    if K < 1 or H < 1 or W < 1 or S < 1:
        raise CheckpointError(f"{path}: corrupt header K={K} H={H} W={W} S={S}")
    return {"K": K, "D": D, "H": H, "W": W, "S": S, "has_opt": bool(has_opt), "step": step}


def load_checkpoint(path, expect: dict | None = None):
    """Return ``(atlas, state_or_None)``.

    ``expect`` may pin any of K, D, H, W; a mismatch raises
    :class:`CheckpointError`.
    """
    from .trainer import OptimizerState

    hdr = read_header(path)
    for key, want in (expect or {}).items():
        if want is not None and hdr[key] != want:
            raise CheckpointError(
                f"{path}: checkpoint has {key}={hdr[key]}, configuration expects {want}")
    layout = _shapes(hdr["K"], hdr["D"], hdr["H"], hdr["W"], hdr["S"])
    n = sum(int(np.prod(s)) for _, s in layout)
    blocks = 3 if hdr["has_opt"] else 1
    data = Path(path).read_bytes()[_HEADER.size:]
    if len(data) != 8 * n * blocks:
        raise CheckpointError(f"{path}: payload has {len(data)} bytes, expected {8 * n * blocks}")
    flat = np.frombuffer(data, dtype="<f8").astype(np.float64)

    def unpack(offset):
        out = {}
        for name, shape in layout:
            size = int(np.prod(shape))
            out[name] = flat[offset: offset + size].reshape(shape).copy()
            offset += size
        return out

    params = unpack(0)
    decoders = []
    for k in range(hdr["K"]):
        ws = [params[f"p{k}.w{i}"] for i in range(hdr["H"] + 1)]
        bs = [params[f"p{k}.b{i}"] for i in range(hdr["H"] + 1)]
        decoders.append(PatchDecoder(ws, bs, k))
    atlas = PatchAtlas(decoders, params["codewords"])
    state = None
    if hdr["has_opt"]:
        state = OptimizerState(unpack(n), unpack(2 * n), hdr["step"])
    return atlas, state
