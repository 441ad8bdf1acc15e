"""Auto-decoder training: decoders and per-shape codewords fitted jointly with Adam."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses, neighbors
from .checkpoint import save_checkpoint
from .data import PointCloud
from .losses import LossReport, LossWeights
from .metrics import MetricsReport, evaluate_atlas
from .surface import PatchAtlas, decode, init_atlas
from .tape import Tape, backward, concat, stack

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "chd", "l_E", "l_G", "l_sk", "l_str", "l_def", "l_ol", "total", "wall_time")


class TrainingDiverged(RuntimeError):
    """Raised when a loss term turns non-finite; carries diagnostics."""

    def __init__(self, step: int, terms: dict, patch: int | None):
        self.step = step
        self.terms = terms
        self.patch = patch
        where = f", offending patch {patch}" if patch is not None else ""
        super().__init__(f"non-finite loss at step {step}{where}: {terms}")


@dataclass
class TrainConfig:
    n_patches: int = 4
    points_per_patch: int = 500
    steps: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    latent_dim: int = 64
    hidden_layers: int = 3
    width: int = 128
    grad_clip: float = 10.0
    eval_interval: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None
    converge_window: int = 200
    converge_tol: float = 1e-3
    # let gradients flow through the A^(k) normalisers of the conformal terms
    normalizer_grad: bool = False

    def __post_init__(self):
        if self.n_patches < 1 or self.points_per_patch < 1:
            raise ValueError("need K >= 1 patches and M >= 1 points per patch")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


@dataclass
class Target:
    """One training shape: GT points, its area and a cached k-d index."""

    cloud: PointCloud
    area: float | None = None
    index: neighbors.KdIndex | None = None

    def __post_init__(self):
        if self.index is None:
            self.index = neighbors.build(self.cloud.points)


def adam_update(params: dict, grads: dict, state: OptimizerState, lr, beta1, beta2, eps) -> dict:
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new = {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step = t
    return new


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def _step_rng(seed: int, step: int) -> np.random.Generator:
    # keyed on the step counter so a resumed run draws the same samples
    return np.random.default_rng([seed, step])


def traced_loss(atlas: PatchAtlas, targets, batch, cfg: TrainConfig, rng):
    """Build the tape for one step; returns (tape, total Var, per-shape reports)."""
    tape = Tape()
    decs = [dec.traced(tape) for dec in atlas.decoders]
    codes = tape.param("codewords", atlas.codewords)
    w = cfg.weights
    need_geometry = w.alpha_def > 0 or w.alpha_ol > 0
    M = cfg.points_per_patch

    totals, reports = [], []
    for s in batch:
        tgt = targets[s]
        d = codes[s]
        pos, E, F, G, A = [], [], [], [], []
        for dec in decs:
            uv = rng.uniform(0.0, 1.0, size=(M, 2))
            jet = decode(dec, d, uv, order=1)
            pos.append(jet.val)
            if need_geometry:
                e = (jet.du * jet.du).sum(axis=-1)
                f = (jet.du * jet.dv).sum(axis=-1)
                g = (jet.dv * jet.dv).sum(axis=-1)
                a = (e * g - f * f).sqrt(floor=1e-300)
                E.append(e)
                F.append(f)
                G.append(g)
                A.append(a.mean())
        P = concat(pos, axis=0)
        matches = losses.chamfer_matches(P.value, tgt.cloud.points, tgt.index)
        chd = losses.chamfer_traced(P, tgt.cloud.points, matches)
        total = chd
        terms = (0.0, 0.0, 0.0, 0.0)
        l_ol = 0.0
        if need_geometry:
            areas = stack(A)
            Es, Fs, Gs = stack(E), stack(F), stack(G)
            norm = areas if cfg.normalizer_grad else areas.detach()
            terms = losses.conformal_terms(Es, Fs, Gs, norm)
            if w.alpha_def > 0:
                total = total + w.alpha_def * losses.deformation_loss(terms, w)
            if w.alpha_ol > 0:
                if tgt.area is None:
                    raise ValueError("overlap loss needs the GT area of every target")
                l_ol = losses.overlap_loss(areas, tgt.area)
                total = total + w.alpha_ol * l_ol
        totals.append(total)
        reports.append(losses.total_loss(
            chd.value, [_value(t) for t in terms], _value(l_ol), w))
    loss = totals[0]
    for t in totals[1:]:
        loss = loss + t
    if len(totals) > 1:
        loss = loss * (1.0 / len(totals))
    return tape, loss, reports


def _value(x) -> float:
    return float(getattr(x, "value", x))


def _mean_report(reports) -> LossReport:
    if len(reports) == 1:
        return reports[0]
    keys = reports[0].as_dict().keys()
    return LossReport(**{k: float(np.mean([r.as_dict()[k] for r in reports])) for k in keys})


def _offending_patch(atlas: PatchAtlas) -> int | None:
    for dec in atlas.decoders:
        if not all(np.isfinite(w).all() for w in dec.weights + dec.biases):
            return dec.k
    return None


def train_step(atlas: PatchAtlas, targets, batch, cfg: TrainConfig, state: OptimizerState):
    """One forward/backward/Adam update; mutates ``atlas`` and ``state``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    rng = _step_rng(cfg.seed, state.step)
    tape, loss, reports = traced_loss(atlas, targets, batch, cfg, rng)
    report = _mean_report(reports)
    if not all(math.isfinite(x) for x in report.as_dict().values()):
        raise TrainingDiverged(state.step, report.as_dict(), _offending_patch(atlas))
    grads = backward(tape, loss)
    clip_gradients(grads, cfg.grad_clip)
    params = adam_update(atlas.parameters(), grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    atlas.load_parameters(params)
    return report, state


@dataclass
class FitResult:
    atlas: PatchAtlas
    history: list  # (step, LossReport, wall_time)
    metrics: MetricsReport | None
    state: OptimizerState
    stop_reason: str


class _LogWriter:
    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path is not None:
            self.path.write_text(",".join(LOG_COLUMNS) + "\n")

    def write(self, step, report: LossReport, wall):
        if self.path is None:
            return
        r = report.as_dict()
        vals = [str(step)] + [repr(r[c]) for c in LOG_COLUMNS[1:-1]] + [f"{wall:.3f}"]
        with self.path.open("a") as fh:
            fh.write(",".join(vals) + "\n")


def converged(totals, window: int, tol: float) -> bool:
    """True once the moving average over ``window`` steps improved by less
    than ``tol`` (relative) compared with the preceding window."""
    if window <= 0 or len(totals) < 2 * window:
        return False
    prev = float(np.mean(totals[-2 * window: -window]))
    cur = float(np.mean(totals[-window:]))
    return (prev - cur) < tol * abs(prev)


def fit(target: PointCloud, cfg: TrainConfig, gt_area: float | None = None,
        atlas: PatchAtlas | None = None, state: OptimizerState | None = None,
        evaluate: bool = True, callback=None) -> FitResult:
    """Fit a patch atlas to one point cloud."""
    if len(target) == 0:
        raise ValueError("empty target cloud")
    if atlas is None:
        atlas = init_atlas(cfg.seed, cfg.n_patches, cfg.latent_dim, cfg.hidden_layers, cfg.width)
    if state is None:
        state = OptimizerState.zeros_like(atlas.parameters())
    targets = [Target(target, gt_area)]
    writer = _LogWriter(cfg.log_path)
    history, totals = [], []
    t0 = time.perf_counter()
    reason = "step budget"
    while state.step < cfg.steps:
        step = state.step
        report, state = train_step(atlas, targets, [0], cfg, state)
        wall = time.perf_counter() - t0
        history.append((step, report, wall))
        totals.append(report.total)
        writer.write(step, report, wall)
        if cfg.eval_interval and (step + 1) % cfg.eval_interval == 0:
            log.info("step %d: total=%.4g chd=%.4g", step + 1, report.total, report.chd)
            if cfg.checkpoint_path:
                save_checkpoint(cfg.checkpoint_path, atlas, state)
        if callback is not None:
            callback(step, report)
        if converged(totals, cfg.converge_window, cfg.converge_tol):
            reason = "converged"
            break
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, atlas, state)
    metrics = None
    if evaluate:
        metrics, _ = evaluate_atlas(atlas, target, gt_index=targets[0].index)
    return FitResult(atlas, history, metrics, state, reason)


def config_with(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)
