"""Weighted nonlinear least-squares lateration (Levenberg-Marquardt)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InsufficientAnchors, NumericalFailure
from .geometry import Anchor, Point2D, weighted_centroid

MIN_OBSERVATIONS = 3
_COINCIDENT_CLAMP = 1e-9


class Phase(str, enum.Enum):
    LAT1 = "Lat1"
    LAT2 = "Lat2"
    FUSED = "Fused"


@dataclass(frozen=True)
class RangingObservation:
    """Range to a reference point. The anchor may be a fixed beacon or a neighbor's estimate."""

    anchor: Anchor
    distance: float
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.distance > 0:
            raise ValueError(f"distance to {self.anchor.id} must be > 0, got {self.distance}")
        if not self.weight >= 0:
            raise ValueError(f"weight for {self.anchor.id} must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    step_tolerance: float = 1e-8
    initial_damping: float = 1e-3
    damping_factor: float = 10.0
    # finish with exact-Hessian Newton steps; makes the result reproducible
    # to ~1e-13 m instead of ~step_tolerance
    newton_polish: bool = True
    # also start from the best node of a coarse grid, so a mirror-image
    # local minimum near the centroid does not hide the global one
    grid_start: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.step_tolerance > 0:
            raise ValueError("step_tolerance must be > 0")
        if not self.initial_damping > 0:
            raise ValueError("initial_damping must be > 0")
        if not self.damping_factor > 1:
            raise ValueError("damping_factor must be > 1")


@dataclass(frozen=True)
class PositionEstimate:
    position: Point2D
    phase: Phase
    residual_rms: float = 0.0
    iterations: int = 0
    converged: bool = True

    def error_to(self, truth: Point2D) -> float:
        return math.hypot(self.position.x - truth.x, self.position.y - truth.y)


def default_weights(observations: Sequence[RangingObservation]) -> list[RangingObservation]:
    """Re-weight each observation by the inverse of its squared distance."""
    return [replace(o, weight=1.0 / (o.distance * o.distance)) for o in observations]


def _ranges(x: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    diff = x[None, :] - anchors
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def range_jacobian(x: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """d g_i / d(x, y) for g_i(x) = |x - anchor_i|; rows of coincident anchors use a clamped range."""
    diff = x[None, :] - anchors
    g = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return diff / np.maximum(g, _COINCIDENT_CLAMP)[:, None]


def weighted_sse(x, anchors: np.ndarray, distances: np.ndarray, weights: np.ndarray) -> float:
    r = _ranges(np.asarray(x, dtype=float), anchors) - distances
    return float(np.sum(weights * r * r))


def _linearized_start(anchors: np.ndarray, d: np.ndarray, w: np.ndarray) -> np.ndarray | None:
    """Weighted solution of the range equations differenced against the heaviest anchor."""
    k = int(np.argmax(w))
    others = np.arange(len(anchors)) != k
    A = 2.0 * (anchors[others] - anchors[k])
    b = d[k] ** 2 - d[others] ** 2 + np.sum(anchors[others] ** 2, axis=1) - np.sum(anchors[k] ** 2)
    sw = np.sqrt(w[others])[:, None]
    sol, _, rank, _ = np.linalg.lstsq(sw * A, sw[:, 0] * b, rcond=None)
    if rank < 2 or not np.all(np.isfinite(sol)):
        return None
    return sol


def _coarse_grid_start(anchors: np.ndarray, d: np.ndarray, w: np.ndarray, n: int = 41) -> np.ndarray:
    """Lowest-cost node of a coarse grid covering every range circle."""
    pad = float(d.max())
    lo = anchors.min(axis=0) - pad
    hi = anchors.max(axis=0) + pad
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n), indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    g = np.linalg.norm(pts[:, None, :] - anchors[None, :, :], axis=2)
    cost = ((g - d) ** 2) @ w
    return pts[int(np.argmin(cost))]


def _collinear(anchors: np.ndarray) -> bool:
    s = np.linalg.svd(anchors - anchors.mean(axis=0), compute_uv=False)
    return bool(s[-1] <= 1e-9 * s[0])


def _solve2(a: float, b: float, c: float, g: np.ndarray) -> np.ndarray | None:
    """Solve [[a, b], [b, c]] x = -g; None when the matrix is singular."""
    det = a * c - b * b
    if not det > 1e-300 * max(a * c, 1e-300):
        return None
    return np.array([(-g[0] * c + g[1] * b) / det, (g[0] * b - g[1] * a) / det])


def _lm(x, anchors, d, sw, cfg: SolverConfig):
    r = sw * (_ranges(x, anchors) - d)
    cost = float(r @ r)
    lam = cfg.initial_damping
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        J = sw[:, None] * range_jacobian(x, anchors)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        step_ok = False
        step_norm = math.inf
        while lam < 1e16:
            delta = _solve2(A[0, 0] + lam * diag[0], A[0, 1], A[1, 1] + lam * diag[1], g)
            if delta is None:
                lam *= cfg.damping_factor
                continue
            if not np.all(np.isfinite(delta)):
                raise NumericalFailure("non-finite L-M step")
            x_new = x + delta
            r_new = sw * (_ranges(x_new, anchors) - d)
            cost_new = float(r_new @ r_new)
            if not math.isfinite(cost_new):
                raise NumericalFailure("non-finite residual")
            step_norm = float(np.hypot(*delta))
            if cost_new <= cost:
                x, r, cost = x_new, r_new, cost_new
                lam /= cfg.damping_factor
                step_ok = True
                break
            # rejected; a vanishing step means no further decrease is reachable
            if step_norm < cfg.step_tolerance:
                break
            lam *= cfg.damping_factor
        if step_norm < cfg.step_tolerance:
            converged = True
            break
        if not step_ok:
            break
    if cfg.newton_polish:
        x, cost = _polish(x, cost, anchors, d, sw * sw)
    return x, cost, it, converged


def _polish(x, cost, anchors, d, w, max_steps: int = 30, tol: float = 1e-13):
    """Newton steps on the exact Hessian from the L-M result.

    Steps are taken while they keep shrinking and the Hessian stays
    positive definite, with no cost comparison, so the result does not
    depend on accept/reject decisions made at the rounding floor of the cost.
    """
    prev = math.inf
    x0 = x
    for _ in range(max_steps):
        diff = x[None, :] - anchors
        g = np.maximum(np.sqrt(np.einsum("ij,ij->i", diff, diff)), _COINCIDENT_CLAMP)
        u = diff / g[:, None]
        r = g - d
        grad = (w * r) @ u
        outer = np.einsum("i,ij,ik->jk", w, u, u)
        curv = np.einsum("i,ij,ik->jk", w * r / g, u, u)
        H = outer + np.sum(w * r / g) * np.eye(2) - curv
        if np.linalg.eigvalsh(H)[0] <= 0:
            break
        delta = -np.linalg.solve(H, grad)
        n = float(np.hypot(*delta))
        if not math.isfinite(n) or n >= prev:
            break
        x = x + delta
        prev = n
        if n < tol:
            break
    c = weighted_sse(x, anchors, d, w)
    # guard against a polish that wandered to a worse point
    if math.isfinite(c) and c <= cost * (1 + 1e-9) + 1e-300:
        return x, c
    return x0, cost


def laterate(
    observations: Sequence[RangingObservation],
    cfg: SolverConfig | None = None,
    phase: Phase = Phase.LAT1,
    initial: Point2D | None = None,
) -> PositionEstimate:
    """Minimize sum w_i (|x - a_i| - d_i)^2 over the plane.

    Without an explicit ``initial`` point the solver starts from the weighted
    centroid of the anchors and, for non-collinear sets, also from the
    linearized least-squares point and the best node of a coarse grid; the
    lowest-cost result wins. Weights are
    normalized to unit sum and damping is applied to diag(J^T J), so scaling
    every weight by the same constant leaves the argmin unchanged. Collinear
    anchor sets are accepted; the result is then one of the two mirror
    solutions.
    """
    cfg = cfg or SolverConfig()
    usable = [o for o in observations if o.weight > 0]
    if len(usable) < MIN_OBSERVATIONS:
        raise InsufficientAnchors(f"lateration needs {MIN_OBSERVATIONS} weighted observations, got {len(usable)}")
    anchors = np.array([[o.anchor.position.x, o.anchor.position.y] for o in usable], dtype=float)
    if np.all(np.ptp(anchors, axis=0) == 0):
        raise InsufficientAnchors("all anchor positions coincide")
    d = np.array([o.distance for o in usable], dtype=float)
    w = np.array([o.weight for o in usable], dtype=float)
    w = w / w.sum()
    sw = np.sqrt(w)

    if initial is not None:
        starts = [initial.as_array()]
    else:
        x0 = weighted_centroid(anchors, w).as_array()
        if _collinear(anchors):
            # the centroid lies on the anchor line, a saddle of the cost
            u = anchors[np.argmax(np.linalg.norm(anchors - anchors[0], axis=1))] - anchors[0]
            x0 = x0 + 1e-3 * np.array([-u[1], u[0]])
            starts = [x0]
        else:
            lin = _linearized_start(anchors, d, w)
            starts = [x0] if lin is None else [x0, lin]
            if cfg.grid_start:
                starts.append(_coarse_grid_start(anchors, d, w))

    best = None
    for x in starts:
        res = _lm(np.asarray(x, dtype=float), anchors, d, sw, cfg)
        if best is None or res[1] < best[1]:
            best = res
    x, cost, it, converged = best
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite position")
    return PositionEstimate(
        position=Point2D.from_array(x),
        phase=phase,
        residual_rms=math.sqrt(max(cost, 0.0)),
        iterations=it,
        converged=converged,
    )
