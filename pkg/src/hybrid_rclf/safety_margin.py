"""Barrier-function robust-safety checks for smooth vector fields.

A :class:`BarrierProblem` bundles a continuously differentiable barrier
candidate ``B`` (safe region ``K = {B <= 0}``), its gradient, a
single-valued field ``F`` and seeded samplers for the initial set ``X_o``,
the unsafe set ``X_u`` and the boundary ``∂K``.  All callables broadcast
over leading axes: points have shape ``(..., n)``.

Samplers take ``(count, rng)`` and return an array of shape ``(k, n)``
with ``k <= count``; an empty array means the set is empty as far as the
sampler can tell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .report import VerificationReport, Violation


class DegenerateGradientError(ArithmeticError):
    """``∇B`` vanishes at a boundary sample."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


Sampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True, eq=False)
class BarrierProblem:
    B: Callable
    gradB: Callable
    F: Callable
    n: int
    sampler_Xo: Optional[Sampler] = None
    sampler_Xu: Optional[Sampler] = None
    sampler_boundary: Optional[Sampler] = None
    boundary_tol: float = 1e-8
    seed: int = 0
    name: str = "barrier"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.boundary_tol <= 0:
            raise ValueError("boundary_tol must be positive")

    def rng(self, offset: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, offset])


def _draw(sampler: Optional[Sampler], count: int, rng, n: int) -> np.ndarray:
    if sampler is None or count <= 0:
        return np.zeros((0, n))
    pts = np.asarray(sampler(count, rng), dtype=float)
    return pts.reshape(-1, n)


def newton_project(B: Callable, gradB: Callable, x, tol: float = 1e-8, max_iter: int = 50):
    """Project points onto ``{B = 0}`` by Newton steps along ``∇B``.

    Returns ``(points, ok)``; ``ok`` marks points that reached ``|B| <= tol``
    without meeting a vanishing gradient.
    """
    x = np.array(x, dtype=float, copy=True)
    active = np.ones(x.shape[:-1], dtype=bool)
    ok = np.zeros(x.shape[:-1], dtype=bool)
    for _ in range(max_iter):
        b = np.asarray(B(x), dtype=float)
        ok = np.abs(b) <= tol
        active &= ~ok
        if not np.any(active):
            break
        g = np.asarray(gradB(x), dtype=float)
        g2 = np.sum(g * g, axis=-1)
        bad = active & (g2 <= 1e-24)
        active &= ~bad
        step = np.where(active, b / np.where(g2 > 0, g2, 1.0), 0.0)
        x = x - step[..., None] * g
    b = np.asarray(B(x), dtype=float)
    ok = np.isfinite(b) & (np.abs(b) <= tol)
    return x, ok


def level_set_sampler(B: Callable, gradB: Callable, lower, upper, tol: float = 1e-8) -> Sampler:
    """Boundary sampler: uniform seeds in the box ``[lower, upper]``
    projected onto ``{B = 0}``; seeds that fail to converge are rejected."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)

    def sample(count: int, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros((0, lo.size))
        for _ in range(20):
            need = count - len(out)
            if need <= 0:
                break
            seeds = rng.uniform(lo, hi, size=(2 * need, lo.size))
            pts, ok = newton_project(B, gradB, seeds, tol=tol)
            out = np.concatenate([out, pts[ok]])
        return out[:count]

    return sample


# ---------------------------------------------------------------------------
# checks


def barrier_candidate_check(problem: BarrierProblem, n_samples: int = 1000) -> VerificationReport:
    """``B > 0`` on ``X_u`` samples and ``B <= 0`` on ``X_o`` samples."""
    xu = _draw(problem.sampler_Xu, n_samples, problem.rng(1), problem.n)
    xo = _draw(problem.sampler_Xo, n_samples, problem.rng(2), problem.n)
    viol = []
    margins = []
    flags = []
    if len(xu) == 0:
        flags.append("empty_X_u")
    if len(xo) == 0:
        flags.append("empty_X_o")
    bu = np.asarray(problem.B(xu), dtype=float) if len(xu) else np.zeros(0)
    bo = np.asarray(problem.B(xo), dtype=float) if len(xo) else np.zeros(0)
    for x, b in zip(xu, bu):
        if not b > 0:
            viol.append(Violation(tuple(x), "X_u", float(b)))
    for x, b in zip(xo, bo):
        if not b <= 0:
            viol.append(Violation(tuple(x), "X_o", float(-b)))
    margins = np.concatenate([bu, -bo])
    return VerificationReport(
        condition="barrier_candidate",
        points_checked=len(xu) + len(xo),
        violations=tuple(viol),
        worst_margin=float(np.min(margins)) if margins.size else None,
        flags=tuple(flags),
        details={"X_u": {"points": len(xu), "violations": int(np.sum(~(bu > 0)))},
                 "X_o": {"points": len(xo), "violations": int(np.sum(~(bo <= 0)))}},
    )


def boundary_samples(problem: BarrierProblem, n_samples: int) -> np.ndarray:
    return _draw(problem.sampler_boundary, n_samples, problem.rng(3), problem.n)


def strict_decrease_boundary(problem: BarrierProblem, n_samples: int = 1000,
                             points=None) -> VerificationReport:
    """``<∇B(x), F(x)> < 0`` at every boundary sample.

    ``worst_margin`` is the negated largest value, so a positive margin
    means strict decrease held everywhere."""
    pts = boundary_samples(problem, n_samples) if points is None else np.asarray(points, float)
    if len(pts) == 0:
        return VerificationReport("strict_decrease_boundary", 0, flags=("empty_boundary",))
    vals = np.sum(np.asarray(problem.gradB(pts)) * np.asarray(problem.F(pts)), axis=-1)
    viol = tuple(Violation(tuple(x), "boundary", float(-v)) for x, v in zip(pts, vals) if not v < 0)
    worst = float(np.max(vals))
    return VerificationReport(
        condition="strict_decrease_boundary",
        points_checked=len(pts),
        violations=viol,
        worst_margin=-worst,
        details={"worst_value": worst,
                 "max_boundary_residual": float(np.max(np.abs(problem.B(pts))))},
    )


def uniform_margin(problem: BarrierProblem, n_samples: int = 1000, points=None) -> float:
    """Sampled ``inf <∇B, -F> / (2 sqrt(n) |∇B|)`` over the boundary,
    clamped at zero."""
    pts = boundary_samples(problem, n_samples) if points is None else np.asarray(points, float)
    if len(pts) == 0:
        raise ValueError("no boundary samples")
    g = np.asarray(problem.gradB(pts), dtype=float)
    gn = np.linalg.norm(g, axis=-1)
    small = ~(gn > 1e-12)
    if np.any(small):
        raise DegenerateGradientError("gradient of B vanishes on the boundary",
                                      pts[int(np.argmax(small))])
    q = np.sum(g * -np.asarray(problem.F(pts), dtype=float), axis=-1) / (2.0 * math.sqrt(problem.n) * gn)
    return max(0.0, float(np.min(q)))


def simulate_perturbed(problem: BarrierProblem, epsilon: float, x0_set, T: float = 20.0,
                       dt: float = 1e-2, tol: float = 1e-8) -> VerificationReport:
    """Integrate ``x' = F(x) + epsilon ∇B/|∇B|`` (RK4) from every start and
    check ``B <= tol`` along each trajectory.

    Where ``∇B`` vanishes the perturbation falls back to a seeded random
    unit direction and the report carries a flag.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    x = np.array(np.atleast_2d(x0_set), dtype=float)
    if x.shape[-1] != problem.n:
        raise ValueError("start points have the wrong dimension")
    rng = problem.rng(4)
    fallback = [False]

    def field(z):
        g = np.asarray(problem.gradB(z), dtype=float)
        gn = np.linalg.norm(g, axis=-1, keepdims=True)
        small = gn[..., 0] <= 1e-12
        d = g / np.where(gn > 1e-12, gn, 1.0)
        if np.any(small):
            fallback[0] = True
            r = rng.standard_normal(d[small].shape)
            d[small] = r / np.linalg.norm(r, axis=-1, keepdims=True)
        return np.asarray(problem.F(z), dtype=float) + epsilon * d

    steps = int(math.ceil(T / dt - 1e-9))
    worst = np.asarray(problem.B(x), dtype=float).copy()
    first_bad = np.full(len(x), -1)
    bad_pt = x.copy()
    for k in range(steps):
        h = min(dt, T - k * dt)
        k1 = field(x)
        k2 = field(x + 0.5 * h * k1)
        k3 = field(x + 0.5 * h * k2)
        k4 = field(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        b = np.asarray(problem.B(x), dtype=float)
        newly = (b > tol) & (first_bad < 0)
        first_bad[newly] = k + 1
        bad_pt[newly] = x[newly]
        worst = np.maximum(worst, np.where(np.isfinite(b), b, np.inf))
    viol = tuple(Violation(tuple(bad_pt[i]), f"trajectory:{i}", float(tol - worst[i]))
                 for i in np.flatnonzero(first_bad >= 0))
    return VerificationReport(
        condition="robust_safety_containment",
        points_checked=len(x),
        violations=viol,
        worst_margin=float(tol - np.max(worst)) if len(x) else None,
        flags=("random_perturbation_used",) if fallback[0] else (),
        details={"epsilon": float(epsilon), "T": float(T), "dt": float(dt), "steps": steps,
                 "max_B": float(np.max(worst)) if len(x) else None,
                 "first_violation_step": [int(s) for s in first_bad]},
    )


# ---------------------------------------------------------------------------
# linear fixture


_Q = np.array([[1.0, -0.5], [-0.5, 1.0]])
_L_INV_T = np.linalg.inv(np.linalg.cholesky(_Q)).T


def W_quad(x):
    """``W(x) = x1² + x2² - x1 x2``."""
    x = np.asarray(x, dtype=float)
    return x[..., 0] ** 2 + x[..., 1] ** 2 - x[..., 0] * x[..., 1]


def grad_W(x):
    x = np.asarray(x, dtype=float)
    return np.stack([2 * x[..., 0] - x[..., 1], 2 * x[..., 1] - x[..., 0]], axis=-1)


def linear_field(x):
    """``F(x) = (-x1 + x2, -x1)``; satisfies ``<∇W, F> = -W``."""
    x = np.asarray(x, dtype=float)
    return np.stack([-x[..., 0] + x[..., 1], -x[..., 0]], axis=-1)


def _ellipse_shell(r_lo: float, r_hi: float) -> Sampler:
    # points with sqrt(W) uniform-in-area between r_lo and r_hi
    def sample(count: int, rng: np.random.Generator) -> np.ndarray:
        th = rng.uniform(0.0, 2 * math.pi, count)
        rad = np.sqrt(rng.uniform(r_lo ** 2, r_hi ** 2, count))
        z = np.stack([rad * np.cos(th), rad * np.sin(th)], axis=-1)
        return z @ _L_INV_T.T
    return sample


def linear_safety_problem(c_o: float = 1.0, c_u: float = 12.0, seed: int = 0,
                          boundary_tol: float = 1e-8) -> BarrierProblem:
    """``B = W - c_u`` with ``X_o = {W <= c_o}`` and ``X_u = {W > c_u}``
    (sampled out to ``W = 9 c_u``)."""
    if not 0 <= c_o < c_u:
        raise ValueError("need 0 <= c_o < c_u")
    B = lambda x: W_quad(x) - c_u
    r = math.sqrt(c_u)
    xu_inner = _ellipse_shell(r, 3 * r)

    def sample_xu(count, rng):
        pts = xu_inner(count, rng)
        return pts[W_quad(pts) > c_u]

    return BarrierProblem(
        B=B, gradB=grad_W, F=linear_field, n=2,
        sampler_Xo=_ellipse_shell(0.0, math.sqrt(c_o)),
        sampler_Xu=sample_xu,
        sampler_boundary=level_set_sampler(B, grad_W, (-2 * r, -2 * r), (2 * r, 2 * r), boundary_tol),
        boundary_tol=boundary_tol, seed=seed, name="linear_safety",
    )


def near_boundary_starts(problem: BarrierProblem, count: int, shrink: float = 0.995) -> np.ndarray:
    """Boundary samples pulled toward the origin by ``shrink`` (inside K for
    star-shaped K about the origin)."""
    pts = _draw(problem.sampler_boundary, count, problem.rng(5), problem.n)
    return shrink * pts
