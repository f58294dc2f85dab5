"""Robust control Lyapunov functions: the Γ/Υ constructions, pointwise
minimum-norm feedback and grid certification of the RCLF inequalities."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .hybrid_core import Controller, HybridSystemModel, InputBox, ModelError
from .report import VerificationReport, Violation

log = logging.getLogger(__name__)

NEG_INF = float("-inf")
PHASES = ("flow", "jump")


class InfeasibleInputError(RuntimeError):
    """The regulation map is empty at the sampled resolution."""

    def __init__(self, message: str, x=None, best: float = np.inf):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x, dtype=float)
        self.best = float(best)


@dataclass(frozen=True, eq=False)
class Rclf:
    """Candidate robust control Lyapunov function.

    ``V``, ``gradV`` and ``dist_A`` broadcast over leading axes; the class
    functions ``alpha1``, ``alpha2``, ``alpha3`` act elementwise on arrays.
    ``rate`` is the coefficient of a quadratic ``alpha3`` when known.
    ``convex`` lets jump suprema over disturbance boxes use vertices when
    the jump map is affine in the disturbance.
    """

    V: Callable
    gradV: Callable
    alpha1: Callable
    alpha2: Callable
    alpha3: Callable
    dist_A: Callable
    r_star: float = 0.0
    gamma_fraction: float = 0.5
    invariance_flow: Optional[Callable] = None
    invariance_jump: Optional[Callable] = None
    rate: Optional[float] = None
    convex: bool = False
    v_zero_tol: float = 1e-12
    feas_tol: float = 1e-10
    u_sat: Optional[float] = None
    name: str = "rclf"

    def __post_init__(self):
        if self.r_star < 0:
            raise ValueError("r_star must be nonnegative")
        if self.gamma_fraction < 0:
            raise ValueError("gamma_fraction must be nonnegative")

    @property
    def degenerate(self) -> bool:
        """True when the decrease rate vanishes identically."""
        if self.rate is not None:
            return self.rate <= 0.0
        return float(self.alpha3(1.0)) <= 0.0


def residual_contains(rclf: Rclf, r: float, x) -> bool:
    """``V(x) <= r``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    return bool(float(rclf.V(np.asarray(x, dtype=float))) <= r)


# ---------------------------------------------------------------------------
# suprema over disturbance boxes


def _is_affine_on_box(fn, box: InputBox):
    """Midpoint test: the map at the box center and at edge midpoints must
    equal the average of the corresponding vertices."""
    verts = box.vertices()
    d = box.dim
    fv = fn(verts)
    fc = fn(box.center()[..., None, :])[..., 0, :]
    ok = np.isclose(fc, np.mean(fv, axis=-2), rtol=1e-9, atol=1e-9)
    # edges from the lower corner along each coordinate
    lo = box.lower
    mids = []
    for i in range(d):
        b = lo.copy()
        b[..., i] = box.upper[..., i]
        mids.append(0.5 * (lo + b))
    fm = fn(np.stack(mids, axis=-2))
    for i in range(d):
        ref = 0.5 * (fv[..., 0, :] + fv[..., 1 << (d - 1 - i), :])
        ok &= np.isclose(fm[..., i, :], ref, rtol=1e-9, atol=1e-9)
    ok = np.all(ok | ~np.isfinite(fc), axis=-1)
    return ok | box.empty, fv


def _sup_over_box(map_fn, score_fn, box: InputBox, use_vertices: bool, k: int):
    """``sup`` of ``score_fn(map_fn(w))`` over the box, batched.

    ``map_fn``/``score_fn`` receive arrays with an extra candidate axis
    before the coordinate axis.
    """
    if box.dim == 0:
        cand = np.zeros(box.empty.shape + (1, 0))
        return np.max(score_fn(map_fn(cand)), axis=-1)
    affine, fv = _is_affine_on_box(map_fn, box)
    if use_vertices and np.all(affine):
        return np.max(score_fn(fv), axis=-1)
    cand = box.grid(k)
    return np.max(score_fn(map_fn(cand)), axis=-1)


def _prep(model, x, u, m):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != model.n or u.shape[-1] != m:
        raise ModelError("dimension mismatch in gamma evaluation")
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    return np.broadcast_to(x, batch + (model.n,)), np.broadcast_to(u, batch + (m,)), batch


def _in_delta(set_pred, resid, x, u, wbox: InputBox):
    w = np.where(wbox.empty[..., None], 0.0, wbox.center())
    with np.errstate(invalid="ignore"):
        if set_pred is not None:
            inside = np.asarray(set_pred(x, u, w), dtype=bool)
        else:
            inside = np.asarray(resid(x, u, w)) <= 0.0
    return inside & ~wbox.empty


def flow_sup(model: HybridSystemModel, rclf: Rclf, x, u_c, k: int = 9):
    """``sup_w <gradV(x), F(x, u_c, w)>`` over ``Psi^w_c(x)`` (no set checks)."""
    x, u, batch = _prep(model, x, u_c, model.m_c)
    wbox = model.dist_box_flow(x)
    g = np.asarray(rclf.gradV(x), dtype=float)

    def fmap(w):
        xx = np.broadcast_to(x[..., None, :], w.shape[:-1] + (model.n,))
        uu = np.broadcast_to(u[..., None, :], w.shape[:-1] + (model.m_c,))
        with np.errstate(all="ignore"):
            return np.asarray(model.flow_map(xx, uu, np.where(np.isnan(w), 0.0, w)), dtype=float)

    def score(f):
        return np.einsum("...kn,...n->...k", f, g)

    return _sup_over_box(fmap, score, wbox, True, k), wbox


def jump_sup(model: HybridSystemModel, rclf: Rclf, x, u_d, k: int = 9):
    """``sup_w V(G(x, u_d, w)) - V(x)`` over ``Psi^w_d(x)``."""
    x, u, batch = _prep(model, x, u_d, model.m_d)
    wbox = model.dist_box_jump(x)
    v0 = np.asarray(rclf.V(x), dtype=float)

    def gmap(w):
        xx = np.broadcast_to(x[..., None, :], w.shape[:-1] + (model.n,))
        uu = np.broadcast_to(u[..., None, :], w.shape[:-1] + (model.m_d,))
        with np.errstate(all="ignore"):
            return np.asarray(model.jump_map(xx, uu, np.where(np.isnan(w), 0.0, w)), dtype=float)

    def score(gx):
        return np.asarray(rclf.V(gx), dtype=float) - v0[..., None]

    return _sup_over_box(gmap, score, wbox, rclf.convex, k), wbox


def _finish(val, inside, batch):
    val = np.where(inside, val, NEG_INF)
    return float(val) if batch == () else val


def gamma_flow(model: HybridSystemModel, rclf: Rclf, x, u_c, r: float):
    """Γ_c(x, u_c, r); ``-inf`` off Δ_c(r, C).  Batched over leading axes."""
    if r < rclf.r_star:
        raise ValueError("gamma needs r >= r_star")
    x, u, batch = _prep(model, x, u_c, model.m_c)
    sup, wbox = flow_sup(model, rclf, x, u)
    inside = _in_delta(model.flow_set, model.flow_residual, x, u, wbox)
    inside &= np.asarray(rclf.V(x)) >= r
    val = sup + rclf.gamma_fraction * np.asarray(rclf.alpha3(rclf.dist_A(x)), dtype=float)
    return _finish(val, inside, batch)


def gamma_jump(model: HybridSystemModel, rclf: Rclf, x, u_d, r: float):
    """Γ_d(x, u_d, r); ``-inf`` off Δ_d(r, D).  Batched over leading axes."""
    if r < rclf.r_star:
        raise ValueError("gamma needs r >= r_star")
    x, u, batch = _prep(model, x, u_d, model.m_d)
    sup, wbox = jump_sup(model, rclf, x, u)
    inside = _in_delta(model.jump_set, model.jump_residual, x, u, wbox)
    inside &= np.asarray(rclf.V(x)) >= r
    val = sup + rclf.gamma_fraction * np.asarray(rclf.alpha3(rclf.dist_A(x)), dtype=float)
    return _finish(val, inside, batch)


def upsilon(model: HybridSystemModel, rclf: Rclf, phase: str, x, u):
    """Υ(x, u) = Γ(x, u, V(x)).  Below the threshold r* the evaluation uses
    r = r*, so the value is ``-inf`` there."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    xa = np.asarray(x, dtype=float)
    below = np.asarray(rclf.V(xa), dtype=float) < rclf.r_star
    if np.any(below):
        log.debug("upsilon evaluated below r_star at %d point(s)", int(np.sum(below)))
    # Γ depends on r only through the test V(x) >= r, which holds for
    # r = V(x); evaluating at r = r* gives exactly that where V(x) >= r*
    fn = gamma_flow if phase == "flow" else gamma_jump
    return fn(model, rclf, xa, u, rclf.r_star)


# ---------------------------------------------------------------------------
# pointwise minimum-norm selection


def _qp_halfspace_box(a0: float, b: np.ndarray, p0: np.ndarray, lo, hi):
    """Minimum-norm u in the box with a0 + <b, u - p0> <= 0, where p0 is the
    box point closest to the origin.  Returns None when infeasible.

    The minimizer is clip(-nu*b) for the smallest nu >= 0 meeting the
    constraint; the constraint value is piecewise affine in nu, so the
    root is found exactly between consecutive breakpoints.
    """
    if a0 <= 0.0:
        return p0.copy()

    def u_of(nu):
        return np.clip(-nu * b, lo, hi)

    def g(nu):
        return a0 + float(np.dot(b, u_of(nu) - p0))

    nz = b != 0
    if not np.any(nz):
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        bps = np.concatenate([-lo[nz] / b[nz], -hi[nz] / b[nz]])
    bps = np.unique(bps[np.isfinite(bps) & (bps > 0)])
    prev_nu, prev_g = 0.0, a0
    for nu in bps:
        gv = g(nu)
        if gv <= 0.0:
            t = prev_g / (prev_g - gv) if prev_g != gv else 1.0
            return u_of(prev_nu + t * (nu - prev_nu))
        prev_nu, prev_g = nu, gv
    # beyond the last breakpoint only unbounded coordinates still move
    free = nz & ~(np.isfinite(lo) & np.isfinite(hi))
    slope = 0.0
    probe = prev_nu + 1.0
    slope = g(probe) - prev_g
    if slope >= 0.0 or not np.any(free):
        return None
    return u_of(prev_nu + prev_g / (-slope))


def _probe_affine(ups, box: InputBox, rel_tol: float = 1e-9):
    """Probe Υ for affinity along each free coordinate (3 collinear points
    per coordinate plus one joint point).  Returns (value at p0, slope b)
    or None."""
    lo, hi = box.lower, box.upper
    p0 = box.nearest_to_origin()
    m = len(p0)
    width = hi - lo
    steps = np.where(np.isinf(width), 1.0, np.minimum(1.0, 0.5 * width))
    sign = np.where(p0 + 2 * steps <= hi, 1.0, -1.0)
    pts = [p0]
    for i in range(m):
        for s in (1.0, 2.0):
            q = p0.copy()
            q[i] += sign[i] * s * steps[i]
            pts.append(q)
    joint = p0 + sign * steps
    pts.append(joint)
    vals = np.asarray(ups(np.array(pts)), dtype=float)
    if not np.all(np.isfinite(vals)):
        return None
    v0 = vals[0]
    b = np.zeros(m)
    for i in range(m):
        if steps[i] == 0.0:
            continue
        v1, v2 = vals[1 + 2 * i], vals[2 + 2 * i]
        scale = abs(v0) + abs(v1) + abs(v2) + 1.0
        if abs(v2 - 2.0 * v1 + v0) > rel_tol * scale:
            return None
        d = v1 - v0
        if abs(d) <= 64 * np.finfo(float).eps * scale:
            d = 0.0
        b[i] = d / (sign[i] * steps[i])
    pred = v0 + float(np.dot(b, joint - p0))
    if abs(vals[-1] - pred) > rel_tol * (abs(vals[-1]) + abs(pred) + 1.0):
        return None
    return v0, b


def _scan_1d(ups, lo: float, hi: float, tol: float, n: int = 2001):
    """Feasible point of smallest magnitude on [lo, hi], scanning outward
    from the point nearest zero and bisecting the first feasible crossing."""
    grid = np.linspace(lo, hi, n)
    p0 = min(max(0.0, lo), hi)
    grid = np.unique(np.concatenate([grid, [p0]]))
    vals = np.asarray(ups(grid[:, None]), dtype=float)
    feas = vals <= tol
    if not np.any(feas):
        return None, float(np.min(vals))
    order = np.argsort(np.abs(grid), kind="stable")
    k = next(i for i in order if feas[i])
    u_f = grid[k]
    # neighbour toward zero
    if u_f > p0 and k > 0:
        u_p = grid[k - 1]
    elif u_f < p0 and k + 1 < len(grid):
        u_p = grid[k + 1]
    else:
        return np.array([u_f]), float(vals[k])
    for _ in range(200):
        mid = 0.5 * (u_p + u_f)
        if mid == u_p or mid == u_f:
            break
        if float(np.asarray(ups(np.array([[mid]])))[0]) <= tol:
            u_f = mid
        else:
            u_p = mid
    return np.array([u_f]), float(np.asarray(ups(np.array([[u_f]])))[0])


def _grid_min_norm(ups, box: InputBox, tol: float, search_bound: float, k: int = 41, rounds: int = 8):
    lo = np.where(np.isfinite(box.lower), box.lower, -search_bound)
    hi = np.where(np.isfinite(box.upper), box.upper, search_bound)
    if len(lo) == 1:
        return _scan_1d(ups, float(lo[0]), float(hi[0]), tol)
    best_u, best_val = None, np.inf
    cur_lo, cur_hi = lo.copy(), hi.copy()
    for _ in range(rounds):
        cand = InputBox(cur_lo, cur_hi).grid(k)
        vals = np.asarray(ups(cand), dtype=float)
        best_val = min(best_val, float(np.min(vals)))
        feas = vals <= tol
        if not np.any(feas):
            break
        norms = np.where(feas, np.linalg.norm(cand, axis=-1), np.inf)
        i = int(np.argmin(norms))
        if best_u is None or norms[i] < np.linalg.norm(best_u):
            best_u = cand[i]
        cell = (cur_hi - cur_lo) / (k - 1)
        cur_lo = np.maximum(lo, best_u - cell)
        cur_hi = np.minimum(hi, best_u + cell)
    if best_u is None:
        return None, best_val
    return best_u, float(np.asarray(ups(best_u[None, :]))[0])


def _saturate(rclf: Rclf, u: np.ndarray) -> np.ndarray:
    if rclf.u_sat is None:
        return u
    nrm = float(np.linalg.norm(u))
    if nrm > rclf.u_sat:
        log.warning("min-norm input of norm %.3g saturated to %.3g", nrm, rclf.u_sat)
        return u * (rclf.u_sat / nrm)
    return u


def _min_norm(model, rclf, phase, x, search_bound):
    x = np.asarray(x, dtype=float)
    if phase == "flow":
        box = model.input_box_flow(x)
        zero_law = rclf.invariance_flow
    else:
        box = model.input_box_jump(x)
        zero_law = rclf.invariance_jump
    if box.is_empty:
        raise ModelError(f"state {x.tolist()} is outside the projection of the {phase} set")
    v = float(rclf.V(x))
    if zero_law is not None and abs(v) <= rclf.v_zero_tol:
        return np.asarray(zero_law(x), dtype=float)
    tol = rclf.feas_tol * (1.0 + abs(v))

    def ups(u):
        u = np.asarray(u, dtype=float)
        return upsilon(model, rclf, phase, np.broadcast_to(x, u.shape[:-1] + x.shape), u)

    if box.dim == 0:
        if ups(np.zeros(0)) <= tol:
            return np.zeros(0)
        raise InfeasibleInputError("regulation map empty", x, ups(np.zeros(0)))
    probe = _probe_affine(ups, box)
    if probe is not None:
        v0, b = probe
        p0 = box.nearest_to_origin()
        u = _qp_halfspace_box(v0, b, p0, box.lower, box.upper)
        if u is not None:
            val = float(ups(u))
            if val <= tol + 1e-9 * (abs(v0) + 1.0):
                return _saturate(rclf, u)
    u, best = _grid_min_norm(ups, box, tol, search_bound)
    if u is None:
        raise InfeasibleInputError(f"no admissible {phase} input makes Υ <= 0", x, best)
    return _saturate(rclf, u)


def min_norm_flow(model: HybridSystemModel, rclf: Rclf, x, search_bound: float = 100.0) -> np.ndarray:
    """ρ_c(x): the minimum-norm element of 𝒯_c(x)."""
    return _min_norm(model, rclf, "flow", x, search_bound)


def min_norm_jump(model: HybridSystemModel, rclf: Rclf, x, search_bound: float = 100.0) -> np.ndarray:
    """ρ_d(x): the minimum-norm element of 𝒯_d(x)."""
    return _min_norm(model, rclf, "jump", x, search_bound)


def min_norm_controller(model: HybridSystemModel, rclf: Rclf, shared: tuple = ()) -> Controller:
    return Controller(
        flow_law=lambda x: min_norm_flow(model, rclf, x),
        jump_law=lambda x: min_norm_jump(model, rclf, x),
        shared=shared,
        name="min_norm",
    )


def minimality_oracle(model: HybridSystemModel, rclf: Rclf, phase: str, x, u_grid):
    """Brute-force reference: the grid point of least norm in Ψ^u(x) with
    Υ <= 0, or ``None`` when no grid point qualifies."""
    x = np.asarray(x, dtype=float)
    u_grid = np.atleast_2d(np.asarray(u_grid, dtype=float))
    box = model.input_box_flow(x) if phase == "flow" else model.input_box_jump(x)
    if box.is_empty:
        return None
    inside = box.contains(u_grid)
    vals = np.asarray(upsilon(model, rclf, phase, np.broadcast_to(x, (len(u_grid), len(x))), u_grid))
    tol = rclf.feas_tol * (1.0 + abs(float(rclf.V(x))))
    ok = np.asarray(inside) & (vals <= tol)
    if not np.any(ok):
        return None
    norms = np.where(ok, np.linalg.norm(u_grid, axis=-1), np.inf)
    return u_grid[int(np.argmin(norms))].copy()


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid over the state space plus resolutions for inputs."""

    bounds: tuple
    counts: tuple
    tol: float = 1e-9
    u_count: int = 33
    w_count: int = 9

    def __post_init__(self):
        if len(self.bounds) != len(self.counts):
            raise ValueError("bounds and counts must have equal length")
        if any(int(c) < 2 for c in self.counts):
            raise ValueError("grid counts must be at least 2")

    def points(self) -> np.ndarray:
        axes = [np.linspace(float(lo), float(hi), int(c)) for (lo, hi), c in zip(self.bounds, self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _affine_inf(fn, box: InputBox):
    """Batched inf of ``fn`` over boxes when ``fn`` is affine in u.

    Returns (values, affine_mask).  Unbounded directions with nonzero slope
    give ``-inf``.
    """
    lo, hi = box.lower, box.upper
    p0 = box.nearest_to_origin()
    m = box.dim
    width = hi - lo
    steps = np.where(np.isinf(width), 1.0, np.minimum(1.0, 0.5 * width))
    sign = np.where(p0 + 2 * steps <= hi, 1.0, -1.0)
    pts = [p0]
    for i in range(m):
        for s in (1.0, 2.0):
            q = p0.copy()
            q[..., i] += sign[..., i] * s * steps[..., i]
            pts.append(q)
    joint = p0 + sign * steps
    pts.append(joint)
    vals = fn(np.stack(pts, axis=-2))
    v0 = vals[..., 0]
    affine = np.all(np.isfinite(vals), axis=-1)
    total = v0.copy()
    pred = v0.copy()
    eps = np.finfo(float).eps
    for i in range(m):
        v1, v2 = vals[..., 1 + 2 * i], vals[..., 2 + 2 * i]
        scale = np.abs(v0) + np.abs(v1) + np.abs(v2) + 1.0
        active = steps[..., i] > 0
        affine &= ~active | (np.abs(v2 - 2 * v1 + v0) <= 1e-9 * scale)
        d = v1 - v0
        d = np.where(np.abs(d) <= 64 * eps * scale, 0.0, d)
        with np.errstate(invalid="ignore", divide="ignore"):
            bi = np.where(active, d / (sign[..., i] * steps[..., i]), 0.0)
        pred = pred + bi * (joint[..., i] - p0[..., i])
        with np.errstate(invalid="ignore"):
            low_term = np.where(bi > 0, bi * (lo[..., i] - p0[..., i]), 0.0)
            high_term = np.where(bi < 0, bi * (hi[..., i] - p0[..., i]), 0.0)
        low_term = np.where((bi > 0) & np.isinf(lo[..., i]), NEG_INF, low_term)
        high_term = np.where((bi < 0) & np.isinf(hi[..., i]), NEG_INF, high_term)
        total = total + low_term + high_term
    affine &= np.abs(vals[..., -1] - pred) <= 1e-9 * (np.abs(pred) + np.abs(vals[..., -1]) + 1.0)
    return total, affine


def flow_infsup(model: HybridSystemModel, rclf: Rclf, x, search_bound: float = 100.0, k: int = 41):
    """inf over u_c in Ψ^u_c(x) of sup_w <gradV, F>, batched.  Exact when
    the supremum is affine in u_c; otherwise a grid minimum (an upper bound
    on the infimum)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    box = model.input_box_flow(x)
    out = np.full(len(x), np.nan)
    ok = ~box.empty
    if not np.any(ok):
        return out
    xs, bx = x[ok], box.take(ok)

    def fn(u):
        xx = np.broadcast_to(xs[:, None, :], u.shape[:-1] + (model.n,))
        return flow_sup(model, rclf, xx, u)[0]

    vals, affine = _affine_inf(fn, bx)
    if not np.all(affine):
        idx = np.flatnonzero(~affine)
        sub = bx.take(idx)
        lo = np.where(np.isfinite(sub.lower), sub.lower, -search_bound)
        hi = np.where(np.isfinite(sub.upper), sub.upper, search_bound)
        cand = InputBox(lo, hi).grid(k)
        xx = np.broadcast_to(xs[idx][:, None, :], cand.shape[:-1] + (model.n,))
        vals[idx] = np.min(flow_sup(model, rclf, xx, cand)[0], axis=-1)
    out[ok] = vals
    return out


def jump_infsup(model: HybridSystemModel, rclf: Rclf, x, k: int = 33, refine: int = 1025):
    """inf over u_d in Ψ^u_d(x) of sup_w V(G) - V(x), batched, on a grid
    that includes the box corners.  Returns (values, argmin inputs)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    box = model.input_box_jump(x)
    vals = np.full(len(x), np.nan)
    args = np.full((len(x), model.m_d), np.nan)
    ok = ~box.empty
    if not np.any(ok):
        return vals, args
    xs, bx = x[ok], box.take(ok)
    if model.m_d == 0:
        v = jump_sup(model, rclf, xs, np.zeros((len(xs), 0)))[0]
        vals[ok] = v
        return vals, args
    cand = bx.grid(k)
    xx = np.broadcast_to(xs[:, None, :], cand.shape[:-1] + (model.n,))
    sv = jump_sup(model, rclf, xx, cand)[0]
    i = np.argmin(sv, axis=-1)
    vals[ok] = np.take_along_axis(sv, i[:, None], axis=-1)[:, 0]
    args[ok] = np.take_along_axis(cand, i[:, None, None], axis=-2)[:, 0, :]
    return vals, args


def certify_rclf(model: HybridSystemModel, rclf: Rclf, grid: GridSpec) -> VerificationReport:
    """Check the RCLF sandwich, flow and jump inequalities on a state grid.

    Margins are ``>= 0`` when a condition holds; violations are points with
    margin below ``-grid.tol``.  Jump infima come from an input grid
    containing the box corners, so a pass there is conservative.
    """
    x = grid.points()
    tol = grid.tol
    V = np.asarray(rclf.V(x), dtype=float)
    dist = np.asarray(rclf.dist_A(x), dtype=float)
    a3 = np.asarray(rclf.alpha3(dist), dtype=float)
    in_c = ~model.input_box_flow(x).empty
    in_d = ~model.input_box_jump(x).empty
    relevant = V >= rclf.r_star
    violations = []
    details = {}

    # sandwich bounds on Π_c(C) ∪ Π_d(D) ∪ G(D)
    pts = [x[in_c | in_d]]
    xd = x[in_d]
    if len(xd):
        ubox = model.input_box_jump(xd)
        wbox = model.dist_box_jump(xd)
        for uc in (ubox.lower, ubox.upper):
            for wc in ((wbox.lower, wbox.upper) if model.d_d else (np.zeros((len(xd), 0)),)):
                with np.errstate(all="ignore"):
                    pts.append(np.asarray(model.jump_map(xd, uc, wc), dtype=float))
    bx = np.concatenate(pts)
    bx = bx[np.all(np.isfinite(bx), axis=-1)]
    bv = np.asarray(rclf.V(bx), dtype=float)
    bd = np.asarray(rclf.dist_A(bx), dtype=float)
    bmargin = np.minimum(bv - rclf.alpha1(bd), rclf.alpha2(bd) - bv)
    bscale = 1.0 + np.abs(bv)
    for p, mg in zip(bx[bmargin < -tol * bscale], bmargin[bmargin < -tol * bscale]):
        violations.append(Violation(tuple(p), "bounds", float(mg)))
    details["bounds"] = {"points": int(len(bx)), "worst_margin": float(np.min(bmargin)) if len(bx) else None}

    # flow inequality
    fmask = in_c & relevant
    fval = flow_infsup(model, rclf, x[fmask])
    fmargin = -a3[fmask] - fval
    bad = fmargin < -tol
    for p, mg in zip(x[fmask][bad], fmargin[bad]):
        violations.append(Violation(tuple(p), "flow", float(mg)))
    finite = fmargin[np.isfinite(fmargin)]
    details["flow"] = {"points": int(np.sum(fmask)),
                       "worst_margin": float(np.min(finite)) if len(finite) else None,
                       "unbounded_decrease_points": int(np.sum(np.isinf(fmargin)))}

    # jump inequality
    jmask = in_d & relevant
    jval, _ = jump_infsup(model, rclf, x[jmask], k=grid.u_count)
    jmargin = -a3[jmask] - jval
    bad = jmargin < -tol
    for p, mg in zip(x[jmask][bad], jmargin[bad]):
        violations.append(Violation(tuple(p), "jump", float(mg)))
    details["jump"] = {"points": int(np.sum(jmask)),
                       "worst_margin": float(np.min(jmargin)) if len(jmargin) else None}

    worsts = [d["worst_margin"] for d in details.values() if d["worst_margin"] is not None]
    flags = ("degenerate_rate",) if rclf.degenerate else ()
    return VerificationReport(
        condition="rclf",
        points_checked=int(len(bx) + np.sum(fmask) + np.sum(jmask)),
        violations=tuple(violations),
        worst_margin=min(worsts) if worsts else None,
        flags=flags,
        details=details,
    )


def quadratic_rclf(P, rate: float, **kw) -> Rclf:
    """Rclf with V = x'Px about the origin and α₃(s) = rate·s²."""
    P = np.asarray(P, dtype=float)
    if not np.allclose(P, P.T):
        raise ValueError("P must be symmetric")
    eig = np.linalg.eigvalsh(P)
    lo_e, hi_e = float(eig[0]), float(eig[-1])
    return Rclf(
        V=lambda x: np.einsum("...i,ij,...j->...", x, P, x),
        gradV=lambda x: 2.0 * np.einsum("ij,...j->...i", P, x),
        alpha1=lambda s: lo_e * np.square(s),
        alpha2=lambda s: hi_e * np.square(s),
        alpha3=lambda s: rate * np.square(s),
        dist_A=lambda x: np.linalg.norm(x, axis=-1),
        rate=float(rate),
        convex=bool(lo_e >= 0),
        **kw,
    )
