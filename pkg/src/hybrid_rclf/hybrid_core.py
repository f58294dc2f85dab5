"""Hybrid system data model: hybrid time, state-dependent input and
disturbance boxes, flow/jump data, controllers, disturbance generators and
sampled well-formedness checks.

Every map and predicate stored in a :class:`HybridSystemModel` must
broadcast over leading axes: ``x`` has shape ``(..., n)``, inputs
``(..., m)`` and disturbances ``(..., d)``.  Single points are the special
case of one-dimensional arrays.  This lets the certification code evaluate
whole grids at once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .report import VerificationReport, Violation


class ModelError(ValueError):
    """Dimension mismatch, set-membership precondition failure or an
    inadmissible disturbance."""


class NumericalError(ArithmeticError):
    """A map produced a non-finite value."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


# ---------------------------------------------------------------------------
# hybrid time


@dataclass(frozen=True)
class HybridTime:
    t: float
    j: int

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError(f"hybrid time needs t >= 0, got {self.t}")
        if int(self.j) != self.j or self.j < 0:
            raise ValueError(f"hybrid time needs integer j >= 0, got {self.j}")


@dataclass(frozen=True)
class HybridTimeDomain:
    """Ordered ``(t_start, t_end, j)`` intervals of a compact hybrid time
    domain."""

    intervals: tuple = ()

    def __post_init__(self):
        ivs = tuple((float(a), float(b), int(j)) for a, b, j in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        for k, (a, b, j) in enumerate(ivs):
            if a > b:
                raise ValueError(f"interval {k} has t_start > t_end")
            if k == 0:
                if j < 0 or a < 0:
                    raise ValueError("domain must start at t >= 0, j >= 0")
                continue
            pa, pb, pj = ivs[k - 1]
            if pb != a:
                raise ValueError(f"interval {k} does not start where {k - 1} ends")
            if j != pj + 1:
                raise ValueError(f"interval {k} must have j = {pj + 1}")

    @property
    def final_time(self) -> Optional[HybridTime]:
        if not self.intervals:
            return None
        _, b, j = self.intervals[-1]
        return HybridTime(b, j)

    def contains(self, t: float, j: int) -> bool:
        return any(jj == j and a <= t <= b for a, b, jj in self.intervals)

    @property
    def jump_times(self) -> tuple:
        return tuple(iv[0] for iv in self.intervals[1:])


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True, eq=False)
class InputBox:
    """Axis-aligned box ``[lower, upper]``, possibly batched.

    ``lower``/``upper`` have shape ``(..., m)``; infinite bounds mark
    half-infinite coordinates.  ``empty`` (shape ``(...)``) marks states at
    which the box is the empty set; bounds are NaN there.
    """

    lower: np.ndarray
    upper: np.ndarray
    empty: Any = False

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim == 1 and hi.shape == lo.shape:
            # unbatched fast path (hot in the simulator)
            lo_l, hi_l = lo.tolist(), hi.tolist()
            empty = bool(self.empty) or any(v != v for v in lo_l + hi_l)
            if empty:
                lo = hi = np.full(lo.shape, np.nan)
            elif any(a > b for a, b in zip(lo_l, hi_l)):
                raise ValueError("box with lower > upper")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
            object.__setattr__(self, "empty", np.bool_(empty))
            return
        lo, hi = np.broadcast_arrays(lo, hi)
        empty = np.broadcast_to(np.asarray(self.empty, dtype=bool), lo.shape[:-1])
        empty = empty | np.any(np.isnan(lo) | np.isnan(hi), axis=-1)
        bad = ~empty & np.any(lo > hi, axis=-1)
        if np.any(bad):
            raise ValueError("box with lower > upper")
        object.__setattr__(self, "lower", np.where(empty[..., None], np.nan, lo))
        object.__setattr__(self, "upper", np.where(empty[..., None], np.nan, hi))
        object.__setattr__(self, "empty", empty)

    @classmethod
    def empty_box(cls, m: int, batch: tuple = ()) -> "InputBox":
        nan = np.full(batch + (m,), np.nan)
        return cls(nan, nan, np.ones(batch, dtype=bool))

    @property
    def dim(self) -> int:
        return self.lower.shape[-1]

    @property
    def is_empty(self) -> bool:
        """True when every box in the batch is empty."""
        e = self.empty
        return bool(e) if e.ndim == 0 else bool(np.all(e))

    @property
    def bounded(self) -> np.ndarray:
        """Per-coordinate mask of finite bounds (both sides)."""
        return np.isfinite(self.lower) & np.isfinite(self.upper)

    def contains(self, u, tol: float = 0.0):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1 and self.lower.ndim == 1:
            if self.empty:
                return False
            return all(lo - tol <= v <= hi + tol
                       for v, lo, hi in zip(u.tolist(), self.lower.tolist(), self.upper.tolist()))
        with np.errstate(invalid="ignore"):
            inside = np.all((u >= self.lower - tol) & (u <= self.upper + tol), axis=-1)
        out = inside & ~self.empty
        return bool(out) if np.ndim(out) == 0 else out

    def project(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def nearest_to_origin(self) -> np.ndarray:
        return np.clip(np.zeros_like(self.lower), self.lower, self.upper)

    def center(self) -> np.ndarray:
        """Midpoint on bounded coordinates, nearest-to-zero point otherwise."""
        mid = 0.5 * (self.lower + self.upper)
        return np.where(self.bounded, mid, self.nearest_to_origin())

    def vertices(self) -> np.ndarray:
        """All ``2**m`` corners, shape ``(..., 2**m, m)``; needs bounded
        coordinates."""
        m = self.dim
        sel = np.array(list(itertools.product((0, 1), repeat=m)), dtype=bool)
        lo = self.lower[..., None, :]
        hi = self.upper[..., None, :]
        return np.where(sel, hi, lo)

    def grid(self, k: int) -> np.ndarray:
        """Tensor grid with ``k`` points per coordinate including the
        endpoints, shape ``(..., k**m, m)``."""
        s = np.linspace(0.0, 1.0, k)
        frac = np.array(list(itertools.product(s, repeat=self.dim)))
        lo = self.lower[..., None, :]
        hi = self.upper[..., None, :]
        return lo + frac * (hi - lo)

    def take(self, idx) -> "InputBox":
        return InputBox(self.lower[idx], self.upper[idx], self.empty[idx])


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class HybridSystemModel:
    """Flow/jump data of a controlled hybrid system with disturbances.

    Either a boolean set predicate or a real residual must be supplied for
    each set.  A residual is ``<= 0`` exactly on the set for inputs and
    disturbances taken from their boxes, and should vary continuously with
    the state across the boundary; the simulator uses it to locate
    crossings to a state tolerance.  Predicates, when given, are the full
    membership test.
    """

    n: int
    m_c: int
    m_d: int
    d_c: int
    d_d: int
    flow_map: Callable
    jump_map: Callable
    input_box_flow: Callable
    input_box_jump: Callable
    dist_box_flow: Callable
    dist_box_jump: Callable
    flow_set: Optional[Callable] = None
    jump_set: Optional[Callable] = None
    flow_residual: Optional[Callable] = None
    jump_residual: Optional[Callable] = None
    name: str = "model"
    params: Any = None

    def __post_init__(self):
        if self.flow_set is None and self.flow_residual is None:
            raise ValueError("model needs flow_set or flow_residual")
        if self.jump_set is None and self.jump_residual is None:
            raise ValueError("model needs jump_set or jump_residual")
        for k in ("n", "m_c", "m_d", "d_c", "d_d"):
            if int(getattr(self, k)) < 0:
                raise ValueError(f"{k} must be nonnegative")


def _arr(v, dim: int, what: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0 and dim == 1:
        a = a.reshape(1)
    if a.ndim == 0 or a.shape[-1] != dim:
        raise ModelError(f"{what}: expected trailing dimension {dim}, got shape {a.shape}")
    return a


def _py(v):
    return bool(v) if np.ndim(v) == 0 else np.asarray(v, dtype=bool)


def _set_test(pred, resid, x, u, w):
    if pred is not None:
        return np.asarray(pred(x, u, w), dtype=bool)
    with np.errstate(invalid="ignore"):
        return np.asarray(resid(x, u, w)) <= 0.0


def flow_allowed(model: HybridSystemModel, x, u_c, w_c):
    """``(x, u_c, w_c) in C``."""
    x = _arr(x, model.n, "state")
    u = _arr(u_c, model.m_c, "flow input")
    w = _arr(w_c, model.d_c, "flow disturbance") if model.d_c else np.zeros(x.shape[:-1] + (0,))
    return _py(_set_test(model.flow_set, model.flow_residual, x, u, w))


def jump_allowed(model: HybridSystemModel, x, u_d, w_d):
    """``(x, u_d, w_d) in D``."""
    x = _arr(x, model.n, "state")
    u = _arr(u_d, model.m_d, "jump input")
    w = _arr(w_d, model.d_d, "jump disturbance") if model.d_d else np.zeros(x.shape[:-1] + (0,))
    return _py(_set_test(model.jump_set, model.jump_residual, x, u, w))


def _finite_or_raise(v, point, what):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"{what} returned a non-finite value", point)
    return v


def evaluate_flow(model: HybridSystemModel, x, u_c, w_c, off_set: bool = False) -> np.ndarray:
    """``F(x, u_c, w_c)``.  With ``off_set=True`` the flow-set check is
    skipped (used while refining events)."""
    x = _arr(x, model.n, "state")
    u = _arr(u_c, model.m_c, "flow input")
    w = _arr(w_c, model.d_c, "flow disturbance") if model.d_c else np.zeros(x.shape[:-1] + (0,))
    if not off_set and not np.all(flow_allowed(model, x, u, w)):
        raise ModelError("evaluate_flow called outside the flow set")
    with np.errstate(all="ignore"):
        out = model.flow_map(x, u, w)
    return _finite_or_raise(out, x, "flow map")


def evaluate_jump(model: HybridSystemModel, x, u_d, w_d, off_set: bool = False) -> np.ndarray:
    """``G(x, u_d, w_d)``."""
    x = _arr(x, model.n, "state")
    u = _arr(u_d, model.m_d, "jump input")
    w = _arr(w_d, model.d_d, "jump disturbance") if model.d_d else np.zeros(x.shape[:-1] + (0,))
    if not off_set and not np.all(jump_allowed(model, x, u, w)):
        raise ModelError("evaluate_jump called outside the jump set")
    with np.errstate(all="ignore"):
        out = model.jump_map(x, u, w)
    return _finite_or_raise(out, x, "jump map")


def input_box_flow(model: HybridSystemModel, x) -> InputBox:
    return model.input_box_flow(_arr(x, model.n, "state"))


def input_box_jump(model: HybridSystemModel, x) -> InputBox:
    return model.input_box_jump(_arr(x, model.n, "state"))


def dist_box_flow(model: HybridSystemModel, x) -> InputBox:
    return model.dist_box_flow(_arr(x, model.n, "state"))


def dist_box_jump(model: HybridSystemModel, x) -> InputBox:
    return model.dist_box_jump(_arr(x, model.n, "state"))


# ---------------------------------------------------------------------------
# controllers


@dataclass(frozen=True, eq=False)
class Controller:
    """Feedback pair ``(flow_law, jump_law)``.

    ``shared`` lists ``(i_c, i_d)`` index pairs of flow and jump input
    components that denote the same physical input.
    """

    flow_law: Callable
    jump_law: Callable
    shared: tuple = ()
    name: str = "controller"

    def shared_gap(self, x) -> float:
        """Largest disagreement between shared components at ``x``."""
        if not self.shared:
            return 0.0
        uc = np.asarray(self.flow_law(x), dtype=float)
        ud = np.asarray(self.jump_law(x), dtype=float)
        return max(abs(uc[i] - ud[k]) for i, k in self.shared)


# ---------------------------------------------------------------------------
# disturbance generators


GENERATOR_KINDS = ("constant", "rate_limited", "adversarial")


@dataclass(frozen=True, eq=False)
class DisturbanceGenerator:
    """Recipe for disturbance signals.

    constant: ``w_c``/``w_d`` held fixed.
    rate_limited: seeded random walk with speed at most ``rate`` during
        flows (starting at ``w_c`` or the box center), jump values drawn
        uniformly from the box unless ``w_d`` is given.
    adversarial: box vertex maximizing the instantaneous growth of
        ``objective.V``; ``objective`` needs ``V`` and ``gradV``.

    Values outside the admissible box are rejected unless ``stress`` is set.
    """

    kind: str = "constant"
    w_c: Optional[Sequence[float]] = None
    w_d: Optional[Sequence[float]] = None
    rate: float = 0.0
    seed: int = 0
    stress: bool = False
    objective: Any = None

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")
        if self.kind == "adversarial" and self.objective is None:
            raise ValueError("adversarial generator needs an objective with V and gradV")

    def stream(self, model: HybridSystemModel) -> "DisturbanceStream":
        return DisturbanceStream(self, model)


class DisturbanceStream:
    """Stateful realization of a :class:`DisturbanceGenerator` for one run."""

    def __init__(self, gen: DisturbanceGenerator, model: HybridSystemModel):
        self.gen = gen
        self.model = model
        self.rng = np.random.default_rng(gen.seed)
        self.stressed = 0
        self._w = None
        self._t = None
        self._wc = None if gen.w_c is None else np.asarray(gen.w_c, dtype=float).reshape(model.d_c)
        self._wd = None if gen.w_d is None else np.asarray(gen.w_d, dtype=float).reshape(model.d_d)

    def _admit(self, w, box: InputBox) -> np.ndarray:
        if w.size == 0 or box.contains(w, 1e-12):
            return w
        if self.gen.stress:
            self.stressed += 1
            return w
        raise ModelError(f"disturbance {w.tolist()} outside its admissible box")

    def flow(self, t: float, j: int, x, u_c) -> np.ndarray:
        m = self.model
        box = m.dist_box_flow(x)
        kind = self.gen.kind
        if kind == "constant":
            w = self._wc if self._wc is not None else np.zeros(m.d_c)
        elif kind == "rate_limited":
            if self._w is None:
                w = self._wc if self._wc is not None else (box.center() if not box.is_empty else np.zeros(m.d_c))
            else:
                step = self.gen.rate * max(t - self._t, 0.0)
                inc = self.rng.standard_normal(m.d_c) * step
                norm = np.linalg.norm(inc)
                if norm > step > 0:
                    inc *= step / norm
                w = self._w + inc
                if not box.is_empty:
                    # projection onto a box is nonexpansive, so the rate bound survives
                    w = box.project(w)
            self._w, self._t = w, t
        else:
            w = self._adversarial_flow(x, u_c, box)
        return self._admit(np.asarray(w, dtype=float), box)

    def jump(self, t: float, j: int, x, u_d) -> np.ndarray:
        m = self.model
        box = m.dist_box_jump(x)
        kind = self.gen.kind
        if kind == "constant" or (kind == "rate_limited" and self._wd is not None):
            w = self._wd if self._wd is not None else np.zeros(m.d_d)
        elif kind == "rate_limited":
            w = self.rng.uniform(box.lower, box.upper) if not box.is_empty else np.zeros(m.d_d)
        else:
            w = self._adversarial_jump(x, u_d, box)
        return self._admit(np.asarray(w, dtype=float), box)

    def _adversarial_flow(self, x, u_c, box):
        if box.is_empty or self.model.d_c == 0:
            return np.zeros(self.model.d_c)
        verts = box.vertices()
        f = self.model.flow_map(np.broadcast_to(x, (len(verts), self.model.n)),
                                np.broadcast_to(u_c, (len(verts), self.model.m_c)), verts)
        score = f @ np.asarray(self.gen.objective.gradV(x), dtype=float)
        return verts[int(np.argmax(score))]

    def _adversarial_jump(self, x, u_d, box):
        if box.is_empty or self.model.d_d == 0:
            return np.zeros(self.model.d_d)
        verts = box.vertices()
        g = self.model.jump_map(np.broadcast_to(x, (len(verts), self.model.n)),
                                np.broadcast_to(u_d, (len(verts), self.model.m_d)), verts)
        score = np.asarray(self.gen.objective.V(g), dtype=float)
        return verts[int(np.argmax(score))]


# ---------------------------------------------------------------------------
# sampled hybrid basic conditions


@dataclass(frozen=True)
class SampleSpec:
    """Sampling region for :func:`validate_model`.

    Bounds are lists of ``(lo, hi)`` pairs per coordinate; grids use
    ``x_count`` points per state axis and ``v_count`` per input or
    disturbance axis.  Odd counts on symmetric ranges include zero.
    """

    x_bounds: tuple
    u_c_bounds: tuple = ()
    w_c_bounds: tuple = ()
    u_d_bounds: tuple = ()
    w_d_bounds: tuple = ()
    x_count: int = 17
    v_count: int = 3
    closure_radii: tuple = (1e-4, 1e-7, 1e-10)
    modulus_radii: tuple = (1e-3, 1e-5, 1e-7)
    modulus_cap: float = 1e6

    def __post_init__(self):
        if self.x_count < 2 or self.v_count < 2:
            raise ValueError("sample counts must be at least 2")


def _tensor_grid(bounds, k):
    if not bounds:
        return np.zeros((1, 0))
    axes = [np.linspace(float(lo), float(hi), k) for lo, hi in bounds]
    return np.array(list(itertools.product(*axes)), dtype=float)


def _split(z, n, m):
    return z[..., :n], z[..., n:n + m], z[..., n + m:]


def _check_phase(model, spec, phase, ubounds, wbounds, m, d, pred, resid, fmap):
    n = model.n
    xs = _tensor_grid(spec.x_bounds, spec.x_count)
    us = _tensor_grid(ubounds, spec.v_count)
    ws = _tensor_grid(wbounds, spec.v_count)
    z = np.array([np.concatenate([a, b, c]) for a in xs for b in us for c in ws], dtype=float)
    dim = z.shape[1]

    def member(pts):
        x, u, w = _split(pts, n, m)
        with np.errstate(all="ignore"):
            return _set_test(pred, resid, x, u, w)

    violations = []
    inside = member(z)
    # (A1) a point outside the set that is a limit of points inside it
    out_pts = z[~inside]
    dirs = np.concatenate([np.eye(dim), -np.eye(dim)])
    if len(out_pts):
        hit_all = np.ones((len(out_pts), len(dirs)), dtype=bool)
        for r in spec.closure_radii:
            probe = out_pts[:, None, :] + r * dirs[None, :, :]
            hit_all &= member(probe.reshape(-1, dim)).reshape(len(out_pts), len(dirs))
        for p in out_pts[np.any(hit_all, axis=1)]:
            violations.append(Violation(tuple(p[:n]), f"{phase}:closedness", None))
    # (A2/A3) finiteness and a local modulus estimate of the map on the set
    in_pts = z[inside]
    worst = np.inf
    if len(in_pts):
        x, u, w = _split(in_pts, n, m)
        with np.errstate(all="ignore"):
            f0 = np.asarray(fmap(x, u, w), dtype=float)
        finite = np.all(np.isfinite(f0), axis=-1)
        for p in in_pts[~finite]:
            violations.append(Violation(tuple(p[:n]), f"{phase}:finiteness", None))
        pts, f0 = in_pts[finite], f0[finite]
        modulus = np.zeros(len(pts))
        for r in spec.modulus_radii:
            for dvec in dirs:
                q = pts + r * dvec
                ok = member(q)
                xq, uq, wq = _split(q, n, m)
                with np.errstate(all="ignore"):
                    fq = np.asarray(fmap(xq, uq, wq), dtype=float)
                est = np.linalg.norm(fq - f0, axis=-1) / r
                est = np.where(np.isfinite(est), est, np.inf)
                modulus = np.maximum(modulus, np.where(ok, est, 0.0))
        margin = spec.modulus_cap - modulus
        if len(margin):
            worst = float(np.min(margin))
        for p, mg in zip(pts[margin < 0], margin[margin < 0]):
            violations.append(Violation(tuple(p[:n]), f"{phase}:continuity", float(mg)))
    return violations, len(z), worst


def validate_model(model: HybridSystemModel, spec: SampleSpec) -> VerificationReport:
    """Sampled surrogates of the hybrid basic conditions.

    Closedness: a grid point outside a set is flagged when, along some
    coordinate direction, points at every probe radius lie inside.
    Continuity: the map must be finite on the sampled set and its
    difference quotients at the probe radii must stay below
    ``modulus_cap``.
    """
    v_flow, n_flow, w_flow = _check_phase(model, spec, "flow", spec.u_c_bounds, spec.w_c_bounds,
                                          model.m_c, model.d_c, model.flow_set, model.flow_residual,
                                          model.flow_map)
    v_jump, n_jump, w_jump = _check_phase(model, spec, "jump", spec.u_d_bounds, spec.w_d_bounds,
                                          model.m_d, model.d_d, model.jump_set, model.jump_residual,
                                          model.jump_map)
    violations = tuple(v_flow + v_jump)
    worst = min(w_flow, w_jump)
    return VerificationReport(
        condition="hybrid_basic_conditions",
        points_checked=n_flow + n_jump,
        violations=violations,
        worst_margin=None if not np.isfinite(worst) else worst,
        flags=(),
        details={"flow": {"points": n_flow, "violations": len(v_flow)},
                 "jump": {"points": n_jump, "violations": len(v_jump)}},
    )


def gradient_rel_error(f: Callable, grad: Callable, points, h: float = 1e-6) -> float:
    """Largest relative error between ``grad`` and central differences of
    ``f`` over ``points`` (shape ``(k, n)``), measured against
    ``max(1, |grad|)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k, n = pts.shape
    g = np.asarray(grad(pts), dtype=float)
    fd = np.empty_like(g)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd[:, i] = (np.asarray(f(pts + e)) - np.asarray(f(pts - e))) / (2.0 * h)
    scale = np.maximum(1.0, np.linalg.norm(g, axis=-1))
    return float(np.max(np.linalg.norm(g - fd, axis=-1) / scale)) if k else 0.0
