"""Closed-loop hybrid simulation: fixed-step RK4 flows, bisection event
location on entry into the jump set, jump application and termination
bookkeeping.  Also arc serialization and Lyapunov-trace extraction."""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .hybrid_core import (Controller, DisturbanceGenerator, HybridSystemModel, HybridTime,
                          HybridTimeDomain, ModelError, NumericalError)

REASONS = ("horizon_t", "horizon_j", "left_C_and_D", "zeno_guard", "numerical_failure")
INPUT_HOLDS = ("stage", "step")


class EventBracketError(RuntimeError):
    """locate_event was called on an interval that does not bracket the guard."""


@dataclass(frozen=True)
class SimLimits:
    """Integration limits.

    ``input_hold="stage"`` re-evaluates the feedback at every RK4 stage
    (the integrated field is the true closed loop); ``"step"`` holds the
    input computed at the step start.  Disturbances are held per step in
    both modes.
    """

    t_max: float = 30.0
    j_max: int = 1000
    dt: float = 1e-3
    event_tol: float = 1e-8
    zeno_guard: float = 1000.0
    input_hold: str = "stage"

    def __post_init__(self):
        if not self.dt > 0 or not self.event_tol > 0 or not self.t_max > 0:
            raise ValueError("dt, event_tol and t_max must be positive")
        if self.j_max < 0:
            raise ValueError("j_max must be nonnegative")
        if not self.zeno_guard > 0:
            raise ValueError("zeno_guard must be positive")
        if self.input_hold not in INPUT_HOLDS:
            raise ValueError(f"input_hold must be one of {INPUT_HOLDS}")


@dataclass(frozen=True)
class TerminationStatus:
    reason: str
    time: HybridTime
    message: str = ""

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown termination reason {self.reason!r}")


@dataclass(frozen=True)
class ArcSample:
    t: float
    j: int
    kind: str
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray


@dataclass(frozen=True, eq=False)
class HybridArc:
    """Samples along a solution.  Flow rows carry ``(u_c, w_c)``; each jump
    contributes a pre-jump and a post-jump row carrying ``(u_d, w_d)``."""

    n: int
    m_c: int
    m_d: int
    d_c: int
    d_d: int
    samples: tuple = ()
    values: Optional[tuple] = None

    @property
    def domain(self) -> HybridTimeDomain:
        if not self.samples:
            return HybridTimeDomain(())
        ivs = []
        start = self.samples[0].t
        j = self.samples[0].j
        for s in self.samples:
            if s.j != j:
                ivs.append((start, s.t, j))
                start, j = s.t, s.j
        ivs.append((start, self.samples[-1].t, j))
        return HybridTimeDomain(tuple(ivs))

    @property
    def states(self) -> np.ndarray:
        return np.array([s.x for s in self.samples]).reshape(-1, self.n)

    @property
    def jumps(self) -> List[tuple]:
        """(pre, post) sample pairs."""
        out = []
        for a, b in zip(self.samples[:-1], self.samples[1:]):
            if a.kind == "jump" and b.kind == "jump" and b.j == a.j + 1:
                out.append((a, b))
        return out

    @property
    def jump_count(self) -> int:
        return len(self.jumps)


def rk4_step(flow_fn: Callable, x, u_c, w_c, dt: float) -> np.ndarray:
    """One classical RK4 step of x' = flow_fn(x, u_c, w_c).

    ``u_c`` may be an array (held over the step) or a callable ``x -> u``
    evaluated at every stage.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    law = u_c if callable(u_c) else (lambda _x: u_c)

    def f(z):
        return np.asarray(flow_fn(z, law(z), w_c), dtype=float)

    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite RK4 stage", x)
    return out


def locate_event(flow_fn: Callable, guard_fn: Callable, t_lo: float, x_lo, t_hi: float, x_hi,
                 event_tol: float, max_iter: int = 200):
    """First state inside the guard along an RK4 sub-step from ``x_lo``.

    ``flow_fn(x)`` is the closed-loop field.  ``guard_fn(x)`` returns a
    residual (``<= 0`` means the guard holds) or a boolean.  Bisection on
    the step fraction stops once the residual lies in ``[-event_tol, 0]``;
    boolean guards are bisected down to time resolution.
    """
    def resid(x):
        r = guard_fn(x)
        if isinstance(r, (bool, np.bool_)):
            return -0.0 if r else 1.0
        return float(r)

    if resid(x_lo) <= 0:
        raise EventBracketError("guard already holds at the lower end")
    if resid(x_hi) > 0:
        raise EventBracketError("guard does not hold at the upper end")
    x_lo = np.asarray(x_lo, dtype=float)
    h = t_hi - t_lo
    lo, hi = 0.0, 1.0
    best = (t_hi, np.asarray(x_hi, dtype=float))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        xm = rk4_step(lambda z, u, w: flow_fn(z), x_lo, None, None, mid * h)
        r = resid(xm)
        if r <= 0:
            hi = mid
            best = (t_lo + mid * h, xm)
            if r >= -event_tol:
                break
        else:
            lo = mid
    return best


# ---------------------------------------------------------------------------


class _Membership:
    """Closed-loop set tests with residual tolerances where available."""

    def __init__(self, model: HybridSystemModel, controller: Controller, tol: float):
        self.m = model
        self.c = controller
        self.tol = tol
        self._centers = {}

    def _w(self, box, d):
        # models may hand back the same box object repeatedly; keep the box
        # referenced so its id stays valid
        hit = self._centers.get(id(box))
        if hit is not None and hit[0] is box:
            return hit[1].copy()
        w = np.zeros(d) if box.is_empty else box.center()
        if len(self._centers) < 64:
            self._centers[id(box)] = (box, w.copy())
        return w

    def jump_resid(self, x):
        """(residual, u_d); residual is +inf outside Π_d(D)."""
        m = self.m
        if m.input_box_jump(x).is_empty:
            return math.inf, None
        u = np.asarray(self.c.jump_law(x), dtype=float)
        w = self._w(m.dist_box_jump(x), m.d_d)
        if m.jump_residual is not None:
            return float(m.jump_residual(x, u, w)), u
        return (-0.0 if bool(m.jump_set(x, u, w)) else math.inf), u

    def flow_resid(self, x):
        m = self.m
        if m.input_box_flow(x).is_empty:
            return math.inf, None
        u = np.asarray(self.c.flow_law(x), dtype=float)
        w = self._w(m.dist_box_flow(x), m.d_c)
        if m.flow_residual is not None:
            return float(m.flow_residual(x, u, w)), u
        return (-0.0 if bool(m.flow_set(x, u, w)) else math.inf), u


def _flow_exit_guard(mem):
    def g(x):
        r, _ = mem.flow_resid(x)
        # guard holds once the state has left C by more than the tolerance
        return mem.tol - r if np.isfinite(r) else -1.0
    return g


def simulate(model: HybridSystemModel, controller: Controller, dist_gen: DisturbanceGenerator,
             x0, limits: SimLimits):
    """Integrate the closed loop from ``x0``.

    Jumps take priority on C ∩ D, except that a jump leaving the state
    unchanged is skipped when flowing is possible (so equilibria in C ∩ D
    flow instead of chattering).  Returns ``(HybridArc, TerminationStatus)``.
    """
    x = np.asarray(x0, dtype=float).reshape(model.n)
    mem = _Membership(model, controller, limits.event_tol)
    stream = dist_gen.stream(model)
    samples: List[ArcSample] = []
    t, j = 0.0, 0
    recent = deque()
    eps_t = 1e-12 * max(1.0, limits.t_max)
    dt = limits.dt

    def arc():
        return HybridArc(model.n, model.m_c, model.m_d, model.d_c, model.d_d, tuple(samples))

    def finish(reason, msg=""):
        return arc(), TerminationStatus(reason, HybridTime(t, j), msg)

    def flow_row(x, u, w):
        samples.append(ArcSample(t, j, "flow", x.copy(), np.asarray(u, float).copy(), np.asarray(w, float).copy()))

    try:
        rd, ud = mem.jump_resid(x)
        rf, uc = mem.flow_resid(x)
    except (ModelError, NumericalError, ArithmeticError) as exc:
        return finish("numerical_failure", str(exc))
    if rd > 0 and rf > limits.event_tol:
        return finish("left_C_and_D", "initial state outside both sets")

    cached = (rd, ud, rf, uc)
    while True:
        try:
            if cached is None:
                rd, ud = mem.jump_resid(x)
                rf, uc = mem.flow_resid(x)
            else:
                rd, ud, rf, uc = cached
                cached = None
            in_d = rd <= 0
            in_c = rf <= limits.event_tol
            if in_d and in_c:
                w_probe = mem._w(model.dist_box_jump(x), model.d_d)
                if np.array_equal(np.asarray(model.jump_map(x, ud, w_probe)), x):
                    in_d = False
            if in_d:
                if j >= limits.j_max:
                    flow_row(x, uc if uc is not None else np.zeros(model.m_c), np.zeros(model.d_c))
                    return finish("horizon_j")
                while recent and recent[0] < t - 1.0:
                    recent.popleft()
                if len(recent) >= limits.zeno_guard:
                    return finish("zeno_guard", f"more than {limits.zeno_guard:g} jumps within one second")
                wd = stream.jump(t, j, x, ud)
                xp = np.asarray(model.jump_map(x, ud, wd), dtype=float)
                if not np.all(np.isfinite(xp)):
                    raise NumericalError("non-finite jump", x)
                samples.append(ArcSample(t, j, "jump", x.copy(), ud.copy(), wd.copy()))
                samples.append(ArcSample(t, j + 1, "jump", xp.copy(), ud.copy(), wd.copy()))
                recent.append(t)
                j += 1
                x = xp
                continue
            if not in_c:
                flow_row(x, np.zeros(model.m_c) if uc is None else uc, np.zeros(model.d_c))
                return finish("left_C_and_D", "state left the flow set without entering the jump set")
            wc = stream.flow(t, j, x, uc)
            if t >= limits.t_max - eps_t:
                flow_row(x, uc, wc)
                return finish("horizon_t")
            flow_row(x, uc, wc)
            h = min(dt, limits.t_max - t)
            law = controller.flow_law if limits.input_hold == "stage" else uc
            fmap = model.flow_map

            def field(z, _law=law, _wc=wc):
                u = _law(z) if callable(_law) else _law
                return fmap(z, u, _wc)

            x_new = rk4_step(lambda z, u, w: field(z), x, None, None, h)
            rd_new, ud_new = mem.jump_resid(x_new)
            if rd_new <= 0 and rd > 0:
                t_star, x_star = locate_event(field, lambda z: mem.jump_resid(z)[0],
                                              t, x, t + h, x_new, limits.event_tol)
                t, x = t_star, x_star
                continue
            rf_new, uc_new = mem.flow_resid(x_new)
            if rf_new > limits.event_tol and rd_new > 0:
                guard = _flow_exit_guard(mem)
                t_star, x_star = locate_event(field, guard, t, x, t + h, x_new, limits.event_tol)
                t, x = t_star, x_star
                continue
            cached = (rd_new, ud_new, rf_new, uc_new)
            t, x = t + h, x_new
        except (NumericalError, ArithmeticError) as exc:
            return finish("numerical_failure", str(exc))
        except Exception as exc:  # controller infeasibility and model errors mid-run
            if exc.__class__.__name__ in ("InfeasibleInputError", "ModelError"):
                return finish("numerical_failure", str(exc))
            raise


# ---------------------------------------------------------------------------
# Lyapunov trace


@dataclass(frozen=True)
class LyapunovTrace:
    t: np.ndarray
    j: np.ndarray
    V: np.ndarray
    flow_violations: tuple
    jump_violations: tuple
    flow_steps: int
    jump_steps: int

    @property
    def monotone(self) -> bool:
        return not self.flow_violations and not self.jump_violations


def lyapunov_trace(arc: HybridArc, V: Callable, tol_rel: float = 1e-8) -> LyapunovTrace:
    """V along the arc with per-step and per-jump decrease flags at
    tolerance ``tol_rel * (1 + V)``.  Violations list sample indices ``k``
    where ``V[k+1] > V[k] + tol``."""
    xs = arc.states
    vals = np.asarray(V(xs), dtype=float) if len(xs) else np.zeros(0)
    ts = np.array([s.t for s in arc.samples])
    js = np.array([s.j for s in arc.samples], dtype=int)
    fv, jv = [], []
    nf = nj = 0
    for k in range(len(arc.samples) - 1):
        a, b = arc.samples[k], arc.samples[k + 1]
        grow = vals[k + 1] > vals[k] + tol_rel * (1.0 + abs(vals[k]))
        if b.j == a.j + 1:
            nj += 1
            if grow:
                jv.append(k)
        else:
            nf += 1
            if grow:
                fv.append(k)
    return LyapunovTrace(ts, js, vals, tuple(fv), tuple(jv), nf, nj)


# ---------------------------------------------------------------------------
# CSV serialization


def _fmt(v: float) -> str:
    return "%.17g" % v


def arc_header(arc: HybridArc) -> List[str]:
    cols = ["t", "j", "kind"]
    cols += [f"x{i + 1}" for i in range(arc.n)]
    cols += [f"uc{i + 1}" for i in range(arc.m_c)]
    cols += [f"ud{i + 1}" for i in range(arc.m_d)]
    cols += [f"wc{i + 1}" for i in range(arc.d_c)]
    cols += [f"wd{i + 1}" for i in range(arc.d_d)]
    return cols + ["V"]


def write_arc_csv(arc: HybridArc, V: Optional[Callable] = None) -> str:
    """CSV text; inapplicable input/disturbance fields are left empty."""
    if V is not None:
        vals = np.asarray(V(arc.states), dtype=float) if arc.samples else np.zeros(0)
    elif arc.values is not None:
        vals = np.asarray(arc.values, dtype=float)
    else:
        raise ValueError("no V values available for the arc")
    out = io.StringIO()
    out.write(",".join(arc_header(arc)) + "\n")
    for s, v in zip(arc.samples, vals):
        row = [_fmt(s.t), str(s.j), s.kind]
        row += [_fmt(c) for c in s.x]
        if s.kind == "flow":
            row += [_fmt(c) for c in s.u] + [""] * arc.m_d
            row += [_fmt(c) for c in s.w] + [""] * arc.d_d
        else:
            row += [""] * arc.m_c + [_fmt(c) for c in s.u]
            row += [""] * arc.d_c + [_fmt(c) for c in s.w]
        row.append(_fmt(v))
        out.write(",".join(row) + "\n")
    return out.getvalue()


def read_arc_csv(text: str) -> HybridArc:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty arc file")
    head = lines[0].split(",")
    if head[:3] != ["t", "j", "kind"] or head[-1] != "V":
        raise ValueError("not an arc CSV header")

    def count(prefix):
        return sum(1 for h in head if h.rstrip("0123456789") == prefix)

    n, mc, md, dc, dd = (count(p) for p in ("x", "uc", "ud", "wc", "wd"))
    if arc_header(HybridArc(n, mc, md, dc, dd)) != head:
        raise ValueError("unexpected arc CSV column layout")
    samples, vals = [], []
    for ln in lines[1:]:
        f = ln.split(",")
        if len(f) != len(head):
            raise ValueError("malformed arc CSV row")
        kind = f[2]
        if kind not in ("flow", "jump"):
            raise ValueError(f"unknown row kind {kind!r}")
        k = 3
        x = np.array([float(v) for v in f[k:k + n]]); k += n
        uc = f[k:k + mc]; k += mc
        ud = f[k:k + md]; k += md
        wc = f[k:k + dc]; k += dc
        wd = f[k:k + dd]; k += dd
        u, w = (uc, wc) if kind == "flow" else (ud, wd)
        samples.append(ArcSample(float(f[0]), int(f[1]), kind, x,
                                 np.array([float(v) for v in u]), np.array([float(v) for v in w])))
        vals.append(float(f[-1]))
    return HybridArc(n, mc, md, dc, dd, tuple(samples), tuple(vals))


def arc_to_dict(arc: HybridArc, V: Optional[Callable] = None) -> dict:
    vals = (np.asarray(V(arc.states), dtype=float).tolist() if (V is not None and arc.samples)
            else (list(arc.values) if arc.values is not None else None))
    return {
        "dims": {"n": arc.n, "m_c": arc.m_c, "m_d": arc.m_d, "d_c": arc.d_c, "d_d": arc.d_d},
        "samples": [{"t": s.t, "j": s.j, "kind": s.kind, "x": s.x.tolist(),
                     "u": s.u.tolist(), "w": s.w.tolist()} for s in arc.samples],
        "V": vals,
    }


def convergence_time(arc: HybridArc, radius: float = 0.05) -> Optional[float]:
    """First sample time with |x| <= radius."""
    for s in arc.samples:
        if float(np.linalg.norm(s.x)) <= radius:
            return s.t
    return None
