"""Pendulum impacting a controlled slanted surface.

State ``x = (angle, angular velocity)``.  The flow input is
``u_c = (torque, surface angle mu)`` and the jump input ``u_d = mu``; the
surface angle is the same physical input in both, so the controllers tie
``u_c[1]`` to ``u_d[0]``.  At impacts the velocity is reversed with a
restitution coefficient ``e(mu) + w_d`` that is linear in ``mu``, and the
angle is compressed by ``1 + rho(mu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .hybrid_core import Controller, HybridSystemModel, InputBox, SampleSpec
from .rclf import Rclf, min_norm_flow, min_norm_jump

HALF_PI = 0.5 * math.pi
P_DEFAULT = ((2.0, 1.0), (1.0, 1.0))


@dataclass(frozen=True)
class PendulumParams:
    """Model constants.

    ``rho_tilde + rho_slope*mu`` is the angle compression at impacts
    (constant by default).  ``wd_max`` defaults to ``e1 - e0``.  With
    ``wc_symmetric`` the flow disturbance box is ``[-wbar, wbar]`` per
    coordinate, otherwise ``[0, wbar]``.
    """

    a: float = 1.0
    b: float = 0.0
    e0: float = 1.0 / 3.0
    e1: float = 2.0 / 3.0
    rho_tilde: float = -1.0 / 20.0
    rho_slope: float = 0.0
    wbar1: float = 1.0
    wbar2: float = 1.0
    wd_max: Optional[float] = None
    wc_symmetric: bool = True

    def __post_init__(self):
        if self.wd_max is None:
            object.__setattr__(self, "wd_max", self.e1 - self.e0)
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not self.b >= 0:
            raise ValueError("b must be nonnegative")
        if not 0 < self.e0 < self.e1 < 1:
            raise ValueError("need 0 < e0 < e1 < 1")
        for mu in (-HALF_PI, 0.0):
            if not -1 < self.rho(mu) < 0:
                raise ValueError("rho_tilde(mu) must lie in (-1, 0) on [-pi/2, 0]")
        if min(self.wbar1, self.wbar2, self.wd_max) < 0:
            raise ValueError("disturbance bounds must be nonnegative")

    def rho(self, mu):
        return self.rho_tilde + self.rho_slope * mu

    def restitution(self, mu):
        """Linear e with e(-pi/2) = e0 and e(0) = e1."""
        return self.e1 + (self.e1 - self.e0) * (np.asarray(mu) / HALF_PI)

    def with_design_bound(self, wbar: float) -> "PendulumParams":
        return replace(self, wbar1=float(wbar), wbar2=float(wbar))


def _restitution_scalar(p: PendulumParams, mu: float) -> float:
    return p.e1 + (p.e1 - p.e0) * (mu / HALF_PI)


def make_pendulum(params: PendulumParams = PendulumParams()) -> HybridSystemModel:
    p = params
    lw = (-p.wbar1, -p.wbar2) if p.wc_symmetric else (0.0, 0.0)
    hw = (p.wbar1, p.wbar2)

    a, b, rho0, rho1, e0, e1 = p.a, p.b, p.rho_tilde, p.rho_slope, p.e0, p.e1
    sin = math.sin

    def flow_map(x, u, w):
        if x.ndim == 1 and u.ndim == 1 and w.ndim == 1:
            x1, x2 = float(x[0]), float(x[1])
            return np.array([x2, -a * sin(x1) - (b + float(w[1])) * x2 + float(u[0]) + float(w[0])])
        x1, x2 = x[..., 0], x[..., 1]
        dx2 = -a * np.sin(x1) - (b + w[..., 1]) * x2 + u[..., 0] + w[..., 0]
        return np.stack(np.broadcast_arrays(x2, dx2), axis=-1)

    def jump_map(x, u, w):
        if x.ndim == 1 and u.ndim == 1 and w.ndim == 1:
            mu = float(u[0])
            return np.array([float(x[0]) * (1.0 + rho0 + rho1 * mu),
                             -(e1 + (e1 - e0) * (mu / HALF_PI) + float(w[0])) * float(x[1])])
        mu = u[..., 0]
        x1p = x[..., 0] * (1.0 + p.rho(mu))
        x2p = -(p.restitution(mu) + w[..., 0]) * x[..., 1]
        return np.stack(np.broadcast_arrays(x1p, x2p), axis=-1)

    wlo = np.asarray(lw, dtype=float)
    whi = np.asarray(hw, dtype=float)

    # residuals encode the state-coupled constraints; the box constraints on
    # inputs and disturbances are checked by the predicates
    def flow_residual(x, u, w):
        if x.ndim == 1:
            x1 = float(x[0])
            return max(abs(x1) - HALF_PI, float(u[1]) - x1)
        x1 = x[..., 0]
        return np.maximum(np.abs(x1) - HALF_PI, u[..., 1] - x1)

    def jump_residual(x, u, w):
        if x.ndim == 1:
            x1, x2 = float(x[0]), float(x[1])
            return max(abs(x1) - HALF_PI, x1 - float(u[0]), x2)
        x1, x2 = x[..., 0], x[..., 1]
        return np.maximum(np.maximum(np.abs(x1) - HALF_PI, x1 - u[..., 0]), x2)

    def _in_mu(mu):
        return (mu >= -HALF_PI) & (mu <= 0.0)

    def flow_set(x, u, w):
        w_ok = np.all((w >= wlo) & (w <= whi), axis=-1)
        return (flow_residual(x, u, w) <= 0.0) & _in_mu(u[..., 1]) & w_ok

    def jump_set(x, u, w):
        wd = w[..., 0]
        w_ok = (wd >= 0.0) & (wd <= p.wd_max)
        return (jump_residual(x, u, w) <= 0.0) & _in_mu(u[..., 0]) & w_ok

    def _shape(x):
        return np.asarray(x).shape[:-1]

    wlo_c = np.array(lw, dtype=float)
    whi_c = np.array(hw, dtype=float)
    wd_hi = np.array([float(p.wd_max)])

    def input_box_flow(x):
        if x.ndim == 1:
            x1 = float(x[0])
            return InputBox(np.array([-np.inf, -HALF_PI]), np.array([np.inf, min(x1, 0.0)]),
                            abs(x1) > HALF_PI)
        x1 = x[..., 0]
        empty = np.abs(x1) > HALF_PI
        lo = np.stack(np.broadcast_arrays(np.full(_shape(x), -np.inf), np.full(_shape(x), -HALF_PI)), axis=-1)
        hi = np.stack(np.broadcast_arrays(np.full(_shape(x), np.inf), np.minimum(x1, 0.0)), axis=-1)
        return InputBox(lo, hi, empty)

    def _jump_empty(x1, x2):
        return (x1 < -HALF_PI) | (x1 > 0.0) | (x2 > 0.0)

    no_jump_input = InputBox.empty_box(1)

    def input_box_jump(x):
        if x.ndim == 1:
            x1, x2 = float(x[0]), float(x[1])
            if _jump_empty(x1, x2):
                return no_jump_input
            return InputBox(np.array([x1]), np.array([0.0]))
        empty = _jump_empty(x[..., 0], x[..., 1])
        lo = np.asarray(x[..., 0], dtype=float)[..., None]
        return InputBox(lo, np.zeros_like(lo), empty)

    # unbatched disturbance boxes do not depend on x beyond emptiness
    flow_boxes = (InputBox(wlo_c, whi_c, False), InputBox(wlo_c, whi_c, True))
    jump_boxes = (InputBox(np.zeros(1), wd_hi, False), InputBox(np.zeros(1), wd_hi, True))

    def dist_box_flow(x):
        if x.ndim == 1:
            return flow_boxes[abs(float(x[0])) > HALF_PI]
        empty = np.abs(x[..., 0]) > HALF_PI
        lo = np.broadcast_to(wlo_c, _shape(x) + (2,))
        hi = np.broadcast_to(whi_c, _shape(x) + (2,))
        return InputBox(lo, hi, empty)

    def dist_box_jump(x):
        if x.ndim == 1:
            return jump_boxes[bool(_jump_empty(float(x[0]), float(x[1])))]
        empty = _jump_empty(x[..., 0], x[..., 1])
        lo = np.zeros(_shape(x) + (1,))
        hi = np.broadcast_to(wd_hi, _shape(x) + (1,))
        return InputBox(lo, hi, empty)

    return HybridSystemModel(
        n=2, m_c=2, m_d=1, d_c=2, d_d=1,
        flow_map=flow_map, jump_map=jump_map,
        input_box_flow=input_box_flow, input_box_jump=input_box_jump,
        dist_box_flow=dist_box_flow, dist_box_jump=dist_box_jump,
        flow_set=flow_set, jump_set=jump_set,
        flow_residual=flow_residual, jump_residual=jump_residual,
        name="pendulum", params=p,
    )


class LambdaValue(NamedTuple):
    value: float
    degenerate: bool


def lambda_const(params: PendulumParams = PendulumParams(), n_grid: int = 10001) -> LambdaValue:
    """Decrease-rate coefficient guaranteed by the quadratic V at jumps.

    Minimum over mu in [-pi/2, 0] of
    ``min(2(1 - (1 + rho(mu))^2), 1 - (e(mu) + wd_max)^2)``.
    Values within 1e-12 of zero are reported as exactly zero and flagged.
    """
    p = params
    mu = np.linspace(-HALF_PI, 0.0, n_grid)
    mu[-1] = 0.0
    t1 = 2.0 * (1.0 - np.square(1.0 + p.rho(mu)))
    t2 = 1.0 - np.square(p.restitution(mu) + p.wd_max)
    lam = float(np.min(np.minimum(t1, t2)))
    if abs(lam) <= 1e-12:
        return LambdaValue(0.0, True)
    return LambdaValue(lam, lam <= 0.0)


def pendulum_rclf(params: PendulumParams = PendulumParams(), P=P_DEFAULT,
                  gamma_fraction: float = 1.0, rate: Optional[float] = None, **kw) -> Rclf:
    """V = x'Px with α₃(s) = λ s² and zero invariance feedbacks at the origin."""
    P = np.asarray(P, dtype=float)
    lam = lambda_const(params).value if rate is None else float(rate)
    eig = np.linalg.eigvalsh(P)
    lo_e, hi_e = float(eig[0]), float(eig[-1])
    return Rclf(
        V=lambda x: np.einsum("...i,ij,...j->...", x, P, x),
        gradV=lambda x: 2.0 * np.einsum("ij,...j->...i", P, x),
        alpha1=lambda s: lo_e * np.square(s),
        alpha2=lambda s: hi_e * np.square(s),
        alpha3=lambda s: lam * np.square(s),
        dist_A=lambda x: np.linalg.norm(x, axis=-1),
        r_star=kw.pop("r_star", 0.0),
        gamma_fraction=gamma_fraction,
        invariance_flow=lambda x: np.zeros(2),
        invariance_jump=lambda x: np.zeros(1),
        rate=lam,
        convex=bool(lo_e >= 0),
        name="pendulum_quadratic",
        **kw,
    )


def psi_terms(params: PendulumParams, x, lam: float):
    """(ψ₀, ψ₀ʷ, ψ₁) for V with P = [[2, 1], [1, 1]]; batched over x."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    p = params
    s = x1 + x2
    psi0 = 4 * x1 * x2 + 2 * x2 * x2 + 2 * (-p.a * np.sin(x1) - p.b * x2) * s + lam * (x1 * x1 + x2 * x2)
    psi0w = 2 * np.abs(s) * (p.wbar2 * np.abs(x2) + p.wbar1)
    psi1 = 2 * s
    return psi0, psi0w, psi1


class ClosedFormInput(NamedTuple):
    u_c: np.ndarray
    u_d: np.ndarray
    inconsistent: bool


def closed_form_torque(params: PendulumParams, x, lam: float):
    """Batched torque component of the closed-form law, plus a mask of
    points where ψ₁ = 0 while ψ₀ + ψ₀ʷ > 0."""
    psi0, psi0w, psi1 = psi_terms(params, x, lam)
    num = psi0 + psi0w
    active = num > 0
    bad = active & (psi1 == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u1 = np.where(active & ~bad, -num / np.where(psi1 == 0, 1.0, psi1), 0.0)
    return u1, bad


def closed_form_law(params: PendulumParams, x, lam: Optional[float] = None) -> ClosedFormInput:
    """Min-norm law in closed form: surface held at mu = 0 and the torque
    cancelling the worst-case growth of V when needed."""
    if lam is None:
        lam = lambda_const(params).value
    u1, bad = closed_form_torque(params, np.asarray(x, dtype=float), lam)
    return ClosedFormInput(np.array([float(u1), 0.0]), np.zeros(1), bool(bad))


def _fast_closed_form(params: PendulumParams, lam: float):
    # scalar fast path for the simulator's inner loop
    a, b, w1, w2 = params.a, params.b, params.wbar1, params.wbar2
    sin = math.sin

    def law(x):
        x1, x2 = float(x[0]), float(x[1])
        s = x1 + x2
        num = 4 * x1 * x2 + 2 * x2 * x2 + 2 * (-a * sin(x1) - b * x2) * s + lam * (x1 * x1 + x2 * x2)
        num += 2 * abs(s) * (w2 * abs(x2) + w1)
        if num > 0 and s != 0:
            return np.array([-num / (2 * s), 0.0])
        return np.array([0.0, 0.0])

    return law


CONTROLLER_KINDS = ("min_norm", "closed_form", "zero")


def pendulum_controller(params: PendulumParams, kind: str = "closed_form",
                        rclf: Optional[Rclf] = None) -> Controller:
    """Feedback pair for the pendulum; the surface angle is shared."""
    shared = ((1, 0),)
    if kind == "closed_form":
        lam = lambda_const(params).value if rclf is None else float(rclf.rate)
        return Controller(_fast_closed_form(params, lam), lambda x: np.zeros(1), shared, "closed_form")
    if kind == "zero":
        return Controller(lambda x: np.zeros(2), lambda x: np.zeros(1), shared, "zero")
    if kind == "min_norm":
        model = make_pendulum(params)
        rc = pendulum_rclf(params) if rclf is None else rclf
        return Controller(lambda x: min_norm_flow(model, rc, x),
                          lambda x: min_norm_jump(model, rc, x), shared, "min_norm")
    raise ValueError(f"unknown controller kind {kind!r}")


def default_sample_spec(params: PendulumParams = PendulumParams()) -> SampleSpec:
    lw = -params.wbar1 if params.wc_symmetric else 0.0
    return SampleSpec(
        x_bounds=((-2.0, 2.0), (-3.0, 3.0)),
        u_c_bounds=((-2.0, 2.0), (-2.0, 0.5)),
        w_c_bounds=((lw, params.wbar1), (-params.wbar2 if params.wc_symmetric else 0.0, params.wbar2)),
        u_d_bounds=((-2.0, 0.5),),
        w_d_bounds=((0.0, params.wd_max),),
        x_count=17,
        v_count=3,
    )
