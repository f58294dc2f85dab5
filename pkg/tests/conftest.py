import numpy as np
import pytest

from hybrid_rclf.hybrid_core import HybridSystemModel, InputBox
from hybrid_rclf.pendulum import PendulumParams, make_pendulum, pendulum_rclf


def _box(lo, hi):
    def f(x):
        shape = np.asarray(x).shape[:-1]
        return InputBox(np.broadcast_to(np.asarray(lo, float), shape + (len(lo),)),
                        np.broadcast_to(np.asarray(hi, float), shape + (len(hi),)))
    return f


def scalar_model(flow_map=None, flow_set=None, jump_map=None, jump_set=None,
                 u_c=((-1.0, 1.0),), u_d=((-1.0, 1.0),)):
    """1-D state, 1-D inputs, no disturbances; sets default to everything."""
    lo_c, hi_c = zip(*u_c)
    lo_d, hi_d = zip(*u_d)
    always = lambda x, u, w: np.ones(np.asarray(x).shape[:-1], dtype=bool)
    return HybridSystemModel(
        n=1, m_c=len(u_c), m_d=len(u_d), d_c=0, d_d=0,
        flow_map=flow_map or (lambda x, u, w: np.zeros_like(x)),
        jump_map=jump_map or (lambda x, u, w: np.asarray(x, float).copy()),
        input_box_flow=_box(lo_c, hi_c), input_box_jump=_box(lo_d, hi_d),
        dist_box_flow=_box((), ()), dist_box_jump=_box((), ()),
        flow_set=flow_set or always, jump_set=jump_set or always,
    )


@pytest.fixture(scope="session")
def params():
    return PendulumParams()


@pytest.fixture(scope="session")
def model(params):
    return make_pendulum(params)


@pytest.fixture(scope="session")
def rclf(params):
    return pendulum_rclf(params)


# acceptance criteria lines, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
