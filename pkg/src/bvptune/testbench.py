"""Reference boundary value problems: four linear and six nonlinear.

The problems follow the classical singularly perturbed two-point test set
(identifiers keep the original numbering: ``L1`` is linear problem 1, ``N33``
nonlinear problem 33). Perturbation parameters are fixed per problem and
listed in ``ProblemSpec.parameters``. Each problem is rewritten as a first
order system whose state holds the unknown and its derivatives.

``CAL`` is an extra calibration problem, ``y'' = 0`` with ``y(0) = 0`` and
``y(1) = 1``, which the collocation scheme solves exactly on any mesh. It is
not one of the ten registered problems but :func:`get_problem` resolves it.
"""

from __future__ import annotations

import enum
import logging
import os
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import solve_bvp as _scipy_solve_bvp
from scipy.special import erf

from .solver import ProblemSpec

__all__ = [
    "TestCaseType",
    "LINEAR_CASES",
    "NONLINEAR_CASES",
    "ALL_CASES",
    "CALIBRATION",
    "UnknownProblemError",
    "get_problem",
    "problems",
    "reference_solution",
    "data_dir",
]

log = logging.getLogger(__name__)


class UnknownProblemError(KeyError):
    pass


class TestCaseType(str, enum.Enum):
    __test__ = False  # keep pytest from collecting the enum

    L1 = "L1"
    L3 = "L3"
    L4 = "L4"
    L7 = "L7"
    N19 = "N19"
    N20 = "N20"
    N22 = "N22"
    N23 = "N23"
    N24 = "N24"
    N33 = "N33"

    def __str__(self):
        return self.value


ALL_CASES = tuple(TestCaseType)
LINEAR_CASES = (TestCaseType.L1, TestCaseType.L3, TestCaseType.L4, TestCaseType.L7)
NONLINEAR_CASES = tuple(c for c in ALL_CASES if c not in LINEAR_CASES)
CALIBRATION = "CAL"


def _second_order(ddy):
    """Wrap ``y'' = ddy(x, y, y')`` as a 2-dimensional first order system."""

    def rhs(x, y):
        return np.vstack((y[1], ddy(x, y[0], y[1])))

    return rhs


def _dirichlet(alpha, beta):
    def bc(ya, yb):
        return np.array([ya[0] - alpha, yb[0] - beta])

    return bc


def _line(a, b, alpha, beta, dim=2):
    slope = (beta - alpha) / (b - a)

    def guess(x):
        out = np.zeros((dim, x.size))
        out[0] = alpha + slope * (x - a)
        out[1] = slope
        return out

    return guess


def _with_derivative(u, du):
    def exact(x):
        x = np.asarray(x, dtype=float)
        return np.vstack((u(x), du(x)))

    return exact


def _calibration():
    return ProblemSpec(
        id=CALIBRATION,
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(lambda x, y, dy: np.zeros_like(x)),
        boundary=_dirichlet(0.0, 1.0),
        is_linear=True,
        exact_solution=_with_derivative(lambda x: x, lambda x: np.ones_like(x)),
        guess=_line(0.0, 1.0, 0.0, 1.0),
        description="y'' = 0, y(0) = 0, y(1) = 1",
    )


def _problem_1(eps=1e-3):
    r = 1.0 / np.sqrt(eps)
    den = 1.0 - np.exp(-2.0 * r)

    def u(x):
        return (np.exp(-r * x) - np.exp(r * (x - 2.0))) / den

    def du(x):
        return (-r * np.exp(-r * x) - r * np.exp(r * (x - 2.0))) / den

    return ProblemSpec(
        id="L1",
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(lambda x, y, dy: y / eps),
        boundary=_dirichlet(1.0, 0.0),
        is_linear=True,
        exact_solution=_with_derivative(u, du),
        guess=_line(0.0, 1.0, 1.0, 0.0),
        description="eps y'' = y, y(0) = 1, y(1) = 0",
        parameters={"eps": eps},
    )


def _problem_3(eps=1e-2):
    pi = np.pi

    def ddy(x, y, dy):
        c = np.cos(pi * x)
        forcing = -(1.0 + eps * pi**2) * c - pi * (2.0 + c) * np.sin(pi * x)
        return (forcing + y - (2.0 + c) * dy) / eps

    return ProblemSpec(
        id="L3",
        dimension=2,
        interval=(-1.0, 1.0),
        rhs=_second_order(ddy),
        boundary=_dirichlet(-1.0, -1.0),
        is_linear=True,
        exact_solution=_with_derivative(lambda x: np.cos(pi * x), lambda x: -pi * np.sin(pi * x)),
        guess=_line(-1.0, 1.0, -1.0, -1.0),
        description="eps y'' + (2 + cos(pi x)) y' - y = f(x), y(-1) = y(1) = -1",
        parameters={"eps": eps},
    )


def _problem_4(eps=1e-2):
    k = -(1.0 + eps) / eps

    def u(x):
        return np.exp(x - 1.0) + np.exp(k * (1.0 + x))

    def du(x):
        return np.exp(x - 1.0) + k * np.exp(k * (1.0 + x))

    return ProblemSpec(
        id="L4",
        dimension=2,
        interval=(-1.0, 1.0),
        rhs=_second_order(lambda x, y, dy: ((1.0 + eps) * y - dy) / eps),
        boundary=_dirichlet(1.0 + np.exp(-2.0), 1.0 + np.exp(2.0 * k)),
        is_linear=True,
        exact_solution=_with_derivative(u, du),
        guess=_line(-1.0, 1.0, 1.0 + np.exp(-2.0), 1.0 + np.exp(2.0 * k)),
        description="eps y'' + y' - (1 + eps) y = 0",
        parameters={"eps": eps},
    )


def _problem_7(eps=1e-3):
    pi = np.pi
    s = np.sqrt(2.0 * eps)
    c = np.sqrt(2.0 * eps / pi)
    norm = erf(1.0 / s) + c * np.exp(-1.0 / (2.0 * eps))

    def ddy(x, y, dy):
        forcing = -(1.0 + eps * pi**2) * np.cos(pi * x) - pi * x * np.sin(pi * x)
        return (forcing - x * dy + y) / eps

    def u(x):
        g = x * erf(x / s) + c * np.exp(-x * x / (2.0 * eps))
        return np.cos(pi * x) + x + g / norm

    def du(x):
        return -pi * np.sin(pi * x) + 1.0 + erf(x / s) / norm

    return ProblemSpec(
        id="L7",
        dimension=2,
        interval=(-1.0, 1.0),
        rhs=_second_order(ddy),
        boundary=_dirichlet(-1.0, 1.0),
        is_linear=True,
        exact_solution=_with_derivative(u, du),
        guess=_line(-1.0, 1.0, -1.0, 1.0),
        description="eps y'' + x y' - y = f(x), turning point at x = 0",
        parameters={"eps": eps},
    )


def _problem_19(eps=5e-2):
    pi = np.pi

    def ddy(x, y, dy):
        return (0.5 * pi * np.sin(0.5 * pi * x) * np.exp(2.0 * y) - np.exp(y) * dy) / eps

    return ProblemSpec(
        id="N19",
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(ddy),
        boundary=_dirichlet(0.0, 0.0),
        is_linear=False,
        guess=_line(0.0, 1.0, 0.0, 0.0),
        description="eps y'' + exp(y) y' - pi/2 sin(pi x / 2) exp(2 y) = 0",
        parameters={"eps": eps},
    )


def _problem_20(eps=5e-2):
    ya = 1.0 + eps * np.log(np.cosh(-0.745 / eps))
    yb = 1.0 + eps * np.log(np.cosh(0.255 / eps))

    return ProblemSpec(
        id="N20",
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(lambda x, y, dy: (1.0 - dy * dy) / eps),
        boundary=_dirichlet(ya, yb),
        is_linear=False,
        exact_solution=_with_derivative(
            lambda x: 1.0 + eps * np.log(np.cosh((x - 0.745) / eps)),
            lambda x: np.tanh((x - 0.745) / eps),
        ),
        guess=_line(0.0, 1.0, ya, yb),
        description="eps y'' + (y')^2 = 1, corner layer at x = 0.745",
        parameters={"eps": eps},
    )


def _problem_22(eps=5e-2):
    return ProblemSpec(
        id="N22",
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(lambda x, y, dy: -(dy + y * y) / eps),
        boundary=_dirichlet(0.0, 0.5),
        is_linear=False,
        guess=_line(0.0, 1.0, 0.0, 0.5),
        description="eps y'' + y' + y^2 = 0, y(0) = 0, y(1) = 1/2",
        parameters={"eps": eps},
    )


def _problem_23(mu=5.0):
    return ProblemSpec(
        id="N23",
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(lambda x, y, dy: mu * np.sinh(mu * y)),
        boundary=_dirichlet(0.0, 1.0),
        is_linear=False,
        guess=_line(0.0, 1.0, 0.0, 1.0),
        description="y'' = mu sinh(mu y), y(0) = 0, y(1) = 1 (Troesch)",
        parameters={"mu": mu},
    )


def _problem_24(eps=1e-1, gamma=1.4):
    def ddy(x, u, du):
        A = 1.0 + x * x
        dA = 2.0 * x
        num = (0.5 * (1.0 + gamma) - eps * dA) * u * du - du / u - (dA / A) * (
            1.0 - 0.5 * (gamma - 1.0) * u * u
        )
        return num / (eps * A * u)

    return ProblemSpec(
        id="N24",
        dimension=2,
        interval=(0.0, 1.0),
        rhs=_second_order(ddy),
        boundary=_dirichlet(0.9129, 0.375),
        is_linear=False,
        guess=_line(0.0, 1.0, 0.9129, 0.375),
        description="quasi one-dimensional nozzle flow with shock, A(x) = 1 + x^2",
        parameters={"eps": eps, "gamma": gamma},
    )


def _problem_33(eps=7e-2):
    def rhs(x, y):
        # y = (u, u', u'', u''')
        return np.vstack((y[1], y[2], y[3], (y[0] * y[3] - y[1] * y[2]) / eps))

    def bc(ya, yb):
        return np.array([ya[0], ya[1], yb[0] - 1.0, yb[1]])

    def guess(x):
        out = np.zeros((4, x.size))
        out[0] = x
        out[1] = 1.0
        return out

    return ProblemSpec(
        id="N33",
        dimension=4,
        interval=(0.0, 1.0),
        rhs=rhs,
        boundary=bc,
        is_linear=False,
        guess=guess,
        description="eps u'''' = u u''' - u' u'', u(0) = u'(0) = u'(1) = 0, u(1) = 1",
        parameters={"eps": eps},
    )


_FACTORIES = {
    TestCaseType.L1: _problem_1,
    TestCaseType.L3: _problem_3,
    TestCaseType.L4: _problem_4,
    TestCaseType.L7: _problem_7,
    TestCaseType.N19: _problem_19,
    TestCaseType.N20: _problem_20,
    TestCaseType.N22: _problem_22,
    TestCaseType.N23: _problem_23,
    TestCaseType.N24: _problem_24,
    TestCaseType.N33: _problem_33,
}


def _coerce(test_case) -> TestCaseType | str:
    if isinstance(test_case, TestCaseType):
        return test_case
    if test_case == CALIBRATION:
        return CALIBRATION
    try:
        return TestCaseType(str(test_case))
    except ValueError:
        raise UnknownProblemError(f"unknown test case {test_case!r}") from None


@lru_cache(maxsize=None)
def _build(case) -> ProblemSpec:
    if case == CALIBRATION:
        return _calibration()
    return _FACTORIES[case]()


def get_problem(test_case) -> ProblemSpec:
    """Problem definition for ``test_case`` (a :class:`TestCaseType`, its id, or ``"CAL"``)."""
    return _build(_coerce(test_case))


def problems() -> dict[TestCaseType, ProblemSpec]:
    return {case: get_problem(case) for case in ALL_CASES}


def data_dir() -> Path:
    """Directory for cached artifacts (``$BVPTUNE_DATA`` or ``~/.cache/bvptune``)."""
    root = os.environ.get("BVPTUNE_DATA")
    path = Path(root) if root else Path.home() / ".cache" / "bvptune"
    path.mkdir(parents=True, exist_ok=True)
    return path


REFERENCE_INTERVALS = 4096


def _compute_reference(problem: ProblemSpec) -> np.ndarray:
    # Independent solver: scipy's collocation code with a tight tolerance,
    # continued from a coarse start on the problem's own initial guess.
    a, b = problem.interval
    x0 = np.linspace(a, b, 201)
    y0 = problem.initial_guess(x0)
    sol = _scipy_solve_bvp(
        problem.rhs, problem.boundary, x0, y0, tol=1e-10, max_nodes=200000, bc_tol=1e-12
    )
    if not sol.success:
        raise RuntimeError(f"reference solve failed for {problem.id}: {sol.message}")
    x = np.linspace(a, b, REFERENCE_INTERVALS + 1)
    return np.vstack((x, sol.sol(x))).T


def reference_solution(test_case, cache: bool = True) -> np.ndarray:
    """Dense reference table with columns ``x, y_1, ..., y_d``.

    Problems with a closed form are tabulated from it; the others are solved
    once with an independent tight-tolerance collocation code and cached as
    CSV under :func:`data_dir`.
    """
    problem = get_problem(test_case)
    a, b = problem.interval
    if problem.exact_solution is not None:
        x = np.linspace(a, b, REFERENCE_INTERVALS + 1)
        return np.vstack((x, problem.exact_solution(x))).T
    path = data_dir() / f"reference_{problem.id}.csv"
    if cache and path.exists():
        return np.loadtxt(path, delimiter=",", skiprows=1)
    table = _compute_reference(problem)
    if cache:
        header = ",".join(["x"] + [f"y_{k + 1}" for k in range(problem.dimension)])
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
        log.info("cached reference solution for %s at %s", problem.id, path)
    return table
