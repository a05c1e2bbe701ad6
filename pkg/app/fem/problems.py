"""Exact solutions (smooth, singular, zero, discrete) with their derivatives and break lines."""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from app.exceptions import InvalidArgumentError
from app.fem.st_assembly import Derivative, SpaceTimeSpace, evaluate_st
from app.schemas import ProblemKind

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ExactSolution:
    value: Field
    dt: Field
    dx: Field
    name: str = "custom"
    singular_line: bool = False
    t_breaks: Tuple[float, ...] = ()
    x_breaks: Tuple[float, ...] = ()
    is_zero: bool = False


@dataclass(frozen=True, eq=False)
class ProblemDef:
    exact: ExactSolution
    beta: float = 0.0
    T: float = 1.0
    u0: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.T > 0.0:
            raise InvalidArgumentError(f"Final time must be > 0, got {self.T}.")
        if self.beta < 0.0:
            raise InvalidArgumentError(f"beta must be >= 0, got {self.beta}.")
        if self.u0 is None:
            exact = self.exact
            object.__setattr__(self, "u0", lambda x: exact.value(np.zeros_like(x), x))

    @property
    def symmetric(self) -> bool:
        return self.beta == 0.0


def smooth_solution() -> ExactSolution:
    def value(t, x):
        return np.exp(-2.0 * t) * np.sin(np.pi * x)

    def dt(t, x):
        return -2.0 * np.exp(-2.0 * t) * np.sin(np.pi * x)

    def dx(t, x):
        return np.pi * np.exp(-2.0 * t) * np.cos(np.pi * x)

    return ExactSolution(value=value, dt=dt, dx=dx, name="smooth")


def singular_solution() -> ExactSolution:
    def value(t, x):
        return np.exp(-2.0 * t) * np.abs(t - x) * np.sin(np.pi * x)

    def dt(t, x):
        d = t - x
        return np.exp(-2.0 * t) * (-2.0 * np.abs(d) + np.sign(d)) * np.sin(np.pi * x)

    def dx(t, x):
        d = t - x
        return np.exp(-2.0 * t) * (-np.sign(d) * np.sin(np.pi * x) + np.abs(d) * np.pi * np.cos(np.pi * x))

    return ExactSolution(value=value, dt=dt, dx=dx, name="singular", singular_line=True)


def zero_solution() -> ExactSolution:
    def zero(t, x):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)

    return ExactSolution(value=zero, dt=zero, dx=zero, name="zero", is_zero=True)


def discrete_solution(space: SpaceTimeSpace, coeffs: np.ndarray) -> ExactSolution:
    """The finite element function with the given coefficients as an exact solution."""
    coeffs = np.array(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise InvalidArgumentError(f"Expected {space.dim} coefficients, got shape {coeffs.shape}.")
    coeffs.setflags(write=False)

    def field(derivative: Derivative) -> Field:
        def f(t, x):
            t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
            return evaluate_st(space, coeffs, t.ravel(), x.ravel(), derivative).reshape(t.shape)

        return f

    return ExactSolution(
        value=field(Derivative.VALUE),
        dt=field(Derivative.DT),
        dx=field(Derivative.DX),
        name="discrete",
        t_breaks=tuple(space.temporal.partition.points),
        x_breaks=tuple(space.spatial.partition.points),
        is_zero=not np.any(coeffs),
    )


_SOLUTIONS = {
    ProblemKind.SMOOTH: smooth_solution,
    ProblemKind.SINGULAR: singular_solution,
    ProblemKind.ZERO: zero_solution,
}


def make_problem(kind: ProblemKind, beta: float = 0.0, T: float = 1.0) -> ProblemDef:
    """Problem of the given kind with u0 = u(0, .) taken from the exact solution."""
    return ProblemDef(exact=_SOLUTIONS[ProblemKind(kind)](), beta=beta, T=T)
