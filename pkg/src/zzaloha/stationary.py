"""
Stationary distribution of a backlog transition matrix, by a direct linear solve or by power
iteration as an independent cross-check
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from zzaloha.model import ValidationError, NumericalError

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
CLAMP_TOL = 1e-14
POWER_TOL = 1e-13
POWER_MAX_ITERS = 2 ** 40
SLOW_POWER_STEPS = 1_000_000


class NotConverged(NumericalError):
    pass


class SingularSystem(NumericalError):
    """
    The linear system for the stationary vector has no unique solution, which means the
    matrix has more than one closed class
    """
    pass


class LengthMismatch(ValidationError):
    pass


class SolverMethod(Enum):
    DIRECT = "direct"
    POWER = "power-iteration"

    @classmethod
    def parse(cls, value):
        if isinstance(value, SolverMethod):
            return value
        if value in ("power", "power-iteration"):
            return cls.POWER
        if value == "direct":
            return cls.DIRECT
        raise ValidationError(f"Unknown solver method '{value}', expected 'direct' or 'power-iteration'")


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray
    residual: float
    method: SolverMethod
    iterations: int = 0

    def __len__(self):
        return len(self.pi)

    def to_dict(self):
        return {
            'pi': [float(x) for x in self.pi],
            'residual': self.residual,
            'method': self.method.value,
            'iterations': self.iterations,
        }


def _entries(P) -> np.ndarray:
    entries = np.asarray(getattr(P, 'entries', P), dtype=float)
    assert entries.ndim == 2 and entries.shape[0] == entries.shape[1], f"Expected a square matrix, got shape {entries.shape}"
    return entries


def residual(pi, P) -> float:
    """ Max-norm of pi P - pi """
    entries = _entries(P)
    pi = np.asarray(pi, dtype=float)
    return float(np.max(np.abs(pi @ entries - pi)))


def _clamp(x):
    if np.any(x < -CLAMP_TOL):
        raise SingularSystem(f"Stationary vector has a negative entry {x.min():.3e}, the matrix is probably not irreducible")
    x = np.where(x < 0, 0.0, x)
    return x / x.sum()


def _solve_direct(entries, normalization_row):
    n = entries.shape[0]
    A = entries.T - np.eye(n)
    A[normalization_row, :] = 1.0
    b = np.zeros(n)
    b[normalization_row] = 1.0
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as ex:
        raise SingularSystem(f"Direct solve failed: {ex}")
    if not np.all(np.isfinite(x)):
        raise SingularSystem("Direct solve produced non-finite values")
    return x


def _solve_power(entries, tol, max_iters):
    """
    Power iteration sped up by repeated squaring. Each round applies A = P^(2^k) to x and then
    squares A, so after k rounds x = x0 P^(2^k - 1). The step count charged against max_iters is
    the number of plain x <- xP steps this stands for
    """
    n = entries.shape[0]
    x = np.full(n, 1.0 / n)
    A = entries.copy()
    steps = 0
    span = 1
    change = np.inf
    while steps + span <= max_iters:
        x_new = x @ A
        x_new /= x_new.sum()
        steps += span
        change = np.max(np.abs(x_new - x))
        x = x_new
        if change <= tol:
            if steps > SLOW_POWER_STEPS:
                logger.warning(f"Power iteration needed {steps} steps to converge on a {n}-state chain, "
                               f"the chain mixes slowly")
            return x, steps
        A = A @ A
        A /= A.sum(axis=1, keepdims=True)
        span *= 2
    raise NotConverged(f"Power iteration did not converge within {max_iters} iterations (last change {change:.3e})")


def solve_stationary(P, method="direct", normalization_row: int = -1,
                     tol: float = POWER_TOL, max_iters: int = POWER_MAX_ITERS) -> StationaryDistribution:
    """
    Find pi with pi P = pi and sum(pi) = 1
    :param P: TransitionMatrix or square row-stochastic array
    :param method: 'direct' replaces one balance equation with the normalization and solves with
                   LU / partial pivoting, 'power-iteration' iterates x <- xP from the uniform vector,
                   squaring P between rounds
    :param normalization_row: Which balance equation the normalization replaces (direct only)
    :returns: StationaryDistribution with the max-norm residual of the solution
    """
    method = SolverMethod.parse(method)
    entries = _entries(P)
    if method is SolverMethod.DIRECT:
        x = _solve_direct(entries, normalization_row)
        iterations = 0
    else:
        x, iterations = _solve_power(entries, tol, max_iters)

    pi = _clamp(x)
    res = residual(pi, entries)
    logger.debug(f"Solved {entries.shape[0]}-state chain with {method.value}: residual {res:.3e}, iterations {iterations}")
    if res > RESIDUAL_TOL:
        raise NotConverged(f"Stationary residual {res:.3e} exceeds {RESIDUAL_TOL:.0e}")
    pi.setflags(write=False)
    return StationaryDistribution(pi=pi, residual=res, method=method, iterations=iterations)


def occupancy_distance(a, b) -> float:
    """
    Total-variation distance between two probability vectors, half the L1 distance
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"Cannot compare vectors of length {a.size} and {b.size}")
    for v in (a, b):
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValidationError(f"Vector does not sum to 1 (sum {v.sum():.12f})")
    return 0.5 * float(np.abs(a - b).sum())
