"""
Protocol parameters, the frame outcome alphabet and the binomial kernels that every other
quantity in the package is built from.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAX_USERS = 1000


class ValidationError(ValueError):
    """ Bad user input, mapped to exit status 2 by the command line """
    pass


class NumericalError(ArithmeticError):
    """ A numerical procedure failed, mapped to exit status 3 by the command line """
    pass


class OutOfRange(ValidationError):
    pass


class UnknownVariant(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    """
    Raised when a kernel is asked for the probability of more transmitters than there are
    users in the relevant group
    """
    pass


class VariantMismatch(ValidationError):
    pass


class Variant(Enum):
    ALOHA_BASELINE = "aloha-baseline"
    ZIGZAG_PAPER = "zigzag-paper"
    ZIGZAG_STRICT = "zigzag-strict"

    @property
    def is_zigzag(self):
        return self is not Variant.ALOHA_BASELINE

    @classmethod
    def parse(cls, value):
        if isinstance(value, Variant):
            return value
        try:
            return cls(str(value).strip())
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise UnknownVariant(f"Unknown model variant '{value}', expected one of: {choices}")


ALL_VARIANTS = tuple(Variant)


class OutcomeKind(Enum):
    IDLE = "Idle"
    SUCCESS = "Success"
    ZIGZAG = "ZigZag"
    COLLISION = "Collision"


# Receiver feedback symbol emitted at the end of the first slot of each frame
FEEDBACK = {
    OutcomeKind.IDLE: "0",
    OutcomeKind.SUCCESS: "1",
    OutcomeKind.ZIGZAG: "ZigZag",
    OutcomeKind.COLLISION: "C",
}


@dataclass(frozen=True)
class FrameOutcome:
    kind: OutcomeKind

    @property
    def slots_consumed(self):
        return 2 if self.kind is OutcomeKind.ZIGZAG else 1

    @property
    def feedback(self):
        return FEEDBACK[self.kind]

    @classmethod
    def from_transmitters(cls, k: int):
        """
        Classify a frame by the number of simultaneous transmitters k
        """
        assert k >= 0, f"Transmitter count must be non-negative, got {k}"
        if k == 0:
            return cls(OutcomeKind.IDLE)
        elif k == 1:
            return cls(OutcomeKind.SUCCESS)
        elif k == 2:
            return cls(OutcomeKind.ZIGZAG)
        return cls(OutcomeKind.COLLISION)


@dataclass(frozen=True)
class ModelParams:
    """
    Validated protocol and population parameters. Build these with validate_params, constructing
    them directly skips all range checks
    """
    M: int
    p_a: float
    q_r: float
    variant: Variant

    def with_qr(self, q_r: float):
        return validate_params(self.M, self.p_a, q_r, self.variant)

    def with_variant(self, variant):
        return replace(self, variant=Variant.parse(variant))

    @property
    def states(self):
        return np.arange(self.M + 1)

    def to_dict(self):
        return {'M': self.M, 'p_a': self.p_a, 'q_r': self.q_r, 'variant': self.variant.value}


def _open_unit(name, value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise OutOfRange(f"{name} must be a number in (0, 1), got {value!r}")
    if not 0.0 < value < 1.0:
        raise OutOfRange(f"{name} must lie strictly between 0 and 1, got {value}")
    return value


def validate_params(M, p_a, q_r, variant) -> ModelParams:
    """
    Check a candidate parameter tuple and return a ModelParams. Boundary probabilities are
    rejected since they break the unique stationary solution of the backlog chain
    :param M: Number of users sharing the channel, 1..1000
    :param p_a: New packet transmission probability per unbacklogged user per frame
    :param q_r: Retransmission probability per backlogged user per frame
    :param variant: Model variant name or Variant
    """
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)):
        try:
            if float(M) != int(M):
                raise ValueError
            M = int(M)
        except (TypeError, ValueError):
            raise OutOfRange(f"User count must be an integer, got {M!r}")
    M = int(M)
    if not 1 <= M <= MAX_USERS:
        raise OutOfRange(f"User count must be between 1 and {MAX_USERS}, got {M}")
    return ModelParams(M=M,
                       p_a=_open_unit("p_a", p_a),
                       q_r=_open_unit("q_r", q_r),
                       variant=Variant.parse(variant))


def _check_state(N, params: ModelParams):
    if not 0 <= N <= params.M:
        raise IndexOutOfRange(f"Backlog state {N} outside 0..{params.M}")


@lru_cache(maxsize=8192)
def binomial_pmf(n: int, p: float) -> Tuple[float, ...]:
    """
    Binomial(n, p) probabilities for 0..n. The coefficient is carried multiplicatively from
    C(n, 0), so it never exceeds C(1000, 500) ~ 2.7e299 and no factorial is formed
    """
    q = 1.0 - p
    pmf = []
    coef = 1.0
    for i in range(n + 1):
        pmf.append(coef * p ** i * q ** (n - i))
        coef = coef * (n - i) / (i + 1)
    return tuple(pmf)


def arrival_pmf(N: int, params: ModelParams) -> np.ndarray:
    """ Qa(i, N) for i = 0..M-N """
    _check_state(N, params)
    return np.array(binomial_pmf(params.M - N, params.p_a))


def retransmit_pmf(N: int, params: ModelParams) -> np.ndarray:
    """ Qr(i, N) for i = 0..N """
    _check_state(N, params)
    return np.array(binomial_pmf(N, params.q_r))


def q_arrive(i: int, N: int, params: ModelParams) -> float:
    """
    Probability that exactly i of the M - N unbacklogged users transmit a new packet in a frame
    """
    _check_state(N, params)
    if not 0 <= i <= params.M - N:
        raise IndexOutOfRange(f"Cannot have {i} new transmitters with {params.M - N} unbacklogged users")
    return binomial_pmf(params.M - N, params.p_a)[i]


def q_retransmit(i: int, N: int, params: ModelParams) -> float:
    """
    Probability that exactly i of the N backlogged users retransmit in a frame
    """
    _check_state(N, params)
    if not 0 <= i <= N:
        raise IndexOutOfRange(f"Cannot have {i} retransmitters with {N} backlogged users")
    return binomial_pmf(N, params.q_r)[i]


def p_zigzag(N: int, params: ModelParams) -> float:
    """
    Probability that exactly two backlogged users retransmit, C(N, 2) (1-q_r)^(N-2) q_r^2
    """
    _check_state(N, params)
    if N < 2:
        return 0.0
    return q_retransmit(2, N, params)


def kernel_at(pmf, i: int) -> float:
    """ Kernel lookup that reads zero outside the support """
    if 0 <= i < len(pmf):
        return float(pmf[i])
    return 0.0


def two_transmitter_probability(N: int, params: ModelParams) -> float:
    """
    Probability that exactly two users (new or backlogged) transmit in a frame at backlog N,
    i.e. that the frame is a 2-slot ZigZag frame
    """
    qa = arrival_pmf(N, params)
    qr = retransmit_pmf(N, params)
    return (kernel_at(qa, 2) * kernel_at(qr, 0)
            + kernel_at(qa, 1) * kernel_at(qr, 1)
            + kernel_at(qa, 0) * kernel_at(qr, 2))
