"""
Backlog transition matrices for the three model variants. The chain is indexed by frame, so a
2-slot ZigZag frame is still a single transition
"""

import logging
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from zzaloha.model import (ModelParams, Variant, VariantMismatch, arrival_pmf, retransmit_pmf,
                           p_zigzag, kernel_at)

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TransitionMatrix:
    """
    (M+1) x (M+1) row-stochastic matrix, entries[N, N'] is the probability of moving from
    backlog N to backlog N' in one frame. The entries array is marked read-only
    """
    entries: np.ndarray
    variant: Variant
    params: ModelParams

    @property
    def size(self):
        return self.entries.shape[0]

    def row_sum_error(self):
        return float(np.max(np.abs(self.entries.sum(axis=1) - 1.0)))

    def expected_change(self) -> np.ndarray:
        """ Chain-exact drift, sum over i of i * P[N, N+i] for every N """
        states = np.arange(self.size)
        return self.entries @ states - states


def _require(params: ModelParams, variant: Variant):
    if params.variant is not variant:
        raise VariantMismatch(f"Expected parameters for variant {variant.value}, got {params.variant.value}")


def _finish(P, params):
    P.setflags(write=False)
    tm = TransitionMatrix(entries=P, variant=params.variant, params=params)
    err = tm.row_sum_error()
    if err > ROW_SUM_TOL:
        logger.warning(f"{params.variant.value} matrix for M={params.M} has a row sum off by {err:.3e}")
    else:
        logger.debug(f"Built {params.variant.value} matrix for M={params.M}, max row sum error {err:.3e}")
    return tm


def _zigzag_rows(params: ModelParams, strict: bool) -> np.ndarray:
    M = params.M
    P = np.zeros((M + 1, M + 1))
    for N in range(M + 1):
        qa = arrival_pmf(N, params)
        qr = retransmit_pmf(N, params)
        qa0, qa1, qa2 = (kernel_at(qa, i) for i in range(3))
        qr0, qr1, qr2 = (kernel_at(qr, i) for i in range(3))
        # Tails instead of 1 - qr0 - qr1 so no entry can dip below zero from cancellation
        qr_ge1 = float(qr[1:].sum())
        qr_ge2 = float(qr[2:].sum())
        qr_not12 = qr0 + float(qr[3:].sum())

        for i in range(3, M - N + 1):
            P[N, N + i] = qa[i]
        if N + 1 <= M:
            P[N, N + 1] = qa1 * qr_ge2
        if N + 2 <= M:
            P[N, N + 2] = qa2 * qr_ge1

        stay = qa0 * qr_not12 + qr0 * qa1 + qr0 * qa2
        down1 = qa0 * qr1
        if strict:
            # One new plus one backlogged packet is a ZigZag frame and both are decoded
            down1 += qa1 * qr1
        else:
            stay += qr1 * qa1
        P[N, N] = stay
        if N >= 1:
            P[N, N - 1] = down1
        if N >= 2:
            P[N, N - 2] = qa0 * p_zigzag(N, params)
    return P


def build_zigzag_paper(params: ModelParams) -> TransitionMatrix:
    """
    Transition matrix with the published ZigZag transition probabilities, in which a frame
    carrying one new and one backlogged packet leaves the backlog unchanged
    """
    _require(params, Variant.ZIGZAG_PAPER)
    return _finish(_zigzag_rows(params, strict=False), params)


def build_zigzag_strict(params: ModelParams) -> TransitionMatrix:
    """
    Transition matrix matching the receiver behaviour exactly: any two simultaneous packets are
    decoded, so one new plus one backlogged packet lowers the backlog by one
    """
    _require(params, Variant.ZIGZAG_STRICT)
    return _finish(_zigzag_rows(params, strict=True), params)


def build_aloha_baseline(params: ModelParams) -> TransitionMatrix:
    """
    Classic slotted Aloha backlog chain, where only a lone transmission succeeds
    """
    _require(params, Variant.ALOHA_BASELINE)
    M = params.M
    P = np.zeros((M + 1, M + 1))
    for N in range(M + 1):
        qa = arrival_pmf(N, params)
        qr = retransmit_pmf(N, params)
        qa0, qa1 = kernel_at(qa, 0), kernel_at(qa, 1)
        qr0, qr1 = kernel_at(qr, 0), kernel_at(qr, 1)
        for i in range(2, M - N + 1):
            P[N, N + i] = qa[i]
        if N + 1 <= M:
            P[N, N + 1] = qa1 * float(qr[1:].sum())
        P[N, N] = qa1 * qr0 + qa0 * (qr0 + float(qr[2:].sum()))
        if N >= 1:
            P[N, N - 1] = qa0 * qr1
    return _finish(P, params)


BUILDERS = {
    Variant.ZIGZAG_PAPER: build_zigzag_paper,
    Variant.ZIGZAG_STRICT: build_zigzag_strict,
    Variant.ALOHA_BASELINE: build_aloha_baseline,
}


def build_matrix(params: ModelParams) -> TransitionMatrix:
    return BUILDERS[params.variant](params)


def is_irreducible(P) -> bool:
    """
    True if every state can reach every other state through positive entries
    """
    entries = np.asarray(getattr(P, 'entries', P))
    n = entries.shape[0]
    adj = entries > 0
    for start in range(n):
        seen = np.zeros(n, dtype=bool)
        seen[start] = True
        frontier = [start]
        while frontier:
            nxt = np.flatnonzero(adj[frontier].any(axis=0) & ~seen)
            seen[nxt] = True
            frontier = list(nxt)
        if not seen.all():
            return False
    return True


def matrix_to_csv(P: TransitionMatrix, fh: TextIO):
    """
    Write one matrix row per line, full precision
    """
    for row in P.entries:
        fh.write(",".join(repr(float(x)) for x in row) + "\n")
