"""
Throughput, backlog, delay and drift / stability measures computed from a solved backlog chain
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from zzaloha.model import (ModelParams, Variant, arrival_pmf, retransmit_pmf, kernel_at,
                           two_transmitter_probability)
from zzaloha.chain import build_matrix, TransitionMatrix
from zzaloha.stationary import solve_stationary, StationaryDistribution

logger = logging.getLogger(__name__)


class UndefinedDelay(ArithmeticError):
    """ Little's law delay requested for a zero or negative throughput """
    pass


class Stability(Enum):
    MONOSTABLE = "monostable"
    BISTABLE = "bistable"
    DEGENERATE = "degenerate"


class Provenance(Enum):
    ANALYTIC = "analytic"
    SIMULATED = "simulated"


@dataclass
class MetricsReport:
    """
    Per-frame performance figures. The delays are None when the matching throughput is not
    positive
    """
    throughput_total: float
    avg_backlog: float
    delay_total: Optional[float]
    throughput_new: float
    throughput_backlogged: float
    delay_backlogged: Optional[float]
    params: ModelParams
    provenance: Provenance = Provenance.ANALYTIC
    diagnostics: dict = field(default_factory=dict)

    @property
    def variant(self):
        return self.params.variant

    def to_dict(self):
        return {
            'provenance': self.provenance.value,
            'params': self.params.to_dict(),
            'throughput_total': self.throughput_total,
            'avg_backlog': self.avg_backlog,
            'delay_total': self.delay_total,
            'throughput_new': self.throughput_new,
            'throughput_backlogged': self.throughput_backlogged,
            'delay_backlogged': self.delay_backlogged,
            'diagnostics': dict(self.diagnostics),
        }


@dataclass
class DriftCurve:
    values: np.ndarray
    psucc: np.ndarray
    arrival_rate: np.ndarray
    chain_drift: np.ndarray
    equilibria: List[Tuple[float, str]]
    params: ModelParams

    def to_dict(self):
        return {
            'drift': [float(x) for x in self.values],
            'psucc': [float(x) for x in self.psucc],
            'arrival_rate': [float(x) for x in self.arrival_rate],
            'chain_drift': [float(x) for x in self.chain_drift],
            'equilibria': [{'location': loc, 'kind': kind} for loc, kind in self.equilibria],
        }


def _pi(pi) -> np.ndarray:
    return np.asarray(getattr(pi, 'pi', pi), dtype=float)


def avg_backlog(pi) -> float:
    """ S_B, the mean number of backlogged packets """
    p = _pi(pi)
    return float(p @ np.arange(len(p)))


def throughput(pi, params: ModelParams) -> float:
    """ Th = p_a (M - S_B), packets per frame """
    return params.p_a * (params.M - avg_backlog(pi))


def delay(th: float, sb: float) -> float:
    """ Little's law delay in frames, D = 1 + S_B / Th """
    if th <= 0:
        raise UndefinedDelay(f"Delay is undefined for throughput {th}")
    return 1.0 + sb / th


def _new_packet_terms(N, params):
    qa = arrival_pmf(N, params)
    qr = retransmit_pmf(N, params)
    qa1, qa2 = kernel_at(qa, 1), kernel_at(qa, 2)
    qr0, qr1 = kernel_at(qr, 0), kernel_at(qr, 1)
    published = qa1 + qa2 * qr0
    consistent = qa1 * (qr0 + qr1) + 2.0 * qa2 * qr0
    return published, consistent


def throughput_new(pi, params: ModelParams) -> Tuple[float, dict]:
    """
    Throughput of packets delivered on their first attempt, in the published form
    sum_N pi_N [Qa(1,N) + Qa(2,N) Qr(0,N)]. The second return value holds the form consistent with
    the receiver model, sum_N pi_N [Qa(1,N)(Qr(0,N)+Qr(1,N)) + 2 Qa(2,N) Qr(0,N)], under the key
    'throughput_new_consistent'
    """
    p = _pi(pi)
    published = 0.0
    consistent = 0.0
    for N, weight in enumerate(p):
        a, b = _new_packet_terms(N, params)
        published += weight * a
        consistent += weight * b
    return float(published), {'throughput_new_consistent': float(consistent)}


def backlogged_metrics(th: float, t_new: float, sb: float) -> Tuple[float, Optional[float]]:
    """
    Throughput and Little's law delay of backlogged packets, T_bar = Th - T and
    D_bar = 1 + S_B / T_bar. D_bar is None when T_bar is not positive
    """
    t_bar = th - t_new
    try:
        d_bar = delay(t_bar, sb)
    except UndefinedDelay:
        logger.debug(f"Backlogged delay undefined, backlogged throughput is {t_bar:.3e}")
        d_bar = None
    return t_bar, d_bar


def expected_frame_length(pi, params: ModelParams) -> float:
    """ Mean slots per frame, one plus the stationary probability of a ZigZag frame """
    p = _pi(pi)
    return 1.0 + float(sum(float(w) * two_transmitter_probability(N, params) for N, w in enumerate(p)))


def success_probability(N: int, params: ModelParams) -> float:
    """
    Expected successful transmissions counted by the drift analysis. ZigZag variants count a
    decoded pair as one success, the baseline counts only lone transmissions
    """
    qa = arrival_pmf(N, params)
    qr = retransmit_pmf(N, params)
    qa0, qa1, qa2 = (kernel_at(qa, i) for i in range(3))
    qr0, qr1, qr2 = (kernel_at(qr, i) for i in range(3))
    if params.variant is Variant.ALOHA_BASELINE:
        return qa1 * qr0 + qr1 * qa0
    return (qa1 + qa2) * qr0 + (qr1 + qr2) * qa0


def _resolved_signs(values) -> List[int]:
    """
    Signs of the drift with zeros taking the sign of their left neighbour. Leading zeros take
    the first non-zero sign, an all-zero curve gives all zeros
    """
    raw = [int(np.sign(v)) for v in values]
    first = next((s for s in raw if s != 0), 0)
    signs = []
    prev = first
    for s in raw:
        if s == 0:
            s = prev
        signs.append(s)
        prev = s
    return signs


def find_equilibria(values) -> List[Tuple[float, str]]:
    """
    Locate drift sign changes. A positive to negative crossing is stable, negative to positive is
    unstable, and a curve that starts negative has a stable equilibrium at N = 0
    """
    signs = _resolved_signs(values)
    equilibria = []
    if signs and signs[0] < 0:
        equilibria.append((0.0, "stable"))
    for N in range(len(signs) - 1):
        if signs[N] == signs[N + 1]:
            continue
        a, b = float(values[N]), float(values[N + 1])
        location = N + a / (a - b) if a != b else float(N)
        kind = "stable" if signs[N] > 0 else "unstable"
        equilibria.append((location, kind))
    return equilibria


def drift_curve(params: ModelParams, matrix: TransitionMatrix = None) -> DriftCurve:
    """
    Drift D_N = (M - N) p_a - P_succ(N) for every backlog level, along with the chain-exact
    expected change in backlog and the equilibria of the curve
    """
    if matrix is None:
        matrix = build_matrix(params)
    states = params.states
    arrival_rate = (params.M - states) * params.p_a
    psucc = np.array([success_probability(N, params) for N in states])
    values = arrival_rate - psucc
    return DriftCurve(values=values,
                      psucc=psucc,
                      arrival_rate=arrival_rate,
                      chain_drift=matrix.expected_change(),
                      equilibria=find_equilibria(values),
                      params=params)


def classify_stability(curve) -> Stability:
    """
    Bistable when the drift has at least two stable equilibria, degenerate when it has none
    :param curve: DriftCurve or a plain sequence of drift values
    """
    values = getattr(curve, 'values', curve)
    equilibria = find_equilibria(values)
    stable = sum(1 for _, kind in equilibria if kind == "stable")
    if stable == 0:
        return Stability.DEGENERATE
    if stable >= 2:
        return Stability.BISTABLE
    return Stability.MONOSTABLE


def compute_report(pi: StationaryDistribution, params: ModelParams) -> MetricsReport:
    """
    Assemble every per-frame metric from a solved distribution
    """
    sb = avg_backlog(pi)
    th = throughput(pi, params)
    try:
        d = delay(th, sb)
    except UndefinedDelay:
        d = None
    t_new, diag = throughput_new(pi, params)
    t_bar, d_bar = backlogged_metrics(th, t_new, sb)
    if d_bar is None:
        logger.warning(f"Backlogged delay undefined for {params.variant.value} M={params.M} p_a={params.p_a} q_r={params.q_r}")

    frame_len = expected_frame_length(pi, params)
    diag['expected_frame_length'] = frame_len
    diag['throughput_per_slot'] = th / frame_len
    diag['delay_slots'] = d * frame_len if d is not None else None
    t_bar_consistent = th - diag['throughput_new_consistent']
    diag['throughput_backlogged_consistent'] = t_bar_consistent
    diag['delay_backlogged_consistent'] = 1.0 + sb / t_bar_consistent if t_bar_consistent > 0 else None

    return MetricsReport(throughput_total=th,
                         avg_backlog=sb,
                         delay_total=d,
                         throughput_new=t_new,
                         throughput_backlogged=t_bar,
                         delay_backlogged=d_bar,
                         params=params,
                         provenance=Provenance.ANALYTIC,
                         diagnostics=diag)


@dataclass
class Analysis:
    matrix: TransitionMatrix
    distribution: StationaryDistribution
    report: MetricsReport
    drift: DriftCurve
    stability: Stability

    def to_dict(self):
        return {
            'params': self.report.params.to_dict(),
            'stationary': self.distribution.to_dict(),
            'metrics': self.report.to_dict(),
            'drift': self.drift.to_dict(),
            'stability': self.stability.value,
        }


def analyze(params: ModelParams, method="direct") -> Analysis:
    """
    Build the chain for params, solve it and compute every metric
    """
    matrix = build_matrix(params)
    dist = solve_stationary(matrix, method=method)
    curve = drift_curve(params, matrix)
    return Analysis(matrix=matrix,
                    distribution=dist,
                    report=compute_report(dist, params),
                    drift=curve,
                    stability=classify_stability(curve))


def report_from_simulation(result, params: ModelParams) -> MetricsReport:
    """
    Express a per-frame SimResult in the same terms as the analytic report
    """
    th = result.throughput_mean
    sb = result.mean_backlog
    t_new = result.new_packet_throughput_mean
    t_bar, d_bar = backlogged_metrics(th, t_new, sb)
    return MetricsReport(throughput_total=th,
                         avg_backlog=sb,
                         delay_total=None if math.isnan(result.mean_delay_frames) else result.mean_delay_frames,
                         throughput_new=t_new,
                         throughput_backlogged=t_bar,
                         delay_backlogged=d_bar,
                         params=params,
                         provenance=Provenance.SIMULATED,
                         diagnostics={'seed': result.seed, 'time_accounting': result.time_accounting.value})
