"""
Retransmission probability that maximizes the stationary throughput
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

from tqdm import tqdm

from zzaloha.model import ModelParams, OutOfRange, validate_params
from zzaloha.chain import build_matrix
from zzaloha.stationary import solve_stationary
from zzaloha.metrics import throughput
from zzaloha import util

logger = logging.getLogger(__name__)

MIN_GRID_STEP = 1e-4
MAX_GRID_STEP = 0.1
REFINE_WIDTH = 1e-6
QR_MIN = 1e-6
QR_MAX = 1.0 - 1e-6
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OptimizationResult:
    qr_star: float
    th_star: float
    trace: List[Tuple[float, float]]
    params: ModelParams

    def to_dict(self):
        return {
            'M': self.params.M,
            'p_a': self.params.p_a,
            'variant': self.params.variant.value,
            'qr_star': self.qr_star,
            'th_star': self.th_star,
            'trace': [{'q_r': q, 'throughput': th} for q, th in self.trace],
        }


def throughput_at(params: ModelParams, q_r: float) -> float:
    p = params.with_qr(q_r)
    return throughput(solve_stationary(build_matrix(p)), p)


def qr_grid(grid_step: float) -> List[float]:
    """ grid_step, 2 grid_step, ..., up to 1 - grid_step """
    count = math.floor((1.0 - 2.0 * grid_step) / grid_step + 1e-9) + 1
    return [round(k * grid_step, 12) for k in range(1, count + 1)]


def golden_section_max(func, lo: float, hi: float, width: float = REFINE_WIDTH) -> Tuple[float, float]:
    """
    Shrink [lo, hi] around a maximum of func until it is narrower than width and return the
    midpoint with its value
    """
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, fd = func(c), func(d)
    while hi - lo > width:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = func(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = func(d)
    x = 0.5 * (lo + hi)
    return x, func(x)


@util.log_timer
def maximize_throughput(M, p_a, variant, grid_step: float = 0.01, threads: int = 1,
                        show_progress: bool = False) -> OptimizationResult:
    """
    Grid search over q_r followed by golden-section refinement around the best grid point
    :param M: User count
    :param p_a: New packet transmission probability
    :param variant: Model variant
    :param grid_step: Grid spacing in [1e-4, 0.1]
    :returns: OptimizationResult, whose trace holds every grid evaluation in q_r order
    """
    if not MIN_GRID_STEP <= grid_step <= MAX_GRID_STEP:
        raise OutOfRange(f"Grid step must be in [{MIN_GRID_STEP}, {MAX_GRID_STEP}], got {grid_step}")
    params = validate_params(M, p_a, 0.5, variant)
    grid = qr_grid(grid_step)
    logger.info(f"Optimizing q_r for {params.variant.value} M={params.M} p_a={params.p_a} over {len(grid)} grid points")

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            values = list(tqdm(executor.map(throughput_at, [params] * len(grid), grid),
                               total=len(grid), desc="q_r grid", disable=not show_progress))
    else:
        values = [throughput_at(params, q) for q in tqdm(grid, desc="q_r grid", disable=not show_progress)]
    trace = list(zip(grid, values))

    best_q, best_th = trace[0]
    for q, th in trace[1:]:
        if th > best_th:
            best_q, best_th = q, th

    lo = max(best_q - grid_step, QR_MIN)
    hi = min(best_q + grid_step, QR_MAX)
    refined_q, refined_th = golden_section_max(lambda q: throughput_at(params, q), lo, hi)
    logger.debug(f"Grid optimum q_r={best_q} Th={best_th}, refined q_r={refined_q} Th={refined_th}")
    if refined_th > best_th:
        best_q, best_th = refined_q, refined_th

    return OptimizationResult(qr_star=best_q, th_star=best_th, trace=trace, params=params.with_qr(best_q))
