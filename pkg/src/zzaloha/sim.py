"""
Frame by frame Monte Carlo simulation of M users contending for a channel whose receiver
decodes any two simultaneous packets over a 2-slot frame
"""

import bisect
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from zzaloha.model import ModelParams, ValidationError, OutcomeKind, FrameOutcome, binomial_pmf
from zzaloha import util

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
BATCHES = 10
UNIFORM_BLOCK = 65536
# Outcome of a frame indexed by transmitter count, 3 standing for 3 or more
FRAME_OUTCOMES = tuple(FrameOutcome.from_transmitters(k) for k in range(4))


class InvalidConfig(ValidationError):
    pass


class TimeAccounting(Enum):
    PER_FRAME = "per-frame"
    PER_SLOT = "per-slot"

    @classmethod
    def parse(cls, value):
        if isinstance(value, TimeAccounting):
            return value
        try:
            return cls(value)
        except ValueError:
            raise InvalidConfig(f"Unknown time accounting '{value}', expected 'per-frame' or 'per-slot'")


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    frames: int
    warmup_frames: int
    seed: int
    replications: int = 1
    time_accounting: TimeAccounting = TimeAccounting.PER_FRAME

    @property
    def measured_frames(self):
        return self.frames - self.warmup_frames

    def to_dict(self):
        return {
            'params': self.params.to_dict(),
            'frames': self.frames,
            'warmup_frames': self.warmup_frames,
            'seed': self.seed,
            'replications': self.replications,
            'time_accounting': self.time_accounting.value,
        }


def make_sim_config(params: ModelParams, frames, warmup_frames=None, seed=0, replications=1,
                    time_accounting=TimeAccounting.PER_FRAME) -> SimConfig:
    """
    Validate simulation settings. The warmup defaults to 10% of the frames
    """
    try:
        frames = int(frames)
        replications = int(replications)
        seed = int(seed)
    except (TypeError, ValueError) as ex:
        raise InvalidConfig(f"Bad simulation setting: {ex}")
    if frames < 1:
        raise InvalidConfig(f"Need at least one frame, got {frames}")
    if warmup_frames is None:
        warmup_frames = frames // 10
    warmup_frames = int(warmup_frames)
    if not 0 <= warmup_frames < frames:
        raise InvalidConfig(f"Warmup frames must be in [0, {frames}), got {warmup_frames}")
    if replications < 1:
        raise InvalidConfig(f"Need at least one replication, got {replications}")
    if not 0 <= seed <= MASK64:
        raise InvalidConfig(f"Seed must fit in 64 bits, got {seed}")
    return SimConfig(params=params,
                     frames=frames,
                     warmup_frames=warmup_frames,
                     seed=seed,
                     replications=replications,
                     time_accounting=TimeAccounting.parse(time_accounting))


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_replication_seed(master_seed: int, replication_index: int) -> int:
    """
    Stream seed for one replication, the splitmix64 finalizer applied to the master seed advanced
    by (index + 1) golden-ratio increments. The finalizer is a bijection, so distinct indices
    below 2^64 never share a seed
    """
    return _mix64((master_seed + (replication_index + 1) * GOLDEN_GAMMA) & MASK64)


@dataclass
class ReplicationStats:
    """ Raw counters for a single replication, split into measurement batches """
    occupancy: np.ndarray
    outcomes: Dict[str, int]
    batch_frames: np.ndarray
    batch_slots: np.ndarray
    batch_delivered: np.ndarray
    batch_new_delivered: np.ndarray
    batch_delay_slots: np.ndarray
    batch_delay_frames: np.ndarray
    batch_backlog: np.ndarray
    generated: int
    delivered: int
    final_backlog: int

    def throughput(self, accounting, idx=slice(None)):
        denom = self.batch_frames[idx] if accounting is TimeAccounting.PER_FRAME else self.batch_slots[idx]
        return self.batch_delivered[idx].sum() / denom.sum()

    def new_throughput(self, accounting, idx=slice(None)):
        denom = self.batch_frames[idx] if accounting is TimeAccounting.PER_FRAME else self.batch_slots[idx]
        return self.batch_new_delivered[idx].sum() / denom.sum()

    def mean_delay(self, idx=slice(None)):
        count = self.batch_delivered[idx].sum()
        return self.batch_delay_slots[idx].sum() / count if count else math.nan

    def mean_delay_frames(self, idx=slice(None)):
        count = self.batch_delivered[idx].sum()
        return self.batch_delay_frames[idx].sum() / count if count else math.nan

    def mean_backlog(self):
        return self.batch_backlog.sum() / self.batch_frames.sum()


def _cdf_tables(n_max, p):
    tables = []
    for n in range(n_max + 1):
        cdf = list(np.cumsum(binomial_pmf(n, p)))
        cdf[-1] = 1.0
        tables.append(cdf)
    return tables


def run_replication(params: ModelParams, frames: int, warmup_frames: int, seed: int) -> ReplicationStats:
    """
    Simulate one independent run starting from an empty backlog. Transmitter counts are drawn by
    inverse CDF from the binomial kernels, and backlogged users are exchangeable, so the
    retransmitting packets are a uniformly random subset of the backlog
    """
    M = params.M
    rng = np.random.default_rng(seed)
    arrive_tables = _cdf_tables(M, params.p_a)
    arrive_cdf = [arrive_tables[M - N] for N in range(M + 1)]
    retry_cdf = _cdf_tables(M, params.q_r)

    measured = frames - warmup_frames
    n_batches = min(BATCHES, measured)
    batch_frames = np.zeros(n_batches, dtype=np.int64)
    batch_slots = np.zeros(n_batches, dtype=np.int64)
    batch_delivered = np.zeros(n_batches, dtype=np.int64)
    batch_new = np.zeros(n_batches, dtype=np.int64)
    batch_delay_slots = np.zeros(n_batches, dtype=np.int64)
    batch_delay_frames = np.zeros(n_batches, dtype=np.int64)
    batch_backlog = np.zeros(n_batches, dtype=np.int64)
    occupancy = np.zeros(M + 1, dtype=np.int64)
    outcomes = {kind.value: 0 for kind in OutcomeKind}

    # (first slot, first frame) of every backlogged packet
    backlog = []
    slot = 0
    generated = 0
    delivered = 0
    uniforms = []
    pos = UNIFORM_BLOCK

    for t in range(frames):
        if pos >= len(uniforms):
            uniforms = rng.random((UNIFORM_BLOCK, 4)).tolist()
            pos = 0
        u0, u1, u2, u3 = uniforms[pos]
        pos += 1

        N = len(backlog)
        a = min(bisect.bisect_right(arrive_cdf[N], u0), M - N)
        r = min(bisect.bisect_right(retry_cdf[N], u1), N)
        generated += a
        outcome = FRAME_OUTCOMES[min(a + r, 3)]
        length = outcome.slots_consumed
        last_slot = slot + length - 1

        departed = []
        if outcome.kind is OutcomeKind.COLLISION:
            backlog.extend((slot, t) for _ in range(a))
        elif outcome.kind is not OutcomeKind.IDLE:
            departed.extend((slot, t) for _ in range(a))
            for u in (u2, u3)[:r]:
                idx = int(u * len(backlog))
                backlog[idx], backlog[-1] = backlog[-1], backlog[idx]
                departed.append(backlog.pop())

        delivered += len(departed)
        slot += length

        if t < warmup_frames:
            continue
        b = (t - warmup_frames) * n_batches // measured
        occupancy[N] += 1
        outcomes[outcome.kind.value] += 1
        batch_frames[b] += 1
        batch_slots[b] += length
        batch_backlog[b] += N
        if departed:
            batch_delivered[b] += len(departed)
            if outcome.kind is not OutcomeKind.COLLISION:
                batch_new[b] += a
            for first_slot, first_frame in departed:
                batch_delay_slots[b] += last_slot - first_slot + 1
                batch_delay_frames[b] += t - first_frame + 1

    return ReplicationStats(occupancy=occupancy,
                            outcomes=outcomes,
                            batch_frames=batch_frames,
                            batch_slots=batch_slots,
                            batch_delivered=batch_delivered,
                            batch_new_delivered=batch_new,
                            batch_delay_slots=batch_delay_slots,
                            batch_delay_frames=batch_delay_frames,
                            batch_backlog=batch_backlog,
                            generated=generated,
                            delivered=delivered,
                            final_backlog=len(backlog))


@dataclass
class SimResult:
    empirical_occupancy: np.ndarray
    throughput_mean: float
    throughput_stderr: float
    new_packet_throughput_mean: float
    mean_delay: float
    delay_stderr: float
    mean_delay_frames: float
    delay_frames_stderr: float
    mean_backlog: float
    frames_by_outcome: Dict[str, int]
    seed: int
    time_accounting: TimeAccounting
    measured_frames: int
    slots_per_frame: float
    conservation: Dict[str, int] = field(default_factory=dict)
    analytic_compare: Optional[dict] = None

    def to_dict(self):
        d = {
            'seed': self.seed,
            'time_accounting': self.time_accounting.value,
            'measured_frames': self.measured_frames,
            'empirical_occupancy': [float(x) for x in self.empirical_occupancy],
            'throughput_mean': self.throughput_mean,
            'throughput_stderr': self.throughput_stderr,
            'new_packet_throughput_mean': self.new_packet_throughput_mean,
            'mean_delay': _finite_or_none(self.mean_delay),
            'delay_stderr': self.delay_stderr,
            'mean_delay_frames': _finite_or_none(self.mean_delay_frames),
            'delay_frames_stderr': self.delay_frames_stderr,
            'mean_backlog': self.mean_backlog,
            'slots_per_frame': self.slots_per_frame,
            'frames_by_outcome': dict(self.frames_by_outcome),
            'conservation': dict(self.conservation),
        }
        if self.analytic_compare is not None:
            d['analytic_compare'] = self.analytic_compare
        return d


def _finite_or_none(x):
    return None if math.isnan(x) else x


def _stderr(samples: List[float]) -> float:
    samples = np.asarray([s for s in samples if not math.isnan(s)], dtype=float)
    if len(samples) < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(len(samples)))


def _merge(config: SimConfig, reps: List[ReplicationStats]) -> SimResult:
    acc = config.time_accounting
    if len(reps) >= 2:
        th_samples = [r.throughput(acc) for r in reps]
        delay_samples = [r.mean_delay() for r in reps]
        delay_frame_samples = [r.mean_delay_frames() for r in reps]
    else:
        # Batch means within the single run
        only = reps[0]
        th_samples = [only.throughput(acc, b) for b in range(len(only.batch_frames))]
        delay_samples = [only.mean_delay(b) for b in range(len(only.batch_frames))]
        delay_frame_samples = [only.mean_delay_frames(b) for b in range(len(only.batch_frames))]

    occupancy = np.mean([r.occupancy / r.occupancy.sum() for r in reps], axis=0)
    outcomes = {kind.value: int(sum(r.outcomes[kind.value] for r in reps)) for kind in OutcomeKind}
    total_frames = sum(int(r.batch_frames.sum()) for r in reps)
    total_slots = sum(int(r.batch_slots.sum()) for r in reps)

    return SimResult(empirical_occupancy=occupancy,
                     throughput_mean=float(np.mean([r.throughput(acc) for r in reps])),
                     throughput_stderr=_stderr(th_samples),
                     new_packet_throughput_mean=float(np.mean([r.new_throughput(acc) for r in reps])),
                     mean_delay=float(np.nanmean([r.mean_delay() for r in reps])),
                     delay_stderr=_stderr(delay_samples),
                     mean_delay_frames=float(np.nanmean([r.mean_delay_frames() for r in reps])),
                     delay_frames_stderr=_stderr(delay_frame_samples),
                     mean_backlog=float(np.mean([r.mean_backlog() for r in reps])),
                     frames_by_outcome=outcomes,
                     seed=config.seed,
                     time_accounting=acc,
                     measured_frames=config.measured_frames,
                     slots_per_frame=total_slots / total_frames,
                     conservation={
                         'generated': sum(r.generated for r in reps),
                         'delivered': sum(r.delivered for r in reps),
                         'final_backlog': sum(r.final_backlog for r in reps),
                     })


def _run_indexed(config: SimConfig, index: int) -> ReplicationStats:
    seed = derive_replication_seed(config.seed, index)
    logger.debug(f"Replication {index} using stream seed {seed}")
    return run_replication(config.params, config.frames, config.warmup_frames, seed)


@util.log_timer
def simulate(config: SimConfig, threads: int = 1, show_progress: bool = False) -> SimResult:
    """
    Run every replication of config and merge them in replication order. Replications are
    independent, so with threads > 1 they run in separate processes
    """
    if not isinstance(config, SimConfig):
        raise InvalidConfig(f"Expected a SimConfig, got {type(config).__name__}")
    logger.info(f"Simulating {config.replications} replication(s) of {config.frames} frames, "
                f"M={config.params.M} p_a={config.params.p_a} q_r={config.params.q_r}")
    indices = range(config.replications)
    if threads > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            futures = [executor.submit(_run_indexed, config, i) for i in indices]
            reps = [fut.result() for fut in tqdm(futures, desc="Replications", disable=not show_progress)]
    else:
        reps = [_run_indexed(config, i) for i in tqdm(indices, desc="Replications", disable=not show_progress)]
    return _merge(config, reps)
