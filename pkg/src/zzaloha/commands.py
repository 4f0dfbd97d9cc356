"""
Implementations of the command line subcommands. Each takes the parsed flags as keyword
arguments, overlays them on an optional config file and writes its results to disk
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

from tqdm import tqdm

from zzaloha.model import (ModelParams, Variant, ValidationError, OutOfRange, validate_params, ALL_VARIANTS)
from zzaloha.chain import build_matrix, matrix_to_csv
from zzaloha.stationary import solve_stationary, occupancy_distance
from zzaloha.metrics import analyze, compute_report, drift_curve, classify_stability, report_from_simulation
from zzaloha.sim import make_sim_config, simulate, TimeAccounting
from zzaloha.optimize import maximize_throughput
from zzaloha import util

logger = logging.getLogger(__name__)

SWEEP_HEADERS = ["variant", "axis_value", "throughput", "avg_backlog", "delay", "throughput_new",
                 "throughput_backlogged", "delay_backlogged"]
STABILITY_HEADERS = ["variant", "qr", "N", "drift", "psucc", "arrival_rate"]
MAX_SWEEP_POINTS = 100_000


class InvalidSweep(ValidationError):
    pass


def _require(conf, key):
    value = conf.get(key)
    if value is None:
        raise ValidationError(f"Missing required setting '{key}' (give the flag or put it in the config file)")
    return value


def _params_from(conf, variant=None) -> ModelParams:
    return validate_params(_require(conf, 'users'),
                           _require(conf, 'pa'),
                           _require(conf, 'qr'),
                           variant or conf.get('variant') or Variant.ZIGZAG_PAPER.value)


def _variants(value) -> List[Variant]:
    if not value:
        return list(ALL_VARIANTS)
    return [Variant.parse(v) for v in util.parse_list(value, cast=str)]


def _output(conf, default_name) -> Path:
    out = conf.get('output')
    return Path(out) if out else util.default_output(default_name)


def _log_elapsed(name, start_time):
    logger.info(f"Total running time of {name} subcommand is: {util.format_elapsed(time.perf_counter() - start_time)}")


def cmd_solve(**kwargs) -> int:
    """
    Solve a single model and write pi, the metrics report, the drift curve and the stability
    verdict as JSON
    """
    start = time.perf_counter()
    conf = util.load_conf(kwargs.get('config'), **kwargs)
    params = _params_from(conf)
    analysis = analyze(params, method=conf.get('method', 'direct'))
    out = _output(conf, "solve.json")
    util.write_json(out, analysis.to_dict())

    if conf.get('matrix_csv'):
        with util.atomic_output(conf['matrix_csv']) as fh:
            matrix_to_csv(analysis.matrix, fh)
        logger.info(f"Wrote transition matrix to {conf['matrix_csv']}")

    rep = analysis.report
    logger.info(f"{params.variant.value}: Th={rep.throughput_total:.6f} S_B={rep.avg_backlog:.6f} "
                f"D={rep.delay_total} D_bar={rep.delay_backlogged} stability={analysis.stability.value}")
    _log_elapsed("solve", start)
    return 0


@dataclass
class SweepSpec:
    axis: str
    start: float
    stop: float
    step: float
    fixed: dict
    variants: List[Variant]
    assumptions: List[str] = field(default_factory=list)

    def points(self) -> List[float]:
        count = math.floor((self.stop - self.start) / self.step + 1e-9)
        return [round(self.start + k * self.step, 12) for k in range(count + 1)]

    def params_at(self, variant: Variant, value: float) -> ModelParams:
        pa = value if self.axis == "p_a" else self.fixed['p_a']
        qr = value if self.axis == "q_r" else self.fixed['q_r']
        return validate_params(self.fixed['M'], pa, qr, variant)


def make_sweep_spec(axis, start, stop, step, M, p_a=None, q_r=None, variants=None, assumptions=()) -> SweepSpec:
    """
    Validate sweep settings. The swept parameter's fixed value is ignored
    """
    axis = {'pa': 'p_a', 'p_a': 'p_a', 'qr': 'q_r', 'q_r': 'q_r'}.get(str(axis))
    if axis is None:
        raise InvalidSweep("Sweep axis must be 'p_a' or 'q_r'")
    try:
        start, stop, step = float(start), float(stop), float(step)
    except (TypeError, ValueError):
        raise InvalidSweep(f"Sweep start, stop and step must be numbers")
    if not 0.0 < start <= stop < 1.0:
        raise InvalidSweep(f"Sweep range must satisfy 0 < start <= stop < 1, got start={start} stop={stop}")
    if step <= 0:
        raise InvalidSweep(f"Sweep step must be positive, got {step}")
    if (stop - start) / step > MAX_SWEEP_POINTS:
        raise InvalidSweep(f"Sweep has more than {MAX_SWEEP_POINTS} steps")
    fixed = {'M': M, 'p_a': p_a, 'q_r': q_r}
    other = 'q_r' if axis == 'p_a' else 'p_a'
    if fixed[other] is None:
        raise InvalidSweep(f"Sweeping {axis} needs a fixed value for {other}")
    # Validate the fixed values once, up front
    validate_params(M, p_a if p_a is not None else start, q_r if q_r is not None else start, Variant.ZIGZAG_PAPER)
    return SweepSpec(axis=axis, start=start, stop=stop, step=step, fixed=fixed,
                     variants=_variants(variants), assumptions=list(assumptions or []))


def _sweep_point(params: ModelParams) -> dict:
    dist = solve_stationary(build_matrix(params))
    return compute_report(dist, params).to_dict()


def run_sweep(spec: SweepSpec, threads: int = 1, show_progress: bool = False) -> List[Tuple[Variant, float, dict]]:
    """
    Evaluate every (axis point, variant) pair, returning rows ordered by axis value then variant
    """
    tasks = [(v, x, spec.params_at(v, x)) for x in spec.points() for v in spec.variants]
    params = [t[2] for t in tasks]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            reports = list(tqdm(executor.map(_sweep_point, params, chunksize=16),
                                total=len(params), desc="Sweep", disable=not show_progress))
    else:
        reports = [_sweep_point(p) for p in tqdm(params, desc="Sweep", disable=not show_progress)]
    return [(v, x, rep) for (v, x, _), rep in zip(tasks, reports)]


def cmd_sweep(**kwargs) -> int:
    """
    Sweep p_a or q_r for a set of variants and write one CSV row per (axis point, variant)
    """
    start_time = time.perf_counter()
    conf = util.load_conf(kwargs.get('config'), **kwargs)
    spec = make_sweep_spec(axis=_require(conf, 'axis'),
                           start=_require(conf, 'start'),
                           stop=_require(conf, 'stop'),
                           step=_require(conf, 'step'),
                           M=_require(conf, 'users'),
                           p_a=conf.get('pa'),
                           q_r=conf.get('qr'),
                           variants=conf.get('variants'),
                           assumptions=conf.get('assumptions'))
    logger.info(f"Sweeping {spec.axis} over {len(spec.points())} points for {', '.join(v.value for v in spec.variants)}")
    rows = run_sweep(spec, threads=conf.get('threads') or 1, show_progress=not conf.get('no_progress', False))

    out = _output(conf, "sweep.csv")
    fixed = " ".join(f"{k}={v}" for k, v in spec.fixed.items() if k != spec.axis)
    comments = [f"fixed: {fixed} axis={spec.axis}"]
    comments.extend(f"assumption: {a}" for a in spec.assumptions)
    with util.atomic_output(out) as fh:
        writer = util.CsvWriter(fh, SWEEP_HEADERS, comments=comments)
        for variant, x, rep in rows:
            writer.log({
                'variant': variant.value,
                'axis_value': x,
                'throughput': rep['throughput_total'],
                'avg_backlog': rep['avg_backlog'],
                'delay': rep['delay_total'],
                'throughput_new': rep['throughput_new'],
                'throughput_backlogged': rep['throughput_backlogged'],
                'delay_backlogged': rep['delay_backlogged'],
            })
    logger.info(f"Wrote {len(rows)} sweep rows to {out}")
    _log_elapsed("sweep", start_time)
    return 0


def analytic_compare(result, params: ModelParams) -> dict:
    """
    Distance from the simulated occupancy to the analytic pi of both ZigZag chains, and the relative
    error of the simulated throughput against each chain's throughput in the same time unit
    """
    comparison = {}
    for variant in (Variant.ZIGZAG_PAPER, Variant.ZIGZAG_STRICT):
        p = params.with_variant(variant)
        dist = solve_stationary(build_matrix(p))
        rep = compute_report(dist, p)
        th = rep.throughput_total
        if result.time_accounting is TimeAccounting.PER_SLOT:
            th = rep.diagnostics['throughput_per_slot']
        comparison[variant.value] = {
            'tv_distance': occupancy_distance(result.empirical_occupancy, dist.pi),
            'analytic_throughput': th,
            'relative_throughput_error': (result.throughput_mean - th) / th,
        }
    return comparison


def _write_histograms(path, result):
    with util.atomic_output(path) as fh:
        writer = util.CsvWriter(fh, ["histogram", "key", "value"])
        for N, frac in enumerate(result.empirical_occupancy):
            writer.log({'histogram': 'occupancy', 'key': N, 'value': float(frac)})
        for kind, count in result.frames_by_outcome.items():
            writer.log({'histogram': 'outcome', 'key': kind, 'value': count})
    logger.info(f"Wrote histograms to {path}")


def cmd_simulate(**kwargs) -> int:
    """
    Run the Monte Carlo simulator and write the SimResult as JSON
    """
    start_time = time.perf_counter()
    conf = util.load_conf(kwargs.get('config'), **kwargs)
    params = _params_from(conf, variant=Variant.ZIGZAG_STRICT)
    config = make_sim_config(params,
                             frames=_require(conf, 'frames'),
                             warmup_frames=conf.get('warmup'),
                             seed=conf.get('seed', 0),
                             replications=conf.get('replications') or 1,
                             time_accounting=conf.get('accounting') or TimeAccounting.PER_FRAME.value)
    result = simulate(config, threads=conf.get('threads') or 1, show_progress=not conf.get('no_progress', False))
    if conf.get('analytic_compare'):
        result.analytic_compare = analytic_compare(result, params)

    out = _output(conf, "simulate.json")
    data = {'config': config.to_dict()}
    data.update(result.to_dict())
    data['metrics'] = report_from_simulation(result, params).to_dict()
    util.write_json(out, data)
    if conf.get('histogram_csv'):
        _write_histograms(conf['histogram_csv'], result)
    logger.info(f"Simulated throughput {result.throughput_mean:.6f} +/- {result.throughput_stderr:.6f}, "
                f"mean delay {result.mean_delay:.4f} slots")
    _log_elapsed("simulate", start_time)
    return 0


def stability_table(M, p_a, qr_values, variants):
    """
    Drift curves and verdicts for every (variant, q_r) pair, in the order given
    """
    table = []
    for variant in variants:
        for qr in qr_values:
            params = validate_params(M, p_a, qr, variant)
            curve = drift_curve(params)
            table.append((params, curve, classify_stability(curve)))
    return table


def cmd_stability(**kwargs) -> int:
    """
    Write drift curves for each (variant, q_r) with a trailing summary of equilibria and verdicts
    """
    start_time = time.perf_counter()
    conf = util.load_conf(kwargs.get('config'), **kwargs)
    qr_values = util.parse_list(_require(conf, 'qr'))
    if not qr_values:
        raise OutOfRange("Need at least one q_r value")
    table = stability_table(_require(conf, 'users'), _require(conf, 'pa'), qr_values, _variants(conf.get('variants')))

    out = _output(conf, "stability.csv")
    comments = [f"assumption: {a}" for a in util.parse_list(conf.get('assumptions'), cast=str)]
    with util.atomic_output(out) as fh:
        writer = util.CsvWriter(fh, STABILITY_HEADERS, comments=comments)
        for params, curve, _ in table:
            for N in params.states:
                writer.log({
                    'variant': params.variant.value,
                    'qr': params.q_r,
                    'N': int(N),
                    'drift': float(curve.values[N]),
                    'psucc': float(curve.psucc[N]),
                    'arrival_rate': float(curve.arrival_rate[N]),
                })
        fh.write("# summary: variant,qr,verdict,stable_equilibria,equilibria\n")
        for params, curve, verdict in table:
            eqs = ";".join(f"{kind}@{loc:.6f}" for loc, kind in curve.equilibria)
            stable = sum(1 for _, kind in curve.equilibria if kind == "stable")
            fh.write(f"# summary: {params.variant.value},{params.q_r!r},{verdict.value},{stable},{eqs}\n")
            logger.info(f"{params.variant.value} q_r={params.q_r}: {verdict.value} ({eqs})")
    logger.info(f"Wrote stability table to {out}")
    _log_elapsed("stability", start_time)
    return 0


def cmd_optimize(**kwargs) -> int:
    """
    Maximize throughput over q_r and write the optimum with the full grid trace as JSON
    """
    start_time = time.perf_counter()
    conf = util.load_conf(kwargs.get('config'), **kwargs)
    result = maximize_throughput(_require(conf, 'users'),
                                 _require(conf, 'pa'),
                                 conf.get('variant') or Variant.ZIGZAG_PAPER.value,
                                 grid_step=float(conf.get('grid_step') or 0.01),
                                 threads=conf.get('threads') or 1,
                                 show_progress=not conf.get('no_progress', False))
    out = _output(conf, "optimize.json")
    util.write_json(out, result.to_dict())
    logger.info(f"Optimal q_r={result.qr_star:.6f} with throughput {result.th_star:.6f}")
    _log_elapsed("optimize", start_time)
    return 0
