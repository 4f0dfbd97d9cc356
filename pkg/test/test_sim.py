import math

import pytest

from zzaloha.model import validate_params, OutcomeKind
from zzaloha.chain import build_matrix
from zzaloha.stationary import solve_stationary, occupancy_distance
from zzaloha.metrics import compute_report, throughput, report_from_simulation, Provenance
from zzaloha.sim import (make_sim_config, simulate, derive_replication_seed, run_replication, InvalidConfig,
                         TimeAccounting, MASK64)


def strict_pi(M, p_a, q_r):
    params = validate_params(M, p_a, q_r, "zigzag-strict")
    return solve_stationary(build_matrix(params)), params


def test_seed_pinned():
    assert derive_replication_seed(0, 0) == 0xE220A8397B1DCDAF


@pytest.mark.parametrize("master", [0, 42, MASK64, 0x0123456789ABCDEF])
def test_replication_seeds_distinct(master):
    seeds = [derive_replication_seed(master, i) for i in range(10_000)]
    assert len(set(seeds)) == len(seeds)
    assert all(0 <= s <= MASK64 for s in seeds)
    assert derive_replication_seed(master, 7) == seeds[7]


def test_config_defaults_and_errors():
    params = validate_params(5, 0.1, 0.5, "zigzag-strict")
    config = make_sim_config(params, frames=1000)
    assert config.warmup_frames == 100
    assert config.measured_frames == 900
    assert config.time_accounting is TimeAccounting.PER_FRAME
    for bad in [dict(frames=0), dict(frames=10, warmup_frames=10), dict(frames=10, replications=0),
                dict(frames=10, seed=-1), dict(frames=10, seed=MASK64 + 1), dict(frames=10, time_accounting="per-hour"),
                dict(frames="many")]:
        with pytest.raises(InvalidConfig):
            make_sim_config(params, **bad)


def test_simulate_rejects_other_configs():
    with pytest.raises(InvalidConfig):
        simulate({'frames': 10})


def test_single_user():
    params = validate_params(1, 0.3, 0.5, "zigzag-strict")
    result = simulate(make_sim_config(params, frames=100_000, seed=11))
    assert abs(result.throughput_mean - 0.3) <= 3 * result.throughput_stderr + 1e-3
    assert result.mean_delay == 1.0
    assert result.mean_backlog == 0.0
    assert result.frames_by_outcome[OutcomeKind.ZIGZAG.value] == 0
    assert result.frames_by_outcome[OutcomeKind.COLLISION.value] == 0


def test_two_users_never_collide():
    params = validate_params(2, 0.7, 0.6, "zigzag-strict")
    result = simulate(make_sim_config(params, frames=20_000, seed=3))
    assert result.frames_by_outcome[OutcomeKind.COLLISION.value] == 0
    assert result.frames_by_outcome[OutcomeKind.ZIGZAG.value] > 0


def test_conservation():
    params = validate_params(8, 0.2, 0.3, "zigzag-strict")
    stats = run_replication(params, frames=50_000, warmup_frames=5_000, seed=99)
    assert stats.generated == stats.delivered + stats.final_backlog
    assert 0 <= stats.final_backlog <= 8
    assert stats.occupancy.sum() == 45_000
    delivered = int(stats.batch_delivered.sum())
    frames = stats.outcomes
    assert delivered == frames[OutcomeKind.SUCCESS.value] + 2 * frames[OutcomeKind.ZIGZAG.value]
    assert stats.batch_slots.sum() == stats.batch_frames.sum() + frames[OutcomeKind.ZIGZAG.value]


def test_deterministic():
    params = validate_params(10, 0.1, 0.3, "zigzag-strict")
    config = make_sim_config(params, frames=20_000, seed=42, replications=3)
    assert simulate(config).to_dict() == simulate(config).to_dict()


def test_parallel_replications_merge_in_order():
    params = validate_params(6, 0.15, 0.4, "zigzag-strict")
    config = make_sim_config(params, frames=10_000, seed=5, replications=3)
    assert simulate(config, threads=2).to_dict() == simulate(config, threads=1).to_dict()


def test_seeds_change_results():
    params = validate_params(10, 0.1, 0.3, "zigzag-strict")
    a = simulate(make_sim_config(params, frames=20_000, seed=1))
    b = simulate(make_sim_config(params, frames=20_000, seed=2))
    assert a.throughput_mean != b.throughput_mean


def test_per_slot_below_per_frame():
    params = validate_params(10, 0.1, 0.3, "zigzag-strict")
    per_frame = simulate(make_sim_config(params, frames=20_000, seed=8))
    per_slot = simulate(make_sim_config(params, frames=20_000, seed=8, time_accounting="per-slot"))
    assert per_slot.throughput_mean <= per_frame.throughput_mean
    assert per_slot.throughput_mean == pytest.approx(per_frame.throughput_mean / per_frame.slots_per_frame)


def test_occupancy_close_to_strict_chain():
    pi, params = strict_pi(10, 0.1, 0.3)
    result = simulate(make_sim_config(params, frames=200_000, seed=2024))
    assert len(result.empirical_occupancy) == 11
    assert result.empirical_occupancy.sum() == pytest.approx(1.0)
    assert occupancy_distance(result.empirical_occupancy, pi.pi) <= 0.03
    report = compute_report(pi, params)
    assert result.new_packet_throughput_mean == pytest.approx(report.diagnostics['throughput_new_consistent'], rel=0.03)


def test_littles_law_closure():
    params = validate_params(10, 0.1, 0.3, "zigzag-strict")
    result = simulate(make_sim_config(params, frames=200_000, seed=77))
    assert result.mean_backlog == pytest.approx(result.throughput_mean * (result.mean_delay_frames - 1.0), rel=0.02)


def test_report_from_simulation():
    params = validate_params(5, 0.1, 0.5, "zigzag-strict")
    result = simulate(make_sim_config(params, frames=20_000, seed=4))
    report = report_from_simulation(result, params)
    assert report.provenance is Provenance.SIMULATED
    assert report.throughput_backlogged == pytest.approx(result.throughput_mean - result.new_packet_throughput_mean)
    assert report.to_dict()['diagnostics']['seed'] == 4


@pytest.mark.slow
def test_agreement_with_strict_chain():
    pi, params = strict_pi(10, 0.1, 0.3)
    result = simulate(make_sim_config(params, frames=1_000_000, seed=1, replications=8), threads=4)
    assert occupancy_distance(result.empirical_occupancy, pi.pi) <= 0.02
    analytic = throughput(pi, params)
    assert abs(result.throughput_mean - analytic) <= 3 * result.throughput_stderr


@pytest.mark.slow
def test_five_user_throughput():
    pi, params = strict_pi(5, 0.1, 0.5)
    result = simulate(make_sim_config(params, frames=1_000_000, seed=12, replications=8), threads=4)
    assert abs(result.throughput_mean - throughput(pi, params)) <= 3 * result.throughput_stderr
    assert not math.isnan(result.mean_delay)


@pytest.mark.slow
def test_delay_matches_strict_chain():
    pi, params = strict_pi(10, 0.04, 0.5)
    report = compute_report(pi, params)
    result = simulate(make_sim_config(params, frames=1_000_000, seed=3, replications=8), threads=4)
    assert result.delay_frames_stderr > 0
    assert abs(result.mean_delay_frames - report.delay_total) <= 3 * result.delay_frames_stderr
