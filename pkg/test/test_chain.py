import itertools

import numpy as np
import pytest

from zzaloha.model import validate_params, Variant, VariantMismatch, q_arrive, q_retransmit
from zzaloha.chain import (build_zigzag_paper, build_zigzag_strict, build_aloha_baseline, build_matrix,
                           is_irreducible, matrix_to_csv)

GRID = list(itertools.product([1, 2, 5, 10, 50], [0.01, 0.1, 0.5, 0.9], [0.01, 0.3, 0.8, 0.99], list(Variant)))


@pytest.mark.parametrize("M,p_a,q_r,variant", GRID)
def test_rows_stochastic_and_banded(M, p_a, q_r, variant):
    P = build_matrix(validate_params(M, p_a, q_r, variant)).entries
    assert P.shape == (M + 1, M + 1)
    assert np.all(P >= 0) and np.all(P <= 1)
    assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-12
    max_down = 2 if variant.is_zigzag else 1
    for N in range(M + 1):
        assert np.all(P[N, :max(N - max_down, 0)] == 0)


def test_matrix_is_read_only():
    P = build_zigzag_paper(validate_params(3, 0.2, 0.5, "zigzag-paper"))
    with pytest.raises(ValueError):
        P.entries[0, 0] = 0.5


def test_variant_mismatch():
    p = validate_params(3, 0.2, 0.5, "zigzag-paper")
    with pytest.raises(VariantMismatch):
        build_zigzag_strict(p)
    with pytest.raises(VariantMismatch):
        build_aloha_baseline(p)
    with pytest.raises(VariantMismatch):
        build_zigzag_paper(p.with_variant("aloha-baseline"))


def test_zigzag_paper_single_user():
    P = build_zigzag_paper(validate_params(1, 0.3, 0.5, "zigzag-paper")).entries
    np.testing.assert_allclose(P, [[1.0, 0.0], [0.5, 0.5]], atol=1e-15)


def test_strict_equals_paper_for_single_user():
    paper = build_zigzag_paper(validate_params(1, 0.7, 0.2, "zigzag-paper")).entries
    strict = build_zigzag_strict(validate_params(1, 0.7, 0.2, "zigzag-strict")).entries
    np.testing.assert_array_equal(paper, strict)


def test_strict_vs_paper_two_users():
    paper = build_zigzag_paper(validate_params(2, 0.5, 0.5, "zigzag-paper")).entries
    strict = build_zigzag_strict(validate_params(2, 0.5, 0.5, "zigzag-strict")).entries
    assert strict[1, 0] == pytest.approx(0.5)
    assert paper[1, 0] == pytest.approx(0.25)


def test_zigzag_paper_entries_match_kernel_formula():
    p = validate_params(6, 0.2, 0.4, "zigzag-paper")
    P = build_zigzag_paper(p).entries

    def qa(i, N):
        return q_arrive(i, N, p) if 0 <= i <= 6 - N else 0.0

    def qr(i, N):
        return q_retransmit(i, N, p) if 0 <= i <= N else 0.0

    for N in range(7):
        for i in range(3, 7 - N):
            assert P[N, N + i] == pytest.approx(qa(i, N), abs=1e-15)
        if N + 1 <= 6:
            assert P[N, N + 1] == pytest.approx(qa(1, N) * (1 - qr(0, N) - qr(1, N)), abs=1e-15)
        if N + 2 <= 6:
            assert P[N, N + 2] == pytest.approx(qa(2, N) * (1 - qr(0, N)), abs=1e-15)
        stay = qa(0, N) * (1 - qr(1, N) - qr(2, N)) + (qr(1, N) + qr(0, N)) * qa(1, N) + qr(0, N) * qa(2, N)
        assert P[N, N] == pytest.approx(stay, abs=1e-15)
        if N >= 1:
            assert P[N, N - 1] == pytest.approx(qa(0, N) * qr(1, N), abs=1e-15)
        if N >= 2:
            assert P[N, N - 2] == pytest.approx(qa(0, N) * qr(2, N), abs=1e-15)


@pytest.mark.parametrize("M,p_a,q_r", [(4, 0.3, 0.6), (10, 0.04, 0.8), (25, 0.1, 0.2)])
def test_strict_moves_single_pair_mass(M, p_a, q_r):
    paper_p = validate_params(M, p_a, q_r, "zigzag-paper")
    paper = build_zigzag_paper(paper_p).entries
    strict = build_zigzag_strict(paper_p.with_variant("zigzag-strict")).entries
    diff = strict - paper
    for N in range(M + 1):
        moved = q_arrive(1, N, paper_p) * q_retransmit(1, N, paper_p) if 1 <= N < M else 0.0
        expected = np.zeros(M + 1)
        if N >= 1:
            expected[N - 1] = moved
            expected[N] = -moved
        np.testing.assert_allclose(diff[N], expected, atol=1e-15)


def test_aloha_baseline_examples():
    P = build_aloha_baseline(validate_params(1, 0.3, 0.5, "aloha-baseline")).entries
    np.testing.assert_allclose(P, [[1.0, 0.0], [0.5, 0.5]], atol=1e-15)
    P2 = build_aloha_baseline(validate_params(2, 0.5, 0.5, "aloha-baseline")).entries
    assert P2[0, 2] == pytest.approx(0.25)
    assert P2[0, 1] == 0.0
    assert P2[0, 0] == pytest.approx(0.75)


@pytest.mark.parametrize("M,p_a,q_r,variant", [g for g in GRID if g[0] >= 5])
def test_irreducible_when_collisions_possible(M, p_a, q_r, variant):
    assert is_irreducible(build_matrix(validate_params(M, p_a, q_r, variant)))


def test_small_zigzag_chains_absorb_at_zero():
    for variant in ("zigzag-paper", "zigzag-strict"):
        P = build_matrix(validate_params(2, 0.4, 0.4, variant))
        assert P.entries[0, 0] == pytest.approx(1.0)
        assert not is_irreducible(P)
    assert is_irreducible(build_matrix(validate_params(2, 0.4, 0.4, "aloha-baseline")))
    assert is_irreducible(build_matrix(validate_params(3, 0.4, 0.4, "zigzag-paper")))


def test_irreducible_on_plain_arrays():
    assert is_irreducible(np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert not is_irreducible(np.eye(3))


def test_matrix_csv(tmp_path):
    P = build_matrix(validate_params(3, 0.2, 0.5, "zigzag-strict"))
    out = tmp_path / "matrix.csv"
    with open(out, "w") as fh:
        matrix_to_csv(P, fh)
    rows = [[float(x) for x in line.split(",")] for line in out.read_text().splitlines()]
    np.testing.assert_array_equal(np.array(rows), P.entries)
