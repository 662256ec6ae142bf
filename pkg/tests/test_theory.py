"""Credit-assignment checks: closed forms, optima, and urn dynamics.

Oracles: brute trajectory enumeration for the counts, a forward replay of
move words for the window masks, binomial algebra for the uniform-backward
flows, and scipy's beta-binomial for the urn law.
"""

import math

import numpy as np
import pytest
from scipy import stats

from flowlab.envs import make_env, trajectories_to
from flowlab.policy import EnvTable
from flowlab.rng import substream
from flowlab.theory import (
    broken_setting,
    build_setting,
    count_through,
    count_trajectories,
    make_setting,
    maxent_flow_ratio,
    maxent_flows,
    nesting_offenders,
    pascal_row_bound_check,
    polya_exceedance_bound,
    polya_urn_counts,
    run_all_checks,
    substructure_optimum_check,
    tabular_tb_simulate,
    through_mask,
    uniform_flow_equivalence_check,
    _uniform_pb_flows,
)


# ------------------------------------------------------------------ counting


def test_counts_match_enumeration():
    for n in range(1, 7):
        env = make_env("string_pa", n, seq_len=n)
        x = tuple(range(n))
        trajs = trajectories_to(env, x)
        assert len(trajs) == count_trajectories(n)
        for k in range(1, n + 1):
            for a in range(n - k + 1):
                window = x[a : a + k]
                got = sum(
                    any(e.to == window for e in t.steps) for t in trajs
                )
                assert got == count_through(n, k, a)


def test_count_argument_guards():
    with pytest.raises(ValueError):
        count_trajectories(0)
    with pytest.raises(OverflowError):
        count_trajectories(64)
    with pytest.raises(ValueError):
        count_through(5, 0, 0)
    with pytest.raises(ValueError):
        count_through(5, 6, 0)
    with pytest.raises(ValueError):
        count_through(5, 2, 4)
    with pytest.raises(OverflowError):
        count_through(70, 1, 35)


def test_through_mask_matches_forward_replay():
    # Independent oracle: seed position = popcount(word), then replay moves
    # in order, growing an interval over the final string.
    for n in (3, 5, 7):
        size = 1 << (n - 1)
        for k in range(1, n + 1):
            offsets = np.empty(size, dtype=np.int64)
            for word in range(size):
                lo = bin(word).count("1")
                hi = lo + 1
                for t in range(n - 1):
                    if hi - lo >= k:
                        break
                    if (word >> t) & 1:
                        lo -= 1
                    else:
                        hi += 1
                offsets[word] = lo
            for a in range(n - k + 1):
                mask = through_mask(n, k, a)
                assert np.array_equal(mask, offsets == a)


# ------------------------------------------------------------------ settings


def test_build_setting_layout():
    s = build_setting(6, 3, 1)
    assert s.x == (1, 0, 0, 0, 1, 1)
    assert s.x2 == (2, 2, 0, 0, 0, 2)
    assert s.s_star == (0, 0, 0)
    assert (s.n, s.k, s.a, s.a2) == (6, 3, 1, 2)
    assert s.alphabet_size == 3
    assert nesting_offenders(s) == []


def test_make_setting_refusals():
    with pytest.raises(ValueError, match="not unique"):
        make_setting((0, 1), (1, 0))
    with pytest.raises(ValueError, match="equal length"):
        make_setting((0, 1), (0, 1, 1))
    with pytest.raises(ValueError, match="differ"):
        make_setting((0, 1), (0, 1))
    with pytest.raises(ValueError):
        build_setting(4, 4, 0)
    with pytest.raises(ValueError):
        build_setting(6, 3, 4)


def test_broken_setting_offender():
    s = broken_setting()
    assert s.s_star == (0, 0)
    assert nesting_offenders(s) == [(1,)]


# ------------------------------------------------- uniform-backward optimum


@pytest.mark.parametrize(
    "n,k,a,rewards",
    [
        (6, 3, 1, (1.0, 1.0)),
        (6, 3, 2, (1.0, 1.0)),
        (8, 4, 2, (1.0, 1.0)),
        (5, 2, 1, (2.0, 0.5)),
        (7, 3, 2, (0.7, 2.3)),
        (6, 3, 1, (1.0, 0.0)),
    ],
)
def test_maxent_flows_closed_form(n, k, a, rewards):
    # Under the uniform backward policy a terminal's build orders are
    # equally likely, so F(window at offset o) = R * C(m, o) / 2^m with
    # m = n - k. s_star collects both terminals (mirrored offsets); the
    # other windows of x belong to x alone.
    s = build_setting(n, k, a, rewards)
    m = n - k
    f_star, f_rest = maxent_flows(s)
    want_star = (rewards[0] + rewards[1]) * math.comb(m, a) / 2**m
    want_rest = rewards[0] * (2**m - math.comb(m, a)) / 2**m
    assert f_star == pytest.approx(want_star, rel=1e-12)
    assert f_rest == pytest.approx(want_rest, rel=1e-12)


def test_maxent_level_flow_conservation():
    # Every backward trajectory crosses each level exactly once, so the
    # level sums all equal the total reward.
    s = build_setting(6, 3, 1, (1.0, 2.0))
    env = make_env("string_pa", s.alphabet_size, seq_len=s.n)
    table = EnvTable(env)
    F = _uniform_pb_flows(table, {s.x: 1.0, s.x2: 2.0})
    for lv in table.levels:
        assert F[lv].sum() == pytest.approx(3.0, rel=1e-12)


def test_maxent_ratio_report():
    rep = maxent_flow_ratio(6, 3)
    assert rep.expected == pytest.approx(2.0 / 3.0)
    assert rep.ratio == pytest.approx(rep.expected, abs=1e-12)
    assert len(rep.per_placement) == 4
    for a, a2, f_star, f_rest in rep.per_placement:
        assert a2 == 3 - a
        assert f_star > 0.0 and f_rest > 0.0


def test_maxent_hand_case():
    f_star, f_rest = maxent_flows(make_setting((0, 0, 1), (1, 0, 0)))
    assert f_star == pytest.approx(1.0, abs=1e-12)
    assert f_rest == pytest.approx(0.5, abs=1e-12)


# ------------------------------------------------- guide-Markovized optimum


@pytest.mark.parametrize(
    "n,k,a,rewards",
    [(4, 2, 1, (1.0, 1.0)), (6, 3, 1, (0.7, 2.3)), (8, 4, 2, (1.0, 1.0))],
)
def test_substructure_optimum_concentrates(n, k, a, rewards):
    s = build_setting(n, k, a, rewards)
    f_star, f_rest = substructure_optimum_check(s)
    assert f_star == pytest.approx(rewards[0] + rewards[1], abs=1e-9)
    assert abs(f_rest) <= 1e-12


def test_substructure_optimum_refusals():
    with pytest.raises(ValueError, match="does not nest"):
        substructure_optimum_check(broken_setting())
    with pytest.raises(ValueError, match="multi-order"):
        substructure_optimum_check(build_setting(4, 2, 1), kind="string_ar")


# ----------------------------------------------------------------- the urn


def test_polya_urn_counts_match_betabinom():
    trials, steps = 10_000, 12
    counts = polya_urn_counts(trials, steps, 2.0, 3.0, 1.0, substream(0, "theory"))
    observed = np.bincount(counts, minlength=steps + 1)
    expected = trials * np.array(
        [stats.betabinom.pmf(i, steps, 2.0, 3.0) for i in range(steps + 1)]
    )
    assert expected.min() > 20.0
    chi = stats.chisquare(observed, expected * (observed.sum() / expected.sum()))
    assert chi.pvalue > 0.01


def test_simulate_first_step_mass():
    mask = through_mask(8, 4, 2)
    assert float(mask.mean()) == pytest.approx(
        count_through(8, 4, 2) / count_trajectories(8), abs=1e-15
    )
    assert float(mask.mean()) == pytest.approx(0.375)


def test_simulate_rich_get_richer_preseed():
    # Preseeding one through-s_star build order per terminal with almost all
    # of the flow locks the urn onto it.
    s = build_setting(8, 4, 2)
    idx_x = int(np.argmax(through_mask(8, 4, 2)))
    idx_x2 = int(np.argmax(through_mask(8, 4, 2)))
    sim = tabular_tb_simulate(
        s,
        20,
        50,
        substream(1, "theory"),
        epsilon_init=1e-9,
        preseed=((0, idx_x, 10.0), (1, idx_x2, 10.0)),
    )
    assert sim.shape == (50,)
    assert sim.min() >= 0.99


def test_simulate_guards_and_range():
    s = build_setting(8, 4, 2)
    with pytest.raises(ValueError, match="even"):
        tabular_tb_simulate(s, 7, 10, substream(2, "theory"))
    assert tabular_tb_simulate(s, 10, 0, substream(2, "theory")).size == 0
    sim = tabular_tb_simulate(s, 30, 40, substream(3, "theory"))
    assert sim.shape == (40,)
    assert (sim >= 0.0).all() and (sim <= 1.0).all()


def test_simulate_thread_count_invariance(monkeypatch):
    s = build_setting(8, 4, 2)
    monkeypatch.setenv("FLOWLAB_THREADS", "1")
    serial = tabular_tb_simulate(s, 40, 100, substream(4, "theory"))
    monkeypatch.setenv("FLOWLAB_THREADS", "4")
    threaded = tabular_tb_simulate(s, 40, 100, substream(4, "theory"))
    assert np.array_equal(serial, threaded)


def test_exceedance_bound_frozen_values():
    s = build_setting(8, 4, 2)
    assert polya_exceedance_bound(s, 200, 0.2) == pytest.approx(
        0.9999953752710653, rel=1e-12
    )
    assert polya_exceedance_bound(s, 200, 0.4) == pytest.approx(
        0.7027171339412946, rel=1e-12
    )
    assert polya_exceedance_bound(s, 200, 0.6) == pytest.approx(
        0.001249808024196497, rel=1e-9
    )
    assert polya_exceedance_bound(s, 200, 0.8) < 1e-10
    vals = [polya_exceedance_bound(s, 200, p) for p in (0.1, 0.3, 0.5, 0.7)]
    assert vals == sorted(vals, reverse=True)


def test_empirical_exceedance_under_bound():
    s = build_setting(8, 4, 2)
    sim = tabular_tb_simulate(s, 100, 500, substream(5, "theory"))
    for psi in (0.4, 0.6):
        emp = float((sim > psi).mean())
        bound = polya_exceedance_bound(s, 100, psi)
        se = math.sqrt(max(bound * (1 - bound), 0.0) / 500)
        assert emp <= bound + 3 * se


# ------------------------------------------------------------- small checks


def test_pascal_row_bound():
    assert pascal_row_bound_check(30)
    for n in range(1, 31):
        assert math.comb(n, n // 2) <= math.e * 2.0**n / (math.pi * math.sqrt(n))
    with pytest.raises(ValueError):
        pascal_row_bound_check(0)


def test_uniform_flow_equivalence():
    assert uniform_flow_equivalence_check(3, 2)
    assert uniform_flow_equivalence_check(2, 2)
    assert uniform_flow_equivalence_check(1, 2)


# ------------------------------------------------------------ the full suite


def test_run_all_checks_passes():
    results = run_all_checks(
        seed=0,
        sizes=((3, 2), (4, 2)),
        urn_m=50,
        urn_trials=300,
        count_n_max=5,
        pascal_n_max=10,
    )
    assert [r.name for r in results] == [
        "counting",
        "uniform-backward-ratio",
        "uniform-backward-hand-case",
        "substructure-optimum",
        "tabular-first-step",
        "urn-exceedance-bound",
        "binomial-row-bound",
        "uniform-flow-equivalence",
    ]
    for r in results:
        assert r.passed, f"{r.name}: {r.detail}"
        assert r.detail


def test_run_all_checks_violate_flag():
    results = run_all_checks(
        seed=0,
        sizes=((3, 2),),
        urn_m=50,
        urn_trials=200,
        count_n_max=3,
        pascal_n_max=5,
        violate=True,
    )
    by_name = {r.name: r for r in results}
    assert not by_name["substructure-optimum"].passed
    assert "nest" in by_name["substructure-optimum"].detail
    others = [r for r in results if r.name != "substructure-optimum"]
    assert all(r.passed for r in others)
