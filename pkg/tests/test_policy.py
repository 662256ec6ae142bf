"""Policy heads, the env table, samplers, and the exact DP, all checked
against brute trajectory enumeration on small graphs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowlab import (
    EnumerationBudgetError,
    EnvTable,
    FlowModel,
    TabularTrajectoryFlow,
    forward_dp,
    make_env,
    sample_backward_batch,
    sample_forward_batch,
    trajectories_to,
)
from flowlab.policy import (
    LOGIT_CLIP,
    SaHead,
    SsrHead,
    UniformHead,
    _choose_slots,
    _mix_uniform,
    batch_step_logp,
    batch_to_trajectories,
    masked_log_softmax,
    pb_distribution,
    pf_distribution,
    trajectories_to_batch,
    traj_log_pf,
    traj_log_pb,
)
from flowlab.nets import Mlp


def all_trajectories(env):
    out = []
    for x in env.terminals():
        out.extend(trajectories_to(env, x))
    return out


def enumerate_terminal_probs(head, table):
    """Oracle for forward_dp: sum exp(log P(tau)) per terminal, plus the
    trajectory-distribution entropy, from explicit enumeration."""
    env = table.env
    probs = np.zeros(table.terminal_idx.size)
    entropy = 0.0
    for tr in all_trajectories(env):
        lp = traj_log_pf(head, table, tr)
        p = np.exp(lp)
        probs[table.terminal_pos[table.state_idx(tr.terminal)]] += p
        entropy -= p * lp
    return probs, entropy


def small_table():
    return EnvTable(make_env("string_pa", 2, seq_len=3))


def sa_heads(table, seed=0):
    rng = np.random.default_rng(seed)
    f = SaHead(Mlp((table.enc.shape[1], 16, table.n_fslots), rng), "f")
    b = SaHead(Mlp((table.enc.shape[1], 16, table.n_bslots), rng), "b")
    return f, b


# -- table structure ----------------------------------------------------------


def test_env_table_levels_partition_states():
    t = small_table()
    seen = np.concatenate(t.levels)
    assert sorted(seen.tolist()) == list(range(t.n_states))
    for lv, idxs in enumerate(t.levels):
        assert all(len(t.states[i]) == lv for i in idxs)


def test_env_table_edge_inversion():
    t = small_table()
    for i in range(t.n_states):
        for fs in np.nonzero(t.f_mask[i])[0]:
            j = t.f_child[i, fs]
            bs = t.f_bslot[i, fs]
            assert t.b_parent[j, bs] == i
            assert t.b_fslot[j, bs] == fs


def test_env_table_budget():
    env = make_env("string_pa", 26, seq_len=5)
    with pytest.raises(EnumerationBudgetError):
        EnvTable(env)


def test_masked_log_softmax_matches_dense():
    from scipy.special import log_softmax

    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 4))
    full = masked_log_softmax(z, np.ones((5, 4), dtype=bool))
    assert full == pytest.approx(log_softmax(z, axis=1))

    mask = np.array([[True, False, True, True]] * 5)
    out = masked_log_softmax(z, mask)
    assert np.all(np.isneginf(out[:, 1]))
    assert np.exp(out[:, [0, 2, 3]]).sum(axis=1) == pytest.approx(np.ones(5))

    with pytest.raises(ValueError):
        masked_log_softmax(z, np.zeros((5, 4), dtype=bool))


# -- heads --------------------------------------------------------------------


def test_uniform_head_examples():
    t = small_table()
    # From a length-1 state there are four edges: prepend/append times two
    # letters; uniform puts 1/4 on each.
    p = pf_distribution(UniformHead("f"), t, (0,))
    assert p == pytest.approx([0.25, 0.25, 0.25, 0.25])
    # Root collapses prepend/append into one add(c) edge per letter.
    p0 = pf_distribution(UniformHead("f"), t, ())
    assert p0 == pytest.approx([0.5, 0.5])


def test_uniform_trajectory_logp_is_1_over_32():
    t = small_table()
    tr = trajectories_to(t.env, (0, 1, 0))[0]
    assert traj_log_pf(UniformHead("f"), t, tr) == pytest.approx(np.log(1 / 32))


def test_sa_head_rows_normalize():
    t = small_table()
    f, b = sa_heads(t)
    rows = np.array([0, 1, 3])
    lp, _ = f.logp(t, rows)
    p = np.where(np.isneginf(lp), 0.0, np.exp(lp))
    assert p.sum(axis=1) == pytest.approx(np.ones(3))
    lpb, _ = b.logp(t, np.array([1, 3, 5]))
    pb = np.where(np.isneginf(lpb), 0.0, np.exp(lpb))
    assert pb.sum(axis=1) == pytest.approx(np.ones(3))


def test_ssr_duplicate_edges_split_equally():
    t = small_table()
    rng = np.random.default_rng(5)
    head = SsrHead(Mlp((2 * t.enc.shape[1], 16, 1), rng), "f")
    # prepend(a) and append(a) from "a" both land on "aa": same state pair,
    # same score, equal probability; likewise for b.
    p = pf_distribution(head, t, (0,))
    assert p[0] == pytest.approx(p[2])
    assert p[1] != pytest.approx(p[3])  # "ba" vs "ab" genuinely differ


def test_logit_clip_zeroes_gradient():
    t = small_table()
    rng = np.random.default_rng(0)
    net = Mlp((t.enc.shape[1], t.n_fslots), rng)
    head = SaHead(net, "f")
    net.weights[0][:] = 0.0
    net.biases[0][:] = np.array([60.0, -60.0, 0.0, 0.0])
    rows = np.array([1, 2])
    lp, cache = head.logp(t, rows, want_cache=True)
    # Raw logits +-60 are clipped to +-50: log p of the low slot is ~-100
    # (it would be ~-120 unclipped).
    assert lp[:, 1] == pytest.approx(-100.0, abs=1e-6)
    head.zero_grads()
    head.backprop(t, np.ones_like(lp), cache)
    # Saturated slots (|raw| >= 50) contribute nothing to the weight grads.
    assert net.gb[0][0] == 0.0 and net.gb[0][1] == 0.0
    assert np.any(net.gb[0][2:] != 0.0)


# -- batched log-probs vs enumeration -----------------------------------------


def test_batch_step_logp_matches_per_step_products():
    t = small_table()
    f, b = sa_heads(t, seed=1)
    trajs = all_trajectories(t.env)
    batch = trajectories_to_batch(t, trajs)
    lpf, _ = batch_step_logp(f, t, batch)
    lpb, _ = batch_step_logp(b, t, batch)
    for r, tr in enumerate(trajs):
        want_f = sum(
            np.log(pf_distribution(f, t, e.frm)[_edge_pos_f(t.env, e)]) for e in tr.steps
        )
        want_b = sum(
            np.log(pb_distribution(b, t, e.to)[_edge_pos_b(t.env, e)]) for e in tr.steps
        )
        assert lpf[r] == pytest.approx(want_f)
        assert lpb[r] == pytest.approx(want_b)
        assert traj_log_pf(f, t, tr) == pytest.approx(lpf[r])
        assert traj_log_pb(b, t, tr) == pytest.approx(lpb[r])


def _edge_pos_f(env, e):
    return [c for c in env.children(e.frm)].index(e)


def _edge_pos_b(env, e):
    return [p for p in env.parents(e.to)].index(e)


def test_forward_dp_matches_enumeration():
    t = small_table()
    f, _ = sa_heads(t, seed=2)
    probs, entropy = forward_dp(f, t)
    want_probs, want_entropy = enumerate_terminal_probs(f, t)
    assert probs == pytest.approx(want_probs, abs=1e-12)
    assert entropy == pytest.approx(want_entropy, abs=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_forward_dp_epsilon_mix_matches_enumeration():
    t = small_table()
    f, _ = sa_heads(t, seed=3)
    probs, _ = forward_dp(f, t, epsilon=0.3)
    total = np.zeros(t.terminal_idx.size)
    for tr in all_trajectories(t.env):
        p = 1.0
        for e in tr.steps:
            base = pf_distribution(f, t, e.frm)
            mixed = 0.7 * base + 0.3 / base.size
            p *= mixed[_edge_pos_f(t.env, e)]
        total[t.terminal_pos[t.state_idx(tr.terminal)]] += p
    assert probs == pytest.approx(total, abs=1e-12)


def test_mix_uniform_rows():
    mask = np.array([[True, True, False, True]])
    p = np.array([[0.5, 0.5, 0.0, 0.0]])
    mixed = _mix_uniform(p, mask, 0.3)
    assert mixed[0] == pytest.approx([0.45, 0.45, 0.0, 0.1])
    assert _mix_uniform(p, mask, 0.0)[0] == pytest.approx(p[0])


# -- samplers ------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_choose_slots_never_picks_zero_mass(seed):
    rng = np.random.default_rng(seed)
    p = np.array(
        [
            [0.0, 1e-300, 0.0, 0.0],
            [0.3, 0.0, 0.7, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    picks = _choose_slots(p, rng)
    assert np.all(p[np.arange(3), picks] > 0.0)


def test_sample_forward_batch_shapes_and_support():
    t = small_table()
    f, _ = sa_heads(t, seed=4)
    rng = np.random.default_rng(0)
    batch = sample_forward_batch(f, t, 64, 0.1, rng)
    assert len(batch) == 64
    assert batch.states.shape == (64, t.horizon + 1)
    assert np.all(batch.states[:, 0] == t.root_idx)
    assert np.all(np.isin(batch.terminals, t.terminal_idx))
    # Slot bookkeeping: each recorded step is a real edge of the table.
    for tt in range(t.horizon):
        assert np.all(
            t.f_child[batch.states[:, tt], batch.fslots[:, tt]] == batch.states[:, tt + 1]
        )
        assert np.all(
            t.b_parent[batch.states[:, tt + 1], batch.bslots[:, tt]] == batch.states[:, tt]
        )


def test_sample_forward_frequencies_match_dp():
    t = small_table()
    f, _ = sa_heads(t, seed=5)
    rng = np.random.default_rng(1)
    n = 40_000
    batch = sample_forward_batch(f, t, n, 0.0, rng)
    freq = np.bincount(t.terminal_pos[batch.terminals], minlength=t.terminal_idx.size) / n
    probs, _ = forward_dp(f, t)
    # 3 sigma per cell, loose but catches systematic bias.
    sigma = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(freq - probs) <= 3 * sigma + 5e-4)


def test_sample_backward_batch_reaches_root():
    t = small_table()
    _, b = sa_heads(t, seed=6)
    rng = np.random.default_rng(2)
    x_idx = np.array([t.state_idx((0, 1, 0)), t.state_idx((1, 1, 1))] * 8)
    batch = sample_backward_batch(b, t, x_idx, rng)
    assert np.all(batch.terminals == x_idx)
    assert np.all(batch.states[:, 0] == t.root_idx)
    for tt in range(t.horizon):
        assert np.all(
            t.f_child[batch.states[:, tt], batch.fslots[:, tt]] == batch.states[:, tt + 1]
        )


def test_batch_trajectory_round_trip():
    t = small_table()
    trajs = all_trajectories(t.env)
    batch = trajectories_to_batch(t, trajs)
    back = batch_to_trajectories(t, batch)
    assert back == trajs


# -- tabular flows -------------------------------------------------------------


def test_tabular_flow_uniform_counts():
    env = make_env("string_pa", 2, seq_len=3)
    ttf = TabularTrajectoryFlow(env, epsilon_init=1.0)
    assert len(ttf.trajectories) == 8 * 4
    assert ttf.terminal_flow((0, 0, 0)) == pytest.approx(4.0)
    sf = ttf.state_flows()
    assert sf[()] == pytest.approx(32.0)


def test_tabular_flow_distributions_follow_flows():
    env = make_env("string_pa", 2, seq_len=2)
    ttf = TabularTrajectoryFlow(env, epsilon_init=1.0)
    # Boost every trajectory ending at "aa"; root still splits by first move.
    for i, tr in enumerate(ttf.trajectories):
        if tr.terminal == (0, 0):
            ttf.flows[i] = 3.0
    p = ttf.pf_distribution(())
    # Flow through root->"a": both "aa" trajectories (3 each) plus one
    # trajectory each of "ab" and "ba" = 8; root->"b" carries the other
    # halves of "ab"/"ba" plus both "bb" trajectories = 4.
    edges = env.children(())
    labels = [e.to for e in edges]
    want = {(0,): 8 / 12, (1,): 4 / 12}
    assert p == pytest.approx([want[l] for l in labels])


def test_flow_model_forced_uniform_backward():
    ar = EnvTable(make_env("string_ar", 2, seq_len=3))
    model = FlowModel(ar, "sa", (8,), np.random.default_rng(0))
    assert isinstance(model.pb, UniformHead)
    pa = EnvTable(make_env("string_pa", 2, seq_len=2))
    model2 = FlowModel(pa, "sa", (8,), np.random.default_rng(0))
    assert isinstance(model2.pb, SaHead)
    model3 = FlowModel(pa, "sa", (8,), np.random.default_rng(0), uniform_pb=True)
    assert isinstance(model3.pb, UniformHead)


def test_flow_model_state_round_trip():
    t = small_table()
    m1 = FlowModel(t, "sa", (8,), np.random.default_rng(7))
    m1.logZ[0] = 3.25
    data = m1.state_arrays()
    m2 = FlowModel(t, "sa", (8,), np.random.default_rng(8))
    m2.load_state_arrays(data)
    batch = sample_forward_batch(m1.pf, t, 4, 0.0, np.random.default_rng(0))
    lp1, _ = batch_step_logp(m1.pf, t, batch)
    lp2, _ = batch_step_logp(m2.pf, t, batch)
    assert np.array_equal(lp1, lp2)
    assert m2.logZ[0] == 3.25
