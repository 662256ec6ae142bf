"""State-graph tables, policy heads, log Z, and trajectory machinery.

An `EnvTable` lays a small environment's full DAG out as integer arrays so
that policies, samplers, and dynamic programs are plain vectorized numpy:

- ``states``: every reachable state, in breadth-first (level) order;
- ``f_child[i, slot]``: index of the child reached from state i through the
  forward action slot, or -1 where the slot is illegal; ``f_bslot`` gives the
  matching slot in the child's backward template;
- ``b_parent[j, slot]`` / ``b_fslot``: the reverse tables, built by inverting
  the forward edges so the two views cannot disagree.

Heads score one direction's slot template. `SaHead` reads logits for every
slot from one network pass on the state encoding; `SsrHead` scores each
(state, neighbor) pair with a scalar network; `UniformHead` is the fixed
uniform policy. All heads clip logits into +-LOGIT_CLIP (zero gradient
outside) and normalize with a masked softmax over legal slots, so duplicate
edges to the same child each hold their own slot and their own probability
mass.

Trajectories move through this module as `TrajBatch` index arrays. The
environments here have a fixed horizon (every terminal sits at the last
level), which keeps batches rectangular and exact.
"""

from dataclasses import dataclass

import numpy as np

from .envs import EnumerationBudgetError, Trajectory
from .nets import Mlp

LOGIT_CLIP = 50.0
LOGZ_INIT = 5.0
DEFAULT_STATE_BUDGET = 2_000_000


class EnvTable:
    def __init__(self, env, budget=DEFAULT_STATE_BUDGET):
        n_states = env.n_states()
        if n_states > budget:
            raise EnumerationBudgetError(n_states, budget)
        self.env = env
        states = [env.root]
        index = {env.root: 0}
        edges = []
        levels = [[0]]
        frontier = [env.root]
        while frontier:
            nxt = []
            for s in frontier:
                i = index[s]
                if env.is_terminal(s):
                    continue
                for e in env.children(s):
                    j = index.get(e.to)
                    if j is None:
                        j = len(states)
                        index[e.to] = j
                        states.append(e.to)
                        nxt.append(e.to)
                    edges.append((i, e.fslot, j, e.bslot))
            if nxt:
                levels.append([index[s] for s in nxt])
            frontier = nxt
        if len(states) != n_states:
            raise RuntimeError(
                f"env reports {n_states} states but BFS reached {len(states)}"
            )

        self.states = states
        self.index = index
        self.n_fslots = env.n_fslots
        self.n_bslots = env.n_bslots
        n = len(states)
        self.f_child = np.full((n, self.n_fslots), -1, dtype=np.int64)
        self.f_bslot = np.full((n, self.n_fslots), -1, dtype=np.int64)
        self.b_parent = np.full((n, self.n_bslots), -1, dtype=np.int64)
        self.b_fslot = np.full((n, self.n_bslots), -1, dtype=np.int64)
        for i, fs, j, bs in edges:
            if self.f_child[i, fs] >= 0 or self.b_parent[j, bs] >= 0:
                raise RuntimeError(f"slot collision on edge {states[i]} -> {states[j]}")
            self.f_child[i, fs] = j
            self.f_bslot[i, fs] = bs
            self.b_parent[j, bs] = i
            self.b_fslot[j, bs] = fs
        self.f_mask = self.f_child >= 0
        self.b_mask = self.b_parent >= 0
        self.levels = [np.array(lv, dtype=np.int64) for lv in levels]
        self.enc = env.encode_many(states)
        self.root_idx = 0
        self.terminal_idx = np.array(
            [i for i, s in enumerate(states) if env.is_terminal(s)], dtype=np.int64
        )
        self.horizon = len(self.levels) - 1
        # The vectorized samplers assume a fixed horizon: all terminals on the
        # last level, nothing else there.
        if set(self.terminal_idx.tolist()) != set(self.levels[-1].tolist()):
            raise RuntimeError("environment is not fixed-horizon")
        pos = np.full(n, -1, dtype=np.int64)
        pos[self.terminal_idx] = np.arange(self.terminal_idx.size)
        self.terminal_pos = pos

    @property
    def n_states(self):
        return len(self.states)

    def terminal_states(self):
        return [self.states[i] for i in self.terminal_idx]

    def state_idx(self, s):
        got = self.index.get(tuple(s))
        if got is None:
            raise KeyError(f"state {s!r} not in this environment")
        return got


def masked_log_softmax(logits, mask):
    """Row-wise log softmax over legal slots; illegal slots come back -inf."""
    if not mask.any(axis=1).all():
        raise ValueError("row with no legal slot")
    z = np.where(mask, logits, -np.inf)
    m = z.max(axis=1, keepdims=True)
    ez = np.where(mask, np.exp(z - m), 0.0)
    return z - (m + np.log(ez.sum(axis=1, keepdims=True)))


class PolicyHead:
    """Scores one direction's slot template for batches of state indices."""

    kind = None

    def __init__(self, direction):
        if direction not in ("f", "b"):
            raise ValueError("direction must be 'f' or 'b'")
        self.direction = direction

    def _mask(self, table, rows):
        m = table.f_mask if self.direction == "f" else table.b_mask
        return m[rows]

    @property
    def params(self):
        return []

    @property
    def grads(self):
        return []

    def zero_grads(self):
        pass

    def logp(self, table, rows, want_cache=False):
        """Returns (log-probs (len(rows), n_slots), cache or None)."""
        raise NotImplementedError

    def backprop(self, table, dlp, cache):
        """Accumulate d(sum of dlp * logp)/d(params) into the grad buffers."""
        raise NotImplementedError


class UniformHead(PolicyHead):
    kind = "uniform"

    def logp(self, table, rows, want_cache=False):
        mask = self._mask(table, rows)
        n = mask.sum(axis=1, keepdims=True)
        if (n == 0).any():
            raise ValueError("row with no legal slot")
        lp = np.where(mask, -np.log(n, dtype=np.float64), -np.inf)
        return lp, None

    def backprop(self, table, dlp, cache):
        pass


class SaHead(PolicyHead):
    """One network pass per state emits a logit for every action slot."""

    kind = "sa"

    def __init__(self, net, direction):
        super().__init__(direction)
        self.net = net

    @property
    def params(self):
        return self.net.params

    @property
    def grads(self):
        return self.net.grads

    def zero_grads(self):
        self.net.zero_grads()

    def logp(self, table, rows, want_cache=False):
        mask = self._mask(table, rows)
        raw, net_cache = self.net.forward(table.enc[rows])
        clipped = np.clip(raw, -LOGIT_CLIP, LOGIT_CLIP)
        lp = masked_log_softmax(clipped, mask)
        if not want_cache:
            return lp, None
        p = np.where(mask, np.exp(lp), 0.0)
        return lp, (net_cache, np.abs(raw) < LOGIT_CLIP, p)

    def backprop(self, table, dlp, cache):
        net_cache, clip_pass, p = cache
        dz = dlp - p * dlp.sum(axis=1, keepdims=True)
        self.net.backward(net_cache, dz * clip_pass)


class SsrHead(PolicyHead):
    """Scores (state, neighbor) encodings with a scalar network.

    The score is a function of the two endpoint states only, so duplicate
    edges to one child carry identical logits and split its mass equally.
    """

    kind = "ssr"

    def __init__(self, net, direction):
        super().__init__(direction)
        self.net = net

    @property
    def params(self):
        return self.net.params

    @property
    def grads(self):
        return self.net.grads

    def zero_grads(self):
        self.net.zero_grads()

    def logp(self, table, rows, want_cache=False):
        mask = self._mask(table, rows)
        nbr = (table.f_child if self.direction == "f" else table.b_parent)[rows]
        ri, slot = np.nonzero(mask)
        pairs = np.concatenate(
            [table.enc[rows[ri]], table.enc[nbr[ri, slot]]], axis=1
        )
        raw, net_cache = self.net.forward(pairs)
        raw = raw[:, 0]
        logits = np.zeros(mask.shape)
        logits[ri, slot] = np.clip(raw, -LOGIT_CLIP, LOGIT_CLIP)
        lp = masked_log_softmax(logits, mask)
        if not want_cache:
            return lp, None
        p = np.where(mask, np.exp(lp), 0.0)
        return lp, (net_cache, np.abs(raw) < LOGIT_CLIP, p, ri, slot)

    def backprop(self, table, dlp, cache):
        net_cache, clip_pass, p, ri, slot = cache
        dz = dlp - p * dlp.sum(axis=1, keepdims=True)
        draw = dz[ri, slot] * clip_pass
        self.net.backward(net_cache, draw[:, None])


def make_head(kind, direction, table, hidden, rng):
    if kind == "uniform":
        return UniformHead(direction)
    n_slots = table.n_fslots if direction == "f" else table.n_bslots
    d = table.enc.shape[1]
    if kind == "sa":
        return SaHead(Mlp((d, *hidden, n_slots), rng), direction)
    if kind == "ssr":
        return SsrHead(Mlp((2 * d, *hidden, 1), rng), direction)
    raise ValueError(f"unknown head kind {kind!r}")


class FlowModel:
    """Forward/backward policy heads plus the trainable log-partition scalar."""

    def __init__(self, table, parametrization, hidden, rng, uniform_pb=False):
        self.table = table
        self.pf = make_head(parametrization, "f", table, hidden, rng)
        # A single-parent graph pins P_B = 1 whatever the head says, so a
        # learned backward head would only burn parameters there.
        single_parent = bool(table.b_mask.sum(axis=1).max() <= 1)
        pb_kind = "uniform" if (uniform_pb or single_parent) else parametrization
        self.pb = make_head(pb_kind, "b", table, hidden, rng)
        self.logZ = np.array([LOGZ_INIT])
        self.gZ = np.zeros(1)

    @property
    def pf_params(self):
        return list(self.pf.params)

    @property
    def pb_params(self):
        return list(self.pb.params)

    @property
    def pf_grads(self):
        return list(self.pf.grads)

    @property
    def pb_grads(self):
        return list(self.pb.grads)

    def zero_grads(self):
        self.pf.zero_grads()
        self.pb.zero_grads()
        self.gZ[...] = 0.0

    def state_arrays(self):
        out = {"logZ": self.logZ.copy()}
        for tag, head in (("pf", self.pf), ("pb", self.pb)):
            for i, p in enumerate(head.params):
                out[f"{tag}_p{i}"] = p
        return out

    def load_state_arrays(self, data):
        self.logZ[...] = data["logZ"]
        for tag, head in (("pf", self.pf), ("pb", self.pb)):
            for i, p in enumerate(head.params):
                p[...] = data[f"{tag}_p{i}"]


@dataclass
class TrajBatch:
    """A rectangle of complete trajectories as EnvTable indices.

    states is (m, horizon+1); fslots/bslots are (m, horizon): step t moves
    states[:, t] -> states[:, t+1] through forward slot fslots[:, t], which is
    backward slot bslots[:, t] of the child.
    """

    states: np.ndarray
    fslots: np.ndarray
    bslots: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    @property
    def terminals(self):
        return self.states[:, -1]


def _choose_slots(p, rng):
    """Sample one slot per row from unnormalized probabilities p (m, S)."""
    cs = np.cumsum(p, axis=1)
    # u in (0, row total]: the crossing step always has positive mass, so an
    # illegal (zero) slot can never be selected.
    u = (1.0 - rng.random((p.shape[0], 1))) * cs[:, -1:]
    return np.argmax(cs >= u, axis=1)


def _mix_uniform(p, mask, epsilon):
    if epsilon <= 0.0:
        return p
    u = mask / mask.sum(axis=1, keepdims=True)
    return (1.0 - epsilon) * p + epsilon * u


def sample_forward_batch(head, table, n, epsilon, rng):
    """n forward trajectories from the root under head, with per-step
    probability epsilon of a uniform legal action instead."""
    T = table.horizon
    states = np.empty((n, T + 1), dtype=np.int64)
    fslots = np.empty((n, T), dtype=np.int64)
    bslots = np.empty((n, T), dtype=np.int64)
    cur = np.full(n, table.root_idx, dtype=np.int64)
    states[:, 0] = cur
    for t in range(T):
        lp, _ = head.logp(table, cur)
        p = _mix_uniform(np.exp(lp), table.f_mask[cur], epsilon)
        slot = _choose_slots(p, rng)
        fslots[:, t] = slot
        bslots[:, t] = table.f_bslot[cur, slot]
        cur = table.f_child[cur, slot]
        states[:, t + 1] = cur
    return TrajBatch(states, fslots, bslots)


def sample_backward_batch(head, table, x_idx, rng):
    """Backward walks from the terminals x_idx, returned forward-oriented."""
    x_idx = np.asarray(x_idx, dtype=np.int64)
    n = x_idx.size
    T = table.horizon
    states = np.empty((n, T + 1), dtype=np.int64)
    fslots = np.empty((n, T), dtype=np.int64)
    bslots = np.empty((n, T), dtype=np.int64)
    cur = x_idx.copy()
    states[:, T] = cur
    for t in range(T - 1, -1, -1):
        lp, _ = head.logp(table, cur)
        slot = _choose_slots(np.exp(lp), rng)
        bslots[:, t] = slot
        fslots[:, t] = table.b_fslot[cur, slot]
        cur = table.b_parent[cur, slot]
        states[:, t] = cur
    if (cur != table.root_idx).any():
        raise RuntimeError("backward walk did not reach the root")
    return TrajBatch(states, fslots, bslots)


def batch_step_logp(head, table, batch, want_cache=False):
    """Per-trajectory sums of step log-probs under head's direction.

    Returns (traj_logp (m,), ctx). The ctx replays into `batch_step_backprop`
    to accumulate d(sum_i coeff_i * traj_logp_i)/d(params).
    """
    if head.direction == "f":
        rows = batch.states[:, :-1].reshape(-1)
        slots = batch.fslots.reshape(-1)
    else:
        rows = batch.states[:, 1:].reshape(-1)
        slots = batch.bslots.reshape(-1)
    lp, cache = head.logp(table, rows, want_cache=want_cache)
    step = lp[np.arange(rows.size), slots]
    m, T = batch.fslots.shape
    ctx = (cache, slots, lp.shape, T) if want_cache else None
    return step.reshape(m, T).sum(axis=1), ctx


def batch_step_backprop(head, table, ctx, coeff):
    cache, slots, shape, T = ctx
    dlp = np.zeros(shape)
    dlp[np.arange(slots.size), slots] = np.repeat(coeff, T)
    head.backprop(table, dlp, cache)


def forward_dp(head, table, epsilon=0.0, chunk=8192):
    """Exact reach probabilities: returns (per-terminal probability aligned
    with table.terminal_idx, expected per-trajectory entropy under head)."""
    visit = np.zeros(len(table.states))
    visit[table.root_idx] = 1.0
    entropy = 0.0
    for lv in table.levels[:-1]:
        for lo in range(0, lv.size, chunk):
            idx = lv[lo : lo + chunk]
            lp, _ = head.logp(table, idx)
            p = np.exp(lp)
            mask = table.f_mask[idx]
            p = _mix_uniform(p, mask, epsilon)
            step_h = -(np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300)), 0.0)).sum(axis=1)
            entropy += float(visit[idx] @ step_h)
            mass = visit[idx][:, None] * p
            np.add.at(visit, table.f_child[idx][mask], mass[mask])
    return visit[table.terminal_idx], entropy


def pf_distribution(head, table, s):
    """Probability per edge, aligned with env.children(s)."""
    edges = table.env.children(tuple(s))
    if not edges:
        raise ValueError(f"{s!r} is terminal")
    lp, _ = head.logp(table, np.array([table.state_idx(s)]))
    return np.array([np.exp(lp[0, e.fslot]) for e in edges])


def pb_distribution(head, table, s):
    """Probability per edge, aligned with env.parents(s)."""
    edges = table.env.parents(tuple(s))
    if not edges:
        raise ValueError(f"{s!r} is the root")
    lp, _ = head.logp(table, np.array([table.state_idx(s)]))
    return np.array([np.exp(lp[0, e.bslot]) for e in edges])


def batch_to_trajectories(table, batch):
    env = table.env
    out = []
    for r in range(len(batch)):
        steps = []
        for t in range(batch.fslots.shape[1]):
            frm = table.states[batch.states[r, t]]
            for e in env.children(frm):
                if e.fslot == batch.fslots[r, t]:
                    steps.append(e)
                    break
            else:
                raise RuntimeError("slot not found among children")
        out.append(Trajectory(tuple(steps), table.states[batch.states[r, -1]]))
    return out


def trajectories_to_batch(table, trajs):
    m = len(trajs)
    T = table.horizon
    states = np.empty((m, T + 1), dtype=np.int64)
    fslots = np.empty((m, T), dtype=np.int64)
    bslots = np.empty((m, T), dtype=np.int64)
    for r, tr in enumerate(trajs):
        if len(tr.steps) != T:
            raise ValueError("trajectory length does not match the horizon")
        states[r, 0] = table.root_idx
        for t, e in enumerate(tr.steps):
            states[r, t + 1] = table.state_idx(e.to)
            fslots[r, t] = e.fslot
            bslots[r, t] = e.bslot
    return TrajBatch(states, fslots, bslots)


def sample_forward_trajectory(head, table, epsilon, rng):
    batch = sample_forward_batch(head, table, 1, epsilon, rng)
    return batch_to_trajectories(table, batch)[0]


def sample_backward_trajectory(head, table, x, rng):
    batch = sample_backward_batch(head, table, np.array([table.state_idx(x)]), rng)
    return batch_to_trajectories(table, batch)[0]


def traj_log_pf(head, table, traj):
    lp, _ = batch_step_logp(head, table, trajectories_to_batch(table, [traj]))
    return float(lp[0])


def traj_log_pb(head, table, traj):
    lp, _ = batch_step_logp(head, table, trajectories_to_batch(table, [traj]))
    return float(lp[0])


class TabularTrajectoryFlow:
    """Explicit flow value per complete trajectory of a small environment."""

    def __init__(self, env, epsilon_init=1.0, budget=200_000):
        from .envs import trajectories_to

        self.env = env
        self.trajectories = []
        for x in env.terminals(budget=budget):
            self.trajectories.extend(trajectories_to(env, x))
            if len(self.trajectories) > budget:
                raise EnumerationBudgetError(len(self.trajectories), budget)
        if epsilon_init <= 0:
            raise ValueError("flows must start positive")
        self.flows = np.full(len(self.trajectories), float(epsilon_init))

    def terminal_flow(self, x):
        x = tuple(x)
        return float(
            sum(f for tr, f in zip(self.trajectories, self.flows) if tr.terminal == x)
        )

    def edge_flows(self):
        out = {}
        for tr, f in zip(self.trajectories, self.flows):
            for e in tr.steps:
                out[e] = out.get(e, 0.0) + f
        return out

    def state_flows(self):
        out = {}
        for tr, f in zip(self.trajectories, self.flows):
            out[self.env.root] = out.get(self.env.root, 0.0) + f
            for e in tr.steps:
                out[e.to] = out.get(e.to, 0.0) + f
        return out

    def pf_distribution(self, s):
        s = tuple(s)
        ef = self.edge_flows()
        edges = self.env.children(s)
        w = np.array([ef.get(e, 0.0) for e in edges])
        return w / w.sum()

    def pb_distribution(self, s):
        s = tuple(s)
        ef = self.edge_flows()
        edges = self.env.parents(s)
        w = np.array([ef.get(e, 0.0) for e in edges])
        return w / w.sum()
