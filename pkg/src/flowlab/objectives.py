"""Training objectives and the substructure guide.

All batch losses accumulate gradients directly into the model's grad buffers
(head nets and model.gZ); callers zero, evaluate, then step. Mean-squared
residuals over the batch throughout.
"""

import numpy as np

from .envs import EnumerationBudgetError
from .policy import (
    TrajBatch,
    batch_step_backprop,
    batch_step_logp,
    batch_to_trajectories,
    forward_dp,
    trajectories_to_batch,
)

# Guide probability floor (in log space, per step) when scoring a trajectory
# the guide itself would never take; keeps squared-error targets finite.
GUIDE_STEP_LOG_FLOOR = -50.0


def tb_loss_batch(model, batch, rewards, update=True):
    """Squared trajectory-balance residual, averaged over the batch.

    residual = logZ + log P_F(tau) - log R(x) - log P_B(tau). Gradients reach
    logZ, the forward head, and the backward head; with a uniform backward
    head the backward term is constant and this is the fixed-P_B objective.
    """
    table = model.table
    lpf, cf = batch_step_logp(model.pf, table, batch, want_cache=update)
    lpb, cb = batch_step_logp(model.pb, table, batch, want_cache=update)
    resid = model.logZ[0] + lpf - np.log(rewards) - lpb
    loss = float(resid @ resid) / len(batch)
    if update:
        coeff = 2.0 * resid / len(batch)
        batch_step_backprop(model.pf, table, cf, coeff)
        batch_step_backprop(model.pb, table, cb, -coeff)
        model.gZ[0] += coeff.sum()
    return loss


def back_gtb_loss_batch(model, batch, guide_logp, update=True):
    """(log P_B(tau) - log p_guide(tau))^2 averaged; gradients to P_B only."""
    table = model.table
    lpb, cb = batch_step_logp(model.pb, table, batch, want_cache=update)
    resid = lpb - guide_logp
    loss = float(resid @ resid) / len(batch)
    if update:
        batch_step_backprop(model.pb, table, cb, 2.0 * resid / len(batch))
    return loss


def forward_gtb_loss_batch(model, batch, rewards, guide_logp, alpha, update=True):
    """(psi_f - psi_b)^2 with psi_f = logZ + log P_F(tau) and
    psi_b = log R + alpha * log p_guide(tau) + (1 - alpha) * log P_B(tau).

    psi_b is a constant target: gradients reach logZ and P_F only.
    """
    table = model.table
    lpf, cf = batch_step_logp(model.pf, table, batch, want_cache=update)
    lpb, _ = batch_step_logp(model.pb, table, batch)
    psi_f = model.logZ[0] + lpf
    psi_b = np.log(rewards) + alpha * guide_logp + (1.0 - alpha) * lpb
    resid = psi_f - psi_b
    loss = float(resid @ resid) / len(batch)
    if update:
        coeff = 2.0 * resid / len(batch)
        batch_step_backprop(model.pf, table, cf, coeff)
        model.gZ[0] += coeff.sum()
    return loss


def tb_loss(model, traj, reward):
    """Single-trajectory loss value (no gradient accumulation)."""
    batch = trajectories_to_batch(model.table, [traj])
    return tb_loss_batch(model, batch, np.array([reward]), update=False)


def flow_entropy(head, table, mc_samples=None, rng=None, budget=2_000_000):
    """Expected sum of per-step policy entropies along a trajectory.

    Exact by forward DP when the table fits the budget; with mc_samples set,
    falls back to a Monte-Carlo estimate and returns (estimate, n_samples).
    """
    if len(table.states) <= budget:
        _, h = forward_dp(head, table)
        return h
    if mc_samples is None:
        raise EnumerationBudgetError(len(table.states), budget)
    return _flow_entropy_mc(head, table, mc_samples, rng), mc_samples


def _flow_entropy_mc(head, table, n, rng):
    from .policy import sample_forward_batch

    batch = sample_forward_batch(head, table, n, 0.0, rng)
    total = 0.0
    for t in range(table.horizon):
        rows = batch.states[:, t]
        lp, _ = head.logp(table, rows)
        p = np.exp(lp)
        total += float(
            -(np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300)), 0.0)).sum()
        )
    return total / n


class SubstructureGuide:
    """Backward-looking guide that routes trajectories through substructures
    shared with other observed terminals.

    The score of a state s for target x is the mean reward of the *other*
    dataset members containing s (zero when s is not part of x). Transition
    probabilities are proportional to the child scores over the target's
    children edges; when every score is zero they fall back to uniform over
    the edges whose child is still part of the target. Candidate sets shrink
    as the trajectory grows: a terminal that does not contain the current
    state cannot contain any descendant, so it is filtered out once.
    """

    # Above this many memoized edge rows, start over rather than grow without
    # bound (large state spaces with long training runs).
    _MEMO_CAP = 200_000

    def __init__(self, table):
        self.table = table
        self.env = table.env
        self.payloads = []
        self.rewards = np.zeros(0)
        self._memo = {}

    def refresh(self, payloads, rewards):
        """Snapshot the dataset; call between rounds."""
        new_payloads = [tuple(p) for p in payloads]
        new_rewards = np.asarray(rewards, dtype=np.float64)
        if new_payloads == self.payloads and np.array_equal(new_rewards, self.rewards):
            return
        self.payloads = new_payloads
        self.rewards = new_rewards
        self._memo.clear()

    def _candidates(self, x_target):
        return [
            (p, r)
            for p, r in zip(self.payloads, self.rewards)
            if p != x_target
        ]

    def _edge_probs(self, s, x_target, cands):
        """Per-edge guide probabilities over env.children(s), plus the
        filtered candidate list per edge (for the winner's reuse).

        Memoized on (s, x_target): containment is transitive along edges, so
        the running candidate list filters to the same members as the full
        dataset would at this state, and the result is path-independent.
        """
        key = (s, x_target)
        got = self._memo.get(key)
        if got is not None:
            return got
        env = self.env
        edges = env.children(s)
        phi = np.zeros(len(edges))
        in_target = np.zeros(len(edges), dtype=bool)
        sub_cands = []
        for i, e in enumerate(edges):
            if not env.contains(e.to, x_target):
                sub_cands.append(None)
                continue
            in_target[i] = True
            kept = [(p, r) for p, r in cands if env.contains(e.to, p)]
            sub_cands.append(kept)
            if kept:
                phi[i] = sum(r for _, r in kept) / len(kept)
        if not in_target.any():
            raise AssertionError(f"no child of {s!r} leads to {x_target!r}")
        total = phi.sum()
        if total > 0.0:
            probs = phi / total
        else:
            probs = in_target / in_target.sum()
        if len(self._memo) >= self._MEMO_CAP:
            self._memo.clear()
        self._memo[key] = (edges, probs, sub_cands)
        return edges, probs, sub_cands

    def transition(self, s, x_target):
        """Guide distribution at s: one probability per edge of env.children(s)."""
        _, probs, _ = self._edge_probs(tuple(s), tuple(x_target), self._candidates(tuple(x_target)))
        return probs

    def score(self, s, x_target):
        s, x_target = tuple(s), tuple(x_target)
        if not self.env.contains(s, x_target):
            return 0.0
        kept = [r for p, r in self._candidates(x_target) if self.env.contains(s, p)]
        return float(sum(kept) / len(kept)) if kept else 0.0

    def sample_trajectory(self, x_target, rng):
        """One guide trajectory to x_target with its exact log-probability."""
        x_target = tuple(x_target)
        cands = self._candidates(x_target)
        s = self.env.root
        steps = []
        logp = 0.0
        while s != x_target:
            edges, probs, sub_cands = self._edge_probs(s, x_target, cands)
            i = int(rng.choice(len(edges), p=probs))
            logp += float(np.log(probs[i]))
            steps.append(edges[i])
            s = edges[i].to
            cands = sub_cands[i]
        from .envs import Trajectory

        return Trajectory(tuple(steps), x_target), logp

    def log_prob_batch(self, batch):
        """Guide log-probability of each trajectory toward its own terminal.

        Steps the guide gives zero probability are floored at
        GUIDE_STEP_LOG_FLOOR so downstream squared losses stay finite.
        """
        table = self.table
        out = np.empty(len(batch))
        for r, traj in enumerate(batch_to_trajectories(table, batch)):
            x_target = traj.terminal
            cands = self._candidates(x_target)
            total = 0.0
            for e in traj.steps:
                edges, probs, sub_cands = self._edge_probs(e.frm, x_target, cands)
                i = edges.index(e)
                p = probs[i]
                total += float(np.log(p)) if p > 0.0 else GUIDE_STEP_LOG_FLOOR
                # Every state on a trajectory is part of its own terminal, so
                # the filtered candidate list always exists for the taken edge.
                if sub_cands[i] is None:
                    raise AssertionError("trajectory left its own terminal's substructures")
                cands = sub_cands[i]
            out[r] = total
        return out

    def sample_batch(self, x_idx, rng):
        """Guide trajectories to the given terminal indices, as a batch."""
        table = self.table
        trajs = []
        logps = np.empty(len(x_idx))
        for r, xi in enumerate(x_idx):
            traj, lp = self.sample_trajectory(table.states[int(xi)], rng)
            trajs.append(traj)
            logps[r] = lp
        return trajectories_to_batch(table, trajs), logps


def substructure_score(guide, s, x_target):
    return guide.score(s, x_target)


def guide_transition(guide, s, x_target):
    return guide.transition(s, x_target)


def sample_guide_trajectory(guide, x_target, rng):
    return guide.sample_trajectory(x_target, rng)
