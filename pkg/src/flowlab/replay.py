"""The growing terminal dataset and reward-prioritized replay sampling."""

import bisect
import csv

import numpy as np


class DatasetX:
    """Insertion-ordered unique terminals with an incrementally maintained
    reward ranking.

    The ranking key is (-reward, insertion order): ties go to the earlier
    arrival, so the top partition is always well defined.
    """

    def __init__(self):
        self.payloads = []
        self.rewards = []
        self.first_seen = []
        self._pos = {}
        # _ranked[i] = ((-reward, insertion index)) kept sorted ascending, so
        # the best-reward entries sit at the front.
        self._ranked = []

    def __len__(self):
        return len(self.payloads)

    def __contains__(self, x):
        return tuple(x) in self._pos

    def insert(self, x, reward, round_no=0):
        """Returns True when x is new. Re-inserting with a different reward is
        an error: R must be a deterministic function."""
        x = tuple(x)
        got = self._pos.get(x)
        if got is not None:
            if self.rewards[got] != reward:
                raise ValueError(
                    f"terminal {x!r} re-inserted with reward {reward} != {self.rewards[got]}"
                )
            return False
        idx = len(self.payloads)
        self.payloads.append(x)
        self.rewards.append(float(reward))
        self.first_seen.append(int(round_no))
        self._pos[x] = idx
        bisect.insort(self._ranked, (-float(reward), idx))
        return True

    def reward_of(self, x):
        return self.rewards[self._pos[tuple(x)]]

    def top_partition_size(self, top_quantile=0.9):
        """Size of the elite set: ceil((1 - q) * |X|), at least 1."""
        n = len(self.payloads)
        k = int(np.ceil((1.0 - top_quantile) * n))
        return max(k, 1)

    def prt_sample(self, batch_size, rng, top_quantile=0.9, top_fraction=0.5):
        """Reward-prioritized batch: ceil(top_fraction * batch) drawn
        uniformly with replacement from the top partition, the rest uniformly
        with replacement from the remainder."""
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        n = len(self.payloads)
        if n < 2:
            raise ValueError("need at least 2 entries to split the dataset")
        k = self.top_partition_size(top_quantile)
        n_top = int(np.ceil(top_fraction * batch_size))
        n_top = min(n_top, batch_size)
        top_ids = [idx for _, idx in self._ranked[:k]]
        rest_ids = [idx for _, idx in self._ranked[k:]]
        if not rest_ids:
            # Degenerate split (tiny X): everything counts as elite.
            rest_ids = top_ids
        picks = [top_ids[i] for i in rng.integers(0, len(top_ids), size=n_top)]
        picks += [
            rest_ids[i] for i in rng.integers(0, len(rest_ids), size=batch_size - n_top)
        ]
        return [self.payloads[i] for i in picks]

    def top_ids(self, top_quantile=0.9):
        k = self.top_partition_size(top_quantile)
        return {idx for _, idx in self._ranked[:k]}

    def to_csv(self, path, state_str):
        """Dump as `terminal,reward,round_first_seen` rows, insertion order."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["terminal", "reward", "round_first_seen"])
            for x, r, seen in zip(self.payloads, self.rewards, self.first_seen):
                w.writerow([state_str(x), f"{r:.12g}", seen])
