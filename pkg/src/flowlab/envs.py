"""Acyclic generative MDPs over strings and multisets.

States are plain tuples: symbol sequences for the string environments, count
vectors for the bag. Edges carry their action plus two small template indices
(`fslot`, `bslot`) that give every legal action at a state a fixed output slot,
which is what lets the policy heads emit one logit vector per state. The edge
set forms a multigraph: two distinct actions reaching the same child are two
edges, and both are enumerated.
"""

from dataclasses import dataclass
import itertools
import math

import numpy as np

LETTERS = "abcdefghijklmnopqrstuvwxyz"


class EnumerationBudgetError(RuntimeError):
    """Raised when an exact pass would visit more objects than allowed."""

    def __init__(self, required, budget):
        super().__init__(
            f"enumeration needs {required} objects, over the budget of {budget}"
        )
        self.required = required
        self.budget = budget


@dataclass(frozen=True)
class Edge:
    frm: tuple
    action: tuple  # (kind, symbol)
    to: tuple
    fslot: int  # forward action-template index at `frm`
    bslot: int  # backward template index at `to`


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # Edge sequence from the root to `terminal`
    terminal: tuple

    def actions(self):
        return tuple(e.action for e in self.steps)


class Env:
    """Shared surface of the three environments.

    Subclasses fix `kind`, the slot counts, `horizon` (every complete
    trajectory takes exactly `horizon` steps), and the ops below.
    """

    kind = None
    root = None
    n_fslots = None
    n_bslots = None
    horizon = None
    enc_dim = None

    def children(self, s):
        raise NotImplementedError

    def parents(self, s):
        raise NotImplementedError

    def is_terminal(self, s):
        raise NotImplementedError

    def n_terminals(self):
        raise NotImplementedError

    def n_states(self):
        raise NotImplementedError

    def contains(self, s, x):
        raise NotImplementedError

    def encode_many(self, states):
        raise NotImplementedError

    def terminals(self, budget=None):
        """Yield each terminal exactly once, refusing over-budget requests."""
        count = self.n_terminals()
        if budget is not None and count > budget:
            raise EnumerationBudgetError(count, budget)
        return self._iter_terminals()

    def _iter_terminals(self):
        raise NotImplementedError

    def encode(self, s):
        return self.encode_many([s])[0]

    def state_str(self, s):
        raise NotImplementedError


class _StringEnv(Env):
    def __init__(self, alphabet_size, length):
        if not (1 <= alphabet_size <= len(LETTERS)):
            raise ValueError(f"alphabet_size must be in 1..{len(LETTERS)}")
        if length < 1:
            raise ValueError("length must be >= 1")
        self.A = int(alphabet_size)
        self.n = int(length)
        self.root = ()
        self.horizon = self.n
        # one-hot per position with an extra empty class, plus a length scalar
        self.enc_dim = self.n * (self.A + 1) + 1

    def is_terminal(self, s):
        return len(s) == self.n

    def n_terminals(self):
        return self.A**self.n

    def n_states(self):
        return sum(self.A**k for k in range(self.n + 1))

    def _iter_terminals(self):
        return itertools.product(range(self.A), repeat=self.n)

    def encode_many(self, states):
        n, A = self.n, self.A
        m = len(states)
        out = np.zeros((m, self.enc_dim))
        rows = np.arange(m)
        padded = np.full((m, n), -1, dtype=np.int64)
        for i, s in enumerate(states):
            if len(s) > 0:
                padded[i, : len(s)] = s
        cls = padded + 1  # 0 marks an empty slot
        cols = np.arange(n) * (A + 1)
        out[rows[:, None], cols[None, :] + cls] = 1.0
        out[:, -1] = np.array([len(s) for s in states]) / n
        return out

    def state_str(self, s):
        return "".join(LETTERS[c] for c in s)


class PrependAppendEnv(_StringEnv):
    """Strings grown one symbol at a time at either end.

    Forward slots: prepend(c) at slot c, append(c) at slot A+c. From the empty
    string the two coincide, so a single add(c) edge is emitted (on the append
    slot). Backward slots: 0 removes the first symbol, 1 the last; a length-1
    string has the single slot-0 edge.
    """

    kind = "string_pa"

    def __init__(self, alphabet_size, length):
        super().__init__(alphabet_size, length)
        self.n_fslots = 2 * self.A
        self.n_bslots = 2

    def children(self, s):
        if len(s) >= self.n:
            return []
        A = self.A
        if len(s) == 0:
            return [Edge((), ("add", c), (c,), A + c, 0) for c in range(A)]
        out = [Edge(s, ("prepend", c), (c,) + s, c, 0) for c in range(A)]
        out += [Edge(s, ("append", c), s + (c,), A + c, 1) for c in range(A)]
        return out

    def parents(self, s):
        if len(s) == 0:
            return []
        if len(s) == 1:
            return [Edge((), ("add", s[0]), s, self.A + s[0], 0)]
        return [
            Edge(s[1:], ("prepend", s[0]), s, s[0], 0),
            Edge(s[:-1], ("append", s[-1]), s, self.A + s[-1], 1),
        ]

    def contains(self, s, x):
        return bytes(s) in bytes(x)


class AppendOnlyEnv(_StringEnv):
    """Autoregressive strings: one append slot per symbol, one parent edge."""

    kind = "string_ar"

    def __init__(self, alphabet_size, length):
        super().__init__(alphabet_size, length)
        self.n_fslots = self.A
        self.n_bslots = 1

    def children(self, s):
        if len(s) >= self.n:
            return []
        return [Edge(s, ("append", c), s + (c,), c, 0) for c in range(self.A)]

    def parents(self, s):
        if len(s) == 0:
            return []
        return [Edge(s[:-1], ("append", s[-1]), s, s[-1], 0)]

    def contains(self, s, x):
        return x[: len(s)] == s


class BagEnv(Env):
    """Multisets over a small alphabet, built by adding one item at a time.

    A state is the count vector; that key is already order independent in the
    sequence of additions, and distinct multisets keep distinct keys.
    """

    kind = "bag"

    def __init__(self, alphabet_size, capacity):
        if not (1 <= alphabet_size <= len(LETTERS)):
            raise ValueError(f"alphabet_size must be in 1..{len(LETTERS)}")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.A = int(alphabet_size)
        self.capacity = int(capacity)
        self.root = (0,) * self.A
        self.horizon = self.capacity
        self.n_fslots = self.A
        self.n_bslots = self.A
        self.enc_dim = self.A + 1

    def is_terminal(self, s):
        return sum(s) == self.capacity

    def children(self, s):
        if sum(s) >= self.capacity:
            return []
        out = []
        for c in range(self.A):
            to = s[:c] + (s[c] + 1,) + s[c + 1 :]
            out.append(Edge(s, ("add", c), to, c, c))
        return out

    def parents(self, s):
        out = []
        for c in range(self.A):
            if s[c] > 0:
                frm = s[:c] + (s[c] - 1,) + s[c + 1 :]
                out.append(Edge(frm, ("add", c), s, c, c))
        return out

    def contains(self, s, x):
        return all(a <= b for a, b in zip(s, x))

    def n_terminals(self):
        return math.comb(self.capacity + self.A - 1, self.A - 1)

    def n_states(self):
        return math.comb(self.capacity + self.A, self.A)

    def _iter_terminals(self):
        return _count_vectors(self.capacity, self.A)

    def encode_many(self, states):
        arr = np.array(states, dtype=np.float64).reshape(len(states), self.A)
        out = np.empty((len(states), self.enc_dim))
        out[:, : self.A] = arr / self.capacity
        out[:, -1] = arr.sum(axis=1) / self.capacity
        return out

    def state_str(self, s):
        return "".join(LETTERS[c] * k for c, k in enumerate(s))


def _count_vectors(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _count_vectors(total - first, parts - 1):
            yield (first,) + rest


def make_env(kind, alphabet_size, *, seq_len=None, capacity=None):
    if kind == "bag":
        if capacity is None:
            raise ValueError("bag environment needs capacity")
        return BagEnv(alphabet_size, capacity)
    if kind in ("string_pa", "string_ar"):
        if seq_len is None:
            raise ValueError(f"{kind} environment needs seq_len")
        cls = PrependAppendEnv if kind == "string_pa" else AppendOnlyEnv
        return cls(alphabet_size, seq_len)
    raise ValueError(f"unknown environment kind {kind!r}")


def parse_state(text, kind, alphabet_size):
    """Inverse of state_str for strings; bags take the letter-multiset form."""
    syms = []
    for ch in text.strip():
        idx = LETTERS.find(ch)
        if idx < 0 or idx >= alphabet_size:
            raise ValueError(f"symbol {ch!r} outside alphabet of size {alphabet_size}")
        syms.append(idx)
    if kind == "bag":
        counts = [0] * alphabet_size
        for c in syms:
            counts[c] += 1
        return tuple(counts)
    return tuple(syms)


def trajectories_to(env, x):
    """Every trajectory from the root to terminal x, by exhaustive recursion.

    The count grows exponentially for the two-ended string environment, so
    keep x short. Order is deterministic.
    """
    out = []

    def walk(state, suffix):
        back = env.parents(state)
        if not back:
            out.append(Trajectory(tuple(suffix[::-1]), x))
            return
        for e in back:
            suffix.append(e)
            walk(e.frm, suffix)
            suffix.pop()

    walk(x, [])
    return out


def reachable(env, s, x):
    """Generic containment fallback: is there a directed path from s to x?"""
    size = sum if env.kind == "bag" else len
    limit = size(x)
    seen = {s}
    frontier = [s]
    while frontier:
        cur = frontier.pop()
        if cur == x:
            return True
        # every step grows the state by one item, so overshoot cannot recover
        if size(cur) >= limit:
            continue
        for e in env.children(cur):
            if e.to not in seen:
                seen.add(e.to)
                frontier.append(e.to)
    return False
