"""Reward functions over terminal states.

Three kinds are supported:

``bag``
    Base 0.01 everywhere; bags whose most frequent symbol reaches a repeat
    threshold (default ``ceil(capacity/2)``) instead get 10 with probability
    0.75 and 30 otherwise. The draw is frozen per terminal by hashing the
    construction seed with the count vector, so R is a deterministic function.

``string_motif``
    ``(base + sum of bonuses for motifs contained in x) ** exponent``, with an
    optional rescale so the best terminal scores exactly ``max_scale``.

``table``
    User-supplied CSV scores, min-max normalized, raised to ``exponent``, and
    rescaled so the maximum equals ``max_scale``; zero-normalized entries are
    floored at ``1e-6 * max_scale`` to keep log R finite.
"""

import csv
import math

import numpy as np

from .envs import LETTERS

FLOOR_FRACTION = 1e-6


class RewardFn:
    """Callable mapping a terminal payload to a positive float."""

    kind = None

    def __call__(self, x):
        raise NotImplementedError

    def many(self, xs):
        return np.array([self(x) for x in xs], dtype=np.float64)


class BagReward(RewardFn):
    kind = "bag"

    def __init__(self, capacity, seed, threshold=None, base=0.01,
                 jackpots=(10.0, 30.0), p_common=0.75):
        self.capacity = int(capacity)
        self.seed = int(seed)
        self.threshold = int(threshold) if threshold is not None else math.ceil(capacity / 2)
        if not 1 <= self.threshold <= self.capacity:
            raise ValueError(f"threshold {self.threshold} outside 1..{self.capacity}")
        self.base = float(base)
        self.jackpots = (float(jackpots[0]), float(jackpots[1]))
        self.p_common = float(p_common)
        self._memo = {}

    def __call__(self, x):
        counts = tuple(int(v) for v in x)
        got = self._memo.get(counts)
        if got is not None:
            return got
        if max(counts) >= self.threshold:
            # One uniform draw per terminal, keyed by (seed, counts) so the
            # assignment never depends on query order.
            u = np.random.default_rng(
                np.random.SeedSequence((self.seed, *counts))
            ).random()
            r = self.jackpots[0] if u < self.p_common else self.jackpots[1]
        else:
            r = self.base
        self._memo[counts] = r
        return r


class StringMotifReward(RewardFn):
    kind = "string_motif"

    def __init__(self, motifs, alphabet_size, base=0.1, exponent=1.0):
        """motifs: dict letter-string -> bonus, e.g. {"ab": 1.0}."""
        if base <= 0:
            raise ValueError("base must be positive so R stays positive")
        self.base = float(base)
        self.exponent = float(exponent)
        self.scale = 1.0
        self.motifs = {}
        for text, bonus in motifs.items():
            payload = _letters_to_payload(text, alphabet_size)
            if not payload:
                raise ValueError("empty motif")
            if bonus < 0:
                raise ValueError(f"negative bonus for motif {text!r}")
            self.motifs[bytes(payload)] = float(bonus)

    def raw(self, x):
        probe = bytes(x)
        total = self.base
        for motif, bonus in self.motifs.items():
            if motif in probe:
                total += bonus
        return total**self.exponent

    def fit_scale(self, terminals, max_scale):
        """Pin the best terminal's reward to max_scale."""
        top = max(self.raw(x) for x in terminals)
        self.scale = float(max_scale) / top
        return self

    def __call__(self, x):
        return self.scale * self.raw(x)


class TableReward(RewardFn):
    kind = "table"

    def __init__(self, scores, exponent=1.0, max_scale=10.0):
        """scores: dict payload tuple -> raw score; transform applied here."""
        if not scores:
            raise ValueError("empty reward table")
        if exponent <= 0 or max_scale <= 0:
            raise ValueError("exponent and max_scale must be positive")
        raw = np.array(list(scores.values()), dtype=np.float64)
        lo, hi = raw.min(), raw.max()
        # Degenerate tables normalize to 1.0 so the single level hits max_scale.
        norm = np.ones_like(raw) if hi == lo else (raw - lo) / (hi - lo)
        vals = norm**float(exponent) * float(max_scale)
        floor = FLOOR_FRACTION * float(max_scale)
        self.table = {
            x: float(max(v, floor)) for x, v in zip(scores.keys(), vals)
        }
        self.exponent = float(exponent)
        self.max_scale = float(max_scale)

    def __call__(self, x):
        got = self.table.get(tuple(x))
        if got is None:
            raise KeyError(f"terminal {_payload_str(x)!r} missing from reward table")
        return got


def load_reward_table(path, exponent=1.0, max_scale=10.0, alphabet_size=26):
    """Parse a `sequence,score` CSV into a TableReward.

    Sequences are lowercase letters a, b, c, ... mapped to symbol indices.
    Malformed rows raise ValueError naming the 1-based line number.
    """
    scores = {}
    length = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["sequence", "score"]:
            raise ValueError(f"{path}: expected header 'sequence,score', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            seq, score_text = row[0].strip(), row[1].strip()
            try:
                payload = _letters_to_payload(seq, alphabet_size)
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: {err}") from None
            if length is None:
                length = len(payload)
            elif len(payload) != length:
                raise ValueError(
                    f"{path}:{lineno}: sequence length {len(payload)} != {length}"
                )
            if payload in scores:
                raise ValueError(f"{path}:{lineno}: duplicate sequence {seq!r}")
            try:
                score = float(score_text)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric score {score_text!r}") from None
            if not math.isfinite(score):
                raise ValueError(f"{path}:{lineno}: non-finite score {score_text!r}")
            scores[payload] = score
    if not scores:
        raise ValueError(f"{path}: no data rows")
    return TableReward(scores, exponent=exponent, max_scale=max_scale)


def _letters_to_payload(text, alphabet_size):
    payload = []
    for ch in text:
        idx = LETTERS.find(ch)
        if idx < 0 or idx >= alphabet_size:
            raise ValueError(f"symbol {ch!r} outside alphabet of size {alphabet_size}")
        payload.append(idx)
    return tuple(payload)


def _payload_str(x):
    try:
        return "".join(LETTERS[int(v)] for v in x)
    except (ValueError, IndexError, TypeError):
        return str(tuple(x))
