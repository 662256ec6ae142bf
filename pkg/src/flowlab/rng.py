"""Seed plumbing: one experiment seed fans out into fixed named substreams."""

import os

import numpy as np

# Fixed ids so toggling one consumer (say, replay) never shifts another's stream.
_STREAMS = {"init": 0, "train": 1, "monitor": 2, "replay": 3, "guide": 4, "theory": 5}


def substream(seed, name):
    """Independent generator for the named stream of this seed."""
    if name not in _STREAMS:
        raise KeyError(f"unknown stream {name!r}, expected one of {sorted(_STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence((int(seed), _STREAMS[name])))


def worker_count(n_tasks=None):
    """Worker cap from FLOWLAB_THREADS (default 1). Never exceeds n_tasks."""
    raw = os.environ.get("FLOWLAB_THREADS", "1")
    try:
        w = max(1, int(raw))
    except ValueError:
        w = 1
    if n_tasks is not None:
        w = min(w, max(1, int(n_tasks)))
    return w
