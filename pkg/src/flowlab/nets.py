"""Small dense networks with hand-rolled backprop, plus the optimizer.

Everything is float64 numpy. Hidden layers are rectified, the output layer is
linear, and initial weights and biases are uniform in +-1/sqrt(fan_in).
"""

import logging

import numpy as np

log = logging.getLogger(__name__)


class Mlp:
    def __init__(self, sizes, rng):
        """sizes = (input, hidden..., output); rng seeds the initial weights."""
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(v) for v in sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self.zero_grads()

    @property
    def params(self):
        return self.weights + self.biases

    @property
    def grads(self):
        return self.gw + self.gb

    def zero_grads(self):
        self.gw = [np.zeros_like(w) for w in self.weights]
        self.gb = [np.zeros_like(b) for b in self.biases]

    def forward(self, x):
        """Returns (output, cache); x is (batch, input_dim)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input (*, {self.sizes[0]}), got {x.shape}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, cache, dout):
        """Accumulate exact parameter gradients for a cached forward pass."""
        acts = cache
        delta = np.asarray(dout, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                delta = delta * (acts[i + 1] > 0.0)
            self.gw[i] += acts[i].T @ delta
            self.gb[i] += delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T


class Adam:
    """Adaptive-moment steps over one parameter group.

    The group's gradient is rescaled to a global 2-norm of at most clip_norm
    before touching the moment accumulators, so the clip bounds what the
    moments ever see. Non-finite gradients skip the step entirely.
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, clip_norm=10.0):
        self.params = list(params)
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0
        self.skipped = 0

    def step(self, grads):
        """Apply one update in place. Returns False when skipped."""
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        sq = 0.0
        finite = True
        for g in grads:
            if not np.all(np.isfinite(g)):
                finite = False
                break
            sq += float(np.sum(g * g))
        if not finite or not np.isfinite(sq):
            self.skipped += 1
            log.warning("skipping optimizer step %d: non-finite gradient", self.t + 1)
            return False
        norm = np.sqrt(sq)
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_arrays(self, prefix):
        """Flat dict of optimizer state for checkpointing."""
        out = {f"{prefix}_t": np.array([self.t]), f"{prefix}_skipped": np.array([self.skipped])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}_m{i}"] = m
            out[f"{prefix}_v{i}"] = v
        return out

    def load_state_arrays(self, prefix, data):
        self.t = int(data[f"{prefix}_t"][0])
        self.skipped = int(data[f"{prefix}_skipped"][0])
        for i in range(len(self.m)):
            self.m[i][...] = data[f"{prefix}_m{i}"]
            self.v[i][...] = data[f"{prefix}_v{i}"]


def flatten_params(params):
    return np.concatenate([p.ravel() for p in params]) if params else np.zeros(0)


def set_params(params, flat):
    i = 0
    for p in params:
        p[...] = flat[i : i + p.size].reshape(p.shape)
        i += p.size
    if i != flat.size:
        raise ValueError("flat vector length does not match parameters")
