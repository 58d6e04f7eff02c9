"""Minimal two-hidden-layer feedforward regressor with Adam and text checkpoints."""

from __future__ import annotations

import numpy as np

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(float)),
}

CHECKPOINT_VERSION = 1


class MLP:
    """Fully connected net with a linear output layer and squared-error loss.

    Hidden activations are tanh or relu. Training uses Adam with minibatches;
    an optional L1 penalty shrinks the weight matrices. All randomness comes
    from the generators handed in, so results are reproducible by seed.
    """

    def __init__(self, layer_sizes, activation="tanh", l1=0.0,
                 rng: np.random.Generator | None = None):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.activation = activation
        self.l1 = float(l1)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            # He init for relu, Xavier for tanh
            scale = np.sqrt(2.0 / fan_in) if activation == "relu" \
                else np.sqrt(1.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._adam_state = None

    # forward / backward -------------------------------------------------

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        act, _ = _ACTIVATIONS[self.activation]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = act(h @ w + b)
        return h @ self.weights[-1] + self.biases[-1]

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        err = self.predict(x) - np.atleast_2d(y)
        mse = float(np.mean(err ** 2))
        if self.l1:
            mse += self.l1 * float(sum(np.abs(w).sum() for w in self.weights))
        return mse

    def _gradients(self, x: np.ndarray, y: np.ndarray):
        act, act_prime = _ACTIVATIONS[self.activation]
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        zs, hs = [], [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            zs.append(z)
            h = act(z)
            hs.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        n = x.shape[0]
        delta = 2.0 * (out - y) / (n * y.shape[1])
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        grads_w[-1] = hs[-1].T @ delta
        grads_b[-1] = delta.sum(axis=0)
        for layer in range(len(self.weights) - 2, -1, -1):
            delta = (delta @ self.weights[layer + 1].T) * act_prime(zs[layer])
            grads_w[layer] = hs[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
        if self.l1:
            for gw, w in zip(grads_w, self.weights):
                gw += self.l1 * np.sign(w)
        return grads_w, grads_b

    # training -----------------------------------------------------------

    def fit(self, x: np.ndarray, y: np.ndarray, epochs=200, batch_size=32,
            learning_rate=1e-3, rng: np.random.Generator | None = None,
            betas=(0.9, 0.999), eps=1e-8):
        """Minibatch Adam; returns the per-epoch training loss history."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if x.shape[0] != y.shape[0]:
            raise ValueError("x and y row counts differ")
        rng = rng or np.random.default_rng(0)
        if self._adam_state is None:
            self._adam_state = {
                "m_w": [np.zeros_like(w) for w in self.weights],
                "v_w": [np.zeros_like(w) for w in self.weights],
                "m_b": [np.zeros_like(b) for b in self.biases],
                "v_b": [np.zeros_like(b) for b in self.biases],
                "t": 0,
            }
        st = self._adam_state
        b1, b2 = betas
        history = []
        n = x.shape[0]
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                grads_w, grads_b = self._gradients(x[idx], y[idx])
                st["t"] += 1
                t = st["t"]
                for k in range(len(self.weights)):
                    for key, grads, params in (("w", grads_w, self.weights),
                                               ("b", grads_b, self.biases)):
                        g = grads[k]
                        m = st[f"m_{key}"][k]
                        v = st[f"v_{key}"][k]
                        m *= b1
                        m += (1 - b1) * g
                        v *= b2
                        v += (1 - b2) * g * g
                        m_hat = m / (1 - b1 ** t)
                        v_hat = v / (1 - b2 ** t)
                        params[k] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            history.append(self.loss(x, y))
        return history

    # checkpoints ----------------------------------------------------------

    def to_lines(self) -> list[str]:
        """Versioned structured-text checkpoint: shape headers + flat arrays."""
        lines = [f"mlp_checkpoint_version {CHECKPOINT_VERSION}",
                 f"layers {' '.join(str(n) for n in self.layer_sizes)}",
                 f"activation {self.activation}",
                 f"l1 {self.l1!r}"]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            lines.append(f"array W{k} {w.shape[0]} {w.shape[1]}")
            lines.append(" ".join(repr(float(v)) for v in w.ravel()))
            lines.append(f"array b{k} {b.shape[0]}")
            lines.append(" ".join(repr(float(v)) for v in b.ravel()))
        return lines

    @classmethod
    def from_lines(cls, lines) -> "MLP":
        head = lines[0].split()
        if head[0] != "mlp_checkpoint_version" or int(head[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint header: {lines[0]!r}")
        sizes = tuple(int(v) for v in lines[1].split()[1:])
        activation = lines[2].split()[1]
        l1 = float(lines[3].split()[1])
        net = cls(sizes, activation=activation, l1=l1,
                  rng=np.random.default_rng(0))
        pos = 4
        for k in range(len(net.weights)):
            for attr in ("weights", "biases"):
                header = lines[pos].split()
                shape = tuple(int(v) for v in header[2:])
                values = np.array([float(v) for v in lines[pos + 1].split()])
                getattr(net, attr)[k] = values.reshape(shape)
                pos += 2
        return net

    def save_text(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def load_text(cls, path) -> "MLP":
        with open(path) as fh:
            return cls.from_lines([ln.rstrip("\n") for ln in fh])
