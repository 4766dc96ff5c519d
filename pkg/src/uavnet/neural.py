"""Minimal trainable neural toolkit: dense nets, a gated recurrent cell, Adam.

Everything is plain numpy with hand-written backprop, deterministic given the
seed and data order. Callers feed features scaled to roughly [-1, 1]; a debug
assertion guards the contract. Checkpoints are flat text with hex floats so
round-trips are bit-exact.
"""

from __future__ import annotations

import math

import numpy as np

CHECKPOINT_MAGIC = "uavnet-model v1"
INPUT_SCALE_LIMIT = 2.0


class TrainingDivergedError(RuntimeError):
    """Loss or parameters became non-finite during training."""


def _relu(z):
    return np.maximum(z, 0.0)


def _act(name, z):
    if name == "relu":
        return _relu(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    # derivative wrt pre-activation, using post-activation a where cheaper
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _uniform_fan_in(rng, fan_in, shape):
    scale = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=shape)


class Adam:
    """Adaptive moment estimation over a list of parameter arrays."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = None
        self._v = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(grads) != len(self._m):
            raise ValueError("gradient list does not match optimizer state")
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class DenseNet:
    """Fully-connected feedforward net with a rectifier hidden activation."""

    kind = "dense"

    def __init__(self, layer_sizes, hidden_activation="relu",
                 output_activation="identity", seed: int | None = 0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(int(s) for s in layer_sizes)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = np.random.default_rng(seed)
        for d_in, d_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(_uniform_fan_in(rng, d_in, (d_out, d_in)))
            self.biases.append(np.zeros(d_out))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "DenseNet":
        twin = DenseNet.__new__(DenseNet)
        twin.layer_sizes = list(self.layer_sizes)
        twin.hidden_activation = self.hidden_activation
        twin.output_activation = self.output_activation
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {X.shape[1]}")
        return X, single

    def forward(self, x):
        X, single = self._as_batch(x)
        assert np.max(np.abs(X), initial=0.0) <= INPUT_SCALE_LIMIT, \
            "inputs should be scaled to roughly [-1, 1]"
        a = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            name = self.output_activation if i == last else self.hidden_activation
            a = _act(name, z)
        return a[0] if single else a

    def _forward_cached(self, X):
        caches = []
        a = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            name = self.output_activation if i == last else self.hidden_activation
            out = _act(name, z)
            caches.append((a, z, out, name))
            a = out
        return a, caches

    def _backward(self, caches, d_out):
        grads = [None] * (2 * len(self.weights))
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            a_in, z, a_out, name = caches[i]
            delta = delta * _act_grad(name, z, a_out)
            grads[2 * i] = delta.T @ a_in
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        return grads, delta

    def input_gradient(self, x, d_out):
        """Gradient of (d_out . output) with respect to the inputs; params untouched."""
        X, single = self._as_batch(x)
        _, caches = self._forward_cached(X)
        _, dX = self._backward(caches, np.atleast_2d(d_out))
        return dX[0] if single else dX

    def loss_and_grads(self, x, target):
        """Batch MSE and its gradient, flattened over all parameters."""
        X, _ = self._as_batch(x)
        T = np.atleast_2d(np.asarray(target, dtype=float))
        Y, caches = self._forward_cached(X)
        diff = Y - T
        loss = float(np.mean(diff * diff))
        d_out = 2.0 * diff / diff.size
        grads, _ = self._backward(caches, d_out)
        return loss, np.concatenate([g.ravel() for g in grads])

    @property
    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat_params(self, theta: np.ndarray) -> None:
        offset = 0
        for p in self.params():
            p[...] = theta[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != theta.size:
            raise ValueError("parameter vector size mismatch")

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(f"{CHECKPOINT_MAGIC} {self.kind}\n")
            f.write("sizes " + " ".join(str(s) for s in self.layer_sizes) + "\n")
            f.write(f"activations {self.hidden_activation} {self.output_activation}\n")
            for i, (w, b) in enumerate(zip(self.weights, self.biases)):
                _write_array(f, f"W{i}", w)
                _write_array(f, f"b{i}", b)

    @staticmethod
    def load(path) -> "DenseNet":
        with open(path) as f:
            header = f.readline().split()
            if " ".join(header[:2]) != CHECKPOINT_MAGIC or header[2] != "dense":
                raise ValueError(f"not a dense checkpoint: {path}")
            sizes = [int(s) for s in f.readline().split()[1:]]
            _, hidden, output = f.readline().split()
            net = DenseNet(sizes, hidden, output, seed=None)
            for i in range(len(sizes) - 1):
                net.weights[i] = _read_array(f, f"W{i}", (sizes[i + 1], sizes[i]))
                net.biases[i] = _read_array(f, f"b{i}", (sizes[i + 1],))
        return net


def train_step(net: DenseNet, inputs, targets, optimizer: Adam) -> float:
    """One optimizer step on the batch; returns the pre-update batch MSE."""
    X, _ = net._as_batch(inputs)
    if X.shape[0] == 0:
        raise ValueError("empty training batch")
    T = np.asarray(targets, dtype=float)
    if T.ndim == 1:
        T = T[:, None] if net.output_dim == 1 and T.shape[0] == X.shape[0] else np.atleast_2d(T)
    Y, caches = net._forward_cached(X)
    diff = Y - T
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss} on batch of {X.shape[0]} (|Y|max={np.abs(Y).max()})")
    grads, _ = net._backward(caches, 2.0 * diff / diff.size)
    optimizer.step(net.params(), grads)
    return loss


class RecurrentCell:
    """Gated memory cell (input/forget/output/candidate gates) with a scalar head."""

    kind = "recurrent"

    def __init__(self, input_dim: int, hidden_dim: int, seed: int | None = 0):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        rng = np.random.default_rng(seed)
        h = self.hidden_dim
        self.wx = _uniform_fan_in(rng, self.input_dim, (4 * h, self.input_dim))
        self.wh = _uniform_fan_in(rng, h, (4 * h, h))
        self.b = np.zeros(4 * h)
        self.b[h:2 * h] = 1.0  # forget-gate bias opens the memory path early
        self.head_w = _uniform_fan_in(rng, h, (h,))
        self.head_b = np.zeros(1)

    def params(self) -> list[np.ndarray]:
        return [self.wx, self.wh, self.b, self.head_w, self.head_b]

    def copy(self) -> "RecurrentCell":
        twin = RecurrentCell.__new__(RecurrentCell)
        twin.input_dim = self.input_dim
        twin.hidden_dim = self.hidden_dim
        twin.wx = self.wx.copy()
        twin.wh = self.wh.copy()
        twin.b = self.b.copy()
        twin.head_w = self.head_w.copy()
        twin.head_b = self.head_b.copy()
        return twin

    def _as_batch(self, seq):
        seq = np.asarray(seq, dtype=float)
        if seq.ndim == 1:
            seq = seq[:, None]
        single = seq.ndim == 2
        X = seq[None, ...] if single else seq
        if X.shape[2] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {X.shape[2]}")
        if X.shape[1] == 0:
            raise ValueError("empty sequence")
        return X, single

    def _forward_cached(self, X):
        n, steps, _ = X.shape
        h = np.zeros((n, self.hidden_dim))
        c = np.zeros((n, self.hidden_dim))
        caches = []
        hd = self.hidden_dim
        for t in range(steps):
            z = X[:, t, :] @ self.wx.T + h @ self.wh.T + self.b
            gi = _sigmoid(z[:, :hd])
            gf = _sigmoid(z[:, hd:2 * hd])
            go = _sigmoid(z[:, 2 * hd:3 * hd])
            gc = np.tanh(z[:, 3 * hd:])
            c_new = gf * c + gi * gc
            tanh_c = np.tanh(c_new)
            h_new = go * tanh_c
            caches.append((X[:, t, :], h, c, gi, gf, go, gc, tanh_c))
            h, c = h_new, c_new
        pred = h @ self.head_w + self.head_b[0]
        return h, c, pred, caches

    def forward(self, seq):
        """Run the recurrence from a zero state; returns (final hidden state, prediction).

        State is reset on every call, so independent sequences never leak into
        each other.
        """
        X, single = self._as_batch(seq)
        assert np.max(np.abs(X), initial=0.0) <= INPUT_SCALE_LIMIT, \
            "inputs should be scaled to roughly [-1, 1]"
        h, _, pred, _ = self._forward_cached(X)
        if single:
            return h[0], float(pred[0])
        return h, pred

    def _backward(self, X, caches, d_pred, h_final):
        n = X.shape[0]
        hd = self.hidden_dim
        d_wx = np.zeros_like(self.wx)
        d_wh = np.zeros_like(self.wh)
        d_b = np.zeros_like(self.b)
        d_head_w = d_pred @ h_final
        d_head_b = np.array([d_pred.sum()])
        dh = d_pred[:, None] * self.head_w[None, :]
        dc = np.zeros((n, hd))
        for t in range(len(caches) - 1, -1, -1):
            x_t, h_prev, c_prev, gi, gf, go, gc, tanh_c = caches[t]
            d_go = dh * tanh_c
            dc = dc + dh * go * (1.0 - tanh_c * tanh_c)
            d_gf = dc * c_prev
            d_gi = dc * gc
            d_gc = dc * gi
            dz = np.concatenate([
                d_gi * gi * (1.0 - gi),
                d_gf * gf * (1.0 - gf),
                d_go * go * (1.0 - go),
                d_gc * (1.0 - gc * gc),
            ], axis=1)
            d_wx += dz.T @ x_t
            d_wh += dz.T @ h_prev
            d_b += dz.sum(axis=0)
            dh = dz @ self.wh
            dc = dc * gf
        return [d_wx, d_wh, d_b, d_head_w, d_head_b]

    def loss_and_grads(self, seq, target):
        X, single = self._as_batch(seq)
        targets = np.atleast_1d(np.asarray(target, dtype=float))
        h, _, pred, caches = self._forward_cached(X)
        diff = pred - targets
        loss = float(np.mean(diff * diff))
        d_pred = 2.0 * diff / diff.size
        grads = self._backward(X, caches, d_pred, h)
        return loss, np.concatenate([g.ravel() for g in grads])

    @property
    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat_params(self, theta: np.ndarray) -> None:
        offset = 0
        for p in self.params():
            p[...] = theta[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != theta.size:
            raise ValueError("parameter vector size mismatch")

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(f"{CHECKPOINT_MAGIC} {self.kind}\n")
            f.write(f"dims {self.input_dim} {self.hidden_dim}\n")
            for name, arr in zip(("Wx", "Wh", "b", "head_w", "head_b"), self.params()):
                _write_array(f, name, arr)

    @staticmethod
    def load(path) -> "RecurrentCell":
        with open(path) as f:
            header = f.readline().split()
            if " ".join(header[:2]) != CHECKPOINT_MAGIC or header[2] != "recurrent":
                raise ValueError(f"not a recurrent checkpoint: {path}")
            _, d_in, d_hid = f.readline().split()
            cell = RecurrentCell(int(d_in), int(d_hid), seed=None)
            h = cell.hidden_dim
            cell.wx = _read_array(f, "Wx", (4 * h, cell.input_dim))
            cell.wh = _read_array(f, "Wh", (4 * h, h))
            cell.b = _read_array(f, "b", (4 * h,))
            cell.head_w = _read_array(f, "head_w", (h,))
            cell.head_b = _read_array(f, "head_b", (1,))
        return cell


def recurrent_forward(cell: RecurrentCell, seq):
    """Final hidden state and scalar head prediction for one sequence."""
    return cell.forward(seq)


def recurrent_train_step(cell: RecurrentCell, sequences, targets, optimizer: Adam) -> float:
    """One optimizer step on (sequence, target) pairs; returns pre-update MSE."""
    X, _ = cell._as_batch(np.asarray(sequences, dtype=float))
    loss, flat = cell.loss_and_grads(X, targets)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite recurrent loss {loss}")
    grads = []
    offset = 0
    for p in cell.params():
        grads.append(flat[offset:offset + p.size].reshape(p.shape))
        offset += p.size
    optimizer.step(cell.params(), grads)
    return loss


def grad_check(model, x, target, step: float = 1e-5, abs_switch: float = 1e-6) -> float:
    """Max relative error between backprop and central finite differences.

    Near-zero gradient pairs (both below abs_switch) are compared absolutely,
    so a zero-gradient model reports the raw numeric residual.
    """
    _, analytic = model.loss_and_grads(x, target)
    theta = model.flat_params.copy()
    if theta.size > 2000:
        raise ValueError(f"grad_check is for small models, got {theta.size} parameters")
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        for sign in (1.0, -1.0):
            theta[i] += sign * step
            model.set_flat_params(theta)
            loss, _ = model.loss_and_grads(x, target)
            numeric[i] += sign * loss / (2.0 * step)
            theta[i] -= sign * step
    model.set_flat_params(theta)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    rel = np.where(scale < abs_switch, err, err / np.maximum(scale, 1e-300))
    return float(rel.max())


def _write_array(f, name: str, arr: np.ndarray) -> None:
    f.write(f"param {name} {' '.join(str(d) for d in arr.shape)}\n")
    f.write(" ".join(float(v).hex() for v in arr.ravel()) + "\n")


def _read_array(f, name: str, shape) -> np.ndarray:
    header = f.readline().split()
    if header[:2] != ["param", name]:
        raise ValueError(f"expected param {name}, got {header}")
    got_shape = tuple(int(d) for d in header[2:])
    if got_shape != tuple(shape):
        raise ValueError(f"shape mismatch for {name}: {got_shape} vs {shape}")
    vals = np.array([float.fromhex(tok) for tok in f.readline().split()])
    return vals.reshape(shape)
