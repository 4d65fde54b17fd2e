"""Minimal numpy networks with hand-written reverse mode.

Only what the agents and attacks need: fully connected stacks, a tanh
recurrent cell, softmax with temperature, the radial ball projection used
as the attack actor's last layer, and Adam. Everything is float64 and
batched along the first axis.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - y * y)
    return g


@dataclass
class Layer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "relu"

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int, activation: str) -> Layer:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    lim = 1.0 / np.sqrt(fan_in)
    return Layer(rng.uniform(-lim, lim, (fan_in, fan_out)), rng.uniform(-lim, lim, fan_out), activation)


class Mlp:
    """Stack of affine layers, each followed by its activation."""

    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers[:-1], layers[1:]):
            if a.fan_out != b.fan_in:
                raise ValueError("layer dimensions do not chain")
        self.layers = layers

    @classmethod
    def build(cls, sizes, activations, rng: np.random.Generator) -> Mlp:
        """``sizes = (in, h1, ..., out)``; one activation per layer."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        return cls([init_layer(rng, a, b, act) for a, b, act in zip(sizes[:-1], sizes[1:], activations)])

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> Mlp:
        return Mlp([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def forward(self, x: np.ndarray):
        """Returns ``(output, cache)``; 1-D inputs give 1-D outputs."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {h.shape[-1]} != {self.in_dim}")
        trace = [h]
        for layer in self.layers:
            z = h @ layer.W + layer.b
            h = _act(layer.activation, z)
            trace += [z, h]
        return (h[0] if squeeze else h), (trace, squeeze)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Returns ``(param_grads, input_grad)``; grads line up with :meth:`params`."""
        trace, squeeze = cache
        g = np.asarray(grad_out, dtype=float)
        if squeeze:
            g = g[None, :]
        if g.shape != trace[-1].shape:
            raise ValueError(f"output grad shape {g.shape} != {trace[-1].shape}")
        grads: list[np.ndarray] = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_in, z, y = trace[2 * i], trace[2 * i + 1], trace[2 * i + 2]
            g = _act_grad(layer.activation, z, y, g)
            grads = [h_in.T @ g, g.sum(axis=0)] + grads
            g = g @ layer.W.T
        return grads, (g[0] if squeeze else g)

    def input_grad(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        _, cache = self.forward(x)
        return self.backward(cache, grad_out)[1]


class RecurrentNet:
    """``h_t = tanh(x_t W_x + h_{t-1} W_h + b)`` followed by an MLP head on ``h_t``."""

    def __init__(self, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray, head: Mlp):
        if Wx.shape[1] != Wh.shape[0] or Wh.shape[0] != Wh.shape[1] or head.in_dim != Wh.shape[0]:
            raise ValueError("recurrent dimensions do not chain")
        self.Wx, self.Wh, self.b, self.head = Wx, Wh, b, head

    @classmethod
    def build(cls, in_dim: int, hidden: int, head_sizes, head_activations, rng: np.random.Generator) -> RecurrentNet:
        lim = 1.0 / np.sqrt(in_dim + hidden)
        Wx = rng.uniform(-lim, lim, (in_dim, hidden))
        Wh = rng.uniform(-lim, lim, (hidden, hidden))
        b = rng.uniform(-lim, lim, hidden)
        head = Mlp.build((hidden, *head_sizes), head_activations, rng)
        return cls(Wx, Wh, b, head)

    @property
    def in_dim(self) -> int:
        return self.Wx.shape[0]

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @property
    def out_dim(self) -> int:
        return self.head.out_dim

    def params(self) -> list[np.ndarray]:
        return [self.Wx, self.Wh, self.b] + self.head.params()

    def copy(self) -> RecurrentNet:
        return RecurrentNet(self.Wx.copy(), self.Wh.copy(), self.b.copy(), self.head.copy())

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        return np.zeros(self.hidden) if batch is None else np.zeros((batch, self.hidden))

    def step(self, x: np.ndarray, h: np.ndarray):
        """One time step for inference: returns ``(output, new_hidden)``."""
        h_new = np.tanh(np.asarray(x, dtype=float) @ self.Wx + h @ self.Wh + self.b)
        return self.head(h_new), h_new

    def forward_sequence(self, xs: np.ndarray, h0: np.ndarray | None = None, mask: np.ndarray | None = None):
        """``xs`` is ``(T, batch, in)``; returns outputs ``(T, batch, out)`` and a cache.

        Where ``mask[t, b]`` is False the hidden state is held at zero, so a
        masked prefix behaves like a fresh start at the first valid step.
        """
        xs = np.asarray(xs, dtype=float)
        T, B, _ = xs.shape
        m = np.ones((T, B)) if mask is None else np.asarray(mask, dtype=float)
        h = self.initial_state(B) if h0 is None else h0
        hs = [h]
        for t in range(T):
            h = np.tanh(xs[t] @ self.Wx + h @ self.Wh + self.b) * m[t][:, None]
            hs.append(h)
        H = np.stack(hs[1:])  # (T, B, hidden)
        out, head_cache = self.head.forward(H.reshape(T * B, -1))
        return out.reshape(T, B, -1), (xs, hs, head_cache, m)

    def backward_sequence(self, cache, grad_out: np.ndarray):
        """Backprop through time over the whole window; returns ``(param_grads, input_grads)``."""
        xs, hs, head_cache, m = cache
        T, B, _ = xs.shape
        head_grads, gH = self.head.backward(head_cache, grad_out.reshape(T * B, -1))
        gH = gH.reshape(T, B, -1)
        dWx = np.zeros_like(self.Wx)
        dWh = np.zeros_like(self.Wh)
        db = np.zeros_like(self.b)
        gx = np.zeros_like(xs)
        carry = np.zeros((B, self.hidden))
        for t in range(T - 1, -1, -1):
            h = hs[t + 1]
            gz = (gH[t] + carry) * (1.0 - h * h) * m[t][:, None]
            dWx += xs[t].T @ gz
            dWh += hs[t].T @ gz
            db += gz.sum(axis=0)
            gx[t] = gz @ self.Wx.T
            carry = gz @ self.Wh.T
        return [dWx, dWh, db] + head_grads, gx


# ---------------------------------------------------------------------------


def softmax_temp(logits: np.ndarray, T: float = 1.0) -> np.ndarray:
    if T <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits, dtype=float) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray, T: float = 1.0) -> np.ndarray:
    """Vector-Jacobian product of :func:`softmax_temp` w.r.t. the logits."""
    return p * (grad_p - (grad_p * p).sum(axis=-1, keepdims=True)) / T


def _norm(x: np.ndarray, ord) -> np.ndarray:
    return np.linalg.norm(x, ord=ord, axis=-1, keepdims=True)


def _norm_grad(x: np.ndarray, ord) -> np.ndarray:
    if ord == 2:
        n = _norm(x, 2)
        return np.divide(x, n, out=np.zeros_like(x), where=n > 0)
    if ord == 1:
        return np.sign(x)
    # inf-norm: derivative picks the largest-magnitude coordinate
    g = np.zeros_like(x)
    idx = np.argmax(np.abs(x), axis=-1)
    np.put_along_axis(g, idx[..., None], np.take_along_axis(np.sign(x), idx[..., None], -1), -1)
    return g


def project_ball(x: np.ndarray, epsilon: float, lam: float = 1e-6, ord=2) -> np.ndarray:
    """``min(1, eps / (||x|| + lam)) * x`` along the last axis."""
    if epsilon < 0 or lam < 0:
        raise ValueError("epsilon and lambda must be non-negative")
    x = np.asarray(x, dtype=float)
    n = _norm(x, ord)
    denom = n + lam
    scale = np.ones_like(n)
    np.divide(epsilon, denom, out=scale, where=denom > epsilon)
    return np.minimum(scale, 1.0) * x


def project_ball_backward(x: np.ndarray, epsilon: float, grad_out: np.ndarray, lam: float = 1e-6, ord=2) -> np.ndarray:
    """Exact vector-Jacobian product of :func:`project_ball`."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad_out, dtype=float)
    n = _norm(x, ord)
    denom = n + lam
    outside = denom > epsilon
    c = np.where(outside, epsilon / np.where(outside, denom, 1.0), 1.0)
    dc = np.where(outside, -epsilon / np.where(outside, denom, 1.0) ** 2, 0.0) * _norm_grad(x, ord)
    return c * g + dc * (x * g).sum(axis=-1, keepdims=True)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        """In-place update of ``self.params``."""
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if total > self.clip_norm:
                grads = [g * (self.clip_norm / total) for g in grads]
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def adam_step(params, grads, state: Adam) -> list[np.ndarray]:
    state.step(grads)
    return params


def soft_update(target, source, tau: float) -> None:
    for t, s in zip(target.params(), source.params()):
        t *= 1.0 - tau
        t += tau * s


def hard_update(target, source) -> None:
    for t, s in zip(target.params(), source.params()):
        t[...] = s


# ---------------------------------------------------------------------------
# text model format


def _fmt(a: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(a))


def dump_net(net) -> str:
    out = io.StringIO()
    out.write("netfmt 1\n")
    if isinstance(net, RecurrentNet):
        out.write(f"cell {net.in_dim} {net.hidden}\n")
        for row in net.Wx:
            out.write(_fmt(row) + "\n")
        for row in net.Wh:
            out.write(_fmt(row) + "\n")
        out.write(_fmt(net.b) + "\n")
        layers = net.head.layers
    else:
        layers = net.layers
    for layer in layers:
        out.write(f"layer {layer.fan_in} {layer.fan_out} {layer.activation}\n")
        for row in layer.W:
            out.write(_fmt(row) + "\n")
        out.write(_fmt(layer.b) + "\n")
    return out.getvalue()


def load_net(text: str):
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or lines[0].split() != ["netfmt", "1"]:
        raise ValueError("not a netfmt 1 model")
    i = 1

    def matrix(rows, cols):
        nonlocal i
        m = np.array([[float(v) for v in lines[i + k].split()] for k in range(rows)])
        i += rows
        if m.shape != (rows, cols):
            raise ValueError("matrix block has the wrong shape")
        return m

    cell = None
    if lines[i].startswith("cell"):
        _, din, hid = lines[i].split()
        din, hid = int(din), int(hid)
        i += 1
        Wx, Wh = matrix(din, hid), matrix(hid, hid)
        b = matrix(1, hid)[0]
        cell = (Wx, Wh, b)
    layers = []
    while i < len(lines):
        kind, fin, fout, act = lines[i].split()
        if kind != "layer":
            raise ValueError(f"unexpected record {kind!r}")
        i += 1
        W = matrix(int(fin), int(fout))
        b = matrix(1, int(fout))[0]
        layers.append(Layer(W, b, act))
    head = Mlp(layers)
    return RecurrentNet(*cell, head) if cell else head
