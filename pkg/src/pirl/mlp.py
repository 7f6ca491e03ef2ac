"""Small fully-connected networks with hand-written backpropagation and Adam.

All parameters of a network live in one flat float64 vector; the per-layer
weight matrices and bias vectors are views into it. That keeps the optimizer,
soft target updates and checkpointing to single vectorised operations.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DivergenceError, UsageError

_MAGIC = "pirl-mlp 1"


class MLP:
    """ReLU (or tanh) hidden layers with an identity head or a tanh head mapped onto ``bounds``."""

    def __init__(self, sizes, output="identity", bounds=None, params=None, hidden="relu"):
        sizes = tuple(int(n) for n in sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if min(sizes) < 1:
            raise ValueError(f"zero-width layer in {sizes}")
        if output not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {output!r}")
        if hidden not in ("relu", "tanh"):
            raise ValueError(f"unknown hidden activation {hidden!r}")
        self.hidden = hidden
        if output == "tanh":
            lo, hi = bounds
            if not lo < hi:
                raise ValueError("tanh head needs lo < hi")
            self.bounds = (float(lo), float(hi))
        else:
            self.bounds = None
        self.sizes = sizes
        self.output = output
        n = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        if params is None:
            params = np.zeros(n)
        params = np.array(params, dtype=np.float64)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.version = 0
        self._bind()

    def _bind(self):
        self._offs = self._offsets()
        self.W, self.b = [], []
        i = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self.W.append(self.params[i:i + a * b].reshape(a, b))
            i += a * b
            self.b.append(self.params[i:i + b])
            i += b

    @property
    def n_params(self) -> int:
        return self.params.size

    def touch(self):
        """Mark parameters as modified so cached activations become stale."""
        self.version += 1

    def copy(self) -> "MLP":
        return MLP(self.sizes, self.output, self.bounds, self.params.copy(), self.hidden)

    def forward(self, x):
        """Evaluate on a batch ``(N, n_in)``; returns ``(y, cache)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.W) - 1
        act = np.tanh if self.hidden == "tanh" else (lambda z: np.maximum(z, 0.0))
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            h = act(z) if i < last else z
            acts.append(h)
        if self.output == "tanh":
            lo, hi = self.bounds
            th = np.tanh(h)
            y = 0.5 * (hi + lo) + 0.5 * (hi - lo) * th
        else:
            th = None
            y = h
        return y, (self.version, acts, th)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, grad_pre=None, params=True):
        """Reverse-mode pass for ``sum(grad_out * y)``.

        ``grad_pre`` optionally adds a gradient taken w.r.t. the pre-head
        activation (the tanh argument). Returns ``(grad_params, grad_input)``
        with ``grad_params`` laid out like :attr:`params`; with
        ``params=False`` only the input gradient is formed and the first item
        is None.
        """
        version, acts, th = cache
        if version != self.version:
            raise UsageError("stale forward cache: parameters changed since forward()")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g.reshape(acts[-1].shape)
        if th is not None:
            lo, hi = self.bounds
            g = g * (0.5 * (hi - lo)) * (1.0 - th * th)
        if grad_pre is not None:
            g = g + np.asarray(grad_pre, dtype=np.float64).reshape(g.shape)
        grad = np.empty_like(self.params) if params else None
        for i in range(len(self.W) - 1, -1, -1):
            if params:
                o, n_w, n_b = self._offs[i]
                np.dot(acts[i].T, g, out=grad[o:o + n_w].reshape(self.W[i].shape))
                np.sum(g, axis=0, out=grad[o + n_w:o + n_w + n_b])
            g = g @ self.W[i].T
            if i > 0:
                if self.hidden == "tanh":
                    g *= 1.0 - acts[i] * acts[i]
                else:
                    g *= acts[i] > 0
        return grad, g

    def _offsets(self):
        out, i = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            out.append((i, a * b, b))
            i += a * b + b
        return out

    # ------------------------------------------------------------------ checkpoints

    def save(self, path) -> None:
        head = [_MAGIC, "sizes " + " ".join(map(str, self.sizes)), "output " + self.output]
        if self.bounds is not None:
            head[-1] += " %r %r" % self.bounds
        if self.hidden != "relu":
            head.append("hidden " + self.hidden)
        body = [float(x).hex() for x in self.params]
        Path(path).write_text("\n".join(head + body) + "\n")

    @classmethod
    def load(cls, path) -> "MLP":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != _MAGIC:
            raise ValueError(f"{path}: not a {_MAGIC} checkpoint")
        sizes = [int(t) for t in lines[1].split()[1:]]
        out = lines[2].split()
        bounds = (float(out[2]), float(out[3])) if out[1] == "tanh" else None
        body, hidden = lines[3:], "relu"
        if body and body[0].startswith("hidden "):
            hidden, body = body[0].split()[1], body[1:]
        params = np.array([float.fromhex(t) for t in body])
        return cls(sizes, out[1], bounds, params, hidden)


def init(seed, layer_sizes, output="identity", bounds=None, final_scale=3e-3, hidden="relu") -> MLP:
    """Fan-in scaled uniform initialisation; the last layer starts near zero."""
    net = MLP(layer_sizes, output, bounds, hidden=hidden)
    rng = np.random.default_rng(seed)
    last = len(net.W) - 1
    for i, (W, b) in enumerate(zip(net.W, net.b)):
        lim = final_scale if i == last else 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-lim, lim, W.shape)
        b[...] = rng.uniform(-lim, lim, b.shape)
    return net


class Adam:
    """Adaptive-moment optimizer with bias correction over a flat vector."""

    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, net: MLP, grad) -> MLP:
        return apply_gradients(self, net, grad)


def apply_gradients(opt: Adam, net: MLP, grads) -> MLP:
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != net.params.shape:
        raise ValueError(f"gradient shape {grads.shape} != {net.params.shape}")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient")
    opt.t += 1
    opt.m *= opt.beta1
    opt.m += (1 - opt.beta1) * grads
    opt.v *= opt.beta2
    opt.v += (1 - opt.beta2) * grads * grads
    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
    c1 = 1 - opt.beta1 ** opt.t
    c2 = math.sqrt(1 - opt.beta2 ** opt.t)
    den = np.sqrt(opt.v)
    den /= c2
    den += opt.eps
    net.params -= (opt.lr / c1) * opt.m / den
    net.touch()
    return net


def soft_update(target: MLP, online: MLP, tau_soft: float) -> MLP:
    """Move ``target`` toward ``online`` in place: ``tau*online + (1-tau)*target``."""
    if target.sizes != online.sizes:
        raise ValueError(f"shape mismatch {target.sizes} vs {online.sizes}")
    target.params *= 1.0 - tau_soft
    target.params += tau_soft * online.params
    target.touch()
    return target
