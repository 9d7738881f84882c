"""Minimal differentiable function approximator.

Dense feed-forward networks with tanh hidden layers and either a linear head
(critics) or a softmax head (policies), hand-written reverse-mode gradients,
and a flat parameter view so every gradient in the package can be verified
against central finite differences.  Everything is float64 numpy; no
autograd framework.

``backward`` takes the upstream gradient with respect to the network OUTPUT
(probabilities for a softmax head), so losses can be written directly in
terms of probabilities and values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tiny probability floor folded into the softmax so outputs are strictly
# positive even for extreme logits; backward accounts for it exactly.
PROB_FLOOR = 1e-12

CHECKPOINT_VERSION = 1


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax with a strictly-positive floor; sums to 1 exactly
    up to rounding."""
    z = logits - np.max(logits)
    e = np.exp(z)
    p = e / e.sum()
    k = p.size
    return (p + PROB_FLOOR) / (1.0 + k * PROB_FLOOR)


class Mlp:
    """Fully connected net: tanh hidden layers, linear or softmax head."""

    def __init__(self, layer_sizes, head: str = "linear", seed=0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if head not in ("linear", "softmax"):
            raise ValueError(f"unknown head {head!r}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.head = head
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- forward / backward --------------------------------------------------

    def _forward_cached(self, x: np.ndarray) -> list[np.ndarray]:
        """Activations per layer, input included; last entry is the raw head
        pre-activation (logits or value)."""
        a = [np.asarray(x, dtype=float)]
        if a[0].shape != (self.layer_sizes[0],):
            raise ValueError(
                f"input shape {a[0].shape} incompatible with input size "
                f"{self.layer_sizes[0]}"
            )
        h = a[0]
        for i in range(self.n_layers):
            z = h @ self.weights[i] + self.biases[i]
            h = np.tanh(z) if i < self.n_layers - 1 else z
            a.append(h)
        return a

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Output for a single input vector: probabilities (softmax head) or
        raw values (linear head)."""
        out = self._forward_cached(x)[-1]
        if self.head == "softmax":
            return stable_softmax(out)
        return out

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Flat parameter gradient of the scalar loss whose gradient with
        respect to the network output is ``upstream``."""
        acts = self._forward_cached(x)
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != acts[-1].shape:
            raise ValueError(
                f"upstream shape {upstream.shape} incompatible with output "
                f"shape {acts[-1].shape}"
            )
        if self.head == "softmax":
            logits = acts[-1]
            z = logits - np.max(logits)
            e = np.exp(z)
            p_raw = e / e.sum()
            u = upstream / (1.0 + p_raw.size * PROB_FLOOR)
            g = p_raw * u - p_raw * (p_raw @ u)
        else:
            g = upstream
        grads_w: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        grads_b: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        for i in reversed(range(self.n_layers)):
            grads_w[i] = np.outer(acts[i], g)
            grads_b[i] = g.copy()
            if i > 0:
                g = (self.weights[i] @ g) * (1.0 - acts[i] ** 2)
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)]
        )

    # -- flat parameter view ---------------------------------------------------

    def get_params(self) -> np.ndarray:
        """Flat copy of all trainable scalars, layer by layer (weights then
        bias per layer)."""
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector of length {flat.size} does not match "
                f"layout size {self.n_params}"
            )
        pos = 0
        for i in range(self.n_layers):
            w, b = self.weights[i], self.biases[i]
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators and step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns fresh arrays, inputs untouched."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/state layouts do not match")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, step=t)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale the gradient to global L2 norm ``max_norm`` if it exceeds it."""
    norm = float(np.linalg.norm(grad))
    if norm > max_norm and norm > 0.0:
        return grad * (max_norm / norm)
    return grad


# -- checkpointing --------------------------------------------------------------


def save_checkpoint(path, net: Mlp, adam: AdamState | None = None) -> None:
    """Versioned binary dump of architecture, parameters, and optimizer state;
    round-trips exactly."""
    arrays = {
        "version": np.array([CHECKPOINT_VERSION]),
        "layer_sizes": np.array(net.layer_sizes),
        "head": np.array(net.head),
        "params": net.get_params(),
    }
    if adam is not None:
        arrays["adam_m"] = adam.m
        arrays["adam_v"] = adam.v
        arrays["adam_step"] = np.array([adam.step])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Mlp, AdamState | None]:
    with open(path, "rb") as fh:
        data = np.load(fh, allow_pickle=False)
        version = int(data["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        net = Mlp(tuple(int(s) for s in data["layer_sizes"]), head=str(data["head"]))
        net.set_params(data["params"])
        adam = None
        if "adam_m" in data:
            adam = AdamState(
                m=data["adam_m"].copy(),
                v=data["adam_v"].copy(),
                step=int(data["adam_step"][0]),
            )
    return net, adam
