"""GRU policy network, parameter flattening, and optimizer utilities.

One architecture serves every agent type: a single GRU layer (hidden size
16 by default) reading a one-hot observation code, with a 2-logit actor
head and a scalar critic head on the new hidden state.

Two synchronized implementations of the forward step exist: a plain numpy
kernel for acting (no gradient bookkeeping) and a taped version for
training. They perform the identical float64 operations in the identical
order, so re-unrolling a stored episode reproduces the stored numbers
bit-for-bit. Keep them in lockstep when editing either.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class GruPolicy:
    """Network dimensions; the parameters themselves live in plain dicts."""

    input_dim: int
    hidden_dim: int = 16
    n_actions: int = 2

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        i, h, a = self.input_dim, self.hidden_dim, self.n_actions
        names = []
        for gate in ("z", "r", "c"):
            names += [
                (f"w_{gate}x", (i, h)),
                (f"w_{gate}h", (h, h)),
                (f"b_{gate}", (h,)),
            ]
        names += [("w_actor", (h, a)), ("b_actor", (a,)), ("w_critic", (h, 1)), ("b_critic", (1,))]
        return names

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Fresh unbatched parameters.

        Gate weights use scaled-uniform (Glorot-style) init, head weights a
        small 0.01 scale so initial action distributions stay near uniform,
        and all biases start at zero.
        """
        params: dict[str, np.ndarray] = {}
        for name, shape in self.layout():
            if name.startswith("b_"):
                params[name] = np.zeros(shape)
            elif name.startswith("w_actor") or name.startswith("w_critic"):
                params[name] = rng.uniform(-0.01, 0.01, size=shape)
            else:
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                params[name] = rng.uniform(-bound, bound, size=shape)
        return params


# ---------------------------------------------------------------------------
# Flat parameter vectors
# ---------------------------------------------------------------------------


def flatten_params(params: dict[str, np.ndarray], layout) -> np.ndarray:
    return np.concatenate([np.asarray(params[name]).reshape(-1) for name, _ in layout])


def unflatten_params(vec: np.ndarray, layout) -> dict[str, np.ndarray]:
    params = {}
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape))
        params[name] = vec[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != vec.shape[-1]:
        raise ValueError(f"flat vector length {vec.shape[-1]} does not match layout size {offset}")
    return params


def unflatten_params_batch(mat: np.ndarray, layout) -> dict[str, np.ndarray]:
    """(B, P) matrix of flat vectors -> dict of (B, *shape) arrays."""
    mat = np.atleast_2d(mat)
    params = {}
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape))
        params[name] = mat[:, offset : offset + size].reshape((mat.shape[0],) + shape).copy()
        offset += size
    if offset != mat.shape[1]:
        raise ValueError(f"flat vector length {mat.shape[1]} does not match layout size {offset}")
    return params


def flatten_params_batch(params: dict[str, np.ndarray], layout) -> np.ndarray:
    batch = next(iter(params.values())).shape[0]
    return np.concatenate(
        [np.asarray(params[name]).reshape(batch, -1) for name, _ in layout], axis=1
    )


def stack_params(dicts: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Stack unbatched parameter dicts into one batched dict."""
    return {name: np.stack([d[name] for d in dicts]) for name in dicts[0]}


# ---------------------------------------------------------------------------
# Forward steps
# ---------------------------------------------------------------------------


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _bmm_np(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.shape[0] == 1:
        return x @ w[0]
    return np.einsum("bi,bio->bo", x, w)


def _take_np(w: np.ndarray, codes: np.ndarray) -> np.ndarray:
    if w.shape[0] == 1:
        return w[0][codes]
    return w[np.arange(codes.shape[0]), codes]


def gru_forward_np(
    params: dict[str, np.ndarray], codes: np.ndarray, hidden: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Acting-path GRU step: (logits (B, A), value (B,), new hidden (B, H)).

    `params` arrays carry a leading stack axis of size 1 (shared) or B.
    The observation enters as an integer code indexing the one-hot input
    weights, so the input matmul reduces to a row gather.
    """
    z = _sigmoid_np((_take_np(params["w_zx"], codes) + _bmm_np(hidden, params["w_zh"])) + params["b_z"])
    r = _sigmoid_np((_take_np(params["w_rx"], codes) + _bmm_np(hidden, params["w_rh"])) + params["b_r"])
    c = np.tanh(
        (_take_np(params["w_cx"], codes) + _bmm_np(r * hidden, params["w_ch"])) + params["b_c"]
    )
    new_hidden = (1.0 - z) * hidden + z * c
    logits = _bmm_np(new_hidden, params["w_actor"]) + params["b_actor"]
    value = (_bmm_np(new_hidden, params["w_critic"]) + params["b_critic"])[:, 0]
    return logits, value, new_hidden


def gru_step(
    params: dict[str, Tensor], codes: np.ndarray, hidden: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """Taped GRU step; mirrors :func:`gru_forward_np` operation-for-operation."""
    z = ad.sigmoid(ad.add(ad.add(ad.take_rows(params["w_zx"], codes), ad.bmm(hidden, params["w_zh"])), params["b_z"]))
    r = ad.sigmoid(ad.add(ad.add(ad.take_rows(params["w_rx"], codes), ad.bmm(hidden, params["w_rh"])), params["b_r"]))
    c = ad.tanh(
        ad.add(ad.add(ad.take_rows(params["w_cx"], codes), ad.bmm(ad.mul(r, hidden), params["w_ch"])), params["b_c"])
    )
    new_hidden = ad.add(ad.mul(ad.sub(1.0, z), hidden), ad.mul(z, c))
    logits = ad.add(ad.bmm(new_hidden, params["w_actor"]), params["b_actor"])
    value = ad.reshape(ad.add(ad.bmm(new_hidden, params["w_critic"]), params["b_critic"]), (codes.shape[0],))
    return logits, value, new_hidden


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shift = logits - logits.max(axis=1, keepdims=True)
    return shift - np.log(np.sum(np.exp(shift), axis=1, keepdims=True))


def log_softmax(logits: Tensor) -> Tensor:
    """Taped log-softmax over the trailing axis of a (B, A) tensor.

    The max shift is a constant (no gradient flows through it), which
    leaves the function value and all derivatives exact while matching the
    numpy path bitwise.
    """
    shift = ad.sub(logits, Tensor(logits.value.max(axis=1, keepdims=True)))
    return ad.sub(shift, ad.log(ad.tsum(ad.exp(shift), axis=1, keepdims=True)))


# ---------------------------------------------------------------------------
# Optimizer utilities
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the bias-correction step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    maximize: bool = False,
) -> None:
    """In-place Adam step over a parameter dict (descent by default)."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if maximize:
            g = -g
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    moments: tuple[np.ndarray, np.ndarray, int],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    maximize: bool = False,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, int]]:
    """Pure flat-vector Adam with bias correction; returns new params/moments."""
    m, v, t = moments
    t = t + 1
    g = -grads if maximize else grads
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, (m, v, t)


def clip_global_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale a flat gradient vector so its L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.sqrt(np.sum(grads * grads)))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def clip_global_norm_dict(grads: dict[str, np.ndarray], max_norm: float, batched: bool) -> None:
    """In-place global-norm clip over a gradient dict.

    With `batched`, arrays carry a leading batch axis and each batch
    element's own gradient vector is clipped independently.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    if not batched:
        sq = sum(float(np.sum(g * g)) for g in grads.values())
        norm = np.sqrt(sq)
        if norm > max_norm:
            scale = max_norm / norm
            for g in grads.values():
                g *= scale
        return
    batch = next(iter(grads.values())).shape[0]
    sq = np.zeros(batch)
    for g in grads.values():
        sq += (g * g).reshape(batch, -1).sum(axis=1)
    norms = np.sqrt(sq)
    scale = np.where(norms > max_norm, max_norm / np.maximum(norms, 1e-300), 1.0)
    for name, g in grads.items():
        g *= scale.reshape((batch,) + (1,) * (g.ndim - 1))
