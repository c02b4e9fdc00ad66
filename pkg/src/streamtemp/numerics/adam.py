"""Adam optimizer over named parameter groups.

Parameters are grouped so the fine-tuning strategies can freeze whole
groups; frozen tensors are never touched (bit-identical across a run)
while the step counter still advances.
"""

import numpy as np

from .tensor import Tensor

GROUP_NAMES = ("encoder", "characteristics_mlp", "gate", "pooling", "head", "embedding_z")


class ParamGroup:
    """A named set of trainable tensors; every tensor lives in exactly one group."""

    def __init__(self, name, tensors):
        if name not in GROUP_NAMES:
            raise ValueError(f"unknown parameter group {name!r}")
        self.name = name
        self.tensors = dict(tensors)

    def items(self):
        return self.tensors.items()


class AdamState:
    """First/second-moment accumulators plus hyperparameters.

    lr defaults to the pretraining rate; clip_norm (optional) rescales
    the global gradient norm over trainable tensors before the update.
    """

    def __init__(self, groups, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=None, frozen=()):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.frozen = frozenset(frozen)
        self.step_count = 0
        self.m = {}
        self.v = {}
        for group in groups:
            for name, t in group.items():
                self.m[name] = np.zeros_like(t.data)
                self.v[name] = np.zeros_like(t.data)


def adam_step(groups, grads, state):
    """Apply one Adam update in place to all non-frozen groups.

    `grads` maps tensor name -> ndarray; missing entries count as zero
    gradient. Tensors in frozen groups keep their exact bytes.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2

    live = []
    for group in groups:
        if group.name in state.frozen:
            continue
        for name, tensor in group.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(tensor.data)
            elif g.shape != tensor.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {tensor.data.shape}")
            live.append((name, tensor, g))

    if state.clip_norm is not None and live:
        total = np.sqrt(sum(float(np.sum(g * g)) for _, _, g in live))
        if total > state.clip_norm:
            scale = state.clip_norm / total
            live = [(n, p, g * scale) for n, p, g in live]

    for name, tensor, g in live:
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        tensor.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def collect_params(groups):
    """Flatten groups into a single name -> Tensor mapping."""
    out = {}
    for group in groups:
        for name, tensor in group.items():
            if name in out:
                raise ValueError(f"duplicate parameter name {name!r}")
            out[name] = tensor
    return out
