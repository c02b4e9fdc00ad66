"""Sequence and characteristics encoders.

Two LSTMs exist in the full model: one feeds the task-level embedding,
the other feeds the stepwise prediction head. They share this code but
never share parameters unless explicitly configured to.
"""

import numpy as np

from . import numerics as nm


def init_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_lstm(rng, n_in, hidden, prefix):
    """Named LSTM parameter tensors; gate layout [input|forget|cell|output]."""
    return {
        f"{prefix}.wx": nm.Tensor(init_uniform(rng, (n_in, 4 * hidden), hidden),
                                  requires_grad=True, name=f"{prefix}.wx"),
        f"{prefix}.wh": nm.Tensor(init_uniform(rng, (hidden, 4 * hidden), hidden),
                                  requires_grad=True, name=f"{prefix}.wh"),
        f"{prefix}.b": nm.Tensor(init_uniform(rng, (4 * hidden,), hidden),
                                 requires_grad=True, name=f"{prefix}.b"),
    }


def lstm_forward(x, params, prefix):
    """[n, T, F] -> [n, T, H] hidden states from zero initial state."""
    return nm.lstm_seq(x, params[f"{prefix}.wx"], params[f"{prefix}.wh"],
                       params[f"{prefix}.b"])


def temporal_attention_pool(h, q):
    """Score each step against a query and mix: [n, T, H] -> ([n, H], [n, T]).

    Attention weights are a per-row softmax of h[i, t] . q, so the
    pooled vector has a fixed length no matter how long the window is.
    """
    scores = nm.tsum(nm.mul(h, q), axis=-1)
    alpha = nm.softmax_row(scores)
    a3 = nm.reshape(alpha, (*alpha.shape, 1))
    pooled = nm.tsum(nm.mul(a3, h), axis=1)
    return pooled, alpha


def init_mlp(rng, widths, prefix):
    """Fully-connected stack; widths = [in, hidden..., out]."""
    params = {}
    for li in range(len(widths) - 1):
        w = nm.Tensor(init_uniform(rng, (widths[li + 1], widths[li]), widths[li]),
                      requires_grad=True, name=f"{prefix}.w{li + 1}")
        b = nm.Tensor(init_uniform(rng, (widths[li + 1],), widths[li]),
                      requires_grad=True, name=f"{prefix}.b{li + 1}")
        params[w.name] = w
        params[b.name] = b
    return params


def mlp_forward(x, params, prefix, n_layers, activation="relu"):
    """Apply the stack to [n, D]; hidden layers activated, output linear.

    activation="linear" turns the whole stack affine (used by tests to
    probe identity configurations).
    """
    out = x
    for li in range(1, n_layers + 1):
        w = params[f"{prefix}.w{li}"]
        b = params[f"{prefix}.b{li}"]
        out = nm.add(nm.matmul(out, nm.transpose(w)), b)
        if li < n_layers and activation == "relu":
            out = nm.relu(out)
    return out


def characteristics_embed(c, params, n_layers=2, activation="relu"):
    """Embed normalized characteristics: [n, K] -> [n, H_c].

    Lives in the `characteristics_mlp` parameter group, which is the
    partial fine-tuning target.
    """
    return mlp_forward(c, params, "char_mlp", n_layers, activation)
