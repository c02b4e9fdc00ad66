"""Gated spatio-temporal prediction network.

Per task, pairwise influence filters are built from characteristic
embeddings modulated by the task embedding z; they reweight the
distance adjacency through a masked row softmax, once for the current
step (A~) and once, with separate parameters, for the delayed step
(A~'). Neighbor states are aggregated through both and fed with z into
the output MLP. The filters contain no time index, so all gating is
computed once per forward pass.

All ablation switches live here; with every switch off the network
degenerates to an independent per-segment LSTM + MLP head.
"""

import hashlib
import json

import numpy as np

from . import encoders, geo_embedding
from . import numerics as nm
from .errors import DataError


class ModelConfig:
    """Architecture hyperparameters (spatial size independent by default)."""

    def __init__(self, n_features=7, n_chars=65, hidden=128, char_hidden=128,
                 head_hidden=128, share_lstm=False, conv_weight=True,
                 gate_gain="scalar", per_edge_n=None):
        if gate_gain not in ("scalar", "per_edge"):
            raise DataError(f"gate_gain must be scalar|per_edge, got {gate_gain!r}")
        if gate_gain == "per_edge" and not per_edge_n:
            raise DataError("per_edge gate gain needs per_edge_n (fixed graph size)")
        self.n_features = n_features
        self.n_chars = n_chars
        self.hidden = hidden
        self.char_hidden = char_hidden
        self.head_hidden = head_hidden
        self.share_lstm = share_lstm
        self.conv_weight = conv_weight
        self.gate_gain = gate_gain
        self.per_edge_n = per_edge_n

    @property
    def embed_dim(self):
        # z preserves the concatenated [h_d, h_c] width through the conv
        return self.hidden + self.char_hidden

    def to_dict(self):
        return dict(n_features=self.n_features, n_chars=self.n_chars,
                    hidden=self.hidden, char_hidden=self.char_hidden,
                    head_hidden=self.head_hidden, share_lstm=self.share_lstm,
                    conv_weight=self.conv_weight, gate_gain=self.gate_gain,
                    per_edge_n=self.per_edge_n)


class AblationConfig:
    """Component switches; everything on reproduces the full model."""

    def __init__(self, use_z=True, use_c_in_gate=True, use_a_prime=True,
                 use_a=True, unified_preprocessing=True):
        self.use_z = use_z
        self.use_c_in_gate = use_c_in_gate
        self.use_a_prime = use_a_prime
        self.use_a = use_a
        self.unified_preprocessing = unified_preprocessing

    def to_dict(self):
        return dict(use_z=self.use_z, use_c_in_gate=self.use_c_in_gate,
                    use_a_prime=self.use_a_prime, use_a=self.use_a,
                    unified_preprocessing=self.unified_preprocessing)


class GatedAdjacency:
    """Row-stochastic gated matrices for the current and delayed steps."""

    def __init__(self, a_tilde, a_tilde_prime, support):
        self.a_tilde = a_tilde
        self.a_tilde_prime = a_tilde_prime
        self.support = support


class Model:
    """All trainable tensors, tagged by parameter group for freezing."""

    def __init__(self, config, ablation=None, seed=0):
        self.config = config
        self.ablation = ablation or AblationConfig()
        rng = np.random.default_rng(seed)
        H, Hc, Hz = config.hidden, config.char_hidden, config.embed_dim
        p = {}
        p.update(encoders.init_lstm(rng, config.n_features, H, "pred_lstm"))
        if not config.share_lstm:
            p.update(encoders.init_lstm(rng, config.n_features, H, "embed_lstm"))
        p.update(encoders.init_mlp(rng, [config.n_chars, Hc, Hc], "char_mlp"))
        p["attn.q_h"] = nm.Tensor(encoders.init_uniform(rng, (H,), H),
                                  requires_grad=True, name="attn.q_h")
        p["pool.q_g"] = nm.Tensor(encoders.init_uniform(rng, (Hz,), Hz),
                                  requires_grad=True, name="pool.q_g")
        if config.conv_weight:
            p["conv.w_g"] = nm.Tensor(encoders.init_uniform(rng, (Hz, Hz), Hz),
                                      requires_grad=True, name="conv.w_g")
        if self.ablation.use_z:
            p["gate.z_proj_w"] = nm.Tensor(encoders.init_uniform(rng, (Hc, Hz), Hz),
                                           requires_grad=True, name="gate.z_proj_w")
        if config.gate_gain == "scalar":
            p["gate.gamma_s"] = nm.Tensor(1.0, requires_grad=True, name="gate.gamma_s")
            p["gate.gamma_t"] = nm.Tensor(1.0, requires_grad=True, name="gate.gamma_t")
        else:
            n = config.per_edge_n
            p["gate.w_s"] = nm.Tensor(np.ones((n, n)), requires_grad=True, name="gate.w_s")
            p["gate.w_t"] = nm.Tensor(np.ones((n, n)), requires_grad=True, name="gate.w_t")
        p.update(encoders.init_mlp(rng, [self.head_in_dim(), config.head_hidden, 1], "head"))
        self.params = p

    @property
    def embed_prefix(self):
        return "pred_lstm" if self.config.share_lstm else "embed_lstm"

    def head_in_dim(self):
        d = self.config.hidden
        if self.ablation.use_a_prime:
            d += self.config.hidden
        if self.ablation.use_z:
            d += self.config.embed_dim
        return d

    def param_groups(self):
        def grp(name, prefixes):
            sel = {k: v for k, v in self.params.items()
                   if any(k.startswith(pre) for pre in prefixes)}
            return nm.ParamGroup(name, sel)

        return [
            grp("encoder", ("pred_lstm.", "embed_lstm.")),
            grp("characteristics_mlp", ("char_mlp.",)),
            grp("gate", ("gate.",)),
            grp("pooling", ("attn.", "pool.", "conv.")),
            grp("head", ("head.",)),
        ]

    def version(self):
        desc = json.dumps({"config": self.config.to_dict(),
                           "ablation": self.ablation.to_dict()}, sort_keys=True)
        return hashlib.sha256(desc.encode()).hexdigest()[:12]


def influence_filter(h_c, z, gain, z_proj=None, use_z=True, use_c=True):
    """Pairwise filters s_ij = gain_ij <h_c_i * zp, h_c_j * zp>.

    zp is z linearly projected down to the characteristics width. The
    ablations replace z (resp. the characteristic embeddings) with
    all-ones so the filter structure survives with that factor muted.
    """
    n = h_c.shape[0]
    hc_used = h_c if use_c else nm.Tensor(np.ones(h_c.shape))
    if use_z:
        if z_proj is None:
            raise DataError("influence_filter needs z_proj when use_z is on")
        zp = nm.mv(z_proj, z)
        hs = nm.mul(hc_used, zp)
    else:
        hs = hc_used
    base = nm.matmul(hs, nm.transpose(hs))
    return nm.mul(base, gain)


def gate_adjacency(adj, s):
    """Masked row softmax of A ⊙ S over each row's support."""
    m = nm.mul(nm.Tensor(adj.values), s)
    return nm.softmax_row(m, support_mask=adj.support)


def build_gates(model, adj, h_c, z):
    """Both gated matrices for a task; time-invariant, computed once."""
    ab = model.ablation
    cfg = model.config
    z_proj = model.params.get("gate.z_proj_w")
    if cfg.gate_gain == "scalar":
        gain_s = model.params["gate.gamma_s"]
        gain_t = model.params["gate.gamma_t"]
    else:
        if adj.values.shape[0] != cfg.per_edge_n:
            raise DataError("per_edge gate gain sized for a different graph")
        gain_s = model.params["gate.w_s"]
        gain_t = model.params["gate.w_t"]
    a_tilde = a_tilde_prime = None
    if ab.use_a:
        s = influence_filter(h_c, z, gain_s, z_proj, ab.use_z, ab.use_c_in_gate)
        a_tilde = gate_adjacency(adj, s)
    if ab.use_a_prime:
        s_prime = influence_filter(h_c, z, gain_t, z_proj, ab.use_z, ab.use_c_in_gate)
        a_tilde_prime = gate_adjacency(adj, s_prime)
    return GatedAdjacency(a_tilde, a_tilde_prime, adj.support)


def aggregate_neighbors(gated, h):
    """Mix neighbor hidden states: (A~ h, A~' h), each [n, T, H].

    A disabled current-step path falls back to each node's own state; a
    disabled delayed path returns None and is dropped from the head.
    """
    h_cur = h if gated.a_tilde is None else nm.graph_mix(gated.a_tilde, h)
    h_del = None if gated.a_tilde_prime is None else nm.graph_mix(gated.a_tilde_prime, h)
    return h_cur, h_del


def predict(h_cur, h_del, z, model):
    """Per-step head over [h^_t, h^_t-1, z] -> temperature, vectorized over (n, t).

    The delayed input at t=0 reuses step 0 (there is no t-1); that
    column is masked out of every loss and score downstream.
    """
    n, T, H = h_cur.shape
    parts = [h_cur]
    if h_del is not None:
        shifted = nm.concat([h_del[:, :1, :], h_del[:, :T - 1, :]], axis=1)
        parts.append(shifted)
    if z is not None and model.ablation.use_z:
        Hz = z.shape[0]
        parts.append(nm.broadcast_to(nm.reshape(z, (1, 1, Hz)), (n, T, Hz)))
    stacked = nm.concat(parts, axis=2) if len(parts) > 1 else parts[0]
    flat = nm.reshape(stacked, (n * T, stacked.shape[2]))
    out = encoders.mlp_forward(flat, model.params, "head", 2)
    return nm.reshape(out, (n, T))


def forward(model, task, adj, z=None):
    """Full prediction pass on a normalized task window.

    z semantics: None computes the embedding from inputs (when the
    ablation uses z at all); a Tensor is used as-is, which is how
    prompt-style fine-tuning feeds its free embedding through the
    whole network. Predictions cover every segment, observed or not.

    Returns (y_hat [n, T] tensor, valid [n, T] bool) where valid masks
    off the first step of the window.
    """
    if task.n_days < 2:
        raise DataError("forward needs at least 2 days (delayed gating)")
    h_c = encoders.characteristics_embed(nm.Tensor(task.c), model.params)
    if model.ablation.use_z and z is None:
        x = nm.Tensor(task.x)
        h_e = encoders.lstm_forward(x, model.params, model.embed_prefix)
        h_d, _ = encoders.temporal_attention_pool(h_e, model.params["attn.q_h"])
        z, _, _ = geo_embedding.embed_from_parts(model, adj, h_d, h_c)
    gated = build_gates(model, adj, h_c, z)
    h = encoders.lstm_forward(nm.Tensor(task.x), model.params, "pred_lstm")
    h_cur, h_del = aggregate_neighbors(gated, h)
    y_hat = predict(h_cur, h_del, z, model)
    valid = np.ones((task.n_segments, task.n_days), dtype=bool)
    valid[:, 0] = False
    return y_hat, valid
