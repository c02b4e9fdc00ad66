"""Task-level geo-aware embedding.

The embedding summarizes a whole task (weather trends, stream
characteristics, network scale) into one fixed-length vector z computed
purely from inputs - no observations - which is what makes zero-shot
prediction on unmonitored watersheds possible. Pipeline per task:

    LSTM over weather -> temporal attention pool   (per segment)
    characteristics MLP -> concat                  (per segment)
    distance-weighted graph conv -> ReLU           (across segments)
    attention pooling over nodes -> z              (task level)
"""

import json

import numpy as np

from . import encoders
from . import numerics as nm


class GeoEmbedding:
    """The z vector plus cached per-node embeddings and provenance."""

    def __init__(self, z, node_embeddings, char_embeddings, task_id, model_version):
        self.z = z
        self.node_embeddings = node_embeddings
        self.char_embeddings = char_embeddings
        self.task_id = task_id
        self.model_version = model_version


def graph_conv(adj, h_dc, w_g=None):
    """g_i = ReLU(sum_{j in N(i)} A_ij (W_g h_j)).

    N(i) is the support of adjacency row i (self-loop included); the
    off-support entries of adj.values are exactly 0 so a dense product
    realizes the masked sum. w_g=None drops the weight matrix and
    reduces the layer to pure distance-weighted smoothing.
    """
    mixed = h_dc if w_g is None else nm.matmul(h_dc, nm.transpose(w_g))
    return nm.relu(nm.matmul(nm.Tensor(adj.values), mixed))


def node_attention_pool(g, q_g):
    """beta = softmax_i(g_i . q_g); z = sum_i beta_i g_i."""
    scores = nm.mv(g, q_g)
    beta = nm.softmax_row(scores)
    z = nm.mv(nm.transpose(g), beta)
    return z, beta


def embed_from_parts(model, adj, h_d, h_c):
    """Finish the embedding from already-encoded per-node pieces."""
    h_dc = nm.concat([h_d, h_c], axis=1)
    w_g = model.params.get("conv.w_g") if model.config.conv_weight else None
    g = graph_conv(adj, h_dc, w_g)
    z, beta = node_attention_pool(g, model.params["pool.q_g"])
    return z, g, beta


def compute_geo_embedding(model, task, adj):
    """Run the full embedding pipeline on a (normalized) task.

    Uses inputs only; the task's labels are never touched.
    """
    x = nm.Tensor(task.x)
    h = encoders.lstm_forward(x, model.params, model.embed_prefix)
    h_d, _ = encoders.temporal_attention_pool(h, model.params["attn.q_h"])
    h_c = encoders.characteristics_embed(nm.Tensor(task.c), model.params)
    z, g, _ = embed_from_parts(model, adj, h_d, h_c)
    return GeoEmbedding(z, g.data.copy(), h_c.data.copy(),
                        task.task_id, model.version())


def save_embedding(emb, path):
    """Write z as a JSON vector (the per-task artifact of prompt-style tuning)."""
    payload = {
        "task_id": emb.task_id,
        "model_version": emb.model_version,
        "z": [float(v) for v in np.asarray(emb.z.data).ravel()],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_embedding(path):
    with open(path) as fh:
        payload = json.load(fh)
    z = nm.Tensor(np.array(payload["z"], dtype=np.float64))
    return GeoEmbedding(z, None, None, payload["task_id"], payload["model_version"])
